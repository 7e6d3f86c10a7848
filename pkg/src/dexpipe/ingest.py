"""Session files: loading, saving, resampling, demo slicing, diagnostics.

A session is a directory:

    meta.json    capture rate, frame count, camera intrinsics
    rig.json     RigExtrinsics (see calibration)
    frames.jsonl one capture record per line, ordered by time
    demos.json   demo start/end annotations
    depth/NNNNNN.bin  little-endian u16, row-major height x width,
                      meters = raw * depth_scale, 0 = invalid
    rgb/NNNNNN.bin    u8 RGB triplets, row-major height x width x 3

Everything is plain JSON or raw binary so fixtures stay diffable and the
format round-trips byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .calibration import RigExtrinsics, load_rig, save_rig
from .geometry import Intrinsics, Pose

FINGERTIP_ORDER = ("thumb", "index", "middle", "ring", "little")


class SessionError(Exception):
    """Base for session-format failures."""


class MissingFile(SessionError):
    pass


class FrameCountMismatch(SessionError):
    pass


class NonMonotonicTimestamps(SessionError):
    pass


class MalformedRecord(SessionError):
    pass


class NonDivisibleRate(SessionError):
    pass


class OverlappingAnnotations(SessionError):
    pass


class OutOfRange(SessionError):
    pass


class TooFewPoses(SessionError):
    pass


@dataclass(frozen=True)
class MocapFrame:
    """One capture record: tracker-reported poses, hub-frame fingertips,
    and references to the RGB/depth files of this instant."""

    t: float
    main_reported: Pose
    left_reported: Pose
    right_reported: Pose
    tips_left_hub: np.ndarray
    tips_right_hub: np.ndarray
    rgb_index: int
    depth_index: int

    def __post_init__(self):
        for name in ("tips_left_hub", "tips_right_hub"):
            tips = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if tips.shape != (5, 3):
                raise ValueError(f"{name} must have shape (5, 3), got {tips.shape}")
            if not np.all(np.isfinite(tips)):
                raise ValueError(f"{name} must be finite")
            tips.flags.writeable = False
            object.__setattr__(self, name, tips)


@dataclass(frozen=True)
class SessionMeta:
    capture_hz: float
    frame_count: int
    intrinsics: Intrinsics

    def __post_init__(self):
        if self.capture_hz <= 0:
            raise ValueError("capture_hz must be positive")
        if self.frame_count < 0:
            raise ValueError("frame_count must be non-negative")


@dataclass(frozen=True)
class DemoAnnotation:
    start_frame: int
    end_frame: int
    label: str


@dataclass(frozen=True)
class Session:
    path: Path
    meta: SessionMeta
    rig: RigExtrinsics
    frames: tuple[MocapFrame, ...]
    annotations: tuple[DemoAnnotation, ...]

    def depth_path(self, index: int) -> Path:
        return self.path / "depth" / f"{index:06d}.bin"

    def rgb_path(self, index: int) -> Path:
        return self.path / "rgb" / f"{index:06d}.bin"

    def load_depth(self, frame: MocapFrame) -> np.ndarray:
        return read_depth(self.depth_path(frame.depth_index), self.meta.intrinsics)

    def load_rgb(self, frame: MocapFrame) -> np.ndarray:
        return read_rgb(self.rgb_path(frame.rgb_index), self.meta.intrinsics)


# ---------------------------------------------------------------------------
# binary frame files


def write_depth(path, depth: np.ndarray) -> None:
    depth = np.asarray(depth)
    if depth.dtype != np.uint16 or depth.ndim != 2:
        raise ValueError("depth must be a 2D uint16 array")
    Path(path).write_bytes(depth.astype("<u2").tobytes())


def read_depth(path, intrinsics: Intrinsics) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"missing depth file: {path}")
    raw = path.read_bytes()
    expected = intrinsics.height * intrinsics.width * 2
    if len(raw) != expected:
        raise MalformedRecord(f"{path}: expected {expected} bytes, got {len(raw)}")
    return (
        np.frombuffer(raw, dtype="<u2")
        .reshape(intrinsics.height, intrinsics.width)
        .astype(np.uint16)
    )


def write_rgb(path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb)
    if rgb.dtype != np.uint8 or rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("rgb must be an (H, W, 3) uint8 array")
    Path(path).write_bytes(rgb.tobytes())


def read_rgb(path, intrinsics: Intrinsics) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"missing rgb file: {path}")
    raw = path.read_bytes()
    expected = intrinsics.height * intrinsics.width * 3
    if len(raw) != expected:
        raise MalformedRecord(f"{path}: expected {expected} bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(
        intrinsics.height, intrinsics.width, 3
    )


# ---------------------------------------------------------------------------
# JSON records


def _frame_to_record(f: MocapFrame) -> dict:
    return {
        "t": f.t,
        "main": f.main_reported.to_list(),
        "left": f.left_reported.to_list(),
        "right": f.right_reported.to_list(),
        "tips_left": f.tips_left_hub.tolist(),
        "tips_right": f.tips_right_hub.tolist(),
        "rgb": f.rgb_index,
        "depth": f.depth_index,
    }


def _frame_from_record(d: dict) -> MocapFrame:
    return MocapFrame(
        t=float(d["t"]),
        main_reported=Pose.from_list(d["main"]),
        left_reported=Pose.from_list(d["left"]),
        right_reported=Pose.from_list(d["right"]),
        tips_left_hub=np.array(d["tips_left"], dtype=np.float64),
        tips_right_hub=np.array(d["tips_right"], dtype=np.float64),
        rgb_index=int(d["rgb"]),
        depth_index=int(d["depth"]),
    )


def _annotation_to_record(a: DemoAnnotation) -> dict:
    return {"start_frame": a.start_frame, "end_frame": a.end_frame, "label": a.label}


def _annotation_from_record(d: dict) -> DemoAnnotation:
    return DemoAnnotation(
        start_frame=int(d["start_frame"]),
        end_frame=int(d["end_frame"]),
        label=str(d["label"]),
    )


# ---------------------------------------------------------------------------
# session load/save


def load_session(path) -> Session:
    path = Path(path)
    if not path.is_dir():
        raise MissingFile(f"session directory not found: {path}")
    for required in ("meta.json", "rig.json", "frames.jsonl", "demos.json", "rgb", "depth"):
        if not (path / required).exists():
            raise MissingFile(f"missing session entry: {path / required}")

    meta_path = path / "meta.json"
    try:
        meta_raw = json.loads(meta_path.read_text())
        meta = SessionMeta(
            capture_hz=float(meta_raw["capture_hz"]),
            frame_count=int(meta_raw["frame_count"]),
            intrinsics=Intrinsics.from_dict(meta_raw["intrinsics"]),
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise MalformedRecord(f"{meta_path}: {e}") from e

    rig_path = path / "rig.json"
    try:
        rig = load_rig(rig_path)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise MalformedRecord(f"{rig_path}: {e}") from e

    frames_path = path / "frames.jsonl"
    frames = []
    with open(frames_path) as fh:
        for i, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                frames.append(_frame_from_record(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise MalformedRecord(f"{frames_path} line {i}: {e}") from e

    if len(frames) != meta.frame_count:
        raise FrameCountMismatch(
            f"{frames_path}: meta says {meta.frame_count} frames, file has {len(frames)}"
        )
    for i in range(1, len(frames)):
        if not frames[i].t > frames[i - 1].t:
            raise NonMonotonicTimestamps(
                f"{frames_path}: t not strictly increasing at frame {i}"
            )
    for i, f in enumerate(frames):
        for p in (path / "rgb" / f"{f.rgb_index:06d}.bin", path / "depth" / f"{f.depth_index:06d}.bin"):
            if not p.is_file():
                raise MissingFile(f"frame {i} references missing file: {p}")

    demos_path = path / "demos.json"
    try:
        annotations = tuple(
            _annotation_from_record(d) for d in json.loads(demos_path.read_text())
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise MalformedRecord(f"{demos_path}: {e}") from e

    return Session(path=path, meta=meta, rig=rig, frames=tuple(frames), annotations=annotations)


def save_session(session: Session, out_path) -> Path:
    """Write a session directory; returns the directory path.

    Binary frame files are copied from the source session when writing to a
    new location. Output is deterministic: saving a loaded session produces
    byte-identical files.
    """
    out = Path(out_path)
    (out / "rgb").mkdir(parents=True, exist_ok=True)
    (out / "depth").mkdir(parents=True, exist_ok=True)

    meta = {
        "capture_hz": session.meta.capture_hz,
        "frame_count": session.meta.frame_count,
        "intrinsics": session.meta.intrinsics.to_dict(),
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    save_rig(session.rig, out / "rig.json")
    with open(out / "frames.jsonl", "w") as fh:
        for f in session.frames:
            fh.write(json.dumps(_frame_to_record(f), separators=(",", ":")) + "\n")
    (out / "demos.json").write_text(
        json.dumps([_annotation_to_record(a) for a in session.annotations], indent=2)
        + "\n"
    )

    if out.resolve() != session.path.resolve():
        for f in session.frames:
            write_rgb(out / "rgb" / f"{f.rgb_index:06d}.bin", session.load_rgb(f))
            write_depth(out / "depth" / f"{f.depth_index:06d}.bin", session.load_depth(f))
    return out


# ---------------------------------------------------------------------------
# resampling, slicing, diagnostics


def resample(frames: Sequence[MocapFrame], capture_hz: float, target_hz: float):
    """Keep every (capture_hz/target_hz)-th frame starting at index 0.

    Downsampling is by stride, not interpolation: the capture rate must be an
    integer multiple of the target rate.
    """
    if target_hz <= 0:
        raise NonDivisibleRate(f"target_hz must be positive, got {target_hz}")
    ratio = capture_hz / target_hz
    stride = round(ratio)
    if stride < 1 or abs(ratio - stride) > 1e-9:
        raise NonDivisibleRate(
            f"capture rate {capture_hz} Hz not divisible by target {target_hz} Hz"
        )
    return list(frames[::stride])


def segment_demos(frames: Sequence[MocapFrame], annotations: Sequence[DemoAnnotation]):
    """Slice the frame list into per-demo lists, ordered by start frame.

    Each slice covers [start_frame, end_frame] inclusive; frames outside all
    annotations are dropped. Slices never reorder or fabricate frames.
    """
    n = len(frames)
    ordered = sorted(annotations, key=lambda a: a.start_frame)
    for a in ordered:
        if not (0 <= a.start_frame < a.end_frame < n):
            raise OutOfRange(
                f"annotation '{a.label}' [{a.start_frame}, {a.end_frame}] "
                f"outside 0..{n - 1}"
            )
    for prev, cur in zip(ordered, ordered[1:]):
        if cur.start_frame <= prev.end_frame:
            raise OverlappingAnnotations(
                f"annotations '{prev.label}' and '{cur.label}' overlap"
            )
    return [list(frames[a.start_frame : a.end_frame + 1]) for a in ordered]


def loop_closure_drift(poses: Sequence[Pose]) -> float:
    """Distance between the first and last pose translations.

    For a trajectory that physically returns to its start point this should
    be near zero; inertial-only tracking accumulates visible drift here.
    """
    if len(poses) < 2:
        raise TooFewPoses(f"need at least 2 poses, got {len(poses)}")
    return float(np.linalg.norm(poses[-1].t - poses[0].t))
