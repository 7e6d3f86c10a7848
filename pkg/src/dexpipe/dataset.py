"""Demo datasets: assembly from sessions, augmentation, mixing, persistence.

A Step is one (observation, state, action) triple; a Demo is the step
sequence of one annotated demonstration plus metadata; a Dataset is a list of
demos tagged as original (D) or correction (D').

The on-disk container is `.dxd`: a JSON header with a per-demo byte index,
then per-demo payloads each followed by a CRC32. Observations are stored as
f32 (their natural precision), poses and joints as f64 so quaternions
round-trip without renormalization and files re-save byte-identically.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import ingest, perception
from .calibration import chest_cloud_pose, fingertips_world, tracker_pose_world
from .geometry import PointCloud, Pose, compose, transform_points
from .ingest import Session
from .kinematics import (
    BimanualState,
    HandModel,
    IkParams,
    RetargetResult,
    build_action_labels,
    retarget_frame,
)
from .perception import (
    HAND_POINTS,
    STORAGE_POINTS,
    WorkspaceAlignment,
    align_to_robot_space,
    crop_table,
    downsample_uniform,
    merge_robot_points,
    observation_seed,
    pack_observation,
    stabilize_to_world,
    unproject,
)

MAGIC = b"DXD1"
FORMAT_VERSION = 1

_STATE_FLOATS = 46


class DatasetError(Exception):
    pass


class FormatVersionMismatch(DatasetError):
    pass


class ChecksumMismatch(DatasetError):
    pass


class OutOfWorkspace(DatasetError):
    pass


class EmptyOriginalDataset(DatasetError):
    pass


@dataclass(frozen=True)
class Step:
    """One training tuple: K x 6 observation, proprioception, action."""

    obs: np.ndarray
    state: BimanualState
    action: BimanualState

    def __post_init__(self):
        obs = np.ascontiguousarray(self.obs, dtype=np.float64)
        if obs.ndim != 2 or obs.shape[1] != 6:
            raise ValueError(f"obs must have shape (K, 6), got {obs.shape}")
        if not np.all(np.isfinite(obs)):
            raise ValueError("obs must be finite")
        obs.flags.writeable = False
        object.__setattr__(self, "obs", obs)

    @property
    def k(self) -> int:
        return self.obs.shape[0]


@dataclass(frozen=True)
class Demo:
    steps: tuple[Step, ...]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        steps = tuple(self.steps)
        if not steps:
            raise ValueError("demo must contain at least one step")
        k = steps[0].k
        if any(s.k != k for s in steps):
            raise ValueError("all steps in a demo must share one K")
        object.__setattr__(self, "steps", steps)


DATASET_KINDS = ("original", "correction")


@dataclass(frozen=True)
class Dataset:
    demos: tuple[Demo, ...]
    kind: str = "original"

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise ValueError(f"kind must be one of {DATASET_KINDS}")
        object.__setattr__(self, "demos", tuple(self.demos))

    @property
    def step_count(self) -> int:
        return sum(len(d.steps) for d in self.demos)

    def iter_steps(self):
        for demo in self.demos:
            yield from demo.steps


@dataclass(frozen=True)
class WorkspaceBounds:
    """Axis-aligned wrist workspace in robot space, for augmentation checks."""

    x_min: float = -0.8
    x_max: float = 0.8
    y_min: float = -0.8
    y_max: float = 0.8

    def contains(self, xy: np.ndarray) -> bool:
        x, y = float(xy[0]), float(xy[1])
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max


# ---------------------------------------------------------------------------
# augmentation


def _shift_arm(arm, dx: float, dy: float):
    from .kinematics import RobotArmState

    t = arm.p.t + np.array([dx, dy, 0.0])
    return RobotArmState(p=Pose(arm.p.q, t), joints=arm.joints)


def _shift_state(state: BimanualState, dx: float, dy: float) -> BimanualState:
    return BimanualState(left=_shift_arm(state.left, dx, dy), right=_shift_arm(state.right, dx, dy))


def shift_demo(demo: Demo, dx: float, dy: float, bounds: WorkspaceBounds) -> Demo:
    """Apply one fixed 2D translation to every obs point and wrist in a demo.

    Joint angles are untouched; hand-to-scene geometry is rigidly preserved.
    Raises OutOfWorkspace if any shifted wrist leaves the bounds.
    """
    shift = np.array([dx, dy, 0.0])
    for step in demo.steps:
        for arm in (step.state.left, step.state.right, step.action.left, step.action.right):
            if not bounds.contains(arm.p.t[:2] + shift[:2]):
                raise OutOfWorkspace(
                    f"wrist at {arm.p.t[:2] + shift[:2]} leaves workspace bounds"
                )
    steps = []
    for step in demo.steps:
        obs = step.obs.copy()
        obs[:, 0] += dx
        obs[:, 1] += dy
        steps.append(
            Step(obs=obs, state=_shift_state(step.state, dx, dy), action=_shift_state(step.action, dx, dy))
        )
    meta = dict(demo.meta)
    meta["augment"] = [dx, dy]
    return Demo(steps=tuple(steps), meta=meta)


def augment(
    demo: Demo,
    max_dx: float = 0.1,
    max_dy: float = 0.1,
    seed: int = 0,
    bounds: WorkspaceBounds | None = None,
) -> Demo:
    """Draw ONE (dx, dy) uniformly from the seeded generator and shift the
    whole demo coherently. The translation is per demo, not per step: the
    paper-style augmentation moves trajectories as rigid wholes."""
    if max_dx < 0 or max_dy < 0:
        raise ValueError("translation ranges must be non-negative")
    rng = np.random.default_rng(seed)
    dx = float(rng.uniform(-max_dx, max_dx))
    dy = float(rng.uniform(-max_dy, max_dy))
    return shift_demo(demo, dx, dy, bounds or WorkspaceBounds())


# ---------------------------------------------------------------------------
# equal-probability D / D' sampling


def iwr_sample(original: Dataset, correction: Dataset | None, n: int, seed: int) -> list[Step]:
    """n steps drawn with a fair per-draw coin between D and D' (all from D
    while D' is empty), then uniformly within the chosen dataset."""
    if original.step_count == 0:
        raise EmptyOriginalDataset("original dataset has no steps")
    d_steps = list(original.iter_steps())
    dp_steps = list(correction.iter_steps()) if correction is not None else []
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        if dp_steps and rng.integers(0, 2) == 1:
            pool = dp_steps
        else:
            pool = d_steps
        out.append(pool[int(rng.integers(0, len(pool)))])
    return out


# ---------------------------------------------------------------------------
# .dxd container


def _steps_payload(demo: Demo) -> bytes:
    chunks = []
    for step in demo.steps:
        chunks.append(np.ascontiguousarray(step.obs, dtype="<f4").tobytes())
        chunks.append(np.ascontiguousarray(step.state.to_flat(), dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(step.action.to_flat(), dtype="<f8").tobytes())
    return b"".join(chunks)


def _steps_from_payload(payload: bytes, steps: int, k: int) -> tuple[Step, ...]:
    obs_bytes = k * 6 * 4
    state_bytes = _STATE_FLOATS * 8
    step_bytes = obs_bytes + 2 * state_bytes
    if len(payload) != steps * step_bytes:
        raise ChecksumMismatch(
            f"payload length {len(payload)} does not match {steps} steps of {step_bytes} bytes"
        )
    out = []
    off = 0
    for _ in range(steps):
        obs = np.frombuffer(payload, dtype="<f4", count=k * 6, offset=off).reshape(k, 6)
        off += obs_bytes
        state = np.frombuffer(payload, dtype="<f8", count=_STATE_FLOATS, offset=off)
        off += state_bytes
        action = np.frombuffer(payload, dtype="<f8", count=_STATE_FLOATS, offset=off)
        off += state_bytes
        out.append(
            Step(
                obs=obs.astype(np.float64),
                state=BimanualState.from_flat(state),
                action=BimanualState.from_flat(action),
            )
        )
    return tuple(out)


def export_dataset(dataset: Dataset, path) -> None:
    """Write a .dxd file: magic, u32 header length, JSON header, then per
    demo the payload followed by its CRC32."""
    k = dataset.demos[0].steps[0].k if dataset.demos else 0
    payloads = [_steps_payload(d) for d in dataset.demos]
    index = []
    offset = 0
    for demo, payload in zip(dataset.demos, payloads):
        index.append(
            {
                "offset": offset,
                "length": len(payload),
                "steps": len(demo.steps),
                "meta": demo.meta,
            }
        )
        offset += len(payload) + 4
    header = json.dumps(
        {"version": FORMAT_VERSION, "kind": dataset.kind, "k": k, "demos": index},
        sort_keys=True,
        separators=(",", ":"),
    ).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for payload in payloads:
            fh.write(payload)
            fh.write(struct.pack("<I", zlib.crc32(payload)))


def read_dataset_header(path) -> dict:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise FormatVersionMismatch(f"{path}: bad magic {magic!r}")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode())
    if header.get("version") != FORMAT_VERSION:
        raise FormatVersionMismatch(
            f"{path}: version {header.get('version')} not supported (want {FORMAT_VERSION})"
        )
    return header


def import_dataset(path) -> Dataset:
    header = read_dataset_header(path)
    raw = Path(path).read_bytes()
    base = 4 + 4 + len(
        json.dumps(
            {k: header[k] for k in ("version", "kind", "k", "demos")},
            sort_keys=True,
            separators=(",", ":"),
        ).encode()
    )
    k = int(header["k"])
    demos = []
    for i, entry in enumerate(header["demos"]):
        start = base + int(entry["offset"])
        end = start + int(entry["length"])
        if end + 4 > len(raw):
            raise ChecksumMismatch(f"{path}: demo {i} payload extends past end of file")
        payload = raw[start:end]
        (crc,) = struct.unpack("<I", raw[end : end + 4])
        if zlib.crc32(payload) != crc:
            raise ChecksumMismatch(f"{path}: demo {i} payload failed CRC32 check")
        demos.append(
            Demo(steps=_steps_from_payload(payload, int(entry["steps"]), k), meta=dict(entry["meta"]))
        )
    return Dataset(demos=tuple(demos), kind=str(header["kind"]))


# ---------------------------------------------------------------------------
# session -> dataset pipeline


@dataclass(frozen=True)
class PipelineSettings:
    """Knobs of the ingest-to-dataset pipeline."""

    alignment: WorkspaceAlignment = WorkspaceAlignment()
    target_hz: float = 20.0
    k_scene: int = STORAGE_POINTS - HAND_POINTS
    k_hand: int = HAND_POINTS
    gamma: float = 1.0
    seed: int = 0
    ik: IkParams = field(default_factory=IkParams)

    def __post_init__(self):
        if self.k_scene < 1:
            raise ValueError("k_scene must be >= 1")
        if self.k_hand < 0 or self.k_hand % 2 != 0:
            raise ValueError("k_hand must be non-negative and even (split across hands)")


def _retarget_arm(
    session: Session,
    frames,
    side: str,
    model: HandModel,
    settings: PipelineSettings,
) -> tuple[list, list[RetargetResult]]:
    rig = session.rig
    cam_to_hub = rig.cam_to_hub(side)
    a_pose = settings.alignment.pose()
    j_prev = model.mid_range()
    results = []
    for frame in frames:
        reported = frame.left_reported if side == "left" else frame.right_reported
        tips_hub = frame.tips_left_hub if side == "left" else frame.tips_right_hub
        wrist_world = tracker_pose_world(rig, side, reported)
        tips_world = fingertips_world(wrist_world, cam_to_hub, tips_hub)
        wrist_robot = compose(a_pose, wrist_world)
        tips_robot = transform_points(a_pose, tips_world)
        result = retarget_frame(
            tips_robot, wrist_robot, model, j_prev, settings.ik, settings.gamma
        )
        j_prev = result.state.joints
        results.append(result)
    return [r.state for r in results], results


def _frame_observation(
    session: Session,
    frame,
    state: BimanualState,
    model: HandModel,
    geometry,
    settings: PipelineSettings,
    frame_index: int,
) -> np.ndarray:
    depth = session.load_depth(frame)
    rgb = session.load_rgb(frame)
    cloud = unproject(depth, rgb, session.meta.intrinsics)
    chest = chest_cloud_pose(session.rig, frame.main_reported)
    world = stabilize_to_world(cloud, chest)
    robot, _ = align_to_robot_space(world, [], settings.alignment)
    cropped = crop_table(robot, settings.alignment.z_table)
    scene = downsample_uniform(
        cropped, settings.k_scene, observation_seed(settings.seed, frame_index)
    )
    merged = merge_robot_points(scene, state, model, geometry)
    return pack_observation(merged)


def retarget_session(
    session: Session,
    model: HandModel,
    settings: PipelineSettings | None = None,
) -> Dataset:
    """Full pipeline: segment demos, resample to the control rate, retarget
    both hands, build per-frame observations, and label actions a_t = s_{t+1}.

    Each demo of m frames yields m - 1 steps (the last frame has no action).
    """
    settings = settings or PipelineSettings()
    geometry = perception.default_link_geometry(model, settings.k_hand // 2)
    slices = ingest.segment_demos(session.frames, session.annotations)
    annotations = sorted(session.annotations, key=lambda a: a.start_frame)
    demos = []
    for demo_index, (annotation, frames) in enumerate(zip(annotations, slices)):
        frames = ingest.resample(frames, session.meta.capture_hz, settings.target_hz)
        if len(frames) < 2:
            raise ingest.TooFewPoses(
                f"demo '{annotation.label}' has {len(frames)} frames after resampling; need >= 2"
            )
        left_states, left_results = _retarget_arm(session, frames, "left", model, settings)
        right_states, right_results = _retarget_arm(session, frames, "right", model, settings)
        states = [BimanualState(left=l, right=r) for l, r in zip(left_states, right_states)]
        actions = build_action_labels(states)

        steps = []
        for t, (frame, state, action) in enumerate(zip(frames, states, actions)):
            obs = _frame_observation(
                session, frame, state, model, geometry, settings,
                frame_index=annotation.start_frame + t,
            )
            steps.append(Step(obs=obs, state=state, action=action))

        residuals = np.concatenate(
            [np.concatenate([r.residuals for r in left_results]),
             np.concatenate([r.residuals for r in right_results])]
        )
        meta = {
            "source": str(session.path),
            "label": annotation.label,
            "demo_index": demo_index,
            "mean_ik_residual": float(np.mean(residuals)),
            "max_ik_residual": float(np.max(residuals)),
            "alignment": [
                settings.alignment.dx,
                settings.alignment.dy,
                settings.alignment.yaw,
                settings.alignment.z_table,
            ],
        }
        demos.append(Demo(steps=tuple(steps), meta=meta))
    return Dataset(demos=tuple(demos), kind="original")
