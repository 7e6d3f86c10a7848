"""Synthetic capture sessions with exact ground truth.

Generates a complete session directory (tracker streams, fingertip tracks,
rendered depth and color) from closed-form trajectories over a tabletop
scene, plus a truth.json sidecar holding the world-frame poses the pipeline
is supposed to recover. Everything is deterministic, so tests can assert
recovery against the generating values rather than against fixtures blessed
by an earlier run.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .calibration import RigExtrinsics, chest_cloud_pose, default_rig
from .geometry import (
    Frame,
    Intrinsics,
    PointCloud,
    Pose,
    compose,
    inverse,
    transform_points,
)
from .hitl import HumanSample
from .ingest import (
    DemoAnnotation,
    MocapFrame,
    Session,
    SessionMeta,
    save_session,
    write_depth,
    write_rgb,
)
from .kinematics import (
    BimanualState,
    HandModel,
    RobotArmState,
    default_hand_model,
    fk,
)
from .perception import sphere_surface

# world frame: z up, x toward the table. The table top is a rectangle at
# fixed height; one sphere rests just above it as the manipulation target.
TABLE_Z = -0.30
TABLE_X = (0.15, 0.95)
TABLE_Y = (-0.45, 0.45)
SPHERE_CENTER = (0.45, -0.08, -0.24)
SPHERE_RADIUS = 0.055
CROP_Z = -0.295

_GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0


def make_intrinsics() -> Intrinsics:
    return Intrinsics(
        width=64, height=48, fx=40.0, fy=40.0, cx=31.5, cy=23.5, depth_scale=0.001
    )


def _pose_from_rotvec(v, t=(0.0, 0.0, 0.0)) -> Pose:
    v = np.asarray(v, dtype=np.float64)
    angle = float(np.linalg.norm(v))
    if angle < 1e-12:
        return Pose(t=t)
    return Pose.from_axis_angle(v / angle, angle, t=t)


# ---------------------------------------------------------------------------
# scripted trajectories

# Amplitudes and rates are chosen so that, after resampling to the 20 Hz
# control rate, per-tick deltas stay well inside the controller's motion
# bounds (see control.ControllerParams): wrist speed ~0.07 m/s, angular
# rates ~0.2 rad/s, joint rates ~0.45 rad/s.

_WRIST_CENTER = {"left": (0.40, 0.22, -0.05), "right": (0.40, -0.22, -0.05)}
_WRIST_RADIUS = 0.08
_WRIST_OMEGA = 0.8
_SIDE_PHASE = {"left": 0.0, "right": 1.1}


def chest_pose(t: float) -> Pose:
    """Main tracker world pose: gentle sway, exactly identity at t = 0 so
    the world frame anchors to the initial chest pose."""
    trans = (
        0.04 * math.sin(0.9 * t),
        0.03 * math.sin(1.3 * t),
        0.02 * math.sin(0.7 * t),
    )
    rotvec = (
        0.06 * math.sin(1.1 * t),
        0.08 * math.sin(0.8 * t),
        0.05 * math.sin(1.4 * t),
    )
    return _pose_from_rotvec(rotvec, t=trans)


def wrist_pose(side: str, t: float) -> Pose:
    """Wrist tracker world pose: a slow circle over the table with a small
    orientation wobble."""
    cx, cy, cz = _WRIST_CENTER[side]
    ph = _SIDE_PHASE[side]
    w = _WRIST_OMEGA
    trans = (
        cx + _WRIST_RADIUS * (math.cos(w * t + ph) - math.cos(ph)),
        cy + _WRIST_RADIUS * (math.sin(w * t + ph) - math.sin(ph)),
        cz + 0.02 * math.sin(0.7 * t),
    )
    rotvec = (
        0.10 * math.sin(0.6 * t + ph),
        0.12 * math.sin(0.8 * t + ph),
        0.15 * math.sin(0.7 * t + ph),
    )
    return _pose_from_rotvec(rotvec, t=trans)


def joint_angles(model: HandModel, side: str, t: float) -> np.ndarray:
    """All 16 joints ride limit-respecting sinusoids around mid-range."""
    mid = model.mid_range()
    half = (model.upper_limits - model.lower_limits) / 2.0
    ph = _SIDE_PHASE[side] + 0.4 * np.arange(16)
    return mid + 0.35 * half * np.sin(1.1 * t + ph)


def hand_tips_wrist(model: HandModel, joints: np.ndarray) -> np.ndarray:
    """(5, 3) mocap-order fingertips in the wrist frame; the little finger
    is synthesized as an offset from the ring tip (the model has no little
    finger chain, and retargeting discards it)."""
    four = fk(model, joints).tips
    little = four[3] + np.array([-0.004, 0.02, -0.003])
    return np.vstack([four, little])


def default_plant_state(model: HandModel) -> BimanualState:
    """Neutral start for rollouts that do not seed from a demo: both wrists
    over the table at mid-range joints."""
    return BimanualState(
        left=RobotArmState(p=Pose(t=_WRIST_CENTER["left"]), joints=model.mid_range()),
        right=RobotArmState(p=Pose(t=_WRIST_CENTER["right"]), joints=model.mid_range()),
    )


def scripted_human_sample(model: HandModel, tick: int, rate: float = 20.0) -> HumanSample:
    """Deterministic operator stream for correction tests: wrist near the
    right-arm workspace, fingers on their own sinusoids."""
    t = tick / rate
    wrist = _pose_from_rotvec(
        (0.05 * math.sin(0.5 * t), 0.04 * math.sin(0.6 * t), 0.06 * math.sin(0.4 * t)),
        t=(0.42 + 0.03 * math.sin(0.9 * t), -0.20 + 0.03 * math.cos(0.9 * t) - 0.03, -0.04),
    )
    joints = joint_angles(model, "right", t + 0.5)
    return HumanSample(wrist=wrist, tips=hand_tips_wrist(model, joints))


# ---------------------------------------------------------------------------
# rendering


def render_views(cam_pose: Pose, intr: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Ray-cast the table + sphere scene into depth (u16 raw units) and
    color (u8 HxWx3) buffers as seen from the chest camera pose."""
    h, w = intr.height, intr.width
    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    dirs_cam = np.stack(
        [(uu - intr.cx) / intr.fx, (vv - intr.cy) / intr.fy, np.ones_like(uu)], axis=-1
    ).reshape(-1, 3)
    # rotation only: rays are directions, the origin carries the translation
    dirs = transform_points(Pose(cam_pose.q), dirs_cam)
    origin = cam_pose.t

    # ray parameter s equals camera-frame depth because dirs_cam has z = 1
    dz = dirs[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        s_table = (TABLE_Z - origin[2]) / dz
    pts = origin + s_table[:, None] * dirs
    table_ok = (
        (dz != 0.0)
        & (s_table > 1e-6)
        & (pts[:, 0] >= TABLE_X[0])
        & (pts[:, 0] <= TABLE_X[1])
        & (pts[:, 1] >= TABLE_Y[0])
        & (pts[:, 1] <= TABLE_Y[1])
    )
    s_table = np.where(table_ok, s_table, np.inf)

    center = np.asarray(SPHERE_CENTER)
    oc = origin - center
    a = np.sum(dirs * dirs, axis=1)
    b = 2.0 * dirs @ oc
    c = float(oc @ oc) - SPHERE_RADIUS**2
    disc = b * b - 4.0 * a * c
    sphere_ok = disc >= 0.0
    sq = np.sqrt(np.where(sphere_ok, disc, 0.0))
    s_sphere = (-b - sq) / (2.0 * a)
    sphere_ok &= s_sphere > 1e-6
    s_sphere = np.where(sphere_ok, s_sphere, np.inf)

    s = np.minimum(s_table, s_sphere)
    hit = np.isfinite(s)
    raw = np.zeros(len(s), dtype=np.uint64)
    raw[hit] = np.round(s[hit] / intr.depth_scale).astype(np.uint64)
    raw = np.minimum(raw, np.iinfo(np.uint16).max).astype(np.uint16)

    color = np.zeros((len(s), 3), dtype=np.uint8)
    color[s_table <= s_sphere] = (110, 110, 115)
    color[s_sphere < s_table] = (200, 60, 50)
    color[~hit] = 0
    return raw.reshape(h, w), color.reshape(h, w, 3)


def scene_cloud(n_table: int = 3000, n_sphere: int = 1000) -> PointCloud:
    """Static world-geometry cloud for simulated rollouts, tagged as robot
    space (the canonical fixtures use an identity workspace alignment)."""
    i = np.arange(n_table, dtype=np.float64)
    fx = (i / _GOLDEN) % 1.0
    fy = (i + 0.5) / n_table
    xs = TABLE_X[0] + fx * (TABLE_X[1] - TABLE_X[0])
    ys = TABLE_Y[0] + fy * (TABLE_Y[1] - TABLE_Y[0])
    table = np.column_stack([xs, ys, np.full(n_table, TABLE_Z)])
    sphere = sphere_surface(SPHERE_RADIUS, n_sphere) + np.asarray(SPHERE_CENTER)
    xyz = np.vstack([table, sphere])
    rgb = np.vstack(
        [
            np.tile((110 / 255.0, 110 / 255.0, 115 / 255.0), (n_table, 1)),
            np.tile((200 / 255.0, 60 / 255.0, 50 / 255.0), (n_sphere, 1)),
        ]
    )
    return PointCloud(xyz, rgb, Frame.ROBOT)


# ---------------------------------------------------------------------------
# session generation


def generate_session(
    out_dir,
    model: HandModel | None = None,
    rig: RigExtrinsics | None = None,
    n_frames: int = 120,
    capture_hz: float = 60.0,
    annotations: tuple[tuple[int, int], ...] = ((6, 63), (66, 117)),
) -> Session:
    """Write a full synthetic session to out_dir and return it loaded-form.

    Reported tracker poses are derived from the world-truth trajectories by
    inverting the rig extrinsics, so calibration recovers truth exactly.
    truth.json records the generating values per frame.
    """
    model = model or default_hand_model()
    rig = rig or default_rig()
    out = Path(out_dir)
    (out / "rgb").mkdir(parents=True, exist_ok=True)
    (out / "depth").mkdir(parents=True, exist_ok=True)
    intr = make_intrinsics()

    inv_slot = {k: inverse(v) for k, v in rig.slot_to_main.items()}
    inv_cam = {s: inverse(rig.cam_to_hub(s)) for s in ("left", "right")}

    frames = []
    truth_frames = []
    for i in range(n_frames):
        t = i / capture_hz
        main_w = chest_pose(t)
        wrists = {s: wrist_pose(s, t) for s in ("left", "right")}
        joints = {s: joint_angles(model, s, t) for s in ("left", "right")}
        tips_wrist = {s: hand_tips_wrist(model, joints[s]) for s in ("left", "right")}
        tips_hub = {
            s: transform_points(inv_cam[s], tips_wrist[s]) for s in ("left", "right")
        }
        tips_world = {
            s: transform_points(wrists[s], tips_wrist[s]) for s in ("left", "right")
        }

        frame = MocapFrame(
            t=t,
            main_reported=compose(inv_slot["main"], main_w),
            left_reported=compose(inv_slot["left"], wrists["left"]),
            right_reported=compose(inv_slot["right"], wrists["right"]),
            tips_left_hub=tips_hub["left"],
            tips_right_hub=tips_hub["right"],
            rgb_index=i,
            depth_index=i,
        )
        frames.append(frame)

        depth, rgb = render_views(chest_cloud_pose(rig, frame.main_reported), intr)
        write_depth(out / "depth" / f"{i:06d}.bin", depth)
        write_rgb(out / "rgb" / f"{i:06d}.bin", rgb)

        truth_frames.append(
            {
                "t": t,
                "main": main_w.to_list(),
                "left": wrists["left"].to_list(),
                "right": wrists["right"].to_list(),
                "joints_left": joints["left"].tolist(),
                "joints_right": joints["right"].tolist(),
                "tips_left_world": tips_world["left"].tolist(),
                "tips_right_world": tips_world["right"].tolist(),
            }
        )

    session = Session(
        path=out,
        meta=SessionMeta(capture_hz=capture_hz, frame_count=n_frames, intrinsics=intr),
        rig=rig,
        frames=tuple(frames),
        annotations=tuple(
            DemoAnnotation(start_frame=a, end_frame=b, label=f"demo{k}")
            for k, (a, b) in enumerate(annotations)
        ),
    )

    save_session(session, out)
    truth = {
        "scene": {
            "table_z": TABLE_Z,
            "table_x": list(TABLE_X),
            "table_y": list(TABLE_Y),
            "sphere_center": list(SPHERE_CENTER),
            "sphere_radius": SPHERE_RADIUS,
            "crop_z": CROP_Z,
        },
        "frames": truth_frames,
    }
    (out / "truth.json").write_text(json.dumps(truth, indent=2) + "\n")
    return session
