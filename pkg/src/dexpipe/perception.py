"""RGB-D frames to fixed-size robot-space point-cloud observations.

The per-frame pipeline: unproject depth in the camera frame, stabilize into
the world frame using the chest camera pose (removing torso motion), apply
the 2D workspace alignment into robot space, crop below the table plane,
downsample to a fixed budget, and merge surface points of the robot hand
links so the policy can see its own hands.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import Frame, Intrinsics, PointCloud, Pose, compose, transform_points
from .kinematics import BimanualState, HandModel, RobotArmState, fk

# Default point budgets. Stored demo clouds keep STORAGE_POINTS points; the
# policy consumes POLICY_POINTS of which HAND_POINTS are robot-hand surface
# points appended after scene downsampling (split between the two hands).
STORAGE_POINTS = 5000
POLICY_POINTS = 1000
HAND_POINTS = 200
DEFAULT_SCENE_POINTS = POLICY_POINTS - HAND_POINTS

# Fixed color for merged robot points: distinctive in renders and trivially
# identifiable in tests.
ROBOT_COLOR = (0.0, 0.0, 1.0)

_GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))
_GOLDEN_FRAC = (math.sqrt(5.0) - 1.0) / 2.0


class SizeMismatch(ValueError):
    pass


class FrameTagMismatch(ValueError):
    pass


class EmptyCloud(ValueError):
    pass


@dataclass(frozen=True)
class WorkspaceAlignment:
    """2D rigid map from world to robot space: yaw about z, then the
    (dx, dy) shift in the table plane; z_table is the crop height."""

    dx: float = 0.0
    dy: float = 0.0
    yaw: float = 0.0
    z_table: float = 0.0

    def __post_init__(self):
        vals = (self.dx, self.dy, self.yaw, self.z_table)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("alignment fields must be finite")
        if not (-math.pi < self.yaw <= math.pi):
            raise ValueError("yaw must lie in (-pi, pi]")

    def pose(self) -> Pose:
        return Pose.from_axis_angle((0.0, 0.0, 1.0), self.yaw, t=(self.dx, self.dy, 0.0))


def unproject(depth: np.ndarray, rgb: np.ndarray, intrinsics: Intrinsics) -> PointCloud:
    """Depth + RGB buffers to a camera-frame cloud.

    Pixels with zero raw depth are invalid and omitted. Points come out in
    row-major pixel order, so the result is deterministic.
    """
    depth = np.asarray(depth)
    rgb = np.asarray(rgb)
    h, w = intrinsics.height, intrinsics.width
    if depth.shape != (h, w):
        raise SizeMismatch(f"depth shape {depth.shape} does not match {h}x{w}")
    if rgb.shape != (h, w, 3):
        raise SizeMismatch(f"rgb shape {rgb.shape} does not match {h}x{w}x3")

    v, u = np.nonzero(depth > 0)
    z = depth[v, u].astype(np.float64) * intrinsics.depth_scale
    x = (u.astype(np.float64) - intrinsics.cx) * z / intrinsics.fx
    y = (v.astype(np.float64) - intrinsics.cy) * z / intrinsics.fy
    colors = rgb[v, u].astype(np.float64) / 255.0
    return PointCloud(np.column_stack([x, y, z]), colors, Frame.CAMERA)


def stabilize_to_world(cloud: PointCloud, chest_pose_world: Pose) -> PointCloud:
    """Map a camera-frame cloud into the world frame.

    Static scene content becomes pose-invariant: clouds of the same scene
    taken from different chest poses coincide after stabilization.
    """
    if cloud.frame != Frame.CAMERA:
        raise FrameTagMismatch(f"expected a camera-frame cloud, got {cloud.frame}")
    return cloud.transformed(chest_pose_world, Frame.WORLD)


def align_pose(p: Pose, alignment: WorkspaceAlignment) -> Pose:
    return compose(alignment.pose(), p)


def align_points(points: np.ndarray, alignment: WorkspaceAlignment) -> np.ndarray:
    return transform_points(alignment.pose(), points)


def align_to_robot_space(
    cloud: PointCloud,
    wrist_poses,
    alignment: WorkspaceAlignment,
    tips=None,
):
    """Apply the same 2D rigid transform to the cloud and the trajectory.

    wrist_poses is a sequence of Pose; tips, when given, is an (..., 3) array
    of world points moved by the identical transform, so hand-to-scene
    geometry is preserved exactly. Returns (cloud, poses) or
    (cloud, poses, tips).
    """
    a = alignment.pose()
    out_cloud = cloud.transformed(a, Frame.ROBOT)
    out_poses = [compose(a, p) for p in wrist_poses]
    if tips is None:
        return out_cloud, out_poses
    tips = np.asarray(tips, dtype=np.float64)
    out_tips = transform_points(a, tips.reshape(-1, 3)).reshape(tips.shape)
    return out_cloud, out_poses, out_tips


def crop_table(cloud: PointCloud, z_table: float) -> PointCloud:
    """Keep strictly the points above the table plane (z > z_table)."""
    return cloud.select(cloud.xyz[:, 2] > z_table)


def downsample_uniform(cloud: PointCloud, k: int, seed: int) -> PointCloud:
    """Exactly k points, sampled uniformly with the seeded generator.

    N >= k samples without replacement; N < k keeps every point and pads
    with uniform replacement draws. Deterministic for fixed (cloud, k, seed).
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    n = len(cloud)
    if n == 0:
        raise EmptyCloud("cannot downsample an empty cloud")
    rng = np.random.default_rng(seed)
    if n >= k:
        idx = rng.choice(n, size=k, replace=False)
    else:
        idx = np.concatenate([np.arange(n), rng.integers(0, n, size=k - n)])
    return cloud.select(idx)


# ---------------------------------------------------------------------------
# robot link surface points


def sphere_surface(radius: float, n: int) -> np.ndarray:
    """n points on a sphere surface via the Fibonacci spiral; deterministic."""
    if n == 0:
        return np.zeros((0, 3))
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / n
    s = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = i * _GOLDEN_ANGLE
    return radius * np.column_stack([s * np.cos(phi), s * np.sin(phi), z])


def capsule_surface(radius: float, length: float, n: int) -> np.ndarray:
    """n points on a capsule with axis +x from 0 to length; area-weighted
    between the cylinder body and the two hemispherical caps."""
    if n == 0:
        return np.zeros((0, 3))
    area_cyl = 2.0 * math.pi * radius * length
    area_caps = 4.0 * math.pi * radius * radius
    n_cyl = int(round(n * area_cyl / (area_cyl + area_caps)))
    n_caps = n - n_cyl
    n_far = n_caps // 2 + (n_caps % 2)
    n_near = n_caps // 2

    parts = []
    if n_cyl:
        i = np.arange(n_cyl, dtype=np.float64)
        x = length * (i + 0.5) / n_cyl
        phi = i * _GOLDEN_ANGLE
        parts.append(np.column_stack([x, radius * np.cos(phi), radius * np.sin(phi)]))
    for count, (x0, sign) in ((n_far, (length, 1.0)), (n_near, (0.0, -1.0))):
        if count:
            i = np.arange(count, dtype=np.float64)
            u = (i + 0.5) / count
            s = np.sqrt(np.maximum(0.0, 1.0 - u * u))
            phi = i * _GOLDEN_ANGLE
            parts.append(
                np.column_stack(
                    [
                        x0 + sign * radius * u,
                        radius * s * np.cos(phi),
                        radius * s * np.sin(phi),
                    ]
                )
            )
    return np.vstack(parts)


def box_surface(half_extents, n: int) -> np.ndarray:
    """n points on a box surface, faces weighted by area, each face covered
    by a low-discrepancy lattice."""
    if n == 0:
        return np.zeros((0, 3))
    hx, hy, hz = (float(v) for v in half_extents)
    # (normal axis, sign, in-plane axes, half sizes, area)
    faces = []
    for axis, (a, b), (ha, hb, hn) in (
        (0, (1, 2), (hy, hz, hx)),
        (1, (0, 2), (hx, hz, hy)),
        (2, (0, 1), (hx, hy, hz)),
    ):
        for sign in (1.0, -1.0):
            faces.append((axis, sign, a, b, ha, hb, 4.0 * ha * hb))
    total_area = sum(f[6] for f in faces)
    raw = [n * f[6] / total_area for f in faces]
    counts = [int(math.floor(r)) for r in raw]
    remainders = sorted(range(6), key=lambda i: raw[i] - counts[i], reverse=True)
    for i in range(n - sum(counts)):
        counts[remainders[i % 6]] += 1

    parts = []
    for (axis, sign, a, b, ha, hb, _), count in zip(faces, counts):
        if not count:
            continue
        i = np.arange(count, dtype=np.float64)
        u = (2.0 * ((i + 0.5) / count) - 1.0) * ha
        v = (2.0 * (((i * _GOLDEN_FRAC) % 1.0)) - 1.0) * hb
        pts = np.zeros((count, 3))
        pts[:, axis] = sign * (hx, hy, hz)[axis]
        pts[:, a] = u
        pts[:, b] = v
        parts.append(pts)
    return np.vstack(parts)


@dataclass(frozen=True)
class LinkSpec:
    """One primitive attached to the hand: finger is None for a palm link
    (attached directly at the wrist), otherwise the chain index whose joint
    `joint` carries the primitive. offset places the primitive in that
    frame. size is (radius,), (radius, length), or half extents."""

    shape: str
    size: tuple
    budget: int
    finger: int | None = None
    joint: int = 0
    offset: Pose = Pose()

    def __post_init__(self):
        if self.shape not in ("sphere", "capsule", "box"):
            raise ValueError(f"unknown shape: {self.shape}")
        if self.budget < 0:
            raise ValueError("budget must be non-negative")

    def local_points(self) -> np.ndarray:
        if self.shape == "sphere":
            return sphere_surface(self.size[0], self.budget)
        if self.shape == "capsule":
            return capsule_surface(self.size[0], self.size[1], self.budget)
        return box_surface(self.size, self.budget)


@dataclass(frozen=True)
class LinkGeometry:
    """Primitive set for one hand; budgets sum to the per-hand point count."""

    specs: tuple[LinkSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "specs", tuple(self.specs))

    @property
    def total(self) -> int:
        return sum(s.budget for s in self.specs)


def default_link_geometry(model: HandModel, budget: int = HAND_POINTS // 2) -> LinkGeometry:
    """Capsules along every finger segment plus a palm box, with point
    budgets split evenly across the 16 joints and the remainder on the palm.
    Capsule lengths follow the model's segment lengths."""
    per_joint = budget // (len(model.chains) * 4 + 4)
    specs = []
    for fi, chain in enumerate(model.chains):
        for ji in range(chain.dof):
            if ji + 1 < chain.dof:
                seg = float(np.linalg.norm(chain.joints[ji + 1].origin.t))
            else:
                seg = float(np.linalg.norm(chain.tip_offset.t))
            specs.append(
                LinkSpec(
                    shape="capsule",
                    size=(0.009, max(seg, 1e-3)),
                    budget=per_joint,
                    finger=fi,
                    joint=ji,
                )
            )
    palm_budget = budget - per_joint * len(model.chains) * 4
    specs.append(
        LinkSpec(
            shape="box",
            size=(0.03, 0.045, 0.012),
            budget=palm_budget,
            finger=None,
            offset=Pose(t=(0.03, 0.0, 0.0)),
        )
    )
    return LinkGeometry(specs=tuple(specs))


def hand_surface_points(
    arm: RobotArmState, model: HandModel, geometry: LinkGeometry
) -> np.ndarray:
    """Surface points of one hand in the frame of the wrist pose's parent."""
    result = fk(model, arm.joints)
    parts = []
    for spec in geometry.specs:
        if spec.budget == 0:
            continue
        if spec.finger is None:
            frame = compose(arm.p, spec.offset)
        else:
            frame = compose(arm.p, compose(result.joint_poses[spec.finger][spec.joint], spec.offset))
        parts.append(transform_points(frame, spec.local_points()))
    if not parts:
        return np.zeros((0, 3))
    return np.vstack(parts)


def merge_robot_points(
    cloud: PointCloud,
    state: BimanualState,
    model: HandModel,
    geometry: LinkGeometry,
) -> PointCloud:
    """Append both hands' link surface points (robot-colored) to the scene.

    Output order is scene points, then left hand, then right hand; size is
    len(cloud) + 2 * geometry.total.
    """
    pts = [cloud.xyz]
    cols = [cloud.rgb]
    for arm in (state.left, state.right):
        hand = hand_surface_points(arm, model, geometry)
        pts.append(hand)
        cols.append(np.tile(np.asarray(ROBOT_COLOR, dtype=np.float64), (len(hand), 1)))
    return PointCloud(np.vstack(pts), np.vstack(cols), cloud.frame)


# ---------------------------------------------------------------------------
# observation tensors


def pack_observation(cloud: PointCloud) -> np.ndarray:
    """(K, 6) array of xyz + rgb.

    Values are rounded through f32 (the tensor file precision) so packed
    observations hold exactly what their exported form will hold."""
    return np.hstack([cloud.xyz, cloud.rgb]).astype(np.float32).astype(np.float64)


def write_observation(path, obs: np.ndarray) -> None:
    """Binary tensor: 8-byte header (u32 K, u32 6), then row-major f32."""
    obs = np.asarray(obs)
    if obs.ndim != 2 or obs.shape[1] != 6:
        raise ValueError(f"observation must have shape (K, 6), got {obs.shape}")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", obs.shape[0], 6))
        fh.write(np.ascontiguousarray(obs, dtype="<f4").tobytes())


def read_observation(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ValueError(f"{path}: truncated observation header")
    k, cols = struct.unpack("<II", raw[:8])
    if cols != 6:
        raise ValueError(f"{path}: expected 6 columns, got {cols}")
    expected = 8 + k * 6 * 4
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, got {len(raw)}")
    return np.frombuffer(raw[8:], dtype="<f4").reshape(k, 6).astype(np.float64)


def observation_seed(seed: int, index: int) -> int:
    """Stable per-frame child seed for downsampling streams."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])
