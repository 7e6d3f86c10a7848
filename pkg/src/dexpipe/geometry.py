"""Rigid transforms, point clouds, and camera intrinsics.

Poses are represented as a unit quaternion plus a translation vector rather
than a 4x4 matrix: composition stays cheap, normalization drift is easy to
control, and the wire format (seven floats) is compact. Quaternions use
(w, x, y, z) ordering and are kept in canonical form with w >= 0.

All distances are meters, all angles radians.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

# Unit-norm slack tolerated before a quaternion is renormalized. Keeping the
# check lazy makes construction idempotent, so values survive serialization
# round trips bit for bit.
QUAT_NORM_TOL = 1e-9

_IDENTITY_QUAT = (1.0, 0.0, 0.0, 0.0)


class Frame(enum.Enum):
    """Coordinate frame a point cloud is expressed in."""

    CAMERA = "camera"
    WORLD = "world"
    ROBOT = "robot"
    LEFT_HUB = "left_hub"
    RIGHT_HUB = "right_hub"


def _as_vec(x, n, name):
    a = np.asarray(x, dtype=np.float64)
    if a.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} must be finite")
    return a


def _quat_mul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def _quat_rotate(q, v):
    # v' = v + 2w(u x v) + 2(u x (u x v)) with u the vector part.
    u = q[1:]
    t = 2.0 * np.cross(u, v)
    return v + q[0] * t + np.cross(u, t)


def _quat_rotate_many(q, pts):
    u = q[1:]
    t = 2.0 * np.cross(np.broadcast_to(u, pts.shape), pts)
    return pts + q[0] * t + np.cross(np.broadcast_to(u, t.shape), t)


@dataclass(frozen=True)
class Pose:
    """Rigid transform: rotation as a unit quaternion (w, x, y, z) plus a
    translation, mapping points from the child frame into the parent frame.

    The constructor validates finiteness, renormalizes the quaternion when its
    norm drifts beyond ``QUAT_NORM_TOL``, and flips the sign so w >= 0. Both
    fixups are skipped when already satisfied, so constructing a Pose from its
    own fields reproduces them exactly.
    """

    q: np.ndarray = field(default=_IDENTITY_QUAT)
    t: np.ndarray = field(default=(0.0, 0.0, 0.0))

    def __post_init__(self):
        q = _as_vec(self.q, 4, "quaternion")
        t = _as_vec(self.t, 3, "translation")
        norm = float(np.linalg.norm(q))
        if norm == 0.0:
            raise ValueError("quaternion must be nonzero")
        if abs(norm - 1.0) > QUAT_NORM_TOL:
            q = q / norm
        if q[0] < 0.0:
            q = -q
        q.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "t", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_axis_angle(axis, angle: float, t=(0.0, 0.0, 0.0)) -> "Pose":
        """Pose rotating by ``angle`` radians about ``axis`` (any norm)."""
        a = _as_vec(axis, 3, "axis")
        n = float(np.linalg.norm(a))
        if n == 0.0:
            raise ValueError("axis must be nonzero")
        half = 0.5 * float(angle)
        q = np.concatenate(([math.cos(half)], math.sin(half) / n * a))
        return Pose(q, t)

    def to_list(self) -> list:
        """Seven floats [w, x, y, z, tx, ty, tz]."""
        return [float(v) for v in np.concatenate((self.q, self.t))]

    @staticmethod
    def from_list(values) -> "Pose":
        v = _as_vec(values, 7, "pose7")
        return Pose(v[:4], v[4:])

    def rotation_matrix(self) -> np.ndarray:
        w, x, y, z = self.q
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    def __repr__(self):
        q = ", ".join(f"{v:.6f}" for v in self.q)
        t = ", ".join(f"{v:.6f}" for v in self.t)
        return f"Pose(q=[{q}], t=[{t}])"


IDENTITY = Pose()


def compose(a: Pose, b: Pose) -> Pose:
    """Transform composing ``a`` after ``b``: (a*b)(x) == a(b(x))."""
    return Pose(_quat_mul(a.q, b.q), a.t + _quat_rotate(a.q, b.t))


def inverse(p: Pose) -> Pose:
    q_inv = np.array([p.q[0], -p.q[1], -p.q[2], -p.q[3]])
    return Pose(q_inv, -_quat_rotate(q_inv, p.t))


def transform_point(p: Pose, x) -> np.ndarray:
    return _quat_rotate(p.q, _as_vec(x, 3, "point")) + p.t


def transform_points(p: Pose, xs: np.ndarray) -> np.ndarray:
    """Apply ``p`` to an (N, 3) array of points."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != 3:
        raise ValueError(f"points must have shape (N, 3), got {xs.shape}")
    return _quat_rotate_many(p.q, xs) + p.t


def rotation_angle(qa: np.ndarray, qb: np.ndarray) -> float:
    """Geodesic angle between two unit quaternions, in [0, pi]."""
    dot = abs(float(np.dot(qa, qb)))
    return 2.0 * math.acos(min(dot, 1.0))


def pose_distance(a: Pose, b: Pose) -> tuple[float, float]:
    """(translation distance, rotation geodesic angle) between two poses."""
    return float(np.linalg.norm(a.t - b.t)), rotation_angle(a.q, b.q)


def quat_slerp(qa: np.ndarray, qb: np.ndarray, s: float) -> np.ndarray:
    """Spherical interpolation from qa (s=0) to qb (s=1) along the shorter arc."""
    dot = float(np.dot(qa, qb))
    qb = np.asarray(qb, dtype=np.float64)
    if dot < 0.0:
        qb = -qb
        dot = -dot
    if dot > 1.0 - 1e-12:
        # Nearly parallel: lerp and renormalize.
        q = qa + s * (qb - qa)
        return q / np.linalg.norm(q)
    theta = math.acos(min(dot, 1.0))
    sin_theta = math.sin(theta)
    wa = math.sin((1.0 - s) * theta) / sin_theta
    wb = math.sin(s * theta) / sin_theta
    return wa * np.asarray(qa, dtype=np.float64) + wb * qb


def scale_pose(p: Pose, s: float) -> Pose:
    """Fractional transform: translation scaled linearly, rotation moved
    along its geodesic from identity by fraction ``s``. scale_pose(p, 1) == p
    and scale_pose(p, 0) is the identity."""
    if s == 0.0:
        return Pose()
    if s == 1.0:
        return p
    q = quat_slerp(np.array(_IDENTITY_QUAT, dtype=np.float64), p.q, s)
    return Pose(q, s * p.t)


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera model plus the raw-to-meters depth scale."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    depth_scale: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if self.depth_scale <= 0:
            raise ValueError("depth_scale must be positive")

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
            "depth_scale": self.depth_scale,
        }

    @staticmethod
    def from_dict(d: dict) -> "Intrinsics":
        return Intrinsics(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
            depth_scale=float(d["depth_scale"]),
        )


class PointCloud:
    """Colored point set tagged with the frame it lives in.

    xyz is (N, 3) float64 meters, rgb is (N, 3) float64 in [0, 1]. Instances
    are treated as immutable; transforms return new clouds.
    """

    __slots__ = ("xyz", "rgb", "frame")

    def __init__(self, xyz, rgb, frame: Frame | None = None):
        xyz = np.ascontiguousarray(xyz, dtype=np.float64)
        rgb = np.ascontiguousarray(rgb, dtype=np.float64)
        if xyz.ndim != 2 or xyz.shape[1] != 3:
            raise ValueError(f"xyz must have shape (N, 3), got {xyz.shape}")
        if rgb.shape != xyz.shape:
            raise ValueError(f"rgb shape {rgb.shape} does not match xyz {xyz.shape}")
        if not np.all(np.isfinite(xyz)):
            raise ValueError("xyz must be finite")
        if rgb.size and (rgb.min() < 0.0 or rgb.max() > 1.0):
            raise ValueError("rgb values must lie in [0, 1]")
        xyz.flags.writeable = False
        rgb.flags.writeable = False
        self.xyz = xyz
        self.rgb = rgb
        self.frame = frame

    def __len__(self):
        return self.xyz.shape[0]

    @staticmethod
    def empty(frame: Frame | None = None) -> "PointCloud":
        return PointCloud(np.zeros((0, 3)), np.zeros((0, 3)), frame)

    def transformed(self, p: Pose, frame: Frame | None = None) -> "PointCloud":
        """Cloud with ``p`` applied to every point, retagged to ``frame``
        (or keeping the current tag when frame is None)."""
        return PointCloud(
            transform_points(p, self.xyz),
            self.rgb,
            self.frame if frame is None else frame,
        )

    def select(self, idx) -> "PointCloud":
        return PointCloud(self.xyz[idx], self.rgb[idx], self.frame)

    def __repr__(self):
        tag = self.frame.value if self.frame else "untagged"
        return f"PointCloud({len(self)} pts, {tag})"
