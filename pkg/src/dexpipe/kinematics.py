"""Hand kinematics: chain model, forward kinematics, damped-least-squares
fingertip IK, and human-to-robot retargeting.

The hand is four fingers of four revolute joints each (16 DoF), every chain
rooted at the wrist frame. IK is solved per finger: given the wrist, the
chains are kinematically independent, and four 4-DoF problems are far better
conditioned than one 16-DoF one. Jacobians are numeric (central differences),
which keeps the solver trivially consistent with FK.

The arm is not modeled in joint space; the wrist pose itself is the arm's
commanded state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import Pose, compose, inverse, transform_points

FINGER_NAMES = ("thumb", "index", "middle", "ring")
JOINTS_PER_FINGER = 4
NUM_JOINTS = 16
# Index of the little finger in mocap fingertip arrays; it has no robot
# counterpart and is dropped during retargeting.
LITTLE_FINGER = 4


class TooFewStates(ValueError):
    pass


@dataclass(frozen=True)
class Joint:
    """One revolute joint: fixed origin pose in the parent frame, a unit
    rotation axis in the joint frame, and angle limits in radians."""

    origin: Pose
    axis: np.ndarray
    limits: tuple[float, float]

    def __post_init__(self):
        axis = np.ascontiguousarray(self.axis, dtype=np.float64)
        if axis.shape != (3,):
            raise ValueError("axis must be a 3-vector")
        norm = float(np.linalg.norm(axis))
        if abs(norm - 1.0) > 1e-9:
            raise ValueError("axis must be unit length")
        axis.flags.writeable = False
        object.__setattr__(self, "axis", axis)
        lo, hi = float(self.limits[0]), float(self.limits[1])
        if not lo < hi:
            raise ValueError("limits must satisfy lo < hi")
        object.__setattr__(self, "limits", (lo, hi))


@dataclass(frozen=True)
class Chain:
    """Serial chain of revolute joints ending in a fixed fingertip offset."""

    joints: tuple[Joint, ...]
    tip_offset: Pose

    def __post_init__(self):
        if len(self.joints) < 1:
            raise ValueError("chain needs at least one joint")
        object.__setattr__(self, "joints", tuple(self.joints))

    @property
    def dof(self) -> int:
        return len(self.joints)


@dataclass(frozen=True)
class HandModel:
    """Four named chains rooted at the wrist frame, 16 joints total.

    Joint vector layout: J[4*i + j] is joint j of finger FINGER_NAMES[i].
    """

    chains: tuple[Chain, ...]

    def __post_init__(self):
        if len(self.chains) != len(FINGER_NAMES):
            raise ValueError(f"expected {len(FINGER_NAMES)} chains")
        for name, chain in zip(FINGER_NAMES, self.chains):
            if chain.dof != JOINTS_PER_FINGER:
                raise ValueError(f"{name} chain must have {JOINTS_PER_FINGER} joints")
        object.__setattr__(self, "chains", tuple(self.chains))

    @property
    def lower_limits(self) -> np.ndarray:
        return np.array([j.limits[0] for c in self.chains for j in c.joints])

    @property
    def upper_limits(self) -> np.ndarray:
        return np.array([j.limits[1] for c in self.chains for j in c.joints])

    def mid_range(self) -> np.ndarray:
        return 0.5 * (self.lower_limits + self.upper_limits)


def clamp_to_limits(model: HandModel, joints: np.ndarray) -> np.ndarray:
    return np.clip(np.asarray(joints, dtype=np.float64), model.lower_limits, model.upper_limits)


def within_limits(model: HandModel, joints: np.ndarray, tol: float = 0.0) -> bool:
    j = np.asarray(joints, dtype=np.float64)
    return bool(
        np.all(j >= model.lower_limits - tol) and np.all(j <= model.upper_limits + tol)
    )


# ---------------------------------------------------------------------------
# robot state


@dataclass(frozen=True)
class RobotArmState:
    """Proprioception of one arm: wrist pose plus 16 hand joint angles."""

    p: Pose
    joints: np.ndarray

    def __post_init__(self):
        joints = np.ascontiguousarray(self.joints, dtype=np.float64)
        if joints.shape != (NUM_JOINTS,):
            raise ValueError(f"joints must have shape ({NUM_JOINTS},), got {joints.shape}")
        if not np.all(np.isfinite(joints)):
            raise ValueError("joints must be finite")
        joints.flags.writeable = False
        object.__setattr__(self, "joints", joints)


@dataclass(frozen=True)
class BimanualState:
    """Both arms. Flat layout (46 floats): left pose7, right pose7,
    left joints 16, right joints 16 — the wire and log ordering."""

    left: RobotArmState
    right: RobotArmState

    def to_flat(self) -> np.ndarray:
        return np.concatenate(
            [
                self.left.p.to_list(),
                self.right.p.to_list(),
                self.left.joints,
                self.right.joints,
            ]
        )

    @staticmethod
    def from_flat(values) -> "BimanualState":
        v = np.asarray(values, dtype=np.float64)
        if v.shape != (46,):
            raise ValueError(f"flat state must have shape (46,), got {v.shape}")
        return BimanualState(
            left=RobotArmState(Pose.from_list(v[0:7]), v[14:30]),
            right=RobotArmState(Pose.from_list(v[7:14]), v[30:46]),
        )

    def arm(self, side: str) -> RobotArmState:
        if side == "left":
            return self.left
        if side == "right":
            return self.right
        raise ValueError(f"unknown side: {side}")

    def with_arm(self, side: str, state: RobotArmState) -> "BimanualState":
        if side == "left":
            return BimanualState(left=state, right=self.right)
        if side == "right":
            return BimanualState(left=self.left, right=state)
        raise ValueError(f"unknown side: {side}")


# ---------------------------------------------------------------------------
# forward kinematics


def fk_chain(chain: Chain, q: Sequence[float]) -> tuple[np.ndarray, list[Pose]]:
    """Tip position and per-joint poses of one chain, all in the root frame."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (chain.dof,):
        raise ValueError(f"expected {chain.dof} angles, got {q.shape}")
    pose = Pose()
    poses = []
    for joint, angle in zip(chain.joints, q):
        pose = compose(pose, compose(joint.origin, Pose.from_axis_angle(joint.axis, float(angle))))
        poses.append(pose)
    tip = compose(pose, chain.tip_offset).t
    return tip, poses


@dataclass(frozen=True)
class FkResult:
    tips: np.ndarray
    joint_poses: tuple[tuple[Pose, ...], ...]
    clamped: bool


def fk(model: HandModel, joints: np.ndarray) -> FkResult:
    """Fingertip positions (4, 3) and per-joint poses in the wrist frame.

    Out-of-limit angles are clamped and flagged rather than rejected."""
    j = np.asarray(joints, dtype=np.float64)
    if j.shape != (NUM_JOINTS,):
        raise ValueError(f"joints must have shape ({NUM_JOINTS},), got {j.shape}")
    clamped_j = clamp_to_limits(model, j)
    was_clamped = bool(np.any(clamped_j != j))
    tips = np.zeros((4, 3))
    poses = []
    for i, chain in enumerate(model.chains):
        tip, chain_poses = fk_chain(chain, clamped_j[4 * i : 4 * i + 4])
        tips[i] = tip
        poses.append(tuple(chain_poses))
    return FkResult(tips=tips, joint_poses=tuple(poses), clamped=was_clamped)


def fingertip_jacobian(chain: Chain, q: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """(3, dof) Jacobian of the tip position by central differences."""
    q = np.asarray(q, dtype=np.float64)
    J = np.zeros((3, chain.dof))
    for k in range(chain.dof):
        qp = q.copy()
        qm = q.copy()
        qp[k] += h
        qm[k] -= h
        tp, _ = fk_chain(chain, qp)
        tm, _ = fk_chain(chain, qm)
        J[:, k] = (tp - tm) / (2.0 * h)
    return J


# ---------------------------------------------------------------------------
# damped-least-squares IK


@dataclass(frozen=True)
class IkParams:
    """DLS solver knobs. damping is the lambda in
    dq = J^T (J J^T + lambda^2 I)^-1 e."""

    damping: float = 1e-3
    tol: float = 1e-4
    max_iter: int = 100
    step_clamp: float = 0.2
    fd_step: float = 1e-6

    def __post_init__(self):
        for name in ("damping", "tol", "max_iter", "step_clamp", "fd_step"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class IkResult:
    joints: np.ndarray
    residuals: np.ndarray
    iterations: int


# Bound on lambda doublings inside one iteration before declaring no progress.
_MAX_DAMPING_RETRIES = 12
# A descent is stalled after this many consecutive iterations whose relative
# improvement falls below _STALL_REL_IMPROVEMENT.
_STALL_STRIKES = 3
_STALL_REL_IMPROVEMENT = 1e-3
# Restart points as fractions of the limit box, tried in order when the
# warm-started descent stalls above tol. Position-only IK on a 4-DoF finger
# has mirror-image basins (most visibly in thumb yaw); a stalled descent in
# the wrong basin cannot cross over, but a restart from the far side can.
_RESTART_FRACTIONS = (0.75, 0.25, 0.9, 0.1)


def _dls_descent(chain: Chain, target, q0, params: IkParams, budget: int, lo, hi):
    """One damped-least-squares descent; returns (q, residual, iters_used).

    Stops at tol, on budget exhaustion, when no damping retry can find a
    non-increasing step, or when progress stalls (accepted residuals are
    monotone by construction)."""
    q = np.clip(np.asarray(q0, dtype=np.float64), lo, hi)
    tip, _ = fk_chain(chain, q)
    err = target - tip
    res = float(np.linalg.norm(err))
    if res <= params.tol or budget <= 0:
        return q, res, 0

    iterations = 0
    strikes = 0
    eye = np.eye(3)
    for _ in range(budget):
        iterations += 1
        J = fingertip_jacobian(chain, q, params.fd_step)
        lam = params.damping
        accepted = False
        for _ in range(_MAX_DAMPING_RETRIES):
            dq = J.T @ np.linalg.solve(J @ J.T + lam * lam * eye, err)
            worst = float(np.max(np.abs(dq)))
            if worst > params.step_clamp:
                dq = dq * (params.step_clamp / worst)
            q_new = np.clip(q + dq, lo, hi)
            tip_new, _ = fk_chain(chain, q_new)
            err_new = target - tip_new
            res_new = float(np.linalg.norm(err_new))
            if res_new <= res:
                gained = res - res_new
                q, err, res = q_new, err_new, res_new
                accepted = True
                # Stalled only when progress is negligible both relative to
                # the remaining error and in absolute terms; out-of-reach
                # targets polish toward the workspace boundary in sub-tol
                # relative steps that are still worth taking.
                stalled = gained < _STALL_REL_IMPROVEMENT * res and gained < params.tol
                strikes = strikes + 1 if stalled else 0
                break
            lam *= 2.0
        if not accepted or strikes >= _STALL_STRIKES:
            break
        if res <= params.tol:
            break
    return q, res, iterations


def _ik_chain(chain: Chain, target: np.ndarray, q0: np.ndarray, params: IkParams):
    lo = np.array([j.limits[0] for j in chain.joints])
    hi = np.array([j.limits[1] for j in chain.joints])
    best_q, best_res, used = _dls_descent(chain, target, q0, params, params.max_iter, lo, hi)
    # Warm start kept whenever it works; restarts only rescue stalled solves,
    # and the total iteration count stays within max_iter.
    for frac in _RESTART_FRACTIONS:
        if best_res <= params.tol or used >= params.max_iter:
            break
        seed = lo + frac * (hi - lo)
        q, res, iters = _dls_descent(chain, target, seed, params, params.max_iter - used, lo, hi)
        used += iters
        if res < best_res:
            best_q, best_res = q, res
    return best_q, best_res, used


def ik_fingertips(
    model: HandModel,
    targets: np.ndarray,
    j_init: np.ndarray,
    params: IkParams | None = None,
) -> IkResult:
    """Solve each finger independently toward its (wrist-frame) tip target.

    Unreachable targets are not an error: the solver returns its best-effort
    angles with the residual reported. Returned joints are always finite and
    within limits; per-step residual norms never increase (the damping is
    doubled and the step retried whenever a step would regress).
    """
    params = params or IkParams()
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != (4, 3):
        raise ValueError(f"targets must have shape (4, 3), got {targets.shape}")
    if not np.all(np.isfinite(targets)):
        raise ValueError("targets must be finite")
    j_init = np.asarray(j_init, dtype=np.float64)
    if j_init.shape != (NUM_JOINTS,):
        raise ValueError(f"j_init must have shape ({NUM_JOINTS},)")

    joints = np.zeros(NUM_JOINTS)
    residuals = np.zeros(4)
    iterations = 0
    for i, chain in enumerate(model.chains):
        q, res, iters = _ik_chain(chain, targets[i], j_init[4 * i : 4 * i + 4], params)
        joints[4 * i : 4 * i + 4] = q
        residuals[i] = res
        iterations = max(iterations, iters)
    return IkResult(joints=joints, residuals=residuals, iterations=iterations)


# ---------------------------------------------------------------------------
# retargeting


@dataclass(frozen=True)
class RetargetResult:
    state: RobotArmState
    residuals: np.ndarray
    iterations: int


def wrist_frame_targets(
    tips_world: np.ndarray, wrist_world: Pose, gamma: float = 1.0
) -> np.ndarray:
    """Map world-frame fingertips into the wrist frame, drop the little
    finger, and optionally scale about the wrist origin by gamma (to bridge
    the human/robot hand size gap)."""
    tips_world = np.asarray(tips_world, dtype=np.float64)
    if tips_world.shape != (5, 3):
        raise ValueError(f"tips_world must have shape (5, 3), got {tips_world.shape}")
    tips_wrist = transform_points(inverse(wrist_world), tips_world)
    targets = np.delete(tips_wrist, LITTLE_FINGER, axis=0)
    if gamma != 1.0:
        targets = gamma * targets
    return targets


def retarget_frame(
    tips_world: np.ndarray,
    wrist_world: Pose,
    model: HandModel,
    j_prev: np.ndarray,
    params: IkParams | None = None,
    gamma: float = 1.0,
) -> RetargetResult:
    """One mocap frame -> robot arm state.

    The human wrist pose is adopted verbatim as the robot wrist; fingers are
    matched by position IK in the wrist frame, warm-started from the previous
    frame's solution so trajectories stay smooth.
    """
    targets = wrist_frame_targets(tips_world, wrist_world, gamma)
    result = ik_fingertips(model, targets, j_prev, params)
    return RetargetResult(
        state=RobotArmState(p=wrist_world, joints=result.joints),
        residuals=result.residuals,
        iterations=result.iterations,
    )


def build_action_labels(states: Sequence) -> list:
    """Actions are the next future states: a_t = s_{t+1}, length n-1."""
    if len(states) < 2:
        raise TooFewStates(f"need at least 2 states, got {len(states)}")
    return list(states[1:])


# ---------------------------------------------------------------------------
# model files


def model_to_dict(model: HandModel) -> dict:
    home = fk(model, np.zeros(NUM_JOINTS)).tips
    return {
        "version": 1,
        "fingers": [
            {
                "name": name,
                "joints": [
                    {
                        "origin": j.origin.to_list(),
                        "axis": j.axis.tolist(),
                        "limits": list(j.limits),
                    }
                    for j in chain.joints
                ],
                "tip_offset": chain.tip_offset.to_list(),
            }
            for name, chain in zip(FINGER_NAMES, model.chains)
        ],
        "home_tips": {
            name: home[i].tolist() for i, name in enumerate(FINGER_NAMES)
        },
    }


def model_from_dict(d: dict) -> HandModel:
    if d.get("version") != 1:
        raise ValueError(f"unsupported hand model version: {d.get('version')}")
    by_name = {f["name"]: f for f in d["fingers"]}
    chains = []
    for name in FINGER_NAMES:
        f = by_name[name]
        joints = tuple(
            Joint(
                origin=Pose.from_list(j["origin"]),
                axis=np.array(j["axis"], dtype=np.float64),
                limits=(j["limits"][0], j["limits"][1]),
            )
            for j in f["joints"]
        )
        chains.append(Chain(joints=joints, tip_offset=Pose.from_list(f["tip_offset"])))
    return HandModel(chains=tuple(chains))


def save_hand_model(model: HandModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2, sort_keys=True) + "\n")


def load_hand_model(path) -> HandModel:
    return model_from_dict(json.loads(Path(path).read_text()))


def default_hand_model() -> HandModel:
    """Built-in 16-DoF model with LEAP-like topology.

    Wrist frame: x distal (fingers point along +x at zero angles), z palmar
    normal. Index/middle/ring: one abduction joint about z then three flexion
    joints about y. Thumb: a yaw joint whose origin is pre-rotated about z so
    the zero pose points the thumb sideways, then three flexion joints.
    Dimensions are meters; treated as configuration, not as a faithful copy
    of any specific hand.
    """

    def finger(y_off: float) -> Chain:
        return Chain(
            joints=(
                Joint(Pose(t=(0.045, y_off, 0.0)), np.array([0.0, 0.0, 1.0]), (-0.47, 0.47)),
                Joint(Pose(t=(0.01, 0.0, 0.0)), np.array([0.0, 1.0, 0.0]), (-0.35, 1.88)),
                Joint(Pose(t=(0.05, 0.0, 0.0)), np.array([0.0, 1.0, 0.0]), (-0.1, 1.9)),
                Joint(Pose(t=(0.04, 0.0, 0.0)), np.array([0.0, 1.0, 0.0]), (-0.1, 1.8)),
            ),
            tip_offset=Pose(t=(0.03, 0.0, 0.0)),
        )

    thumb = Chain(
        joints=(
            Joint(
                Pose.from_axis_angle((0.0, 0.0, 1.0), 1.0, t=(0.01, 0.045, 0.0)),
                np.array([0.0, 0.0, 1.0]),
                (-1.2, 1.2),
            ),
            Joint(Pose(t=(0.02, 0.0, 0.0)), np.array([0.0, 1.0, 0.0]), (-0.8, 1.2)),
            Joint(Pose(t=(0.045, 0.0, 0.0)), np.array([0.0, 1.0, 0.0]), (-0.3, 1.6)),
            Joint(Pose(t=(0.035, 0.0, 0.0)), np.array([0.0, 1.0, 0.0]), (-0.3, 1.7)),
        ),
        tip_offset=Pose(t=(0.03, 0.0, 0.0)),
    )
    return HandModel(chains=(thumb, finger(0.03), finger(0.0), finger(-0.03)))


def load_default_hand_model() -> HandModel:
    """The packaged hand_model.json (identical to default_hand_model())."""
    data = resources.files("dexpipe.data").joinpath("hand_model.json").read_text()
    return model_from_dict(json.loads(data))
