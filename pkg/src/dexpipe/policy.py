"""Policy contract and a nearest-neighbor replay baseline.

A policy maps one observation (K x 6 cloud + proprioception) to a chunk of d
future goal states. The replay baseline looks up the nearest stored step by
proprioception distance and replays that demo's stored actions, which makes
closed-loop rollouts exactly reproducible from training data without any
learning machinery.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .geometry import Pose, rotation_angle
from .kinematics import BimanualState

DEFAULT_CHUNK_LENGTH = 8
MAX_CHUNK_LENGTH = 64

# Proprioception distance weights: translation meters, rotation radians,
# joint-vector L2, summed over both arms.
W_POSITION = 1.0
W_ROTATION = 0.3
W_JOINTS = 0.1


class EmptyDataset(ValueError):
    pass


@dataclass(frozen=True)
class Observation:
    """Policy input: the packed cloud and the robot's own state."""

    cloud: np.ndarray
    state: BimanualState

    def __post_init__(self):
        cloud = np.ascontiguousarray(self.cloud, dtype=np.float64)
        if cloud.ndim != 2 or cloud.shape[1] != 6:
            raise ValueError(f"cloud must have shape (K, 6), got {cloud.shape}")
        cloud.flags.writeable = False
        object.__setattr__(self, "cloud", cloud)


@dataclass(frozen=True)
class ActionChunk:
    actions: tuple[BimanualState, ...]

    def __post_init__(self):
        actions = tuple(self.actions)
        if not 1 <= len(actions) <= MAX_CHUNK_LENGTH:
            raise ValueError(f"chunk length must be in [1, {MAX_CHUNK_LENGTH}]")
        object.__setattr__(self, "actions", actions)

    @property
    def d(self) -> int:
        return len(self.actions)


class Policy(abc.ABC):
    """Read-only after construction; act() must return exactly d finite
    actions with joints within limits."""

    d: int

    @abc.abstractmethod
    def act(self, obs: Observation) -> ActionChunk:
        ...


class ConstantPolicy(Policy):
    """Emits d copies of a fixed state; the simplest conforming policy."""

    def __init__(self, state: BimanualState, d: int = 1):
        if not 1 <= d <= MAX_CHUNK_LENGTH:
            raise ValueError(f"d must be in [1, {MAX_CHUNK_LENGTH}]")
        self.state = state
        self.d = d

    def act(self, obs: Observation) -> ActionChunk:
        return ActionChunk(actions=(self.state,) * self.d)


def arm_distance(a_pose: Pose, a_joints, b_pose: Pose, b_joints) -> float:
    dt = float(np.linalg.norm(a_pose.t - b_pose.t))
    dr = rotation_angle(a_pose.q, b_pose.q)
    dj = float(np.linalg.norm(np.asarray(a_joints) - np.asarray(b_joints)))
    return W_POSITION * dt + W_ROTATION * dr + W_JOINTS * dj


def state_distance(a: BimanualState, b: BimanualState) -> float:
    """Weighted proprioception distance summed over both arms."""
    return arm_distance(a.left.p, a.left.joints, b.left.p, b.left.joints) + arm_distance(
        a.right.p, a.right.joints, b.right.p, b.right.joints
    )


def chamfer_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric mean nearest-neighbor xyz distance between two clouds."""
    ax = np.asarray(a, dtype=np.float64)[:, :3]
    bx = np.asarray(b, dtype=np.float64)[:, :3]
    d2 = np.sum((ax[:, None, :] - bx[None, :, :]) ** 2, axis=2)
    return float(np.sqrt(d2.min(axis=1)).mean() + np.sqrt(d2.min(axis=0)).mean())


class ReplayPolicy(Policy):
    """Nearest-neighbor action replay over a demo dataset.

    The query state is compared with every stored step's state; the winner's
    demo supplies d consecutive stored actions from that step on, the tail
    padded by repeating the demo's final action. Ties go to the lowest
    (demo index, step index). The cloud term is off by default so every
    lookup is exactly reproducible by a brute-force oracle; enable
    use_cloud for a chamfer-distance tiebreaker term.
    """

    def __init__(
        self,
        dataset: Dataset,
        d: int = DEFAULT_CHUNK_LENGTH,
        use_cloud: bool = False,
        w_cloud: float = 1.0,
    ):
        if not 1 <= d <= MAX_CHUNK_LENGTH:
            raise ValueError(f"d must be in [1, {MAX_CHUNK_LENGTH}]")
        if dataset.step_count == 0:
            raise EmptyDataset("replay policy needs a dataset with steps")
        self.d = d
        self.use_cloud = use_cloud
        self.w_cloud = w_cloud
        self._entries = []
        for di, demo in enumerate(dataset.demos):
            actions = [s.action for s in demo.steps]
            for si, step in enumerate(demo.steps):
                # Chunk = this demo's actions from si on, padded at the tail.
                chunk = actions[si : si + MAX_CHUNK_LENGTH]
                self._entries.append((di, si, step, chunk, actions))

    def act(self, obs: Observation) -> ActionChunk:
        best = None
        best_key = None
        for di, si, step, chunk, actions in self._entries:
            dist = state_distance(obs.state, step.state)
            if self.use_cloud:
                dist += self.w_cloud * chamfer_distance(obs.cloud, step.obs)
            key = (dist, di, si)
            if best_key is None or key < best_key:
                best_key = key
                best = (chunk, actions)
        chunk, actions = best
        out = list(chunk[: self.d])
        while len(out) < self.d:
            out.append(actions[-1])
        return ActionChunk(actions=tuple(out))
