"""Hierarchical position controller over a kinematic plant.

The policy issues goal states; the low-level loop interpolates toward the
active goal at a fixed rate with per-tick motion bounds, pops the next goal
on arrival, and requeries the policy chunk when h ticks pass without
reaching the goal. The plant is purely kinematic: commanded interpolation is
the motion, there are no dynamics. Logs record COMMANDED actions, not
achieved poses.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .dataset import Demo, Step
from .geometry import Pose, PointCloud, pose_distance, quat_slerp
from .kinematics import BimanualState, HandModel, RobotArmState
from .perception import (
    DEFAULT_SCENE_POINTS,
    LinkGeometry,
    downsample_uniform,
    merge_robot_points,
    observation_seed,
    pack_observation,
)
from .policy import Observation, Policy


class StopRollout(Exception):
    """Raised by a gate callback to abort a rollout cleanly."""


@dataclass(frozen=True)
class ControllerParams:
    rate: float = 20.0
    v_max: float = 0.5
    omega_max: float = 2.0
    dq_max: float = 4.0
    eps_p: float = 0.005
    eps_r: float = 0.05
    eps_j: float = 0.05
    h: int = 10

    def __post_init__(self):
        for name in ("rate", "v_max", "omega_max", "dq_max", "eps_p", "eps_r", "eps_j"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.h < 1:
            raise ValueError("h must be >= 1")

    def to_dict(self) -> dict:
        return {
            "rate": self.rate,
            "v_max": self.v_max,
            "omega_max": self.omega_max,
            "dq_max": self.dq_max,
            "eps_p": self.eps_p,
            "eps_r": self.eps_r,
            "eps_j": self.eps_j,
            "h": self.h,
        }


@dataclass(frozen=True)
class PlantState:
    state: BimanualState
    tick: int = 0


def _step_arm(current: RobotArmState, goal: RobotArmState, params: ControllerParams) -> RobotArmState:
    dt = 1.0 / params.rate

    delta = goal.p.t - current.p.t
    dist = float(np.linalg.norm(delta))
    max_step = params.v_max * dt
    if dist <= max_step:
        t_new = goal.p.t
    else:
        t_new = current.p.t + delta * (max_step / dist)

    _, angle = pose_distance(current.p, goal.p)
    max_turn = params.omega_max * dt
    if angle <= max_turn:
        q_new = goal.p.q
    else:
        q_new = quat_slerp(current.p.q, goal.p.q, max_turn / angle)

    dq = goal.joints - current.joints
    max_dq = params.dq_max * dt
    j_new = np.where(np.abs(dq) <= max_dq, goal.joints, current.joints + np.sign(dq) * max_dq)

    return RobotArmState(p=Pose(q_new, t_new), joints=j_new)


def step_toward(current: BimanualState, goal: BimanualState, params: ControllerParams) -> BimanualState:
    """One bounded interpolation tick toward the goal; exact arrival is
    permitted (each quantity lands on the goal once within its per-tick
    bound, never overshooting)."""
    return BimanualState(
        left=_step_arm(current.left, goal.left, params),
        right=_step_arm(current.right, goal.right, params),
    )


def _arm_reached(current: RobotArmState, goal: RobotArmState, params: ControllerParams) -> bool:
    terr, rerr = pose_distance(current.p, goal.p)
    jerr = float(np.max(np.abs(current.joints - goal.joints)))
    return terr <= params.eps_p and rerr <= params.eps_r and jerr <= params.eps_j


def reached(current: BimanualState, goal: BimanualState, params: ControllerParams) -> bool:
    """Goal attainment: translation, rotation, and worst joint all within
    their thresholds, for both arms."""
    return _arm_reached(current.left, goal.left, params) and _arm_reached(
        current.right, goal.right, params
    )


# ---------------------------------------------------------------------------
# observation synthesis


class ObservationSynth:
    """Builds the policy observation from the plant each tick: downsample a
    static scene cloud with a per-tick child seed, then merge both hands'
    link points — the simulated stand-in for a fixed evaluation camera."""

    def __init__(
        self,
        scene: PointCloud,
        model: HandModel,
        geometry: LinkGeometry,
        k_scene: int = DEFAULT_SCENE_POINTS,
        seed: int = 0,
    ):
        if len(scene) == 0:
            raise ValueError("scene cloud must not be empty")
        self.scene = scene
        self.model = model
        self.geometry = geometry
        self.k_scene = k_scene
        self.seed = seed

    def __call__(self, state: BimanualState, tick: int) -> np.ndarray:
        scene = downsample_uniform(self.scene, self.k_scene, observation_seed(self.seed, tick))
        merged = merge_robot_points(scene, state, self.model, self.geometry)
        return pack_observation(merged)


# ---------------------------------------------------------------------------
# rollout


@dataclass(frozen=True)
class RolloutTick:
    tick: int
    state: BimanualState
    raw_action: BimanualState
    corrected_action: BimanualState
    mode: str
    query: bool
    obs: np.ndarray


@dataclass
class RolloutLog:
    ticks: list[RolloutTick] = field(default_factory=list)
    correction_demo: Demo | None = None
    policy_queries: int = 0

    def to_jsonl(self) -> str:
        lines = []
        for t in self.ticks:
            lines.append(
                json.dumps(
                    {
                        "tick": t.tick,
                        "state": t.state.to_flat().tolist(),
                        "raw_action": t.raw_action.to_flat().tolist(),
                        "corrected_action": t.corrected_action.to_flat().tolist(),
                        "mode": t.mode,
                        "query_flag": t.query,
                    },
                    separators=(",", ":"),
                )
            )
        return "\n".join(lines) + ("\n" if lines else "")

    def save(self, path) -> None:
        Path(path).write_text(self.to_jsonl())


def load_rollout_log(path) -> list[dict]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            out.append(json.loads(line))
    return out


def rollout(
    policy: Policy,
    initial: PlantState,
    ticks: int,
    params: ControllerParams | None = None,
    observe: Callable[[BimanualState, int], np.ndarray] | None = None,
    corrector=None,
    record_correction: bool | None = None,
    gate: Callable[[int], None] | None = None,
    on_tick: Callable[[RolloutTick], None] | None = None,
) -> RolloutLog:
    """Run the control loop for a fixed number of ticks.

    Per tick: synthesize the observation; pop the next goal when there is no
    active goal, the goal is reached, or h ticks have elapsed since the last
    pop (querying policy.act whenever the chunk runs dry); apply the optional
    correction controller to the active goal; log the commanded action; and
    integrate the plant one bounded step toward it.

    `gate` runs before each tick (pause/lockstep hooks; it may raise
    StopRollout). `on_tick` observes each logged tick (broadcast hook). When
    a corrector is attached, every tick is also recorded as a correction
    step (obs, state, corrected action, mode) and closed into a Demo at the
    end of the rollout.
    """
    params = params or ControllerParams()
    if observe is None:
        def observe(state, tick):  # minimal single-point observation
            return np.zeros((1, 6))
    if record_correction is None:
        record_correction = corrector is not None

    log = RolloutLog()
    state = initial.state
    queue: list[BimanualState] = []
    goal: BimanualState | None = None
    since_pop = 0
    last_command: BimanualState = initial.state
    d_steps: list[Step] = []
    d_modes: list[str] = []

    for i in range(ticks):
        tick = initial.tick + i
        if gate is not None:
            try:
                gate(tick)
            except StopRollout:
                break

        obs_arr = observe(state, tick)
        popped = False
        if goal is None or since_pop >= params.h or reached(state, goal, params):
            if not queue:
                chunk = policy.act(Observation(cloud=obs_arr, state=state))
                queue = list(chunk.actions)
                log.policy_queries += 1
            goal = queue.pop(0)
            since_pop = 0
            popped = True

        raw = goal
        if corrector is not None:
            corrected, mode = corrector.apply(tick, raw, last_command)
        else:
            corrected, mode = raw, "residual"

        entry = RolloutTick(
            tick=tick,
            state=state,
            raw_action=raw,
            corrected_action=corrected,
            mode=mode,
            query=popped,
            obs=obs_arr,
        )
        log.ticks.append(entry)
        if on_tick is not None:
            on_tick(entry)
        if record_correction:
            d_steps.append(Step(obs=obs_arr, state=state, action=corrected))
            d_modes.append(mode)

        state = step_toward(state, corrected, params)
        last_command = corrected
        since_pop += 1

    if record_correction and d_steps:
        log.correction_demo = Demo(
            steps=tuple(d_steps),
            meta={
                "source": "rollout",
                "label": "correction",
                "modes": "".join("t" if m == "teleop" else "r" for m in d_modes),
            },
        )
    return log
