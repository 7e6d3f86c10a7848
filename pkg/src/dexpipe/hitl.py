"""Human-in-the-loop correction: residual and teleoperation modes.

A correction source streams human wrist poses, wrist-frame fingertips, and
pedal presses. In residual mode the human's delta from a reference snapshot
is scaled and composed onto the policy's commanded action; in teleop mode
the human delta drives the wrist directly from the pose the robot held at
the switch, and fingers are tracked by IK. The pedal toggles the two modes;
snapshots are retaken at each toggle so commands stay continuous.
"""

from __future__ import annotations

import enum
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Pose, compose, inverse, scale_pose
from .kinematics import (
    LITTLE_FINGER,
    BimanualState,
    HandModel,
    IkParams,
    RobotArmState,
    clamp_to_limits,
    ik_fingertips,
)


class CorrectionSourceDisconnected(RuntimeError):
    pass


class CorrectionMode(enum.Enum):
    RESIDUAL = "residual"
    TELEOP = "teleop"


@dataclass(frozen=True)
class HumanSample:
    """One human measurement: wrist pose in robot space and fingertips in
    the wrist frame, mocap order [thumb, index, middle, ring, little]."""

    wrist: Pose
    tips: np.ndarray

    def __post_init__(self):
        tips = np.ascontiguousarray(self.tips, dtype=np.float64)
        if tips.shape != (5, 3):
            raise ValueError(f"tips must have shape (5, 3), got {tips.shape}")
        if not np.all(np.isfinite(tips)):
            raise ValueError("tips must be finite")
        tips.flags.writeable = False
        object.__setattr__(self, "tips", tips)

    def targets(self) -> np.ndarray:
        """Wrist-frame IK targets: the little finger dropped."""
        return np.delete(self.tips, LITTLE_FINGER, axis=0)


@dataclass(frozen=True)
class CorrectionEvent:
    tick: int
    sample: HumanSample | None = None
    pedal: bool = False


@dataclass(frozen=True)
class CorrectionGains:
    """alpha scales the wrist delta, beta the joint delta. Small beta (under
    0.1) keeps finger corrections gentle; that bound is enforced."""

    alpha: float = 1.0
    beta: float = 0.05

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not 0 <= self.beta < 0.1:
            raise ValueError("beta must lie in [0, 0.1)")


class ScriptedCorrectionSource:
    """Replays correction events from a JSON-lines file (or event list).

    File line: {"tick": int, "wrist": [7 floats], "tips": [15 floats],
    "pedal": bool}. Events fire when the rollout reaches their tick.
    """

    def __init__(self, events):
        self._events: dict[int, list[CorrectionEvent]] = {}
        for ev in events:
            self._events.setdefault(ev.tick, []).append(ev)

    @staticmethod
    def from_file(path) -> "ScriptedCorrectionSource":
        events = []
        with open(path) as fh:
            for i, line in enumerate(fh):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    sample = None
                    if rec.get("wrist") is not None:
                        sample = HumanSample(
                            wrist=Pose.from_list(rec["wrist"]),
                            tips=np.asarray(rec["tips"], dtype=np.float64).reshape(5, 3),
                        )
                    events.append(
                        CorrectionEvent(
                            tick=int(rec["tick"]),
                            sample=sample,
                            pedal=bool(rec.get("pedal", False)),
                        )
                    )
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                    raise ValueError(f"{path} line {i}: {e}") from e
        return ScriptedCorrectionSource(events)

    def poll(self, tick: int) -> list[CorrectionEvent]:
        return list(self._events.get(tick, ()))


def write_correction_script(path, events) -> None:
    with open(path, "w") as fh:
        for ev in events:
            rec = {"tick": ev.tick, "pedal": ev.pedal}
            if ev.sample is not None:
                rec["wrist"] = ev.sample.wrist.to_list()
                rec["tips"] = ev.sample.tips.reshape(-1).tolist()
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


class QueueCorrectionSource:
    """Thread-safe source fed by a live client; poll drains everything that
    arrived tagged at or before the requested tick."""

    def __init__(self):
        self._lock = threading.Lock()
        self._pending: list[CorrectionEvent] = []
        self._disconnected = False

    def push(self, event: CorrectionEvent) -> None:
        with self._lock:
            self._pending.append(event)

    def disconnect(self) -> None:
        with self._lock:
            self._disconnected = True

    def poll(self, tick: int) -> list[CorrectionEvent]:
        with self._lock:
            if self._disconnected:
                raise CorrectionSourceDisconnected("correction client disconnected")
            take = [ev for ev in self._pending if ev.tick <= tick]
            self._pending = [ev for ev in self._pending if ev.tick > tick]
        return take


# ---------------------------------------------------------------------------
# correction math


def residual_wrist(action_pose: Pose, human_now: Pose, human_ref: Pose, alpha: float) -> Pose:
    """Compose the human's scaled delta (measured in the reference frame)
    onto the commanded pose: a' = a . scale(ref^-1 . now, alpha)."""
    delta = compose(inverse(human_ref), human_now)
    return compose(action_pose, scale_pose(delta, alpha))


def teleop_wrist(robot_at_switch: Pose, human_now: Pose, human_at_switch: Pose) -> Pose:
    """Drive the wrist by the raw human delta since the switch instant."""
    delta = compose(inverse(human_at_switch), human_now)
    return compose(robot_at_switch, delta)


class CorrectionController:
    """Tick-level correction state machine for one arm.

    Owns the mode, the human reference snapshots, and the cached IK
    solutions that turn human fingertip streams into robot joint deltas.
    The rollout loop calls apply() exactly once per tick.
    """

    def __init__(
        self,
        source,
        model: HandModel,
        gains: CorrectionGains | None = None,
        ik_params: IkParams | None = None,
        arm: str = "right",
    ):
        if arm not in ("left", "right"):
            raise ValueError("arm must be 'left' or 'right'")
        self.source = source
        self.model = model
        self.gains = gains or CorrectionGains()
        self.ik_params = ik_params or IkParams()
        self.arm = arm

        self.mode = CorrectionMode.RESIDUAL
        self.human_now: HumanSample | None = None
        self.human_ref: HumanSample | None = None
        self.robot_at_switch: RobotArmState | None = None
        self.teleop_ref: HumanSample | None = None
        self._j_ref: np.ndarray | None = None
        self._j_now: np.ndarray | None = None

    # -- pedal ----------------------------------------------------------

    def pedal_event(self, last_command: BimanualState) -> CorrectionMode:
        """Toggle modes, snapshotting so commands stay continuous.

        Entering teleop pins the robot reference to the last commanded arm
        state and the human reference to the current sample; returning to
        residual re-snapshots the human reference so no stale delta jumps in.
        """
        if self.mode == CorrectionMode.RESIDUAL:
            self.mode = CorrectionMode.TELEOP
            self.robot_at_switch = last_command.arm(self.arm)
            self.teleop_ref = self.human_now
            self._j_now = np.array(self.robot_at_switch.joints)
        else:
            self.mode = CorrectionMode.RESIDUAL
            self.human_ref = self.human_now
            self._j_ref = None
        return self.mode

    # -- per-tick application --------------------------------------------

    def _solve_tips(self, sample: HumanSample, warm: np.ndarray) -> np.ndarray:
        result = ik_fingertips(self.model, sample.targets(), warm, self.ik_params)
        return result.joints

    def _residual_arm(self, action: RobotArmState) -> RobotArmState:
        if self.human_now is None or self.human_ref is None:
            return action
        pose = residual_wrist(action.p, self.human_now.wrist, self.human_ref.wrist, self.gains.alpha)
        if self.gains.beta == 0.0:
            # Joint path is a no-op at zero gain; skip the IK solves.
            return RobotArmState(p=pose, joints=action.joints)
        if self._j_ref is None:
            self._j_ref = self._solve_tips(self.human_ref, self._warm_start(action))
            self._j_now = self._j_ref
        self._j_now = self._solve_tips(self.human_now, self._j_now)
        delta_j = self._j_now - self._j_ref
        joints = clamp_to_limits(self.model, action.joints + self.gains.beta * delta_j)
        return RobotArmState(p=pose, joints=joints)

    def _teleop_arm(self, action: RobotArmState) -> RobotArmState:
        ref = self.teleop_ref or self.human_now
        base = self.robot_at_switch
        if base is None:
            return action
        if self.human_now is None or ref is None:
            return base
        pose = teleop_wrist(base.p, self.human_now.wrist, ref.wrist)
        self._j_now = self._solve_tips(self.human_now, self._j_now if self._j_now is not None else base.joints)
        return RobotArmState(p=pose, joints=self._j_now)

    def _warm_start(self, action: RobotArmState) -> np.ndarray:
        return np.array(action.joints)

    def apply(
        self, tick: int, raw: BimanualState, last_command: BimanualState
    ) -> tuple[BimanualState, str]:
        """Drain this tick's events, update the machine, and return the
        corrected action plus the active mode name."""
        for event in self.source.poll(tick):
            if event.sample is not None:
                self.human_now = event.sample
                if self.human_ref is None:
                    self.human_ref = event.sample
                if self.teleop_ref is None and self.mode == CorrectionMode.TELEOP:
                    self.teleop_ref = event.sample
            if event.pedal:
                self.pedal_event(last_command)

        raw_arm = raw.arm(self.arm)
        if self.mode == CorrectionMode.RESIDUAL:
            corrected_arm = self._residual_arm(raw_arm)
        else:
            corrected_arm = self._teleop_arm(raw_arm)
        return raw.with_arm(self.arm, corrected_arm), self.mode.value


def residual_correct(
    action: BimanualState,
    human_now: HumanSample,
    human_ref: HumanSample,
    gains: CorrectionGains,
    model: HandModel,
    ik_params: IkParams | None = None,
    arm: str = "right",
    j_ref: np.ndarray | None = None,
    j_now_warm: np.ndarray | None = None,
) -> BimanualState:
    """One-shot residual correction (stateless helper mirroring the
    controller's residual step; used for offline recomputation checks)."""
    ik_params = ik_params or IkParams()
    a = action.arm(arm)
    pose = residual_wrist(a.p, human_now.wrist, human_ref.wrist, gains.alpha)
    if j_ref is None:
        j_ref = ik_fingertips(model, human_ref.targets(), np.array(a.joints), ik_params).joints
    warm = j_now_warm if j_now_warm is not None else j_ref
    j_now = ik_fingertips(model, human_now.targets(), warm, ik_params).joints
    joints = clamp_to_limits(model, a.joints + gains.beta * (j_now - j_ref))
    return action.with_arm(arm, RobotArmState(p=pose, joints=joints))


def teleop_action(
    human_now: HumanSample,
    human_ref: HumanSample,
    robot_at_switch: RobotArmState,
    model: HandModel,
    ik_params: IkParams | None = None,
    j_warm: np.ndarray | None = None,
) -> RobotArmState:
    """One-shot teleop action (stateless helper for tests and offline use)."""
    ik_params = ik_params or IkParams()
    pose = teleop_wrist(robot_at_switch.p, human_now.wrist, human_ref.wrist)
    warm = j_warm if j_warm is not None else np.array(robot_at_switch.joints)
    joints = ik_fingertips(model, human_now.targets(), warm, ik_params).joints
    return RobotArmState(p=pose, joints=joints)
