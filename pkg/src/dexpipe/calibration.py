"""Rack-based constant-transform calibration.

All trackers start a session parked in a rigid rack. Each tracker's reported
pose is expressed in its own initialization frame, which by construction is
its rack slot at t=0. The world frame is defined as the main (chest) tracker's
initialization frame, so a constant slot-to-main transform per tracker is all
that is needed to express every reported pose in one shared world frame.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

import numpy as np

from .geometry import Pose, compose, pose_distance, transform_points

TRACKER_IDS = ("main", "left", "right")

# Slack allowed when checking that the main slot transform is the identity.
_IDENTITY_TOL = 1e-9


class UnknownTracker(KeyError):
    """Raised for tracker ids outside the fixed {main, left, right} set."""


@dataclass(frozen=True)
class RigExtrinsics:
    """Constant transforms of one capture rig.

    slot_to_main maps each tracker id to its rack-slot pose expressed in the
    main slot's frame; the main entry must be the identity. cam_to_hub_left
    and cam_to_hub_right map each wrist tracker's frame to its glove hub
    frame (where fingertips are measured). tracker_to_lidar maps the main
    tracker's body frame to the RGB-D optical frame.
    """

    slot_to_main: Mapping[str, Pose]
    cam_to_hub_left: Pose
    cam_to_hub_right: Pose
    tracker_to_lidar: Pose

    def __post_init__(self):
        slots = dict(self.slot_to_main)
        if set(slots) != set(TRACKER_IDS):
            raise ValueError(
                f"slot_to_main must have exactly the keys {set(TRACKER_IDS)}, got {set(slots)}"
            )
        terr, rerr = pose_distance(slots["main"], Pose())
        if terr > _IDENTITY_TOL or rerr > _IDENTITY_TOL:
            raise ValueError("slot_to_main['main'] must be the identity pose")
        object.__setattr__(self, "slot_to_main", MappingProxyType(slots))

    def cam_to_hub(self, side: str) -> Pose:
        if side == "left":
            return self.cam_to_hub_left
        if side == "right":
            return self.cam_to_hub_right
        raise UnknownTracker(side)


def tracker_pose_world(rig: RigExtrinsics, tracker_id: str, reported: Pose) -> Pose:
    """World pose of a tracker from its self-reported pose.

    The reported pose lives in the tracker's own initialization frame (its
    rack slot), so chaining the constant slot transform re-expresses it in
    the main slot's initialization frame, which is the world frame. In
    particular tracker_pose_world(rig, "main", identity) is the identity.
    """
    try:
        slot = rig.slot_to_main[tracker_id]
    except KeyError:
        raise UnknownTracker(tracker_id) from None
    return compose(slot, reported)


def fingertips_world(wrist_world: Pose, cam_to_hub: Pose, tips_hub: np.ndarray) -> np.ndarray:
    """Map hub-frame fingertip positions to world.

    wrist_world is the hand tracker's world pose; cam_to_hub is the constant
    tracker-to-hub mount transform. tips_hub is (N, 3).
    """
    return transform_points(compose(wrist_world, cam_to_hub), tips_hub)


def chest_cloud_pose(rig: RigExtrinsics, main_reported: Pose) -> Pose:
    """World pose of the RGB-D optical frame riding on the main tracker."""
    return compose(tracker_pose_world(rig, "main", main_reported), rig.tracker_to_lidar)


def rig_to_dict(rig: RigExtrinsics) -> dict:
    return {
        "slot_to_main": {k: rig.slot_to_main[k].to_list() for k in TRACKER_IDS},
        "cam_to_hub_left": rig.cam_to_hub_left.to_list(),
        "cam_to_hub_right": rig.cam_to_hub_right.to_list(),
        "tracker_to_lidar": rig.tracker_to_lidar.to_list(),
    }


def rig_from_dict(d: dict) -> RigExtrinsics:
    slots = {k: Pose.from_list(v) for k, v in d["slot_to_main"].items()}
    return RigExtrinsics(
        slot_to_main=slots,
        cam_to_hub_left=Pose.from_list(d["cam_to_hub_left"]),
        cam_to_hub_right=Pose.from_list(d["cam_to_hub_right"]),
        tracker_to_lidar=Pose.from_list(d["tracker_to_lidar"]),
    )


def save_rig(rig: RigExtrinsics, path) -> None:
    Path(path).write_text(json.dumps(rig_to_dict(rig), indent=2, sort_keys=True) + "\n")


def load_rig(path) -> RigExtrinsics:
    return rig_from_dict(json.loads(Path(path).read_text()))


def default_rig() -> RigExtrinsics:
    """Plausible rack geometry used by fixtures; configuration, not truth.

    Tracker body frames are x-forward / z-up. The RGB-D optical frame
    (z forward, y down) is reached from the main tracker body frame by the
    axis permutation baked into tracker_to_lidar, plus a downward pitch so
    the camera looks at the tabletop.
    """
    # Columns of the body-from-optical rotation: x_opt=-y_body, y_opt=-z_body,
    # z_opt=+x_body, i.e. quaternion (0.5, -0.5, 0.5, -0.5).
    body_to_optical = Pose((0.5, -0.5, 0.5, -0.5), (0.01, 0.0, 0.06))
    pitch_down = Pose.from_axis_angle((1.0, 0.0, 0.0), -0.7)
    return RigExtrinsics(
        slot_to_main={
            "main": Pose(),
            "left": Pose.from_axis_angle((0, 0, 1), -0.1, t=(0.0, 0.09, -0.06)),
            "right": Pose.from_axis_angle((0, 0, 1), 0.1, t=(0.0, -0.09, -0.06)),
        },
        cam_to_hub_left=Pose.from_axis_angle((0, 1, 0), 0.35, t=(-0.02, 0.0, -0.04)),
        cam_to_hub_right=Pose.from_axis_angle((0, 1, 0), 0.35, t=(-0.02, 0.0, -0.04)),
        tracker_to_lidar=compose(body_to_optical, pitch_down),
    )
