"""Mocap-to-robot data pipeline with a simulated correction loop.

Capture sessions (chest-mounted SLAM trackers, glove fingertips, RGB-D)
are calibrated into a world frame, retargeted onto a bimanual dexterous
hand via damped-least-squares IK, packed into fixed-size point-cloud
observations, and replayed through a goal-reaching controller that a human
can correct live over a websocket.
"""

from .geometry import (  # noqa: F401
    Frame,
    Intrinsics,
    PointCloud,
    Pose,
    compose,
    inverse,
    pose_distance,
    scale_pose,
    transform_point,
    transform_points,
)
from .calibration import RigExtrinsics, default_rig, load_rig, save_rig  # noqa: F401
from .ingest import Session, load_session, save_session  # noqa: F401
from .kinematics import (  # noqa: F401
    BimanualState,
    HandModel,
    IkParams,
    RobotArmState,
    default_hand_model,
    load_default_hand_model,
)
from .dataset import (  # noqa: F401
    Dataset,
    Demo,
    PipelineSettings,
    Step,
    export_dataset,
    import_dataset,
    retarget_session,
)
from .policy import ConstantPolicy, ReplayPolicy  # noqa: F401
from .control import ControllerParams, PlantState, rollout  # noqa: F401
from .hitl import CorrectionController, CorrectionGains  # noqa: F401

__version__ = "0.1.0"
