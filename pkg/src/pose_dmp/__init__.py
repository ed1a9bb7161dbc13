"""Pose (position + unit quaternion) dynamic movement primitives."""
from . import coupled, merging, quat, traj_io
from .clock import ExpClock, SigmoidClock
from .dmp import (DmpGains, KernelBank, OrientationDmp, PoseTrajectory,
                  PositionDmp, rollout, train_orientation, train_position)

__all__ = ["coupled", "merging", "quat", "traj_io", "ExpClock", "SigmoidClock",
           "DmpGains", "KernelBank", "OrientationDmp", "PoseTrajectory", "PositionDmp",
           "rollout", "train_orientation", "train_position"]
__version__ = "0.1.0"
