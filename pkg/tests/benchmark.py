"""Shared setup of the two-rotation merge benchmark (N=15, K=10I, tau=1)."""
from functools import lru_cache

import numpy as np

from pose_dmp.clock import ExpClock
from pose_dmp.dmp import DmpGains, train_orientation
from pose_dmp.merging import (KernelStackParams, MergePlan, MovingTargetParams, PosePrimitive,
                              SwitchParams, merge, merge_metrics)
from pose_dmp.traj_io import benchmark_demos

CROSS_VEL = np.full(3, 0.01)
GAINS = DmpGains.critical(10.0)


@lru_cache(maxsize=None)
def demos():
    return benchmark_demos(5.0, 0.01)


@lru_cache(maxsize=None)
def primitives(strategy):
    d1, d2 = demos()
    clock = ExpClock(1.0, 1.0)
    if strategy == "switch":
        a = train_orientation(d1, 15, GAINS, clock, method="global")
        b = train_orientation(d2, 15, GAINS, clock, method="global")
    elif strategy == "moving-target":
        # the demos end at rest; the crossing velocity is applied only when merging
        a = train_orientation(d1, 15, GAINS, clock, "moving_target", None, "global")
        b = train_orientation(d2, 15, GAINS, clock, "moving_target", None, "global")
    else:
        a = train_orientation(d1, 15, GAINS, None, "delayed_goal", method="global")
        b = train_orientation(d2, 15, GAINS, None, "delayed_goal", method="global")
    return PosePrimitive(orientation=a), PosePrimitive(orientation=b)


PARAMS = {
    "switch": SwitchParams((0.01, 0.01)),
    "moving-target": MovingTargetParams([(np.zeros(3), CROSS_VEL)]),
    "kernel-stack": KernelStackParams(1.0),
}


@lru_cache(maxsize=None)
def run(strategy):
    """Merged trajectory and its metrics."""
    prims = primitives(strategy)
    traj = merge(MergePlan(prims, strategy, PARAMS[strategy]), 0.01)
    goals = [p.orientation.goal for p in prims]
    return traj, merge_metrics(traj, list(demos()), goals_q=goals)
