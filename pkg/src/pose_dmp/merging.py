"""Merging sequences of pose primitives into one trajectory.

Three strategies are provided:

* :func:`merge_switch` runs each primitive until it is close to its goal and
  hands the full state over to the next one.
* :func:`merge_moving_target` lets each primitive track a target that
  crosses its goal with a prescribed velocity after exactly ``T^l`` seconds.
* :func:`merge_kernel_stack` fuses all primitives into one with a sigmoid
  clock, remapped time kernels and a delayed goal sweeping through the
  intermediate goals.

All merges return a :class:`~pose_dmp.dmp.PoseTrajectory` whose
``boundaries`` lists the sample indices at which a new primitive took over.
"""
from dataclasses import dataclass, replace

import numpy as np

from . import quat
from .clock import ExpClock, SigmoidClock
from .dmp import (KernelBank, OrientationDmp, PoseTrajectory, PositionDmp,
                  TIME_KERNELS, forcing_eval, orientation_accel, position_accel,
                  moving_target_position as _mt_position,
                  moving_target_quaternion as _mt_quaternion)
from .errors import ConfigError, DomainError, StallError

SWITCH = "switch"
MOVING_TARGET = "moving-target"
KERNEL_STACK = "kernel-stack"
STRATEGIES = (SWITCH, MOVING_TARGET, KERNEL_STACK)
CONVERGENCE_TOL = 1e-3
STALL_FACTOR = 5.0
HALF_TURN_TOL = 1e-9


@dataclass(frozen=True)
class PosePrimitive:
    """One step of a plan: a position and/or an orientation primitive.

    Parameters
    ----------
    position : PositionDmp or None
    orientation : OrientationDmp or None
    T : float, optional
        Duration ``T^l``; defaults to the demonstrated duration.
    """
    position: PositionDmp = None
    orientation: OrientationDmp = None
    T: float = None

    def __post_init__(self):
        main = self.position if self.position is not None else self.orientation
        if main is None:
            raise ConfigError("a primitive needs a position or an orientation part")
        if self.T is None:
            object.__setattr__(self, "T", float(main.T))
        if not self.T > 0:
            raise ConfigError(f"primitive duration must be positive, got {self.T}")

    @property
    def parts(self):
        return [d for d in (self.position, self.orientation) if d is not None]

    @property
    def tau(self):
        return self.parts[0].tau


@dataclass(frozen=True)
class SwitchParams:
    """Trigger for handing over to the next primitive.

    ``dist_threshold`` is ``(position [m], orientation [rad])``. When
    ``vel_threshold`` is set, the switch fires instead once the linear and
    angular speeds fall below it after having exceeded it.
    """
    dist_threshold: tuple = (0.01, 0.01)
    vel_threshold: float = None

    def __post_init__(self):
        d = tuple(float(x) for x in np.broadcast_to(self.dist_threshold, (2,)))
        object.__setattr__(self, "dist_threshold", d)
        if min(d) <= 0 or (self.vel_threshold is not None and self.vel_threshold <= 0):
            raise ConfigError("switch thresholds must be positive")


@dataclass(frozen=True)
class MovingTargetParams:
    """Crossing velocities ``(v_d^l, w_d^l)`` for every primitive but the last."""
    cross_vel: tuple = ()

    def __post_init__(self):
        cv = tuple((np.asarray(v, dtype=float).reshape(3), np.asarray(w, dtype=float).reshape(3))
                   for v, w in self.cross_vel)
        if any(not (np.all(np.isfinite(v)) and np.all(np.isfinite(w))) for v, w in cv):
            raise ConfigError("crossing velocities must be finite")
        object.__setattr__(self, "cross_vel", cv)


@dataclass(frozen=True)
class KernelStackParams:
    """Sigmoid steepness and optional real-time kernel windowing."""
    alpha_h: float = 1.0
    windowed: bool = False

    def __post_init__(self):
        if self.alpha_h <= 0:
            raise ConfigError("alpha_h must be positive")


_PARAM_TYPES = {SWITCH: SwitchParams, MOVING_TARGET: MovingTargetParams,
                KERNEL_STACK: KernelStackParams}


@dataclass(frozen=True)
class MergePlan:
    """Ordered primitives plus the merge strategy and its parameters."""
    primitives: tuple
    strategy: str = SWITCH
    params: object = None

    def __post_init__(self):
        prims = tuple(self.primitives)
        if not prims:
            raise ConfigError("a merge plan needs at least one primitive")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        params = self.params if self.params is not None else _PARAM_TYPES[self.strategy]()
        if not isinstance(params, _PARAM_TYPES[self.strategy]):
            raise ConfigError(f"{type(params).__name__} does not fit strategy {self.strategy!r}")
        has_p = {p.position is not None for p in prims}
        has_q = {p.orientation is not None for p in prims}
        if len(has_p) > 1 or len(has_q) > 1:
            raise ConfigError("all primitives must carry the same parts")
        object.__setattr__(self, "primitives", prims)
        object.__setattr__(self, "params", params)

    @property
    def durations(self):
        return np.array([p.T for p in self.primitives])

    @property
    def total_duration(self):
        return float(self.durations.sum())


class _State:
    """Mutable integration state shared by the merge loops."""

    def __init__(self, plan):
        first = plan.primitives[0]
        self.p = np.array(first.position.start) if first.position is not None else np.zeros(3)
        self.v = np.zeros(3)
        self.q = np.array(first.orientation.start) if first.orientation is not None else quat.IDENTITY.copy()
        self.w = np.zeros(3)
        self.rows = []

    def record(self, t, h, acc_p, acc_q, tau_p, tau_q):
        self.rows.append((t, self.p.copy(), self.v / tau_p, acc_p / tau_p,
                          self.q.copy(), self.w / tau_q, acc_q / tau_q, h))

    def trajectory(self, boundaries):
        t, p, v, a, q, w, wd, h = (np.array(c) for c in zip(*self.rows))
        return PoseTrajectory(t, p, q, v, a, w, wd, h, boundaries)


def _align_to_state(d, q):
    """Flip an orientation primitive's goal and start into the hemisphere of ``q``.

    Flipping both leaves ``vec(g * conj(q0))`` and the forcing unchanged.
    """
    if d is None or np.dot(d.start, q) >= 0.0:
        return d
    return replace(d, goal=-d.goal, start=-d.start)


def _goal_distance(prim, p, q):
    dp = np.linalg.norm(prim.position.goal - p) if prim.position is not None else 0.0
    dq = quat.qdist(prim.orientation.goal, q) if prim.orientation is not None else 0.0
    return dp, dq


def _taus(prim):
    tp = prim.position.tau if prim.position is not None else 1.0
    tq = prim.orientation.tau if prim.orientation is not None else 1.0
    return tp, tq


def _run_primitive(state, prim, dt, t0, stop, max_steps, targets=None, last=False):
    """Integrate one primitive from the current state until ``stop`` fires.

    ``stop(k, state)`` is checked before each step (``k`` local steps done).
    Returns the number of steps taken. The terminal sample is recorded only
    when ``last`` is true; otherwise the next primitive records it.
    """
    pos, ori = prim.position, prim.orientation
    clock = prim.parts[0].clock
    tau_p, tau_q = _taus(prim)
    k = 0
    while True:
        t_loc = k * dt
        h = float(clock.h(t_loc))
        done = stop(k, state)
        if done and not last:
            return k
        tgt_p = tv_p = tgt_q = tv_q = None
        if targets is not None:
            tgt_p, tv_p, tgt_q, tv_q = targets(t_loc, h)
        acc_p = acc_q = np.zeros(3)
        if pos is not None:
            acc_p = position_accel(pos, state.p, state.v, h, t_loc, tgt_p, tv_p)
        if ori is not None:
            acc_q = orientation_accel(ori, state.q, state.w, h, t_loc, tgt_q, tv_q)
        state.record(t0 + t_loc, h, acc_p, acc_q, tau_p, tau_q)
        if done:
            return k
        if k >= max_steps:
            raise StallError(f"primitive did not meet its trigger within {max_steps * dt:.3g} s")
        if pos is not None:
            state.v = state.v + dt * acc_p
            state.p = state.p + dt * state.v / tau_p
        if ori is not None:
            state.w = state.w + dt * acc_q
            state.q = quat.integrate_step(state.q, state.w / tau_q, dt)
        k += 1


def _converged(prim, tol=CONVERGENCE_TOL):
    def stop(k, st):
        dp, dq = _goal_distance(prim, st.p, st.q)
        return dp < tol and dq < tol
    return stop


def _check_dt(dt):
    if not dt > 0:
        raise ConfigError("dt must be positive")


def merge_switch(plan, dt=0.01, tol=CONVERGENCE_TOL):
    """Run primitives back to back, switching on a distance or speed trigger.

    Parameters
    ----------
    plan : MergePlan
        Strategy ``"switch"``; primitives use the standard formulation.
    dt : float
    tol : float
        Goal distance at which the last primitive counts as converged.

    Raises
    ------
    StallError
        A primitive misses its trigger within ``5 T^l`` seconds.
    """
    _check_dt(dt)
    params = plan.params
    state = _State(plan)
    t0, boundaries = 0.0, []
    n = len(plan.primitives)
    for idx, prim in enumerate(plan.primitives):
        prim = replace(prim, orientation=_align_to_state(prim.orientation, state.q))
        last = idx == n - 1
        max_steps = int(np.ceil(STALL_FACTOR * prim.T * prim.tau / dt))
        if last:
            stop = _converged(prim, tol)
        elif params.vel_threshold is None:
            dth_p, dth_q = params.dist_threshold

            def stop(k, st, prim=prim, dth_p=dth_p, dth_q=dth_q):
                dp, dq = _goal_distance(prim, st.p, st.q)
                return dp < dth_p and dq < dth_q
        else:
            armed = [False]
            tp, tq = _taus(prim)

            def stop(k, st, armed=armed, tp=tp, tq=tq):
                speed = max(np.linalg.norm(st.v) / tp, np.linalg.norm(st.w) / tq)
                if speed >= params.vel_threshold:
                    armed[0] = True
                return armed[0] and speed < params.vel_threshold
        steps = _run_primitive(state, prim, dt, t0, stop, max_steps, last=last)
        t0 += steps * dt
        if not last:
            boundaries.append(len(state.rows))
    return state.trajectory(boundaries)


def moving_target_position(prim, cross_vel, h):
    """Moving position target of a primitive, see :func:`pose_dmp.dmp.moving_target_position`."""
    d = prim.position
    return _mt_position(d.goal, cross_vel, prim.T, d.clock, h)


def moving_target_quaternion(prim, cross_vel, h):
    """Moving orientation target of a primitive.

    Raises
    ------
    DomainError
        If ``|w_d| T / 2`` leaves the exp-map domain.
    """
    d = prim.orientation
    return _mt_quaternion(d.goal, cross_vel, prim.T, d.clock, h)


def _as_moving_target(d):
    if d is None or d.formulation == "moving_target":
        return d
    if not isinstance(d.clock, ExpClock):
        raise ConfigError("moving-target merging needs an exponential clock")
    return replace(d, formulation="moving_target")


def merge_moving_target(plan, dt=0.01, tol=CONVERGENCE_TOL):
    """Cross every intermediate goal after ``T^l`` with velocity ``(v_d^l, w_d^l)``.

    Primitive ``l`` occupies exactly ``round(tau T^l / dt)`` steps; the last
    primitive tracks its fixed goal (zero crossing velocity) until the goal
    distance drops below ``tol``. Primitives trained with the standard
    formulation are run with the moving-target dynamics and their weights
    unchanged.
    """
    _check_dt(dt)
    n = len(plan.primitives)
    cvs = list(plan.params.cross_vel) or [(np.zeros(3), np.zeros(3))] * (n - 1)
    if len(cvs) not in (n - 1, n):
        raise ConfigError(f"need {n - 1} crossing velocities, got {len(cvs)}")
    cvs = cvs[:n - 1] + [(np.zeros(3), np.zeros(3))]
    state = _State(plan)
    t0, boundaries = 0.0, []
    for idx, (prim, (vd, wd)) in enumerate(zip(plan.primitives, cvs)):
        ori = _as_moving_target(_align_to_state(prim.orientation, state.q))
        prim = replace(prim, position=_as_moving_target(prim.position), orientation=ori)
        last = idx == n - 1

        def targets(t_loc, h, prim=prim, vd=vd, wd=wd):
            tp = moving_target_position(prim, vd, h) if prim.position is not None else None
            tq = moving_target_quaternion(prim, wd, h) if prim.orientation is not None else None
            return tp, vd, tq, wd

        if last:
            stop = _converged(prim, tol)
            max_steps = int(np.ceil(STALL_FACTOR * prim.T * prim.tau / dt))
        else:
            n_steps = int(round(prim.T * prim.tau / dt))
            stop = (lambda k, st, n_steps=n_steps: k >= n_steps)
            max_steps = n_steps
        steps = _run_primitive(state, prim, dt, t0, stop, max_steps, targets, last)
        t0 += steps * dt
        if not last:
            boundaries.append(len(state.rows))
    return state.trajectory(boundaries)


def stack_kernels(banks, durations):
    """Merge time-kernel banks of consecutive primitives into one bank.

    Kernel ``i`` of primitive ``l`` moves to ``T^l (i-1) / (T (N-1)) +
    sum_{k<l} T^k / T`` and its width shrinks by ``T^l / T``; weights are
    copied unchanged.

    Parameters
    ----------
    banks : sequence of KernelBank
        Time kernels, all with centers uniform in [0, 1].
    durations : sequence of float
    """
    durations = np.asarray(durations, dtype=float)
    if len(banks) != len(durations) or np.any(durations <= 0):
        raise ConfigError("one positive duration per kernel bank required")
    if any(b.form != TIME_KERNELS for b in banks):
        raise ConfigError("kernel stacking needs primitives trained with time kernels")
    T = durations.sum()
    offsets = np.concatenate([[0.0], np.cumsum(durations)[:-1]]) / T
    centers, widths, weights = [], [], []
    for bank, Tl, off in zip(banks, durations, offsets):
        n = bank.n_kernels
        centers.append(Tl * np.arange(n) / (T * (n - 1)) + off)
        widths.append(bank.widths * Tl / T)
        weights.append(bank.weights)
    centers = np.concatenate(centers)
    order = np.argsort(centers, kind="stable")
    return KernelBank(centers[order], np.concatenate(widths)[order],
                      np.concatenate(weights, axis=1)[:, order], TIME_KERNELS)


def _windows(durations, tau=1.0):
    ends = np.cumsum(durations) * tau
    return np.concatenate([[0.0], ends[:-1]]), ends


def delayed_goal_position(starts, goals, durations, t, tau=1.0):
    """Piecewise-linear target sweeping ``starts[l] -> goals[l]`` in window ``l``.

    Each window end equals its goal exactly; the target holds the last goal
    afterwards.
    """
    starts = np.asarray(starts, dtype=float)
    goals = np.asarray(goals, dtype=float)
    t = np.asarray(t, dtype=float)
    lo, hi = _windows(durations, tau)
    l = np.clip(np.searchsorted(hi, t, side="left"), 0, len(hi) - 1)
    s = np.clip((t - lo[l]) / (hi[l] - lo[l]), 0.0, 1.0)[..., None]
    out = starts[l] + s * (goals[l] - starts[l])
    return np.where(s >= 1.0, goals[l], out)


def _chain_quaternions(starts, goals):
    """Sign-align window endpoints so the orientation target never jumps hemispheres."""
    starts = np.array(starts, dtype=float)
    goals = np.array(goals, dtype=float)
    for l in range(len(starts)):
        if l > 0:
            starts[l] = quat.align(goals[l - 1], starts[l])
        goals[l] = quat.align(starts[l], goals[l])
        if abs(float(starts[l] @ goals[l])) < HALF_TURN_TOL:
            raise DomainError(f"window {l}: endpoints are a half-turn apart, "
                              "the geodesic is not unique")
    return starts, goals


def delayed_goal_quaternion(starts, goals, durations, t, tau=1.0):
    """Geodesic target rotating ``starts[l] -> goals[l]`` at constant rate in window ``l``.

    Applies ``exp(s log(g * conj(q0))) * q0``; window ends equal their goals
    (up to the sign chosen to keep the target continuous).

    Raises
    ------
    DomainError
        If a window's endpoints are a half-turn apart (antipodal on the
        rotation sphere).
    """
    starts, goals = _chain_quaternions(starts, goals)
    t = np.asarray(t, dtype=float)
    lo, hi = _windows(durations, tau)
    l = np.clip(np.searchsorted(hi, t, side="left"), 0, len(hi) - 1)
    s = np.clip((t - lo[l]) / (hi[l] - lo[l]), 0.0, 1.0)[..., None]
    r = quat.qlog(quat.qmul(goals[l], quat.conj(starts[l])))
    out = quat.qmul(quat.qexp(s * r), starts[l])
    return np.where(s >= 1.0, goals[l], out)


def _stacked_part(parts, durations, alpha_h, dt):
    if any(d.kernels.form != TIME_KERNELS for d in parts):
        raise ConfigError("kernel stacking needs primitives trained with time kernels "
                          "(delayed_goal formulation)")
    tau = parts[0].tau
    T = float(np.sum(durations))
    bank = stack_kernels([d.kernels for d in parts], durations)
    clock = SigmoidClock(alpha_h=alpha_h, T=T, dt=dt, tau=tau)
    cls = type(parts[0])
    return cls(parts[0].gains, bank, parts[-1].goal, parts[0].start, T, clock, "delayed_goal")


def _window_mask(centers, durations, n_per, t_norm):
    """Active kernels for real-time generation: two primitives' worth.

    The window covering primitives ``l`` and ``l+1`` is used until the
    midpoint of primitive ``l+1``'s time slot.
    """
    T = np.sum(durations)
    mids = (np.cumsum(durations) - 0.5 * durations) / T
    l = int(np.searchsorted(mids[1:], t_norm, side="right"))
    l = min(l, len(durations) - 2) if len(durations) > 1 else 0
    mask = np.zeros(len(centers), dtype=bool)
    mask[l * n_per:(l + 2) * n_per] = True
    return mask


def merge_kernel_stack(plan, dt=0.01, tol=CONVERGENCE_TOL, h_tol=1e-4):
    """Fuse all primitives into one and roll it out.

    The merged primitive has the sigmoid clock centred at ``tau T``, the
    stacked kernel bank and a delayed goal through every intermediate goal.
    It runs until ``h < h_tol`` and the final goal is within ``tol``.
    """
    _check_dt(dt)
    params = plan.params
    prims = plan.primitives
    durations = plan.durations
    pos = ori = None
    if prims[0].position is not None:
        pos = _stacked_part([p.position for p in prims], durations, params.alpha_h, dt)
        p_starts = [p.position.start for p in prims]
        p_goals = [p.position.goal for p in prims]
    if prims[0].orientation is not None:
        ori = _stacked_part([p.orientation for p in prims], durations, params.alpha_h, dt)
        q_starts, q_goals = _chain_quaternions([p.orientation.start for p in prims],
                                               [p.orientation.goal for p in prims])
        ori = replace(ori, goal=q_goals[-1], start=q_starts[0])
    main = pos if pos is not None else ori
    tau = main.tau
    T = main.T
    n_per = prims[0].parts[0].kernels.n_kernels
    windowed = params.windowed and len(prims) > 2

    def forcing(d, h, t):
        if not windowed:
            return None
        mask = _window_mask(d.kernels.centers, durations, n_per, t / (tau * T))
        bank = KernelBank(d.kernels.centers[mask], d.kernels.widths[mask],
                          d.kernels.weights[:, mask], TIME_KERNELS)
        return forcing_eval(bank, h, t / (tau * T))

    def targets(t, h):
        tp = delayed_goal_position(p_starts, p_goals, durations, t, tau) if pos is not None else None
        tq = delayed_goal_quaternion(q_starts, q_goals, durations, t, tau) if ori is not None else None
        return tp, None, tq, None

    def stop(k, st):
        h = float(main.clock.h(k * dt))
        dp = np.linalg.norm(pos.goal - st.p) if pos is not None else 0.0
        dq = quat.qdist(ori.goal, st.q) if ori is not None else 0.0
        return h < h_tol and dp < tol and dq < tol

    merged = PosePrimitive(pos, ori, T)
    max_steps = int(np.ceil((STALL_FACTOR * T * tau) / dt))
    state = _State(plan)
    if windowed:
        _run_windowed(state, merged, dt, stop, max_steps, targets, forcing)
    else:
        _run_primitive(state, merged, dt, 0.0, stop, max_steps, targets, last=True)
    return state.trajectory([])


def _run_windowed(state, prim, dt, stop, max_steps, targets, forcing):
    """Same loop as :func:`_run_primitive` with a restricted kernel window."""
    pos, ori = prim.position, prim.orientation
    clock = prim.parts[0].clock
    tau_p, tau_q = _taus(prim)
    k = 0
    while True:
        t = k * dt
        h = float(clock.h(t))
        tgt_p, _, tgt_q, _ = targets(t, h)
        acc_p = acc_q = np.zeros(3)
        if pos is not None:
            f = forcing(pos, h, t)
            acc_p = (pos.gains.K * (tgt_p - state.p) + pos.gains.K * f - pos.gains.D * state.v) / tau_p
        if ori is not None:
            f = forcing(ori, h, t)
            acc_q = (ori.gains.K * quat.qerr(tgt_q, state.q) + ori.gains.K * f
                     - ori.gains.D * state.w) / tau_q
        state.record(t, h, acc_p, acc_q, tau_p, tau_q)
        if stop(k, state):
            return k
        if k >= max_steps:
            raise StallError("merged primitive did not converge")
        if pos is not None:
            state.v = state.v + dt * acc_p
            state.p = state.p + dt * state.v / tau_p
        if ori is not None:
            state.w = state.w + dt * acc_q
            state.q = quat.integrate_step(state.q, state.w / tau_q, dt)
        k += 1


def merge(plan, dt=0.01, **kwargs):
    """Dispatch on ``plan.strategy``."""
    fn = {SWITCH: merge_switch, MOVING_TARGET: merge_moving_target,
          KERNEL_STACK: merge_kernel_stack}[plan.strategy]
    return fn(plan, dt, **kwargs)


def _demo_at(demos, starts, t):
    """Sample the demonstration timeline at times ``t``.

    ``demos[l]`` is laid out from ``starts[l]`` on; each time uses the last
    demo that has started, clamped to that demo's final sample.
    """
    starts = np.asarray(starts, dtype=float)
    idx = np.clip(np.searchsorted(starts, t + 1e-9, side="right") - 1, 0, len(demos) - 1)
    p = np.empty((len(t), 3))
    q = np.empty((len(t), 4))
    for l, demo in enumerate(demos):
        sel = idx == l
        if not np.any(sel):
            continue
        k = np.clip(np.round((t[sel] - starts[l]) / demo.dt).astype(int), 0, len(demo) - 1)
        p[sel] = demo.p[k]
        q[sel] = demo.q[k]
    return p, q


def merge_metrics(traj, demos, goals_q=None, goals_p=None, align="boundaries"):
    """Summary numbers of a merged trajectory against its demonstrations.

    Parameters
    ----------
    traj : PoseTrajectory
    demos : sequence of PoseTrajectory
        One demonstration per primitive.
    goals_q, goals_p : sequences, optional
        Goals of every primitive; entries before the last one are via points.
    align : {"boundaries", "concatenated"}
        ``"boundaries"`` lays demo ``l`` out from the instant primitive ``l``
        took over; ``"concatenated"`` lays the demos end to end.

    Returns
    -------
    dict
        ``e_p_max``, ``e_o_max``, ``via_distances``, ``duration``,
        ``max_vel_jump``, ``max_acc_jump`` and ``crossings`` (state at each
        handoff).
    """
    t = traj.t - traj.t[0]
    bounds = list(traj.boundaries)
    if align == "boundaries" and len(bounds) == len(demos) - 1:
        starts = [0.0] + [t[b] for b in bounds]
    else:
        starts = np.concatenate([[0.0], np.cumsum([d.duration for d in demos])[:-1]])
    p_ref, q_ref = _demo_at(demos, starts, t)
    via = []
    n_via = max(len(goals_q or ()), len(goals_p or ())) - 1
    for l in range(max(n_via, 0)):
        entry = {}
        if goals_p is not None:
            entry["position"] = float(np.min(np.linalg.norm(traj.p - goals_p[l], axis=1)))
        if goals_q is not None:
            entry["orientation"] = float(np.min(quat.qdist(goals_q[l], traj.q)))
        via.append(entry)
    crossings = []
    for b in bounds:
        crossings.append({"time": float(t[b]), "index": int(b),
                          "position": traj.p[b].tolist(), "orientation": traj.q[b].tolist(),
                          "velocity": traj.v[b].tolist(), "angular_velocity": traj.w[b].tolist()})
    def jump(x):
        return float(np.max(np.linalg.norm(np.diff(x, axis=0), axis=1))) if len(x) > 1 else 0.0
    return {
        "e_p_max": float(np.max(np.linalg.norm(traj.p - p_ref, axis=1))),
        "e_o_max": float(np.max(quat.qdist(q_ref, traj.q))),
        "via_distances": via,
        "duration": float(t[-1]),
        "max_vel_jump": max(jump(traj.v), jump(traj.w)),
        "max_acc_jump": max(jump(traj.a), jump(traj.wd)),
        "crossings": crossings,
    }
