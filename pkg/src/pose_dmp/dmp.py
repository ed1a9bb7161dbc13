"""Position and orientation dynamic movement primitives.

A primitive is a critically damped spring pulled towards a goal and shaped
by a phase-gated forcing term. Three variants of the transformation system
are supported, selected by ``formulation``:

``"standard"``
    ``tau v' = K[(g - p) - (g - p0) h + f(h)] - D v`` with an exponential
    clock and phase kernels.
``"moving_target"``
    ``tau v' = K[(p_m - p)(1 - h) + f(h)] + D(v_d - v)(1 - h)`` where
    ``p_m`` moves at the crossing velocity ``v_d``.
``"delayed_goal"``
    ``tau v' = K(p_m - p) + K f(h) - D v`` with a sigmoid clock, time kernels
    and a delayed goal ``p_m`` sweeping from start to goal.

Orientation uses the same structure with ``e_o(q_m, q) = vec(q_m * conj(q))``
in place of the position difference. All state velocities are the scaled
ones (``v = tau * dp/dt``); trajectories store physical rates.

Integration is semi-implicit Euler: velocity first, then position (or
quaternion, via ``exp(dt/2 w) * q``) with the updated velocity.
"""
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import quat
from .clock import ExpClock, SigmoidClock, clock_from_dict
from .errors import DegenerateKernelsWarning, InsufficientData, SingularFitWarning

PHASE_KERNELS = "phase"
TIME_KERNELS = "time"
FORMULATIONS = ("standard", "moving_target", "delayed_goal")
REGULARIZER = 1e-8
DEFAULT_GAMMA = 1.0
MODEL_VERSION = 1


@dataclass
class KernelBank:
    """Gaussian kernels plus their regression weights.

    Parameters
    ----------
    centers : array, shape (N,)
    widths : array, shape (N,)
        Amplitude ``a`` of ``exp(-a (h - c)^2)`` for phase kernels, standard
        deviation ``sigma`` of ``exp(-(t - c)^2 / 2 sigma^2)`` for time
        kernels.
    weights : array, shape (3, N)
    form : {"phase", "time"}
    """
    centers: np.ndarray
    widths: np.ndarray
    weights: np.ndarray
    form: str = PHASE_KERNELS

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=float)
        self.widths = np.asarray(self.widths, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.form not in (PHASE_KERNELS, TIME_KERNELS):
            raise ValueError(f"unknown kernel form {self.form!r}")
        if self.centers.shape[-1] < 2 or np.any(self.widths <= 0):
            raise ValueError("need N >= 2 kernels with positive widths")
        if np.any(np.diff(self.centers, axis=-1) < 0):
            raise ValueError("kernel centers must be sorted ascending")

    @property
    def n_kernels(self):
        return self.centers.shape[-1]

    def exponents(self, x):
        """``log psi_i(x)``."""
        x = np.asarray(x, dtype=float)[..., None]
        if self.form == PHASE_KERNELS:
            return -self.widths * (x - self.centers) ** 2
        return -((x - self.centers) ** 2) / (2.0 * self.widths ** 2)

    def activations(self, x):
        return np.exp(self.exponents(x))

    def normalized(self, x):
        """``psi_i / sum(psi)`` evaluated without underflow.

        Returns the normalized activations and the raw sum ``sum(psi)``.
        Far outside the centers the ratio tends to the nearest kernel.
        """
        e = self.exponents(x)
        top = e.max(axis=-1, keepdims=True)
        z = np.exp(e - top)
        s = z.sum(axis=-1, keepdims=True)
        return z / s, (s * np.exp(top))[..., 0]

    def to_dict(self):
        return {"form": self.form, "centers": self.centers.tolist(),
                "widths": self.widths.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["centers"]), np.array(d["widths"]),
                   np.array(d["weights"]), d["form"])


def phase_kernels(n, gamma, T, tau=1.0):
    """Phase kernels evenly spaced in time over a demonstration of length T.

    Centers ``exp(-gamma (i-1)/(N-1) T / tau)``, stored in ascending order;
    each amplitude is set so a kernel drops to 0.5 halfway to its neighbour.
    """
    if n < 2:
        raise ValueError("need at least two kernels")
    # ascending in h, i.e. the last kernel in time comes first
    c = np.exp(-gamma * np.linspace(1.0, 0.0, n) * T / tau)
    gaps = np.diff(c)
    gaps = np.insert(gaps, 0, gaps[0])
    widths = 4.0 * np.log(2.0) / gaps ** 2
    return KernelBank(c, widths, np.zeros((3, n)), PHASE_KERNELS)


def time_kernels(n):
    """Time kernels with centers uniform in [0, 1] and half-maximum overlap."""
    if n < 2:
        raise ValueError("need at least two kernels")
    c = np.linspace(0.0, 1.0, n)
    sigma = (c[1] - c[0]) / (2.0 * np.sqrt(2.0 * np.log(2.0)))
    return KernelBank(c, np.full(n, sigma), np.zeros((3, n)), TIME_KERNELS)


def forcing_eval(kernels, phase, t_norm=None):
    """Forcing term ``h * sum(w_i psi_i) / sum(psi_i)``.

    Phase kernels are evaluated at ``phase``; time kernels at ``t_norm``
    (time divided by ``tau T``) and gated by ``phase``. Leading batch
    dimensions of ``phase`` / ``t_norm`` and of the kernel arrays broadcast.
    """
    phase = np.asarray(phase, dtype=float)
    x = phase if kernels.form == PHASE_KERNELS else t_norm
    if x is None:
        raise ValueError("time kernels need t_norm")
    psi, den = kernels.normalized(x)
    if np.any(den < 1e-12):
        # beyond the outermost centers the nearest kernel takes over, which
        # is intended; a vanishing sum between centers means the widths are
        # too narrow
        lo, hi = kernels.centers[..., 0], kernels.centers[..., -1]
        x = np.asarray(x, dtype=float)
        inside = (den < 1e-12) & (x > lo) & (x < hi) & (phase > 0)
        if np.any(inside):
            warnings.warn("kernel activations vanish between centers",
                          DegenerateKernelsWarning, stacklevel=2)
    num = np.einsum("...dn,...n->...d", kernels.weights, psi)
    return num * phase[..., None]


@dataclass(frozen=True)
class DmpGains:
    """Diagonal stiffness ``K`` and damping ``D`` (stored as 3-vectors).

    Stacked gains of shape ``(B, 3)`` are accepted for batched rollouts.
    """
    K: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        K = np.asarray(self.K, dtype=float)
        D = np.asarray(self.D, dtype=float)
        shape = np.broadcast_shapes(K.shape, D.shape, (3,))
        if shape[-1] != 3:
            raise ValueError("gains must be 3-vectors (diagonal entries)")
        K = np.broadcast_to(K, shape).copy()
        D = np.broadcast_to(D, shape).copy()
        if np.any(K <= 0) or np.any(D <= 0):
            raise ValueError("gains must be diagonal with positive entries")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "D", D)

    @classmethod
    def critical(cls, k=10.0):
        """``K = k I`` (k may be a 3-vector) with ``D = 2 sqrt(K)``."""
        K = np.broadcast_to(np.asarray(k, dtype=float), (3,))
        return cls(K, 2.0 * np.sqrt(K))

    def to_dict(self):
        return {"K": self.K.tolist(), "D": self.D.tolist()}


@dataclass
class _Primitive:
    gains: DmpGains
    kernels: KernelBank
    goal: np.ndarray
    start: np.ndarray
    T: float
    clock: object = field(default_factory=ExpClock)
    formulation: str = "standard"

    @property
    def tau(self):
        return self.clock.tau

    def t_norm(self, t):
        return np.asarray(t, dtype=float) / (self.tau * self.T)

    def forcing(self, h, t):
        return forcing_eval(self.kernels, h, self.t_norm(t))

    def to_dict(self):
        return {
            "version": MODEL_VERSION,
            "type": self.kind,
            "formulation": self.formulation,
            "gains": self.gains.to_dict(),
            "kernels": self.kernels.to_dict(),
            "goal": np.asarray(self.goal).tolist(),
            "start": np.asarray(self.start).tolist(),
            "T": self.T,
            "clock": self.clock.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')!r}")
        return cls(
            gains=DmpGains(np.array(d["gains"]["K"]), np.array(d["gains"]["D"])),
            kernels=KernelBank.from_dict(d["kernels"]),
            goal=np.array(d["goal"]),
            start=np.array(d["start"]),
            T=float(d["T"]),
            clock=clock_from_dict(d["clock"]),
            formulation=d.get("formulation", "standard"),
        )


@dataclass
class PositionDmp(_Primitive):
    kind = "position"

    def __post_init__(self):
        self.goal = np.asarray(self.goal, dtype=float)
        self.start = np.asarray(self.start, dtype=float)
        if not (np.all(np.isfinite(self.goal)) and np.all(np.isfinite(self.start))):
            raise ValueError("goal and start must be finite")


@dataclass
class OrientationDmp(_Primitive):
    kind = "orientation"

    def __post_init__(self):
        self.goal = quat.normalize(self.goal)
        self.start = quat.align(self.goal, quat.normalize(self.start))


def position_accel(d, p, v, h, t=0.0, target=None, target_vel=None):
    """Scaled acceleration ``dv/dt`` of a position primitive."""
    K, D, tau = d.gains.K, d.gains.D, d.tau
    f = d.forcing(h, t)
    h = np.asarray(h, dtype=float)[..., None]
    if d.formulation == "standard":
        g = d.goal
        return (K * ((g - p) - (g - d.start) * h + f) - D * v) / tau
    if target is None:
        target = d.goal
    if d.formulation == "moving_target":
        vd = np.zeros(3) if target_vel is None else target_vel
        return (K * ((target - p) * (1.0 - h) + f) + D * (vd - v) * (1.0 - h)) / tau
    if d.formulation == "delayed_goal":
        return (K * (target - p) + K * f - D * v) / tau
    raise ValueError(f"unknown formulation {d.formulation!r}")


def orientation_accel(d, q, w, h, t=0.0, target=None, target_vel=None):
    """Scaled angular acceleration ``dw/dt`` of an orientation primitive."""
    K, D, tau = d.gains.K, d.gains.D, d.tau
    f = d.forcing(h, t)
    h = np.asarray(h, dtype=float)[..., None]
    if d.formulation == "standard":
        d0 = quat.qerr(d.goal, d.start) * h
        return (K * (quat.qerr(d.goal, q) - d0 + f) - D * w) / tau
    if target is None:
        target = d.goal
    if d.formulation == "moving_target":
        wd = np.zeros(3) if target_vel is None else target_vel
        return (K * (quat.qerr(target, q) * (1.0 - h) + f) + D * (wd - w) * (1.0 - h)) / tau
    if d.formulation == "delayed_goal":
        return (K * quat.qerr(target, q) + K * f - D * w) / tau
    raise ValueError(f"unknown formulation {d.formulation!r}")


def position_step(d, p, v, h, dt, t=0.0, target=None, target_vel=None):
    """One integration step; returns ``(p, v, acc)`` with ``acc`` at the old state."""
    acc = position_accel(d, p, v, h, t, target, target_vel)
    v_new = v + dt * acc
    p_new = p + dt * v_new / d.tau
    return p_new, v_new, acc


def orientation_step(d, q, w, h, dt, t=0.0, target=None, target_vel=None):
    """One integration step; returns ``(q, w, acc)`` with ``acc`` at the old state."""
    acc = orientation_accel(d, q, w, h, t, target, target_vel)
    w_new = w + dt * acc
    q_new = quat.integrate_step(q, w_new / d.tau, dt)
    return q_new, w_new, acc


@dataclass
class PoseTrajectory:
    """Uniformly sampled pose trajectory (physical rates).

    Attributes
    ----------
    t : array, shape (M,)
    p, v, a : arrays, shape (M, 3)
        Position, linear velocity and acceleration.
    q : array, shape (M, 4)
    w, wd : arrays, shape (M, 3)
        Angular velocity and acceleration.
    h : array, shape (M,)
        Clock value (NaN when not generated by a primitive).
    boundaries : tuple of int
        Sample indices at which a merged trajectory switched primitive.
    """
    t: np.ndarray
    p: np.ndarray
    q: np.ndarray
    v: np.ndarray = None
    a: np.ndarray = None
    w: np.ndarray = None
    wd: np.ndarray = None
    h: np.ndarray = None
    boundaries: tuple = ()

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.boundaries = tuple(int(b) for b in self.boundaries)
        m = len(self.t)
        self.p = np.asarray(self.p, dtype=float).reshape(m, 3)
        self.q = np.asarray(self.q, dtype=float).reshape(m, 4)
        for name in ("v", "a", "w", "wd"):
            val = getattr(self, name)
            if val is not None:
                setattr(self, name, np.asarray(val, dtype=float).reshape(m, 3))
        if self.h is None:
            self.h = np.full(m, np.nan)
        self.h = np.asarray(self.h, dtype=float).reshape(m)

    def __len__(self):
        return len(self.t)

    @property
    def dt(self):
        return float(self.t[1] - self.t[0])

    @property
    def duration(self):
        return float(self.t[-1] - self.t[0])

    def with_derivatives(self):
        """Fill missing velocities/accelerations by finite differences."""
        if len(self) < 3:
            raise InsufficientData("need at least 3 samples to differentiate")
        dt = self.dt
        out = replace(self)
        if out.v is None:
            out.v = np.gradient(self.p, dt, axis=0)
        if out.a is None:
            out.a = np.gradient(out.v, dt, axis=0)
        if out.w is None:
            out.w = angular_velocity(self.q, dt)
        if out.wd is None:
            out.wd = np.gradient(out.w, dt, axis=0)
        return out

    def segment(self, start, stop):
        sl = slice(start, stop)
        return PoseTrajectory(
            self.t[sl], self.p[sl], self.q[sl],
            *(None if getattr(self, n) is None else getattr(self, n)[sl]
              for n in ("v", "a", "w", "wd")),
            h=self.h[sl])


def angular_velocity(q, dt):
    """Angular velocity from a quaternion sequence via log-map differences.

    Central differences ``qlog(q[k+1] * conj(q[k-1])) / dt`` inside,
    one-sided ``2 qlog(q[k+1] * conj(q[k])) / dt`` at the ends.
    """
    q = np.asarray(q, dtype=float)
    w = np.empty((len(q), 3))
    def rel(a, b):
        return quat.qlog(quat.align(np.array([1.0, 0, 0, 0]), quat.qmul(a, quat.conj(b))))
    w[1:-1] = rel(q[2:], q[:-2]) / dt
    w[0] = 2.0 * rel(q[1], q[0]) / dt
    w[-1] = 2.0 * rel(q[-1], q[-2]) / dt
    return w


def _fit_weights(kernels, x, h, f_target, method="lwr"):
    """Regress ``f_target`` onto the kernel bank.

    ``"lwr"`` fits every kernel on its own, ``w_i = sum(psi_i h f) /
    (sum(psi_i h^2) + lambda)``. ``"global"`` solves one least-squares
    problem on the normalized, phase-gated basis ``h psi_i / sum(psi)``,
    which reproduces the target far more closely when the clock is short.
    """
    if method == "global":
        psi, _ = kernels.normalized(x)
        basis = psi * h[:, None]
        w, *_ = np.linalg.lstsq(basis, f_target, rcond=None)
        return w.T
    if method != "lwr":
        raise ValueError(f"unknown regression method {method!r}")
    psi = kernels.activations(x)
    den = psi.T @ (h ** 2) + REGULARIZER
    num = (psi * h[:, None]).T @ f_target
    w = num / den[:, None]
    weak = psi.T @ (h ** 2) < 1e-9
    if np.any(weak):
        warnings.warn(f"{int(weak.sum())} kernel(s) without support; weights zeroed",
                      SingularFitWarning, stacklevel=3)
        w[weak] = 0.0
    return w.T


def _default_kernels(formulation, n, clock, T):
    if formulation == "delayed_goal":
        return time_kernels(n)
    return phase_kernels(n, clock.gamma, T, clock.tau)


def _default_clock(formulation, T, dt, clock):
    if clock is not None:
        return clock
    if formulation == "delayed_goal":
        return SigmoidClock(alpha_h=1.0, T=T, dt=dt)
    return ExpClock(tau=1.0, gamma=DEFAULT_GAMMA)


def _check_demo(demo, n):
    if len(demo) < max(n, 3):
        raise InsufficientData(f"demo has {len(demo)} samples, need at least {max(n, 3)}")


def linear_delayed_goal(start, goal, t, T, tau=1.0):
    """Target moving linearly from ``start`` to ``goal`` over ``[0, tau T]``."""
    s = np.clip(np.asarray(t, dtype=float) / (tau * T), 0.0, 1.0)[..., None]
    return start + s * (goal - start)


def geodesic_delayed_goal(start, goal, t, T, tau=1.0):
    """Target rotating at constant velocity from ``start`` to ``goal``.

    ``exp(s * log(goal * conj(start))) * start`` with ``s = t / (tau T)``
    clipped to [0, 1]; equals SLERP between the endpoints.
    """
    s = np.clip(np.asarray(t, dtype=float) / (tau * T), 0.0, 1.0)[..., None]
    goal = quat.align(start, goal)
    r = quat.qlog(quat.qmul(goal, quat.conj(start)))
    out = quat.qmul(quat.qexp(s * r), start)
    return np.where(s >= 1.0, goal, out)


def moving_target_position(goal, cross_vel, T, clock, h):
    """Moving target ``p_m(0) - v_d tau ln(h) / gamma``, ``p_m(0) = g - T v_d``."""
    elapsed = np.asarray(clock.time_of_phase(h))[..., None]
    return goal - T * cross_vel + cross_vel * elapsed


def moving_target_quaternion(goal, cross_vel, T, clock, h):
    """``exp(-tau ln(h) / (2 gamma) w_d) * exp(-T/2 w_d) * g``."""
    cross_vel = np.asarray(cross_vel, dtype=float)
    q0 = quat.qmul(quat.qexp(-0.5 * T * cross_vel), goal)
    elapsed = np.asarray(clock.time_of_phase(h))[..., None]
    return quat.qmul(quat.qexp(0.5 * elapsed * cross_vel), q0)


def train_position(demo, n_kernels=15, gains=None, clock=None,
                   formulation="standard", cross_vel=None, method="lwr"):
    """Learn a position primitive from one demonstration.

    Parameters
    ----------
    demo : PoseTrajectory
        Velocities/accelerations are differentiated if missing.

    n_kernels : int

    gains : DmpGains, optional (default: K = 10 I, critically damped)

    clock : ExpClock or SigmoidClock, optional

    formulation : {"standard", "moving_target", "delayed_goal"}

    cross_vel : array, shape (3,), optional
        Crossing velocity assumed during moving-target training (default 0).

    method : {"lwr", "global"}
        Regression scheme, see :func:`_fit_weights`.

    Returns
    -------
    dmp : PositionDmp
    """
    if formulation not in FORMULATIONS:
        raise ValueError(f"unknown formulation {formulation!r}")
    _check_demo(demo, n_kernels)
    demo = demo.with_derivatives()
    gains = gains or DmpGains.critical(10.0)
    t = demo.t - demo.t[0]
    T = t[-1]
    clock = _default_clock(formulation, T, demo.dt, clock)
    tau = clock.tau
    K, D = gains.K, gains.D
    p, v, a = demo.p, demo.v, demo.a
    p0, g = p[0], p[-1]
    h = clock.h(t)
    kernels = _default_kernels(formulation, n_kernels, clock, T)
    if formulation == "standard":
        f = (tau ** 2 * a + tau * D * v) / K - (g - p) + (g - p0) * h[:, None]
    elif formulation == "moving_target":
        vd = np.zeros(3) if cross_vel is None else np.asarray(cross_vel, dtype=float)
        pm = moving_target_position(g, vd, T, clock, h)
        one_h = (1.0 - h)[:, None]
        f = (tau ** 2 * a - D * (vd - tau * v) * one_h) / K - (pm - p) * one_h
    else:
        pm = linear_delayed_goal(p0, g, t, T, tau)
        f = (tau ** 2 * a + tau * D * v) / K - (pm - p)
    x = h if kernels.form == PHASE_KERNELS else t / (tau * T)
    kernels.weights = _fit_weights(kernels, x, h, f, method)
    return PositionDmp(gains, kernels, g, p0, T, clock, formulation)


def train_orientation(demo, n_kernels=15, gains=None, clock=None,
                      formulation="standard", cross_vel=None, method="lwr"):
    """Learn an orientation primitive from one demonstration.

    Same regression as :func:`train_position`, with the orientation error
    ``vec(q_d * conj(q))`` replacing the position difference. The demo's
    quaternions are made sign-continuous first.
    """
    if formulation not in FORMULATIONS:
        raise ValueError(f"unknown formulation {formulation!r}")
    _check_demo(demo, n_kernels)
    q = sign_continuous(demo.q)
    demo = replace(demo, q=q).with_derivatives()
    gains = gains or DmpGains.critical(10.0)
    t = demo.t - demo.t[0]
    T = t[-1]
    clock = _default_clock(formulation, T, demo.dt, clock)
    tau = clock.tau
    K, D = gains.K, gains.D
    w, wd = demo.w, demo.wd
    q0, g = q[0], q[-1]
    h = clock.h(t)
    kernels = _default_kernels(formulation, n_kernels, clock, T)
    if formulation == "standard":
        f = ((tau ** 2 * wd + tau * D * w) / K - quat.qerr(g, q)
             + quat.qerr(g, q0) * h[:, None])
    elif formulation == "moving_target":
        wdes = np.zeros(3) if cross_vel is None else np.asarray(cross_vel, dtype=float)
        qm = moving_target_quaternion(g, wdes, T, clock, h)
        one_h = (1.0 - h)[:, None]
        f = (tau ** 2 * wd - D * (wdes - tau * w) * one_h) / K - quat.qerr(qm, q) * one_h
    else:
        qm = geodesic_delayed_goal(q0, g, t, T, tau)
        f = (tau ** 2 * wd + tau * D * w) / K - quat.qerr(qm, q)
    x = h if kernels.form == PHASE_KERNELS else t / (tau * T)
    kernels.weights = _fit_weights(kernels, x, h, f, method)
    return OrientationDmp(gains, kernels, g, q0, T, clock, formulation)


def sign_continuous(q):
    """Flip quaternion signs so consecutive samples have non-negative dot."""
    q = np.array(q, dtype=float)
    for k in range(1, len(q)):
        if np.dot(q[k], q[k - 1]) < 0.0:
            q[k] = -q[k]
    return q


def _targets(d, t, h, cross_vel):
    """Moving/delayed target for a single primitive rollout."""
    if d.formulation == "moving_target":
        cv = np.zeros(3) if cross_vel is None else np.asarray(cross_vel, dtype=float)
        if isinstance(d, OrientationDmp):
            return moving_target_quaternion(d.goal, cv, d.T, d.clock, h), cv
        return moving_target_position(d.goal, cv, d.T, d.clock, h), cv
    if d.formulation == "delayed_goal":
        if isinstance(d, OrientationDmp):
            return geodesic_delayed_goal(d.start, d.goal, t, d.T, d.tau), None
        return linear_delayed_goal(d.start, d.goal, t, d.T, d.tau), None
    return None, None


def rollout(position=None, orientation=None, duration=None, dt=0.01,
            p0=None, v0=None, q0=None, w0=None, cross_vel=None):
    """Integrate one position and/or orientation primitive with a fixed step.

    Missing parts are held constant (zero position / identity orientation).
    ``duration`` defaults to twice the demonstrated duration.

    Returns
    -------
    traj : PoseTrajectory
        Physical velocities and accelerations plus the clock trace.
    """
    main = position if position is not None else orientation
    if main is None:
        raise ValueError("need at least one primitive")
    if duration is None:
        duration = 2.0 * main.T * main.tau
    if duration <= 0:
        raise ValueError("duration must be positive")
    n = int(round(duration / dt)) + 1
    t = np.arange(n) * dt
    h = main.clock.h(t)
    p = np.zeros((n, 3))
    v = np.zeros((n, 3))
    a = np.zeros((n, 3))
    q = np.tile(quat.IDENTITY, (n, 1))
    w = np.zeros((n, 3))
    wd = np.zeros((n, 3))
    cv_p = cv_q = None
    if cross_vel is not None:
        cv_p, cv_q = cross_vel
    if position is not None:
        p[0] = position.start if p0 is None else p0
        v[0] = 0.0 if v0 is None else np.asarray(v0) * position.tau
        pv = v[0].copy()
        for k in range(n):
            tgt, tv = _targets(position, t[k], h[k], cv_p)
            acc = position_accel(position, p[k], pv, h[k], t[k], tgt, tv)
            a[k] = acc / position.tau
            v[k] = pv / position.tau
            if k + 1 < n:
                pv = pv + dt * acc
                p[k + 1] = p[k] + dt * pv / position.tau
    if orientation is not None:
        q[0] = orientation.start if q0 is None else q0
        ow = np.zeros(3) if w0 is None else np.asarray(w0, dtype=float) * orientation.tau
        for k in range(n):
            tgt, tv = _targets(orientation, t[k], h[k], cv_q)
            acc = orientation_accel(orientation, q[k], ow, h[k], t[k], tgt, tv)
            wd[k] = acc / orientation.tau
            w[k] = ow / orientation.tau
            if k + 1 < n:
                ow = ow + dt * acc
                q[k + 1] = quat.integrate_step(q[k], ow / orientation.tau, dt)
    return PoseTrajectory(t, p, q, v, a, w, wd, h)


def ve(q1, q2):
    """``(eta1 - eta2)^2 + |eps1 - eps2|^2``."""
    return np.sum((np.asarray(q1) - np.asarray(q2)) ** 2, axis=-1)


def orientation_lyapunov(goal, q, w, K):
    """``V_e(goal, q) + w^T K^-1 w / 2`` for a single orientation primitive."""
    return ve(goal, q) + 0.5 * np.sum(w * w / K, axis=-1)


def orientation_rollout_batch(d, duration, dt=0.01, q0=None, w0=None):
    """Roll out a batch of standard orientation primitives in lockstep.

    ``d`` holds stacked goals ``(B, 4)``, gains ``(B, 3)`` and weights
    ``(B, 3, N)``; the clock and kernel centers are shared.

    Returns
    -------
    t : array, shape (M,)
    q : array, shape (M, B, 4)
    w : array, shape (M, B, 3)
        Physical angular velocity.
    h : array, shape (M,)
    """
    if d.formulation != "standard":
        raise ValueError("batched rollout supports the standard formulation only")
    n = int(round(duration / dt)) + 1
    t = np.arange(n) * dt
    h = d.clock.h(t)
    qk = quat.normalize(d.start if q0 is None else q0)
    wk = np.zeros_like(qk[..., 1:]) if w0 is None else np.asarray(w0, dtype=float) * d.tau
    q = np.empty((n,) + qk.shape)
    w = np.empty((n,) + wk.shape)
    for k in range(n):
        q[k] = qk
        w[k] = wk / d.tau
        if k + 1 < n:
            qk, wk, _ = orientation_step(d, qk, wk, h[k], dt, t[k])
    return t, q, w, h
