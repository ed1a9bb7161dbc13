"""Bimanual coupled DMPs: two arm primitives linked through a relative one.

Each arm is a pose DMP. A third, relative primitive encodes the desired
offset ``p_rel = p_r - p_l`` and ``q_rel = q_r * conj(q_l)`` and is
integrated on its own. Coupling forces pull the measured relative pose
towards it. Three placements are supported:

``"I"``
    Forces on the acceleration level (stiffness and damping).
``"II"``
    Stiffness forces on the velocity level (``p_dot`` and the angular
    velocity fed into ``q_dot``).
``"III"``
    Stiffness on the velocity level plus damping on the acceleration level.

Orientation errors in this module use the ``2 vec(g * conj(q))`` convention,
so the arm orientation dynamics read
``tau w_dot = K (2 vec(g * conj(q)) - 2 d0 h + f) - D w``.
Velocities ``v`` and ``w`` are stored scaled by ``tau``.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace
import json

import numpy as np

from . import quat
from .clock import ExpClock
from .dmp import DmpGains, OrientationDmp, PositionDmp, phase_kernels, ve
from .errors import ConfigError, StabilityViolation
from .merging import PosePrimitive

CASE_I = "I"
CASE_II = "II"
CASE_III = "III"
CASES = (CASE_I, CASE_II, CASE_III)
MONITOR_RTOL = 1e-9
CONVERGENCE_TOL = 1e-3
# below this both candidates certify convergence; see _monitor
V_FLOOR = 1e-10


@dataclass
class CoupledState:
    """Arm states plus the state of the relative primitive.

    All fields may carry a leading batch dimension. Derived relative
    quantities are properties, so they are always computed from the current
    arm states.
    """
    p_r: np.ndarray
    p_l: np.ndarray
    v_r: np.ndarray
    v_l: np.ndarray
    q_r: np.ndarray
    q_l: np.ndarray
    w_r: np.ndarray
    w_l: np.ndarray
    p_rel: np.ndarray
    v_rel: np.ndarray
    q_rel: np.ndarray
    w_rel: np.ndarray

    def __post_init__(self):
        for f in fields(self):
            setattr(self, f.name, np.asarray(getattr(self, f.name), dtype=float))
        for name in ("q_r", "q_l", "q_rel"):
            q = getattr(self, name)
            if np.any(np.abs(np.linalg.norm(q, axis=-1) - 1.0) > 1e-6):
                raise ValueError(f"{name} must be a unit quaternion")

    @property
    def p_rl(self):
        return self.p_r - self.p_l

    @property
    def v_rl(self):
        return self.v_r - self.v_l

    @property
    def q_rl(self):
        return quat.qprod(self.q_r, quat.conj(self.q_l))

    @property
    def w_rl(self):
        return self.w_r - quat.rotate(self.q_rl, self.w_l)

    @classmethod
    def _raw(cls, **arrays):
        """Build without validation (intermediate Runge-Kutta stages)."""
        st = object.__new__(cls)
        st.__dict__.update(arrays)
        return st

    def copy(self):
        return CoupledState(**{f.name: getattr(self, f.name).copy() for f in fields(self)})

    def take(self, idx):
        """State of one trial (or a subset) of a batched state."""
        return CoupledState(**{f.name: getattr(self, f.name)[idx] for f in fields(self)})

    def to_dict(self):
        return {f.name: getattr(self, f.name).tolist() for f in fields(self)}


@dataclass(frozen=True)
class CouplingForces:
    """Coupling terms; families a case does not use are zero.

    ``fp``/``fq`` enter the position and quaternion kinematics, ``fv``/``fw``
    the accelerations. ``_rl`` acts on the right arm, ``_lr`` on the left.
    """
    fp_rl: np.ndarray
    fp_lr: np.ndarray
    fv_rl: np.ndarray
    fv_lr: np.ndarray
    fq_rl: np.ndarray
    fq_lr: np.ndarray
    fw_rl: np.ndarray
    fw_lr: np.ndarray


def _zero_pose(goal_p, goal_q, gains_p, gains_q, tau, n_kernels=2):
    bank = phase_kernels(n_kernels, 1.0, 1.0)
    clock = ExpClock(tau=tau)
    pos = PositionDmp(gains_p, bank, goal_p, goal_p, 1.0, clock)
    ori = OrientationDmp(gains_q, bank, goal_q, goal_q, 1.0, clock)
    return PosePrimitive(pos, ori)


@dataclass(frozen=True)
class CoupledSystem:
    """Two arm primitives, a relative primitive and coupling gains.

    Parameters
    ----------
    right, left, relative : PosePrimitive
        Each needs both a position and an orientation part. All three must
        share the same gains and clock.
    Kf, Df : array_like
        Diagonal coupling stiffness and damping (3-vectors or scalars).
    case : {"I", "II", "III"}
    """
    right: PosePrimitive
    left: PosePrimitive
    relative: PosePrimitive
    Kf: np.ndarray
    Df: np.ndarray
    case: str = CASE_I

    def __post_init__(self):
        if self.case not in CASES:
            raise ConfigError(f"unknown coupling case {self.case!r}; use one of {CASES}")
        for name in ("right", "left", "relative"):
            prim = getattr(self, name)
            if prim.position is None or prim.orientation is None:
                raise ConfigError(f"{name} primitive needs position and orientation parts")
        ref = self.right
        for prim in (self.left, self.relative):
            for a, b in ((prim.position, ref.position), (prim.orientation, ref.orientation)):
                if not (np.array_equal(a.gains.K, b.gains.K) and np.array_equal(a.gains.D, b.gains.D)):
                    raise ConfigError("all primitives of a coupled system share K and D")
                if a.tau != b.tau:
                    raise ConfigError("all primitives of a coupled system share tau")
        object.__setattr__(self, "Kf", np.broadcast_to(np.asarray(self.Kf, dtype=float), (3,)).copy())
        object.__setattr__(self, "Df", np.broadcast_to(np.asarray(self.Df, dtype=float), (3,)).copy())
        # D_k = K^-1 D is diagonal, so symmetric; positive since K, D are
        for g in (ref.position.gains, ref.orientation.gains):
            assert np.all(g.D / g.K > 0)

    @classmethod
    def asymptotic(cls, goals_p, goals_q, K=10.0, D=None, Kf=None, Df=1.0,
                   case=CASE_I, tau=1.0, relative_goal=None):
        """System without forcing terms (the limit system after the clock decays).

        Parameters
        ----------
        goals_p, goals_q : pair of arrays
            Right and left goals, possibly batched.
        K, D : scalar or 3-vector
            ``D`` defaults to ``2 sqrt(K)``.
        Kf : optional
            Defaults to ``K``.
        relative_goal : (g_p, g_q), optional
            Defaults to the consistent choice ``g_r - g_l``, ``g_r * conj(g_l)``.
        """
        K = np.broadcast_to(np.asarray(K, dtype=float), (3,))
        D = 2.0 * np.sqrt(K) if D is None else np.broadcast_to(np.asarray(D, dtype=float), (3,))
        Kf = K if Kf is None else Kf
        gains = DmpGains(K, D)
        gp_r, gp_l = (np.asarray(g, dtype=float) for g in goals_p)
        gq_r, gq_l = (quat.normalize(g) for g in goals_q)
        if relative_goal is None:
            relative_goal = (gp_r - gp_l, quat.qmul(gq_r, quat.conj(gq_l)))
        return cls(_zero_pose(gp_r, gq_r, gains, gains, tau),
                   _zero_pose(gp_l, gq_l, gains, gains, tau),
                   _zero_pose(relative_goal[0], relative_goal[1], gains, gains, tau),
                   Kf, Df, case)

    @property
    def tau(self):
        return self.right.position.tau

    @property
    def K(self):
        return self.right.position.gains.K

    @property
    def D(self):
        return self.right.position.gains.D

    @property
    def Kq(self):
        return self.right.orientation.gains.K

    @property
    def Dq(self):
        return self.right.orientation.gains.D

    def goal_state(self):
        """The equilibrium ``x_hat``: every primitive at rest at its goal."""
        gp = [np.asarray(p.position.goal, dtype=float) for p in (self.right, self.left, self.relative)]
        gq = [np.asarray(p.orientation.goal, dtype=float) for p in (self.right, self.left, self.relative)]
        z = np.zeros(np.broadcast_shapes(*(g.shape for g in gp)))
        return CoupledState(gp[0], gp[1], z, z, gq[0], gq[1], z, z, gp[2], z, gq[2], z)

    def goal_inconsistency(self):
        """Position and rotation mismatch between the relative and the arm goals."""
        gr, gl, grel = self.right, self.left, self.relative
        dp = np.linalg.norm(grel.position.goal - (gr.position.goal - gl.position.goal), axis=-1)
        dq = quat.qdist(grel.orientation.goal,
                        quat.qmul(gr.orientation.goal, quat.conj(gl.orientation.goal)))
        return float(np.max(dp)), float(np.max(dq))

    def preconditions(self):
        """Return the list of violated assumptions of the stability analysis."""
        problems = []
        if np.any(self.Kf <= 0):
            problems.append("K_f must be positive definite")
        if np.any(self.Df <= 0) and self.case != CASE_II:
            problems.append("D_f must be positive definite")
        return problems

    def assumptions(self):
        """Conditions under which the orientation candidate is exact.

        Failing them is not an error; the monitor shows the consequences.
        """
        notes = []
        if not np.allclose(self.Kf, self.Kq):
            notes.append("K_f differs from the orientation stiffness K")
        if not np.allclose(self.Kq, self.Kq[..., :1]):
            notes.append("orientation stiffness K is not isotropic")
        return notes

    def to_dict(self):
        return {
            "case": self.case, "Kf": self.Kf.tolist(), "Df": self.Df.tolist(),
            "right": _pose_to_dict(self.right), "left": _pose_to_dict(self.left),
            "relative": _pose_to_dict(self.relative),
        }


def _pose_to_dict(prim):
    return {"position": prim.position.to_dict(), "orientation": prim.orientation.to_dict()}


def coupling_eval(sys, st):
    """Coupling forces for the current arm and relative states.

    Returns
    -------
    CouplingForces
    """
    p_rl, v_rl, q_rl, w_rl = st.p_rl, st.v_rl, st.q_rl, st.w_rl
    q_lr = quat.conj(q_rl)
    Kf, Df = sys.Kf, sys.Df
    zero = np.zeros(np.broadcast_shapes(p_rl.shape, st.p_rel.shape))
    e_rl = 2.0 * quat.vec(quat.qprod(st.q_rel, q_lr))
    if sys.case == CASE_I:
        e_lr = 2.0 * quat.vec(quat.qprod(quat.conj(st.q_rel), q_rl))
        fv = Kf * (st.p_rel - p_rl) + Df * (st.v_rel - v_rl)
        dw = Df * (st.w_rel - w_rl)
        # damping for the left arm is rotated into its own frame
        return CouplingForces(zero, zero, fv, -fv, zero, zero,
                              Kf * e_rl + dw, Kf * e_lr - quat.rotate(q_lr, dw))
    fp = Kf * (st.p_rel - p_rl)
    fq = Kf * e_rl
    fq_lr = -quat.rotate(q_lr, fq)
    if sys.case == CASE_II:
        return CouplingForces(fp, -fp, zero, zero, fq, fq_lr, zero, zero)
    fv = Df * (st.v_rel - v_rl)
    fw = Df * (st.w_rel - w_rl)
    return CouplingForces(fp, -fp, fv, -fv, fq, fq_lr, fw, -quat.rotate(q_lr, fw))


def _pos_acc(d, p, v, h, t):
    K, D = d.gains.K, d.gains.D
    if np.ndim(h) == 0 and h == 0.0:
        return K * (d.goal - p) - D * v
    hh = np.asarray(h, dtype=float)[..., None]
    f = d.forcing(h, t)
    return K * ((d.goal - p) - (d.goal - d.start) * hh + f) - D * v


def _ori_acc(d, q, w, h, t):
    K, D = d.gains.K, d.gains.D
    if np.ndim(h) == 0 and h == 0.0:
        return 2.0 * K * quat.qerr(d.goal, q) - D * w
    hh = np.asarray(h, dtype=float)[..., None]
    f = d.forcing(h, t)
    e = quat.qerr(d.goal, q) - quat.qerr(d.goal, d.start) * hh
    return K * (2.0 * e + f) - D * w


def _rates(sys, st, h, t):
    """Time derivatives of every state field (quaternion rates as 4-vectors)."""
    tau = sys.tau
    F = coupling_eval(sys, st)
    R, L, Q = sys.right, sys.left, sys.relative
    return dict(
        p_r=(st.v_r + F.fp_rl) / tau,
        p_l=(st.v_l + F.fp_lr) / tau,
        v_r=(_pos_acc(R.position, st.p_r, st.v_r, h, t) + F.fv_rl) / tau,
        v_l=(_pos_acc(L.position, st.p_l, st.v_l, h, t) + F.fv_lr) / tau,
        q_r=quat.propagate(st.q_r, st.w_r + F.fq_rl) / tau,
        q_l=quat.propagate(st.q_l, st.w_l + F.fq_lr) / tau,
        w_r=(_ori_acc(R.orientation, st.q_r, st.w_r, h, t) + F.fw_rl) / tau,
        w_l=(_ori_acc(L.orientation, st.q_l, st.w_l, h, t) + F.fw_lr) / tau,
        p_rel=st.v_rel / tau,
        v_rel=_pos_acc(Q.position, st.p_rel, st.v_rel, h, t) / tau,
        q_rel=quat.propagate(st.q_rel, st.w_rel) / tau,
        w_rel=_ori_acc(Q.orientation, st.q_rel, st.w_rel, h, t) / tau,
    ), F


_QUATS = ("q_r", "q_l", "q_rel")


def _euler(sys, st, h, dt, t):
    tau = sys.tau
    k, F = _rates(sys, st, h, t)
    v_r = st.v_r + dt * k["v_r"]
    v_l = st.v_l + dt * k["v_l"]
    w_r = st.w_r + dt * k["w_r"]
    w_l = st.w_l + dt * k["w_l"]
    v_rel = st.v_rel + dt * k["v_rel"]
    w_rel = st.w_rel + dt * k["w_rel"]
    return CoupledState(
        p_r=st.p_r + dt * (v_r + F.fp_rl) / tau,
        p_l=st.p_l + dt * (v_l + F.fp_lr) / tau,
        v_r=v_r, v_l=v_l,
        q_r=quat.integrate_step(st.q_r, (w_r + F.fq_rl) / tau, dt),
        q_l=quat.integrate_step(st.q_l, (w_l + F.fq_lr) / tau, dt),
        w_r=w_r, w_l=w_l,
        p_rel=st.p_rel + dt * v_rel / tau, v_rel=v_rel,
        q_rel=quat.integrate_step(st.q_rel, w_rel / tau, dt), w_rel=w_rel,
    )


def _rk4(sys, st, h, dt, t):
    names = [f.name for f in fields(CoupledState)]
    base = {n: getattr(st, n) for n in names}

    def shifted(k, a):
        return CoupledState._raw(**{n: base[n] + a * k[n] for n in names})

    k1, _ = _rates(sys, st, h, t)
    k2, _ = _rates(sys, shifted(k1, 0.5 * dt), h, t + 0.5 * dt)
    k3, _ = _rates(sys, shifted(k2, 0.5 * dt), h, t + 0.5 * dt)
    k4, _ = _rates(sys, shifted(k3, dt), h, t + dt)
    out = {n: base[n] + dt / 6.0 * (k1[n] + 2 * k2[n] + 2 * k3[n] + k4[n]) for n in names}
    for n in _QUATS:
        out[n] = quat.normalize(out[n])
    return CoupledState(**out)


def coupled_step(sys, st, h, dt, t=0.0, method="euler"):
    """Advance all three primitives by ``dt`` with the phase held at ``h``.

    ``method="euler"`` is the semi-implicit Euler scheme used by single
    primitives; ``"rk4"`` is the classical Runge-Kutta scheme with the
    quaternions renormalized after the step.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if method == "euler":
        return _euler(sys, st, h, dt, t)
    if method == "rk4":
        return _rk4(sys, st, h, dt, t)
    raise ValueError(f"unknown integration method {method!r}")


def coupled_rollout(sys, st, duration, dt=1e-3, method="euler", clock=None):
    """Integrate from ``st`` and return the list of visited states."""
    clock = sys.right.position.clock if clock is None else clock
    n = int(round(duration / dt))
    out = [st]
    for k in range(n):
        t = k * dt
        st = coupled_step(sys, st, clock.h(t), dt, t, method)
        out.append(st)
    return out


def lyapunov_position(sys, st, case=None):
    """Position candidate: arm goal errors, relative term (case I only), kinetic terms."""
    case = sys.case if case is None else case
    K = sys.K
    er = sys.right.position.goal - st.p_r
    el = sys.left.position.goal - st.p_l
    V = 0.5 * np.sum(er * K * er + el * K * el, axis=-1)
    V = V + 0.5 * np.sum(st.v_r ** 2 + st.v_l ** 2, axis=-1)
    if case == CASE_I:
        erl = sys.relative.position.goal - st.p_rl
        V = V + 0.5 * np.sum(erl * sys.Kf * erl, axis=-1)
    return V


def lyapunov_orientation(sys, st, case=None, form="corrected"):
    """Orientation candidate.

    Parameters
    ----------
    form : {"corrected", "literal"}
        ``"literal"`` evaluates the uncorrected candidates. In case I it
        carries a second relative term ``2 V_e(conj(g_rel), q_lr)``, which
        equals the first one and double-counts the coupling stiffness. In
        cases II and III it carries ``V_e(g_rel, q_rl)``, whose derivative
        is indefinite. ``"corrected"`` drops the offending term.
    """
    case = sys.case if case is None else case
    if form not in ("corrected", "literal"):
        raise ValueError(f"unknown form {form!r}")
    Kq = sys.Kq
    gr, gl = sys.right.orientation.goal, sys.left.orientation.goal
    grel = sys.relative.orientation.goal
    kin = np.sum(st.w_r ** 2 / Kq + st.w_l ** 2 / Kq, axis=-1)
    q_rl = st.q_rl
    if case == CASE_I:
        V = 2.0 * (ve(gr, st.q_r) + ve(gl, st.q_l)) + 0.5 * kin + 2.0 * ve(grel, q_rl)
        if form == "literal":
            V = V + 2.0 * ve(quat.conj(grel), quat.conj(q_rl))
        return V
    V = ve(gr, st.q_r) + ve(gl, st.q_l) + 0.25 * kin
    if form == "literal":
        V = V + ve(grel, q_rl)
    return V


def position_lyapunov_rate(sys, st):
    """Closed-form ``dV^p/dt`` in the limit system with ``p_rel = g_rel``."""
    D, Df, tau = sys.D, sys.Df, sys.tau
    out = -np.sum(st.v_r * D * st.v_r + st.v_l * D * st.v_l, axis=-1)
    if sys.case in (CASE_I, CASE_III):
        out = out - np.sum(st.v_rl * Df * st.v_rl, axis=-1)
    if sys.case in (CASE_II, CASE_III):
        d = sys.relative.position.goal - st.p_rl
        out = out - np.sum(d * sys.Kf * sys.K * d, axis=-1)
    return out / tau


def orientation_lyapunov_rate_case_i(sys, st):
    """Closed-form ``dV^q/dt`` for case I with ``K_f = K = k I``.

    ``-(w_r^T D_k w_r + w_l^T D_k w_l + w_rl^T K^-1 D_f w_rl) / tau`` with
    ``D_k = K^-1 D``.
    """
    Kq, Dq = sys.Kq, sys.Dq
    w_rl = st.w_rl
    out = np.sum(st.w_r * (Dq / Kq) * st.w_r + st.w_l * (Dq / Kq) * st.w_l, axis=-1)
    out = out + np.sum(w_rl * (sys.Df / Kq) * w_rl, axis=-1)
    return -out / sys.tau


def kf_residual(sys, st):
    """``|w_rl^T (K^-1 K_f - I) e_rl|``: the term left over when ``K_f != K``."""
    e_rl = 2.0 * quat.vec(quat.qprod(st.q_rel, quat.conj(st.q_rl)))
    return np.abs(np.sum(st.w_rl * (sys.Kf / sys.Kq - 1.0) * e_rl, axis=-1))


@dataclass(frozen=True)
class InitialSpread:
    """Distribution of random initial arm states around the arm goals.

    Positions are uniform in a cube of half-width ``position``; rotations
    have a uniformly random axis and an angle uniform in ``[0, angle_deg]``;
    velocities are Gaussian with the given standard deviations (scaled units).
    """
    position: float = 0.5
    velocity: float = 0.5
    angle_deg: float = 100.0
    angular_velocity: float = 0.5

    def __post_init__(self):
        if min(self.position, self.velocity, self.angle_deg, self.angular_velocity) < 0:
            raise ConfigError("initial-state spreads must be non-negative")
        if self.angle_deg >= 180.0:
            raise ConfigError("angle_deg must stay below 180")


def _random_rotation(rng, n, max_angle):
    axis = rng.normal(size=(n, 3))
    axis /= np.linalg.norm(axis, axis=-1, keepdims=True)
    angle = rng.uniform(0.0, max_angle, size=(n, 1))
    return quat.qexp(0.5 * angle * axis)


def random_initial_states(sys, n, rng, spread=InitialSpread()):
    """Random arm states; the relative primitive starts at rest at its goal."""
    x = sys.goal_state()
    shape = (n, 3)
    gp_r = np.broadcast_to(x.p_r, shape)
    gp_l = np.broadcast_to(x.p_l, shape)
    gq_r = np.broadcast_to(x.q_r, (n, 4))
    gq_l = np.broadcast_to(x.q_l, (n, 4))
    amax = np.deg2rad(spread.angle_deg)
    return CoupledState(
        p_r=gp_r + rng.uniform(-spread.position, spread.position, shape),
        p_l=gp_l + rng.uniform(-spread.position, spread.position, shape),
        v_r=rng.normal(scale=spread.velocity, size=shape),
        v_l=rng.normal(scale=spread.velocity, size=shape),
        q_r=quat.qmul(_random_rotation(rng, n, amax), gq_r),
        q_l=quat.qmul(_random_rotation(rng, n, amax), gq_l),
        w_r=rng.normal(scale=spread.angular_velocity, size=shape),
        w_l=rng.normal(scale=spread.angular_velocity, size=shape),
        p_rel=np.broadcast_to(x.p_rel, shape).copy(),
        v_rel=np.zeros(shape),
        q_rel=np.broadcast_to(x.q_rel, (n, 4)).copy(),
        w_rel=np.zeros(shape),
    )


def _batch(sys, idx, n):
    """Slice batched goals of ``sys`` down to the trials in ``idx``."""
    def cut(d):
        g = np.asarray(d.goal)
        if g.ndim == 1:
            return d
        return replace(d, goal=g[idx], start=np.asarray(d.start)[idx])

    def pose(p):
        return PosePrimitive(cut(p.position), cut(p.orientation), p.T)

    return replace(sys, right=pose(sys.right), left=pose(sys.left), relative=pose(sys.relative))


def _monitor(sys, st, t_end, dt):
    """Integrate a batch with RK4 and track Lyapunov increments.

    Integration stops early once both candidates are below ``V_FLOOR`` in
    every trial: from there on no step can exceed the monitor tolerance and,
    the candidates being non-increasing, the goal errors stay below
    ``sqrt(2 V_FLOOR / min K)``.
    """
    n_steps = int(round(t_end / dt))
    n = st.p_r.shape[0]
    Vp = lyapunov_position(sys, st)
    Vq = lyapunov_orientation(sys, st)
    worst = np.full(n, -np.inf)
    first_bad = np.full(n, -1)
    bad_state = [None] * n
    rate_min = np.full(n, np.inf)
    rate_max = np.full(n, -np.inf)
    settle = np.zeros(n)
    resid = np.zeros(n)
    track_resid = bool(sys.assumptions())
    k = 0
    while k < n_steps:
        nxt = coupled_step(sys, st, 0.0, dt, k * dt, method="rk4")
        Vp_n = lyapunov_position(sys, nxt)
        Vq_n = lyapunov_orientation(sys, nxt)
        dVp, dVq = Vp_n - Vp, Vq_n - Vq
        slack = np.maximum(dVp / (1.0 + Vp), dVq / (1.0 + Vq))
        bad = (slack > MONITOR_RTOL) & (first_bad < 0)
        for i in np.flatnonzero(bad):
            first_bad[i] = k
            bad_state[i] = {"t": k * dt, "dVp": float(dVp[i]), "dVq": float(dVq[i]),
                            "Vp": float(Vp[i]), "Vq": float(Vq[i]),
                            "state": st.take(i).to_dict()}
        np.maximum(worst, slack, out=worst)
        rate = np.maximum(dVp, dVq) / dt
        np.minimum(rate_min, rate, out=rate_min)
        np.maximum(rate_max, rate, out=rate_max)
        if track_resid:
            np.maximum(resid, kf_residual(sys, st), out=resid)
        st, Vp, Vq = nxt, Vp_n, Vq_n
        k += 1
        if k % 10 == 0 or k == n_steps:
            out = _goal_errors(sys, st) >= CONVERGENCE_TOL
            settle = np.where(out, k * dt, settle)
            if np.all(Vp < V_FLOOR) and np.all(Vq < V_FLOOR):
                break
    return dict(state=st, worst=worst, first_bad=first_bad, bad_state=bad_state,
                rate_min=rate_min, rate_max=rate_max, settle=settle, resid=resid,
                t_stop=k * dt)


def _goal_errors(sys, st):
    """Largest of the arm goal distances and speeds (physical units)."""
    tau = sys.tau
    errs = [
        np.linalg.norm(sys.right.position.goal - st.p_r, axis=-1),
        np.linalg.norm(sys.left.position.goal - st.p_l, axis=-1),
        quat.qdist(sys.right.orientation.goal, st.q_r),
        quat.qdist(sys.left.orientation.goal, st.q_l),
        np.linalg.norm(st.v_r, axis=-1) / tau, np.linalg.norm(st.v_l, axis=-1) / tau,
        np.linalg.norm(st.w_r, axis=-1) / tau, np.linalg.norm(st.w_l, axis=-1) / tau,
    ]
    return np.max(np.stack(errs), axis=0)


def verify_stability(sys, n_trials=100, dt=1e-3, seed=0, t_end=None,
                     spread=InitialSpread(), workers=1, raise_on_violation=True):
    """Check the Lyapunov candidates and convergence on random initial states.

    The limit system (no forcing, relative primitive at rest at its goal) is
    integrated with RK4 for every trial. Each step must satisfy
    ``V(k+1) - V(k) <= 1e-9 (1 + V(k))`` for both candidates, and every arm
    must be within 1e-3 of its goal (pose and velocity) at ``t_end``
    (default ``20 tau``). The equilibrium must make both candidates vanish,
    which fails when the relative goal is inconsistent with the arm goals.

    Parameters
    ----------
    sys : CoupledSystem
        Goals may be batched with ``n_trials`` rows.
    workers : int
        Trials are split into this many chunks run on a thread pool; results
        are merged by trial index, so the verdict does not depend on it
        (recorded values may differ in the last bits).
        One chunk is fastest on a single core, where threads only shrink the
        vectorized batches.

    Returns
    -------
    report : dict

    Raises
    ------
    StabilityViolation
        With the report attached, if any check fails and
        ``raise_on_violation`` is set.
    """
    t_end = 20.0 * sys.tau if t_end is None else float(t_end)
    rng = np.random.default_rng(seed)
    report = {"case": sys.case, "n_trials": n_trials, "dt": dt, "t_end": t_end,
              "seed": seed, "preconditions": sys.preconditions(),
              "assumptions": sys.assumptions()}
    if report["preconditions"]:
        report["passed"] = False
        if raise_on_violation:
            raise StabilityViolation("; ".join(report["preconditions"]), report)
        return report
    x_hat = sys.goal_state()
    eq_v = max(float(np.max(lyapunov_position(sys, x_hat))),
               float(np.max(lyapunov_orientation(sys, x_hat))))
    dp, dq = sys.goal_inconsistency()
    report["equilibrium"] = {"V_at_goals": eq_v, "relative_goal_mismatch_p": dp,
                             "relative_goal_mismatch_q": dq, "consistent": eq_v < 1e-12}
    st0 = random_initial_states(sys, n_trials, rng, spread)
    if sys.case != CASE_I:
        # the case II/III candidate is monotone while the error quaternions
        # stay in the positive hemisphere, which V < 2 guarantees
        Vq0 = lyapunov_orientation(_batch_all(sys, n_trials), st0)
        report["initial_Vq_max"] = float(np.max(Vq0))
    chunks = [c for c in np.array_split(np.arange(n_trials), max(1, int(workers))) if c.size]

    def run(idx):
        return _monitor(_batch_all(sys, n_trials, idx), st0.take(idx), t_end, dt)

    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        parts = list(pool.map(run, chunks))
    trials = []
    violations = []
    for idx, part in zip(chunks, parts):
        final_err = _goal_errors(_batch_all(sys, n_trials, idx), part["state"])
        for j, i in enumerate(idx):
            rec = {"trial": int(i), "max_dV_rel": float(part["worst"][j]),
                   "min_rate": float(part["rate_min"][j]),
                   "max_rate": float(part["rate_max"][j]),
                   "settle_time": float(part["settle"][j]),
                   "final_error": float(final_err[j]),
                   "kf_residual_max": float(part["resid"][j]),
                   "t_stop": float(part["t_stop"])}
            trials.append(rec)
            if part["bad_state"][j] is not None:
                violations.append({"trial": int(i), "kind": "lyapunov_increase",
                                   **part["bad_state"][j]})
            if final_err[j] >= CONVERGENCE_TOL:
                violations.append({"trial": int(i), "kind": "no_convergence",
                                   "final_error": float(final_err[j]),
                                   "state": part["state"].take(j).to_dict()})
    if not report["equilibrium"]["consistent"]:
        violations.insert(0, {"trial": None, "kind": "inconsistent_goals",
                              "V_at_goals": eq_v})
    report["trials"] = trials
    report["violations"] = violations
    report["max_dV_rel"] = max(r["max_dV_rel"] for r in trials)
    report["max_settle_time"] = max(r["settle_time"] for r in trials)
    report["kf_residual_max"] = max(r["kf_residual_max"] for r in trials)
    report["passed"] = not violations
    if violations and raise_on_violation:
        raise StabilityViolation(f"{len(violations)} stability violation(s); "
                                 f"first: {violations[0]['kind']}", report)
    return report


def _batch_all(sys, n, idx=None):
    if idx is None:
        return sys
    return _batch(sys, idx, n)


def check_decoupling(sys, st, duration, dt=1e-3):
    """Relative-primitive trajectories with and without arm coupling.

    Returns the two stacked relative states; they are identical when the
    relative primitive is decoupled from the arms.
    """
    off = replace(sys, Kf=np.zeros(3), Df=np.zeros(3))
    runs = []
    for s in (sys, off):
        traj = coupled_rollout(s, st, duration, dt)
        runs.append(np.concatenate([np.stack([x.p_rel for x in traj]),
                                    np.stack([x.q_rel for x in traj]),
                                    np.stack([x.w_rel for x in traj])], axis=-1))
    return runs[0], runs[1]


SCENARIO_KEYS = {"case", "K", "D", "Kf", "Df", "tau", "goals", "relative_goal",
                 "initial", "n_trials", "dt", "t_end", "seed"}


def system_from_scenario(cfg, rng=None):
    """Build the system and run options of a scenario dictionary.

    ``goals`` is either ``"random"`` (one random goal pair per trial) or
    ``{"right": {"p": [...], "q": [...]}, "left": {...}}``. An explicit
    ``relative_goal`` with the same layout overrides the consistent default.
    """
    unknown = set(cfg) - SCENARIO_KEYS
    if unknown:
        raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
    if "case" not in cfg:
        raise ConfigError("scenario needs a 'case'")
    n = int(cfg.get("n_trials", 100))
    seed = int(cfg.get("seed", 0))
    goals = cfg.get("goals", "random")
    if goals == "random":
        rng = np.random.default_rng(seed + 1) if rng is None else rng
        gp = (rng.uniform(-1, 1, (n, 3)), rng.uniform(-1, 1, (n, 3)))
        gq = (quat.random_quaternions(rng, n), quat.random_quaternions(rng, n))
    else:
        try:
            gp = (np.array(goals["right"]["p"], float), np.array(goals["left"]["p"], float))
            gq = (np.array(goals["right"]["q"], float), np.array(goals["left"]["q"], float))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed goals: {exc}") from exc
    rel = cfg.get("relative_goal")
    if rel is not None:
        rel = (np.array(rel["p"], float), np.array(rel["q"], float))
    init = cfg.get("initial", {})
    try:
        spread = InitialSpread(**init)
    except TypeError as exc:
        raise ConfigError(f"bad initial-state distribution: {exc}") from exc
    try:
        sys = CoupledSystem.asymptotic(gp, gq, K=cfg.get("K", 10.0), D=cfg.get("D"),
                                       Kf=cfg.get("Kf"), Df=cfg.get("Df", 1.0),
                                       case=str(cfg["case"]), tau=float(cfg.get("tau", 1.0)),
                                       relative_goal=rel)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    opts = {"n_trials": n, "dt": float(cfg.get("dt", 1e-3)), "seed": seed,
            "t_end": cfg.get("t_end"), "spread": spread}
    return sys, opts


def load_scenario(path):
    with open(path) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: scenario must be a JSON object")
    return system_from_scenario(cfg)
