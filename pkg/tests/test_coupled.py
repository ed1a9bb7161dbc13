import json

import numpy as np
import pytest

from pose_dmp import quat
from pose_dmp.coupled import (CASE_I, CASE_II, CASE_III, CASES, CoupledState, CoupledSystem,
                              InitialSpread, check_decoupling, coupled_step, coupling_eval,
                              kf_residual, load_scenario, lyapunov_orientation,
                              lyapunov_position, orientation_lyapunov_rate_case_i,
                              position_lyapunov_rate, random_initial_states,
                              system_from_scenario, verify_stability)
from pose_dmp.dmp import ve
from pose_dmp.errors import ConfigError, StabilityViolation


def make_system(rng, case, **kw):
    gp = (rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3))
    gq = (quat.random_quaternions(rng), quat.random_quaternions(rng))
    return CoupledSystem.asymptotic(gp, gq, case=case, **kw)


def states(rng, sys, n=20, **spread):
    return random_initial_states(sys, n, rng, InitialSpread(**spread))


def at_relative_goal(st):
    """Same arms, relative primitive placed exactly on the arms' relative state."""
    return CoupledState(st.p_r, st.p_l, st.v_r, st.v_l, st.q_r, st.q_l, st.w_r, st.w_l,
                        st.p_rl, st.v_rl, st.q_rl, st.w_rl)


def rate_fd(sys, st, V, dt=1e-4):
    """Central difference of ``V`` over two RK4 steps, centered on the middle state."""
    mid = coupled_step(sys, st, 0.0, dt, method="rk4")
    end = coupled_step(sys, mid, 0.0, dt, method="rk4")
    return mid, (V(end) - V(st)) / (2 * dt)


# -- forces ------------------------------------------------------------------

@pytest.mark.parametrize("case", CASES)
def test_forces_vanish_on_relative_goal(rng, case):
    sys = make_system(rng, case)
    st = at_relative_goal(states(rng, sys))
    F = coupling_eval(sys, st)
    for name in ("fp_rl", "fp_lr", "fv_rl", "fv_lr", "fq_rl", "fq_lr", "fw_rl", "fw_lr"):
        np.testing.assert_allclose(getattr(F, name), 0.0, atol=1e-12)


def test_case_i_forces_antisymmetric(rng):
    sys = make_system(rng, CASE_I)
    F = coupling_eval(sys, states(rng, sys))
    np.testing.assert_array_equal(F.fv_lr, -F.fv_rl)


@pytest.mark.parametrize("case", [CASE_II, CASE_III])
def test_orientation_forces_equal_norm(rng, case):
    sys = make_system(rng, case)
    F = coupling_eval(sys, states(rng, sys))
    np.testing.assert_allclose(np.linalg.norm(F.fq_lr, axis=1), np.linalg.norm(F.fq_rl, axis=1),
                               rtol=1e-12)


def test_case_ii_has_no_acceleration_forces(rng):
    sys = make_system(rng, CASE_II)
    F = coupling_eval(sys, states(rng, sys))
    assert not np.any(F.fv_rl) and not np.any(F.fw_rl)


# -- dynamics ----------------------------------------------------------------

@pytest.mark.parametrize("case", CASES)
@pytest.mark.parametrize("method", ["euler", "rk4"])
def test_goal_is_fixed_point(rng, case, method):
    sys = make_system(rng, case)
    x = sys.goal_state()
    y = coupled_step(sys, x, 0.0, 1e-3, method=method)
    for name in ("p_r", "p_l", "v_r", "v_l", "w_r", "w_l"):
        np.testing.assert_allclose(getattr(y, name), getattr(x, name), atol=1e-15)
    for name in ("q_r", "q_l", "q_rel"):
        np.testing.assert_allclose(getattr(y, name), getattr(x, name), atol=1e-15)


@pytest.mark.parametrize("case", CASES)
def test_converges_by_fifteen_tau(rng, case):
    sys = make_system(rng, case)
    report = verify_stability(sys, n_trials=10, seed=3, t_end=15.0)
    assert report["passed"]
    assert max(r["final_error"] for r in report["trials"]) < 1e-3


@pytest.mark.parametrize("case", CASES)
def test_relative_primitive_decoupled(rng, case):
    sys = make_system(rng, case)
    st = states(rng, sys, 1).take(0)
    # start the relative primitive away from its goal
    st = CoupledState(st.p_r, st.p_l, st.v_r, st.v_l, st.q_r, st.q_l, st.w_r, st.w_l,
                      st.p_rel + 0.3, np.full(3, 0.2),
                      quat.qmul(quat.qexp(np.array([0.2, -0.1, 0.3])), st.q_rel), np.full(3, -0.1))
    coupled, alone = check_decoupling(sys, st, 3.0, 1e-2)
    np.testing.assert_array_equal(coupled, alone)


def test_step_rejects_bad_arguments(rng):
    sys = make_system(rng, CASE_I)
    with pytest.raises(ValueError):
        coupled_step(sys, sys.goal_state(), 0.0, 0.0)
    with pytest.raises(ValueError):
        coupled_step(sys, sys.goal_state(), 0.0, 1e-3, method="midpoint")


# -- Lyapunov candidates -----------------------------------------------------

def test_ve_values(rng):
    q = quat.random_quaternions(rng, 10)
    np.testing.assert_allclose(ve(q, q), 0.0)
    np.testing.assert_allclose(ve(q, -q), 4.0)


@pytest.mark.parametrize("case", CASES)
def test_candidates_vanish_only_at_goal(rng, case):
    sys = make_system(rng, case)
    x = sys.goal_state()
    assert lyapunov_position(sys, x) == pytest.approx(0.0, abs=1e-24)
    assert lyapunov_orientation(sys, x) == pytest.approx(0.0, abs=1e-24)
    st = states(rng, sys, 50)
    assert np.all(lyapunov_position(sys, st) > 0)
    assert np.all(lyapunov_orientation(sys, st) > 0)


@pytest.mark.parametrize("case", CASES)
def test_position_rate_closed_form(rng, case):
    sys = make_system(rng, case)
    st = states(rng, sys)
    mid, fd = rate_fd(sys, st, lambda s: lyapunov_position(sys, s))
    exact = position_lyapunov_rate(sys, mid)
    assert np.all(exact <= 0)
    np.testing.assert_allclose(fd, exact, rtol=1e-3, atol=1e-9)


def test_case_i_orientation_rate_closed_form(rng):
    sys = make_system(rng, CASE_I)
    st = states(rng, sys)
    mid, fd = rate_fd(sys, st, lambda s: lyapunov_orientation(sys, s))
    np.testing.assert_allclose(fd, orientation_lyapunov_rate_case_i(sys, mid), rtol=1e-3, atol=1e-9)


@pytest.mark.parametrize("case", CASES)
def test_orientation_rate_non_positive(rng, case):
    sys = make_system(rng, case)
    st = states(rng, sys, 200)
    _, fd = rate_fd(sys, st, lambda s: lyapunov_orientation(sys, s))
    assert np.all(fd <= 1e-6)


def monotone_violation(sys, rng, form, steps=1500):
    st = states(rng, sys, 30)
    V = lyapunov_orientation(sys, st, form=form)
    worst = -np.inf
    for _ in range(steps):
        st = coupled_step(sys, st, 0.0, 1e-3, method="rk4")
        V2 = lyapunov_orientation(sys, st, form=form)
        worst = max(worst, np.max((V2 - V) / (1 + V)))
        V = V2
    return worst


def test_literal_case_i_candidate_increases():
    # the uncorrected case I candidate counts the relative stiffness twice
    rng = np.random.default_rng(5)
    sys = make_system(rng, CASE_I)
    assert monotone_violation(sys, rng, "literal") > 1e-6
    assert monotone_violation(sys, rng, "corrected") <= 1e-9


def test_kf_residual_recorded_when_kf_differs(rng):
    sys = make_system(rng, CASE_I, Kf=3.0)
    assert sys.assumptions()
    report = verify_stability(sys, n_trials=5, seed=1, t_end=3.0, raise_on_violation=False)
    assert report["kf_residual_max"] > 1e-3
    st = states(rng, sys)
    assert np.all(kf_residual(make_system(rng, CASE_I), st) == 0)


def test_inconsistent_goals_flagged(rng):
    sys = make_system(rng, CASE_I, relative_goal=(np.array([0.5, 0, 0]), quat.IDENTITY))
    report = verify_stability(sys, n_trials=3, t_end=2.0, raise_on_violation=False)
    assert not report["equilibrium"]["consistent"]
    assert report["equilibrium"]["V_at_goals"] > 0
    assert report["violations"][0]["kind"] == "inconsistent_goals"
    assert not report["passed"]


def test_negative_damping_is_a_precondition_violation(rng):
    sys = make_system(rng, CASE_I, Df=-1.0)
    with pytest.raises(StabilityViolation) as info:
        verify_stability(sys, n_trials=2)
    assert info.value.report["preconditions"]
    # case II does not use D_f
    assert make_system(rng, CASE_II, Df=0.0).preconditions() == []


def test_violation_carries_counterexample(rng):
    sys = make_system(rng, CASE_I)
    # far too short a horizon to converge
    with pytest.raises(StabilityViolation) as info:
        verify_stability(sys, n_trials=3, t_end=0.5)
    v = info.value.report["violations"][0]
    assert v["kind"] == "no_convergence"
    assert set(v["state"]) >= {"p_r", "q_r", "w_l"}


def test_verification_independent_of_workers(rng):
    sys = make_system(rng, CASE_II)
    a = verify_stability(sys, n_trials=8, seed=2, t_end=4.0, workers=1)
    b = verify_stability(sys, n_trials=8, seed=2, t_end=4.0, workers=3)
    assert a["passed"] == b["passed"]
    np.testing.assert_allclose([r["final_error"] for r in a["trials"]],
                               [r["final_error"] for r in b["trials"]], rtol=1e-9, atol=1e-15)


def test_state_rejects_non_unit_quaternion(rng):
    sys = make_system(rng, CASE_I)
    x = sys.goal_state()
    with pytest.raises(ValueError):
        CoupledState(x.p_r, x.p_l, x.v_r, x.v_l, 2 * x.q_r, x.q_l, x.w_r, x.w_l,
                     x.p_rel, x.v_rel, x.q_rel, x.w_rel)


# -- scenarios ---------------------------------------------------------------

def test_scenario_parsing(tmp_path):
    cfg = {"case": "III", "K": 5.0, "n_trials": 4, "dt": 0.002, "seed": 9,
           "goals": {"right": {"p": [0, 0, 0], "q": [1, 0, 0, 0]},
                     "left": {"p": [0.1, 0, 0], "q": [0, 1, 0, 0]}},
           "initial": {"angle_deg": 30}}
    path = tmp_path / "s.json"
    path.write_text(json.dumps(cfg))
    sys, opts = load_scenario(path)
    assert sys.case == CASE_III
    np.testing.assert_allclose(sys.K, 5.0)
    assert opts["n_trials"] == 4 and opts["dt"] == 0.002 and opts["spread"].angle_deg == 30
    assert sys.goal_inconsistency() == (0.0, 0.0)


@pytest.mark.parametrize("bad", [{"case": "I", "colour": 1}, {"K": 1.0},
                                 {"case": "I", "goals": {"right": {}}},
                                 {"case": "IV"}, {"case": "I", "initial": {"spin": 1}}])
def test_scenario_errors(bad):
    with pytest.raises(ConfigError):
        system_from_scenario(bad)
