import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pose_dmp.clock import ExpClock, SigmoidClock, clock_from_dict, exp_clock_step, sigmoid_clock_eval


def test_exp_clock_values():
    c = ExpClock(1.0, 1.0)
    assert c.h(0.0) == 1.0
    assert c.h(1.0) == pytest.approx(np.exp(-1), abs=1e-12)
    assert c.h(1.0) == pytest.approx(0.36788, abs=1e-5)


@given(st.floats(0.1, 5), st.floats(0.1, 5))
def test_exp_clock_time_of_phase(tau, gamma):
    c = ExpClock(tau, gamma)
    t = np.linspace(0, 10, 101)
    np.testing.assert_allclose(c.time_of_phase(c.h(t)), t, atol=1e-9)


def test_exp_clock_stepping_matches_closed_form():
    c = ExpClock(2.0, 3.0)
    h = 1.0
    for _ in range(500):
        h = exp_clock_step(c, h, 0.01)
    assert h == pytest.approx(c.h(5.0), rel=1e-12)


def test_exp_clock_monotone_and_positive():
    h = ExpClock(1.0, 1.0).h(np.arange(0, 700, 0.01))
    assert np.all(np.diff(h) <= 0)
    assert np.all(h > 0)


def test_clock_rejects_bad_parameters():
    with pytest.raises(ValueError):
        ExpClock(0.0, 1.0)
    with pytest.raises(ValueError):
        SigmoidClock(alpha_h=-1.0)
    with pytest.raises(ValueError):
        ExpClock().step(1.0, 0.0)


def test_sigmoid_clock_values():
    c = SigmoidClock(alpha_h=1.0, T=10.0, dt=0.01, tau=1.0)
    assert abs(sigmoid_clock_eval(c, 0.0) - 1.0) < 1e-10
    assert c.h(10.0) == 0.5


@given(st.floats(0.2, 5), st.floats(0.5, 3))
def test_sigmoid_clock_monotone_and_decays(alpha_h, tau):
    c = SigmoidClock(alpha_h=alpha_h, T=4.0, dt=0.01, tau=tau)
    t = np.arange(0, tau * 4 + 1, 0.01)
    assert np.all(np.diff(c.h(t)) <= 0)
    assert c.h(tau * 4 + 20 * 0.01 / alpha_h) < 1e-6


def test_sigmoid_increment_matches_finite_difference():
    # the rate expression, read per sample, against the closed form
    c = SigmoidClock(alpha_h=1.0, T=5.0, dt=0.01)
    t = np.arange(0.0, 10.0, 0.01)
    fd = c.h(t + 0.01) - c.h(t)
    inc = c.increment(t)
    big = np.abs(fd) > 1e-3
    rel = np.max(np.abs(inc[big] - fd[big]) / np.abs(fd[big]))
    print(f"max relative discrepancy of the per-sample rate: {rel:.3g}")
    # one-step forward difference of a sigmoid with unit width
    assert rel < 0.6
    assert np.sum(inc) == pytest.approx(-1.0, abs=1e-6)


def test_clock_serialization_round_trip():
    for c in (ExpClock(1.5, 2.0), SigmoidClock(2.0, 3.0, 0.01, 1.2)):
        assert clock_from_dict(c.to_dict()) == c
    with pytest.raises(ValueError):
        clock_from_dict({"kind": "linear"})
