"""Canonical systems (phase clocks).

Both clocks are evaluated in closed form from the elapsed time, so no
integration error accumulates along a rollout.
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import expit


@dataclass(frozen=True)
class ExpClock:
    """Exponentially decaying clock, ``tau * dh/dt = -gamma * h``, ``h(0) = 1``.

    Parameters
    ----------
    tau : float
        Time scaling of the primitive.

    gamma : float
        Decay rate, > 0.
    """
    tau: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if self.tau <= 0 or self.gamma <= 0:
            raise ValueError("ExpClock needs tau > 0 and gamma > 0")

    def h(self, t):
        return np.exp(-self.gamma * np.asarray(t, dtype=float) / self.tau)

    def step(self, h, dt):
        """Advance a phase value by ``dt`` (exact for the linear ODE)."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        return h * np.exp(-self.gamma * dt / self.tau)

    def time_of_phase(self, h):
        """Elapsed time encoded by phase ``h``: ``-tau * ln(h) / gamma``."""
        return -self.tau * np.log(h) / self.gamma

    def to_dict(self):
        return {"kind": "exp", "tau": self.tau, "gamma": self.gamma}


def exp_clock_step(clock, h, dt):
    return clock.step(h, dt)


@dataclass(frozen=True)
class SigmoidClock:
    """Sigmoidal clock ``h(t) = 1 / (1 + exp((alpha_h / dt) (t - tau T)))``.

    ``h`` stays at 1 until shortly before ``tau * T`` and then drops to 0
    over a few multiples of ``dt / alpha_h``.
    """
    alpha_h: float = 1.0
    T: float = 1.0
    dt: float = 0.01
    tau: float = 1.0

    def __post_init__(self):
        if self.alpha_h <= 0 or self.T <= 0 or self.dt <= 0 or self.tau <= 0:
            raise ValueError("SigmoidClock parameters must be positive")

    def h(self, t):
        x = (self.alpha_h / self.dt) * (np.asarray(t, dtype=float) - self.tau * self.T)
        return expit(-x)

    def increment(self, t):
        """Per-sample decrement of ``h`` (the literal rate expression).

        ``-alpha_h e^x / (1 + e^x)^2`` with ``x = (alpha_h/dt)(tau T - t)``;
        multiplied by nothing, it approximates ``h(t + dt) - h(t)``.
        """
        x = (self.alpha_h / self.dt) * (self.tau * self.T - np.asarray(t, dtype=float))
        s = expit(x)
        return -self.alpha_h * s * (1.0 - s)

    def to_dict(self):
        return {"kind": "sigmoid", "alpha_h": self.alpha_h, "T": self.T,
                "dt": self.dt, "tau": self.tau}


def sigmoid_clock_eval(clock, t):
    return clock.h(t)


def clock_from_dict(d):
    d = dict(d)
    kind = d.pop("kind")
    if kind == "exp":
        return ExpClock(**d)
    if kind == "sigmoid":
        return SigmoidClock(**d)
    raise ValueError(f"unknown clock kind {kind!r}")
