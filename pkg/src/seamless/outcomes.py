"""Correlated binary DLE and time-to-improvement outcomes.

A Gaussian copula links the two endpoints: a latent standard normal pair
with correlation ``rho`` drives the DLE indicator (``Phi(Z1) < p_tox``) and
the Weibull quantile of the improvement time (``Phi(Z2)``). With the
default ``sign=+1`` a toxic patient tends to improve early; ``sign=-1``
reverses the association.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

CONTROL_RATE = 0.085
CONTROL_SHAPE = 0.797


@dataclass(frozen=True)
class Scenario:
    """True per-arm DLE probabilities and hazard ratios; arm 0 is control.

    For combination designs ``grid_shape = (J, L)`` and active arms follow
    row-major ``(j, l)`` order.
    """

    name: str
    dle: tuple
    hr: tuple
    rate: float = CONTROL_RATE
    shape: float = CONTROL_SHAPE
    rho: float = 0.8
    sign: int = 1
    t_eff: float = 28.0
    grid_shape: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "dle", tuple(float(p) for p in self.dle))
        object.__setattr__(self, "hr", tuple(float(h) for h in self.hr))
        if len(self.dle) != len(self.hr):
            raise ValueError("dle and hr must cover the same arms")
        if len(self.dle) < 2:
            raise ValueError("a scenario needs control plus at least one active arm")
        if self.hr[0] != 1.0:
            raise ValueError("control hazard ratio must be 1")
        if any(not 0.0 < p < 1.0 for p in self.dle):
            raise ValueError("DLE probabilities must lie in (0, 1)")
        if any(h <= 0 for h in self.hr):
            raise ValueError("hazard ratios must be positive")
        if self.rate <= 0 or self.shape <= 0:
            raise ValueError("Weibull rate and shape must be positive")
        if not -1.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (-1, 1)")
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")
        if self.grid_shape is not None:
            J, L = self.grid_shape
            if J * L != len(self.dle) - 1:
                raise ValueError("grid_shape does not match the number of active arms")
            object.__setattr__(self, "grid_shape", (int(J), int(L)))

    @property
    def n_active(self) -> int:
        return len(self.dle) - 1

    def adle(self) -> np.ndarray:
        p = np.asarray(self.dle)
        return p[1:] - p[0]


@dataclass(frozen=True)
class PatientOutcome:
    y: int
    time: float
    event: int


def improvement_probability(rate, shape, hr, t):
    """``P(T <= t)`` for the proportional-hazards Weibull ``S(t) = exp(-hr rate t^shape)``."""
    return 1.0 - np.exp(-hr * rate * np.asarray(t, dtype=float) ** shape)


def weibull_improvement_time(rate, shape, hr, u, t_eff=28.0):
    """Whole-day improvement time from the uniform quantile ``u``.

    Returns ``(time, event)``; times beyond ``t_eff`` are censored at ``t_eff``.
    Works elementwise on arrays.
    """
    u = np.asarray(u, dtype=float)
    t = (-np.log1p(-u) / (hr * rate)) ** (1.0 / shape)
    day = np.maximum(np.ceil(t), 1.0)
    event = (day <= t_eff).astype(int)
    day = np.where(event == 1, day, t_eff)
    if day.ndim == 0:
        return float(day), int(event)
    return day, event


def draw_outcomes(p_tox, hr, scenario: Scenario, rng: np.random.Generator):
    """Vectorized outcomes for patients with per-patient ``p_tox`` and ``hr``.

    Returns arrays ``(y, time, event)``.
    """
    p_tox = np.asarray(p_tox, dtype=float)
    hr = np.asarray(hr, dtype=float)
    z = rng.standard_normal((2,) + p_tox.shape)
    z1 = z[0]
    z2 = scenario.rho * z1 + math.sqrt(1.0 - scenario.rho**2) * z[1]
    y = (ndtr(z1) < p_tox).astype(int)
    u = ndtr(z2) if scenario.sign == 1 else ndtr(-z2)
    u = np.clip(u, 1e-300, 1 - 1e-16)
    time, event = weibull_improvement_time(scenario.rate, scenario.shape, hr, u, scenario.t_eff)
    return y, np.atleast_1d(time), np.atleast_1d(event)


def correlated_outcome(p_tox: float, hr: float, scenario: Scenario, rng: np.random.Generator) -> PatientOutcome:
    y, time, event = draw_outcomes([p_tox], [hr], scenario, rng)
    return PatientOutcome(int(y[0]), float(time[0]), int(event[0]))


# Single-agent scenarios for (d0, d1, d2, d3).
SINGLE_SAFETY = {
    0: (0.10, 0.12, 0.13, 0.15),
    1: (0.10, 0.12, 0.15, 0.30),
    2: (0.10, 0.15, 0.30, 0.45),
    3: (0.10, 0.30, 0.45, 0.60),
    4: (0.10, 0.45, 0.60, 0.60),
}
SINGLE_EFFICACY = {
    0: (1.00, 1.00, 1.00, 1.00),
    1: (1.00, 1.00, 1.75, 1.75),
    2: (1.00, 1.50, 1.75, 1.75),
    3: (1.00, 1.50, 1.75, 2.00),
    4: (1.00, 1.75, 2.00, 2.00),
}

# Combination scenarios, two levels of agent A by three of agent B, as
# [d_j][s_l]; the control arm keeps DLE 0.10 and hazard ratio 1.
COMBO_SAFETY = {
    0: ((0.10, 0.13, 0.15), (0.12, 0.15, 0.18)),
    1: ((0.10, 0.25, 0.50), (0.12, 0.30, 0.55)),
    2: ((0.15, 0.25, 0.30), (0.30, 0.35, 0.45)),
    3: ((0.40, 0.45, 0.50), (0.45, 0.50, 0.55)),
}
COMBO_EFFICACY = {
    0: ((1.00, 1.00, 1.00), (1.00, 1.00, 1.00)),
    1: ((1.00, 1.25, 1.50), (1.25, 1.50, 1.75)),
    2: ((1.00, 1.25, 1.50), (1.50, 1.75, 2.00)),
    3: ((1.00, 1.50, 1.75), (1.50, 1.75, 1.75)),
}
COMBO_CONTROL_DLE = 0.10


def single_agent_scenario(safety: int, efficacy: int, **kw) -> Scenario:
    return Scenario(f"{safety}-{efficacy}", SINGLE_SAFETY[safety], SINGLE_EFFICACY[efficacy], **kw)


def combination_scenario(safety: int, efficacy: int, **kw) -> Scenario:
    dle = np.asarray(COMBO_SAFETY[safety], dtype=float)
    hr = np.asarray(COMBO_EFFICACY[efficacy], dtype=float)
    return Scenario(
        f"{safety}-{efficacy}",
        (COMBO_CONTROL_DLE,) + tuple(dle.ravel()),
        (1.0,) + tuple(hr.ravel()),
        grid_shape=dle.shape,
        **kw,
    )
