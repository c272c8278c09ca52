"""Sequential efficacy evaluation with a two-point prior on the hazard ratio.

The posterior probability that the hazard ratio equals the target value is
a likelihood-ratio update of the prior odds, using the Cox partial
likelihood (Breslow ties) at the two candidate hazard ratios.
"""

from __future__ import annotations

import bisect
import enum
import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit


@dataclass
class SurvivalDataset:
    """Time-to-improvement data; ``z`` is 1 for treated and 0 for control."""

    z: np.ndarray
    time: np.ndarray
    event: np.ndarray
    ids: np.ndarray | None = None

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=int)
        self.time = np.asarray(self.time, dtype=float)
        self.event = np.asarray(self.event, dtype=int)
        if not (self.z.shape == self.time.shape == self.event.shape):
            raise ValueError("z, time and event must have the same length")
        if np.any(self.time <= 0):
            raise ValueError("times must be positive")
        if self.ids is not None:
            self.ids = np.asarray(self.ids)

    @classmethod
    def empty(cls) -> "SurvivalDataset":
        return cls(np.zeros(0, int), np.zeros(0), np.zeros(0, int), np.zeros(0, int))

    def __len__(self):
        return self.z.size


@dataclass(frozen=True)
class EfficacyConfig:
    psi_star: float = 1.75
    prior: float = 0.5
    lower: float = 0.224
    upper: float = 0.839
    max_stages: int = 11
    n_c: int = 30
    t_eff: float = 28.0

    def __post_init__(self):
        if self.psi_star <= 0:
            raise ValueError("psi_star must be positive")
        if not 0.0 <= self.prior <= 1.0:
            raise ValueError("prior must lie in [0, 1]")
        if not 0.0 < self.lower < self.upper < 1.0:
            raise ValueError("boundaries must satisfy 0 < lower < upper < 1")
        if self.max_stages < 1:
            raise ValueError("max_stages must be at least 1")
        if self.n_c < 0:
            raise ValueError("n_c must be non-negative")


def cox_log_partial_likelihood(data: SurvivalDataset, hr: float) -> float:
    """Breslow log partial likelihood with a single binary covariate at ``hr``.

    Subjects censored at an event time are kept in that time's risk set.
    """
    if hr <= 0:
        raise ValueError("hazard ratio must be positive")
    if len(data) == 0 or not data.event.any():
        return 0.0
    log_hr = math.log(hr)
    times = data.time
    ev = data.event.astype(bool)
    ev_times, inv = np.unique(times[ev], return_inverse=True)
    d = np.bincount(inv, minlength=ev_times.size)
    d1 = np.bincount(inv, weights=data.z[ev], minlength=ev_times.size)
    t0 = np.sort(times[data.z == 0])
    t1 = np.sort(times[data.z == 1])
    n0 = t0.size - np.searchsorted(t0, ev_times, side="left")
    n1 = t1.size - np.searchsorted(t1, ev_times, side="left")
    return float(d1.sum() * log_hr - np.sum(d * np.log(n0 + hr * n1)))


def log_likelihood_ratio(data: SurvivalDataset, psi_star: float) -> float:
    return cox_log_partial_likelihood(data, psi_star) - cox_log_partial_likelihood(data, 1.0)


def posterior_efficacy_probability(data: SurvivalDataset, cfg: EfficacyConfig) -> float:
    """Posterior probability that the hazard ratio equals ``psi_star``."""
    if cfg.prior in (0.0, 1.0):
        return cfg.prior
    return float(expit(logit(cfg.prior) + log_likelihood_ratio(data, cfg.psi_star)))


class StageDecision(enum.Enum):
    STOP_FUTILITY = "stop-futility"
    STOP_EFFICACY = "stop-efficacy"
    CONTINUE = "continue"


def stage_decision(pi: float, k: int, cfg: EfficacyConfig) -> StageDecision:
    if not 1 <= k <= cfg.max_stages:
        raise ValueError(f"stage {k} outside 1..{cfg.max_stages}")
    if pi > cfg.upper:
        return StageDecision.STOP_EFFICACY
    if pi < cfg.lower or k == cfg.max_stages:
        return StageDecision.STOP_FUTILITY
    return StageDecision.CONTINUE


def translate_boundaries(lower: float, upper: float, prior_old: float, prior_new: float) -> tuple[float, float]:
    """Boundaries giving identical decisions after a change of prior."""
    for p in (lower, upper, prior_old, prior_new):
        if not 0.0 < p < 1.0:
            raise ValueError("probabilities must lie in (0, 1)")
    xi = logit(prior_new) - logit(prior_old)
    return float(expit(logit(lower) + xi)), float(expit(logit(upper) + xi))


@dataclass(frozen=True)
class ControlRecord:
    id: int
    enrolled: float
    time: float
    event: int


class ControlBuffer:
    """The most recent ``capacity`` control subjects, ordered by enrollment day.

    Ties on enrollment day keep insertion order; eviction removes the oldest.
    """

    def __init__(self, capacity: int):
        if capacity < 0:
            raise ValueError("capacity must be non-negative")
        self.capacity = capacity
        self._keys: list = []
        self._records: list = []
        self._seq = itertools.count()

    def push(self, rec: ControlRecord) -> None:
        if self.capacity == 0:
            return
        key = (rec.enrolled, next(self._seq))
        i = bisect.bisect(self._keys, key)
        self._keys.insert(i, key)
        self._records.insert(i, rec)
        if len(self._records) > self.capacity:
            del self._keys[0]
            del self._records[0]

    def records(self) -> list[ControlRecord]:
        return list(self._records)

    def __len__(self):
        return len(self._records)


def assemble_analysis_set(own: SurvivalDataset, buffer: ControlBuffer, analysis_day: float,
                          t_eff: float = 28.0) -> SurvivalDataset:
    """Own subjects plus buffered external controls with complete follow-up.

    A subject appearing in both sources (matched on id) is used once.
    """
    ext = [r for r in buffer.records() if r.enrolled + t_eff <= analysis_day]
    if own.ids is not None:
        seen = set(own.ids.tolist())
        ext = [r for r in ext if r.id not in seen]
    if not ext:
        return own
    ids = own.ids if own.ids is not None else np.full(len(own), -1)
    return SurvivalDataset(
        np.concatenate([own.z, np.zeros(len(ext), int)]),
        np.concatenate([own.time, [r.time for r in ext]]),
        np.concatenate([own.event, [r.event for r in ext]]),
        np.concatenate([ids, [r.id for r in ext]]),
    )
