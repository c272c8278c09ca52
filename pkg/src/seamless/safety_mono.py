"""Single-agent randomized Bayesian dose escalation.

Two-parameter logistic DLE model on standardized dose levels, with the
control arm anchored at a standardized level of zero. Posterior
probabilities of additional-DLE-risk events are computed on a fixed
tensor grid in standardized prior coordinates; the discontinuity of each
event is resolved row by row, so that the remaining integrals are smooth.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit, logit, log_expit


class IntegrationError(ArithmeticError):
    """Raised when posterior weights are not finite or vanish."""


@dataclass(frozen=True)
class DoseGrid:
    """``m`` active doses plus the zero-dose control at index 0."""

    m: int
    labels: tuple = ()

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("a dose grid needs at least one active dose")
        if self.labels and len(self.labels) != self.m:
            raise ValueError("one label per active dose is required")

    @property
    def arms(self) -> range:
        return range(self.m + 1)

    @property
    def active(self) -> range:
        return range(1, self.m + 1)


@dataclass(frozen=True)
class SafetyPriorMono:
    """Bivariate normal prior on ``(theta1, log theta2)``.

    ``var1``/``var2`` are variances and ``cov12`` the covariance. ``p0`` is the
    prior control DLE probability and ``nu`` the prior per-level increment
    used for the skeleton. The defaults of ``from_control`` treat the
    calibrated spreads 1.40 and 0.35 as standard deviations.
    """

    mu1: float
    mu2: float
    var1: float
    var2: float
    cov12: float = 0.0
    p0: float = 0.10
    nu: float = 0.125

    def __post_init__(self):
        if not 0.0 < self.p0 < 1.0:
            raise ValueError(f"p0 must lie in (0, 1), got {self.p0}")
        if not 0.0 < self.nu < 1.0:
            raise ValueError(f"nu must lie in (0, 1), got {self.nu}")
        if not math.isclose(self.mu1, float(logit(self.p0)), rel_tol=0, abs_tol=1e-12):
            raise ValueError("mu1 must equal logit(p0) so the control level is zero")
        if self.var1 <= 0 or self.var2 <= 0 or self.var1 * self.var2 - self.cov12**2 <= 0:
            raise ValueError("prior covariance matrix must be positive definite")

    @classmethod
    def from_control(cls, p0=0.10, nu=0.125, mu2=-0.25, var1=1.40**2, var2=0.35**2, cov12=0.0):
        return cls(float(logit(p0)), mu2, var1, var2, cov12, p0, nu)

    @property
    def mean(self) -> np.ndarray:
        return np.array([self.mu1, self.mu2])

    @property
    def cov(self) -> np.ndarray:
        return np.array([[self.var1, self.cov12], [self.cov12, self.var2]])


@dataclass(frozen=True)
class EscalationPolicy:
    gamma: float = 0.20
    delta: float = 0.05
    c_overdose: float = 0.25

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 < self.delta < self.gamma:
            raise ValueError("delta must lie in (0, gamma)")
        if not 0.0 < self.c_overdose < 1.0:
            raise ValueError("c_overdose must lie in (0, 1)")

    @property
    def overdose_threshold(self) -> float:
        return self.gamma + 2 * self.delta

    @property
    def target_interval(self) -> tuple[float, float]:
        return self.gamma - self.delta, self.gamma + self.delta


@dataclass
class SafetyDataMono:
    """Append-only list of ``(arm, y)`` observations; arm 0 is control."""

    m: int
    arms: list = field(default_factory=list)
    ys: list = field(default_factory=list)

    def add(self, arm: int, y: int) -> None:
        if not 0 <= arm <= self.m:
            raise ValueError(f"arm {arm} outside 0..{self.m}")
        if y not in (0, 1):
            raise ValueError("y must be 0 or 1")
        self.arms.append(int(arm))
        self.ys.append(int(y))

    def extend(self, pairs: Iterable[tuple[int, int]]) -> None:
        for arm, y in pairs:
            self.add(arm, y)

    def counts(self) -> tuple[np.ndarray, np.ndarray]:
        """Patients and DLEs per arm."""
        arms = np.asarray(self.arms, dtype=int)
        ys = np.asarray(self.ys, dtype=int)
        n = np.bincount(arms, minlength=self.m + 1)
        y = np.bincount(arms, weights=ys, minlength=self.m + 1).astype(int)
        return n, y

    def __len__(self):
        return len(self.arms)


@dataclass(frozen=True)
class ProbabilityQuery:
    """``P(lower <= q_j <= upper)`` under the posterior.

    ``q_j`` is the additional risk ``p_j - p_0`` when ``excess`` is true and
    the raw DLE probability ``p_j`` otherwise. Either bound may be infinite.
    """

    dose: int
    lower: float = -math.inf
    upper: float = math.inf
    excess: bool = True


def build_skeleton(prior: SafetyPriorMono, m: int) -> np.ndarray:
    """Standardized levels ``d~_0..d~_m`` matching the prior DLE ladder.

    The prior probability at level ``j`` is ``p0 + nu * j``; the levels are
    back-solved with the prior point estimates ``theta1 = mu1`` and
    ``theta2 = exp(mu2)``.
    """
    probs = prior.p0 + prior.nu * np.arange(m + 1)
    bad = (probs <= 0) | (probs >= 1)
    if bad.any():
        raise ValueError(f"prior DLE probabilities outside (0, 1): {probs[bad].tolist()}")
    skel = (logit(probs) - prior.mu1) / math.exp(prior.mu2)
    skel[0] = 0.0
    return skel


def dle_probability(theta1, theta2, dose):
    """Logistic DLE probability; broadcasts over array arguments."""
    return expit(np.asarray(theta1) + np.asarray(theta2) * np.asarray(dose))


_LAGRANGE_ANTIDERIV = [
    np.polynomial.Polynomial.fromroots([r for r in range(4) if r != s]).integ()
    / np.prod([s - r for r in range(4) if r != s])
    for s in range(4)
]


def _cubic_weights(a, b):
    """Weights on local nodes 0..3 for the integral over ``[a, b]`` (unit spacing)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.stack([P(b) - P(a) for P in _LAGRANGE_ANTIDERIV], axis=-1)


class _TailRule:
    """Node weights for integrals ``[cut, z[-1]]`` on a uniform grid.

    Each cell is integrated with the cubic through its four nearest nodes,
    including the cell that contains the cut.
    """

    def __init__(self, z: np.ndarray):
        self.z = z
        n = z.size
        self.h = z[1] - z[0]
        starts = np.clip(np.arange(n - 1) - 1, 0, n - 4)
        cells = np.zeros((n - 1, n))
        for i, j0 in enumerate(starts):
            cells[i, j0:j0 + 4] = self.h * _cubic_weights(i - j0, i - j0 + 1)
        # tails[k] = cells k+1 .. n-2; tails[-1] (last row) = every cell
        tails = np.zeros((n, n))
        acc = np.zeros(n)
        for k in range(n - 2, -1, -1):
            tails[k] = acc
            acc = acc + cells[k]
        tails[n - 1] = acc
        self._tails = tails
        self._starts = starts

    @property
    def total(self) -> np.ndarray:
        return self._tails[-1]

    def weights(self, cuts: np.ndarray) -> np.ndarray:
        z, h = self.z, self.h
        n = z.size
        out = np.zeros((cuts.size, n))
        below = cuts <= z[0]
        out[below] = self.total
        inside = ~below & (cuts < z[-1])
        if inside.any():
            c = cuts[inside]
            k = np.minimum(((c - z[0]) // h).astype(int), n - 2)
            j0 = self._starts[k]
            part = h * _cubic_weights((c - z[j0]) / h, k + 1 - j0)
            rows = self._tails[k].copy()
            idx = j0[:, None] + np.arange(4)[None, :]
            np.add.at(rows, (np.arange(c.size)[:, None], idx), part)
            out[inside] = rows
        return out


class MonoPosterior:
    """Posterior engine for one prior and skeleton.

    Node set: trapezoid grid on standardized coordinates ``(z1, z2)`` with
    ``theta1 = mu1 + a z1`` and ``log theta2 = mu2 + b z1 + c z2``. For fixed
    ``z1`` every event of interest is an interval in ``z2`` because the DLE
    probability is monotone in ``theta2`` at a positive standardized level.
    """

    def __init__(self, prior: SafetyPriorMono, skeleton: Sequence[float], n1=97, n2=161, half_width=8.0):
        self.prior = prior
        self.skeleton = np.asarray(skeleton, dtype=float)
        if self.skeleton[0] != 0.0:
            raise ValueError("skeleton must be anchored at zero for the control arm")
        self.z1 = np.linspace(-half_width, half_width, n1)
        self.z2 = np.linspace(-half_width, half_width, n2)
        chol = np.linalg.cholesky(prior.cov)
        self._a, self._b, self._c = chol[0, 0], chol[1, 0], chol[1, 1]
        self.theta1 = prior.mu1 + self._a * self.z1
        log_t2 = prior.mu2 + self._b * self.z1[:, None] + self._c * self.z2[None, :]
        eta = self.theta1[:, None, None] + np.exp(log_t2)[:, :, None] * self.skeleton[None, None, :]
        # (nodes, arms)
        self._log_p = log_expit(eta).reshape(-1, self.skeleton.size)
        self._log_q = log_expit(-eta).reshape(-1, self.skeleton.size)
        self._tail = _TailRule(self.z2)
        self._tail1 = _TailRule(self.z1)
        h1 = self.z1[1] - self.z1[0]
        w1 = np.full(n1, h1)
        w1[0] = w1[-1] = h1 / 2
        self._w1 = w1
        self._log_base = (-0.5 * self.z1**2)[:, None] + (-0.5 * self.z2**2)[None, :]
        self._log_base = self._log_base.ravel()
        self._query_cache: dict = {}
        self._state_cache: dict = {}

    # -- event weights -------------------------------------------------
    def _cut(self, dose: int, value: float, excess: bool) -> np.ndarray:
        """Per-row ``z2`` cut above which ``q_dose >= value`` (active doses only)."""
        n1 = self.z1.size
        base = expit(self.theta1) if excess else np.zeros(n1)
        target = base + value
        cuts = np.empty(n1)
        hi = target >= 1.0
        lo = target <= 0.0
        cuts[hi] = np.inf
        cuts[lo] = -np.inf
        mid = ~(hi | lo)
        t2 = (logit(target[mid]) - self.theta1[mid]) / self.skeleton[dose]
        with np.errstate(divide="ignore", invalid="ignore"):
            log_t2 = np.where(t2 > 0, np.log(np.where(t2 > 0, t2, 1.0)), -np.inf)
        cuts[mid] = (log_t2 - self.prior.mu2 - self._b * self.z1[mid]) / self._c
        return cuts

    def query_weights(self, query: ProbabilityQuery) -> np.ndarray:
        key = (query.dose, query.lower, query.upper, query.excess)
        w = self._query_cache.get(key)
        if w is None:
            if not 0 <= query.dose < self.skeleton.size:
                raise ValueError(f"dose {query.dose} outside the skeleton")
            if self.skeleton[query.dose] == 0.0:
                w = self._flat_query_weights(query)
                self._query_cache[key] = w
                return w
            if query.lower == -math.inf:
                lo = np.full(self.z1.size, -np.inf)
            else:
                lo = self._cut(query.dose, query.lower, query.excess)
            if query.upper == math.inf:
                hi = np.full(self.z1.size, np.inf)
            else:
                hi = self._cut(query.dose, query.upper, query.excess)
            hi = np.maximum(hi, lo)
            w = self._tail.weights(lo) - self._tail.weights(hi)
            w = (w * self._w1[:, None]).ravel()
            self._query_cache[key] = w
        return w

    def _flat_query_weights(self, query: ProbabilityQuery) -> np.ndarray:
        # a zero-level arm depends on theta1 alone, so the event is a z1 interval
        full = self._tail.total
        if query.excess:
            inside = query.lower <= 0.0 <= query.upper
            w1 = self._w1 if inside else np.zeros_like(self._w1)
            return (w1[:, None] * full[None, :]).ravel()

        def z1_cut(v):
            if v <= 0.0:
                return -np.inf
            if v >= 1.0:
                return np.inf
            return (float(logit(v)) - self.prior.mu1) / self._a

        lo, hi = z1_cut(query.lower), z1_cut(query.upper)
        hi = max(hi, lo)
        w1 = self._tail1.weights(np.array([lo]))[0] - self._tail1.weights(np.array([hi]))[0]
        return (w1[:, None] * full[None, :]).ravel()

    def total_weights(self) -> np.ndarray:
        return self.query_weights(ProbabilityQuery(0, -math.inf, math.inf))

    # -- posterior ------------------------------------------------------
    def node_weights(self, n: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Unnormalized posterior weights (max-scaled) at the grid nodes."""
        n = np.asarray(n, dtype=float)
        y = np.asarray(y, dtype=float)
        logw = self._log_base + self._log_p @ y + self._log_q @ (n - y)
        top = logw.max()
        if not np.isfinite(top):
            raise IntegrationError("non-finite posterior log-likelihood")
        return np.exp(logw - top)

    def probabilities(self, n, y, queries: Sequence[ProbabilityQuery]) -> np.ndarray:
        w = self.node_weights(n, y)
        total = self.total_weights() @ w
        if not np.isfinite(total) or total <= 0:
            raise IntegrationError("posterior normalizing constant is not positive")
        mat = np.stack([self.query_weights(q) for q in queries])
        return np.clip(mat @ w / total, 0.0, 1.0)

    def escalation_summary(self, n, y, policy: EscalationPolicy) -> tuple[np.ndarray, np.ndarray]:
        """Overdose and target-interval probabilities for doses 1..m.

        Results are memoized on the sufficient statistics.
        """
        key = (policy, tuple(int(v) for v in n), tuple(int(v) for v in y))
        hit = self._state_cache.get(key)
        if hit is not None:
            return hit
        m = self.skeleton.size - 1
        lo, hi = policy.target_interval
        queries = [ProbabilityQuery(j, policy.overdose_threshold) for j in range(1, m + 1)]
        queries += [ProbabilityQuery(j, lo, hi) for j in range(1, m + 1)]
        probs = self.probabilities(n, y, queries)
        out = (probs[:m], probs[m:])
        if len(self._state_cache) > 500_000:
            self._state_cache.clear()
        self._state_cache[key] = out
        return out


_ENGINES: dict = {}


def mono_engine(prior: SafetyPriorMono, skeleton: Sequence[float]) -> MonoPosterior:
    """Shared engine per (prior, skeleton); engines are read-only apart from caches."""
    key = (prior, tuple(np.round(np.asarray(skeleton, dtype=float), 15)))
    eng = _ENGINES.get(key)
    if eng is None:
        if len(_ENGINES) > 64:
            _ENGINES.clear()
        eng = _ENGINES[key] = MonoPosterior(prior, skeleton)
    return eng


def posterior_expectations(prior: SafetyPriorMono, skeleton, data: SafetyDataMono,
                           events: Sequence[ProbabilityQuery]) -> list[float]:
    """Posterior probabilities of ``events`` given the binary DLE data."""
    skeleton = np.asarray(skeleton, dtype=float)
    if data.m != skeleton.size - 1:
        raise ValueError("data arms do not match the skeleton")
    n, y = data.counts()
    return mono_engine(prior, skeleton).probabilities(n, y, events).tolist()


def safe_dose_set(overdose_probs: Sequence[float], policy: EscalationPolicy) -> set[int]:
    """Doses (1-based) whose overdose probability is strictly below the threshold."""
    return {j + 1 for j, p in enumerate(overdose_probs) if p < policy.c_overdose}


class Action(enum.Enum):
    STOP_SAFETY = "stop-safety"
    STAY = "stay"
    MOVE = "move"


@dataclass(frozen=True)
class Decision:
    action: Action
    dose: object = None


def select_next_dose(current: int, safe: set[int], criterion: Sequence[float],
                     policy: EscalationPolicy | None = None) -> Decision:
    """Adjacent safe dose maximizing the target-interval probability.

    ``criterion[j-1]`` is ``P(p_j - p_0 in [gamma - delta, gamma + delta])``.
    Ties go to the lower dose.
    """
    if not safe:
        return Decision(Action.STOP_SAFETY)
    if safe == {current}:
        return Decision(Action.STAY, current)
    candidates = sorted(j for j in (current - 1, current, current + 1) if j in safe)
    if not candidates:
        # current and its neighbours unsafe: step towards the safe region
        candidates = [max(j for j in safe if j < current)] if min(safe) < current else [min(safe)]
    best = max(candidates, key=lambda j: (criterion[j - 1], -j))
    return Decision(Action.STAY if best == current else Action.MOVE, best)
