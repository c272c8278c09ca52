"""Dual-agent combination dose escalation.

Each agent follows a two-parameter logistic model sharing the control
intercept; the two marginals are combined under independence and an odds
multiplier ``exp(eta * d~ * s~)`` captures interaction. The four-parameter
posterior is evaluated by self-normalized importance sampling on a fixed
set of scrambled Sobol draws from the prior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit, logit, log_expit
from scipy.stats import norm, qmc

from .safety_mono import Action, Decision, EscalationPolicy, IntegrationError


@dataclass(frozen=True)
class SafetyPriorCombo:
    """Normal prior on ``(theta1, log theta21, log theta22, eta)``.

    Variances are ``var*``; only the intercept/slope covariances are free,
    the remaining off-diagonal entries are structurally zero. Defaults treat
    the calibrated spreads (0.6, 0.25, 0.25, 0.10) as standard deviations.
    """

    mu1: float
    mu21: float = 0.0
    mu22: float = 0.0
    mu_eta: float = 0.0
    var1: float = 0.6**2
    var21: float = 0.25**2
    var22: float = 0.25**2
    var_eta: float = 0.10**2
    cov1_21: float = 0.0
    cov1_22: float = 0.0
    p0: float = 0.10
    nu_d: float = 0.075
    nu_s: float = 0.075

    def __post_init__(self):
        if not 0.0 < self.p0 < 1.0:
            raise ValueError("p0 must lie in (0, 1)")
        if not math.isclose(self.mu1, float(logit(self.p0 / 2)), rel_tol=0, abs_tol=1e-12):
            raise ValueError("mu1 must equal logit(p0 / 2)")
        try:
            np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError:
            raise ValueError("prior covariance matrix must be positive definite") from None

    @classmethod
    def from_control(cls, p0=0.10, **kw):
        return cls(mu1=float(logit(p0 / 2)), p0=p0, **kw)

    @property
    def mean(self) -> np.ndarray:
        return np.array([self.mu1, self.mu21, self.mu22, self.mu_eta])

    @property
    def cov(self) -> np.ndarray:
        return np.array([
            [self.var1, self.cov1_21, self.cov1_22, 0.0],
            [self.cov1_21, self.var21, 0.0, 0.0],
            [self.cov1_22, 0.0, self.var22, 0.0],
            [0.0, 0.0, 0.0, self.var_eta],
        ])


@dataclass(frozen=True)
class ComboGrid:
    """Standardized levels for both agents, control level first."""

    skel_d: tuple
    skel_s: tuple

    def __post_init__(self):
        if self.skel_d[0] != 0 or self.skel_s[0] != 0:
            raise ValueError("control levels must be zero")
        for sk in (self.skel_d, self.skel_s):
            if any(b <= a for a, b in zip(sk, sk[1:])):
                raise ValueError("standardized levels must increase within an agent")

    @property
    def J(self) -> int:
        return len(self.skel_d) - 1

    @property
    def L(self) -> int:
        return len(self.skel_s) - 1

    @property
    def active(self) -> list[tuple[int, int]]:
        return [(j, l) for j in range(1, self.J + 1) for l in range(1, self.L + 1)]


@dataclass
class SafetyDataCombo:
    """Append-only ``((j, l), y)`` observations; ``(0, 0)`` is control."""

    J: int
    L: int
    combos: list = field(default_factory=list)
    ys: list = field(default_factory=list)

    def add(self, combo: tuple[int, int], y: int) -> None:
        j, l = combo
        if not (0 <= j <= self.J and 0 <= l <= self.L):
            raise ValueError(f"combination {combo} outside the grid")
        if y not in (0, 1):
            raise ValueError("y must be 0 or 1")
        self.combos.append((int(j), int(l)))
        self.ys.append(int(y))

    def counts(self) -> tuple[np.ndarray, np.ndarray]:
        n = np.zeros((self.J + 1, self.L + 1), dtype=int)
        y = np.zeros_like(n)
        for (j, l), v in zip(self.combos, self.ys):
            n[j, l] += 1
            y[j, l] += v
        return n, y


@dataclass(frozen=True)
class ComboQuery:
    """``P(lower <= q <= upper)`` for combination ``combo``; see ``ProbabilityQuery``."""

    combo: tuple
    lower: float = -math.inf
    upper: float = math.inf
    excess: bool = True


def _combo_logit(theta1, theta21, theta22, eta, d, s):
    a = theta1 + theta21 * d
    b = theta1 + theta22 * s
    log_none = log_expit(-a) + log_expit(-b)  # log P(no DLE) under independence
    with np.errstate(divide="ignore"):
        log_any = np.log(-np.expm1(log_none))
    return log_any - log_none + eta * d * s


def combo_dle_probability(theta, d, s):
    """DLE probability at standardized levels ``(d, s)``.

    ``theta`` is ``(theta1, theta21, theta22, eta)`` on the natural scale
    (slopes positive); the last axis of an array argument holds the four
    components.
    """
    theta = np.asarray(theta, dtype=float)
    t1, t21, t22, eta = (theta[..., i] for i in range(4))
    if np.any(t21 <= 0) or np.any(t22 <= 0):
        raise ValueError("slope parameters must be positive")
    return expit(_combo_logit(t1, t21, t22, eta, np.asarray(d), np.asarray(s)))


def build_combo_skeletons(prior: SafetyPriorCombo, J: int, L: int) -> ComboGrid:
    """Standardized levels reproducing the prior single-agent DLE ladders.

    At the prior means, level ``j`` of agent A given with the zero dose of
    agent B has DLE probability ``p0 + nu_d * j`` (likewise for agent B).
    The interaction term vanishes on these margins, so each level has a
    closed-form solution.
    """
    q = expit(prior.mu1)

    def levels(nu, log_slope, n):
        targets = prior.p0 + nu * np.arange(1, n + 1)
        if np.any((targets <= 0) | (targets >= 1)):
            raise ValueError(f"prior DLE probabilities outside (0, 1): {targets.tolist()}")
        marg = 1 - (1 - targets) / (1 - q)
        if np.any(marg <= q):
            raise ValueError("prior ladder does not exceed the control risk")
        return (0.0,) + tuple(float(v) for v in (logit(marg) - prior.mu1) / math.exp(log_slope))

    return ComboGrid(levels(prior.nu_d, prior.mu21, J), levels(prior.nu_s, prior.mu22, L))


class ComboPosterior:
    """Importance-sampling posterior over a fixed set of prior draws."""

    def __init__(self, prior: SafetyPriorCombo, grid: ComboGrid, n_draws=2**14, seed=20201):
        self.prior = prior
        self.grid = grid
        m = int(round(math.log2(n_draws)))
        sob = qmc.Sobol(d=4, scramble=True, seed=seed)
        u = sob.random_base2(m)
        z = norm.ppf(u)
        raw = prior.mean + z @ np.linalg.cholesky(prior.cov).T
        self.theta = raw
        t1 = raw[:, 0][:, None, None]
        t21 = np.exp(raw[:, 1])[:, None, None]
        t22 = np.exp(raw[:, 2])[:, None, None]
        eta = raw[:, 3][:, None, None]
        d = np.asarray(grid.skel_d)[None, :, None]
        s = np.asarray(grid.skel_s)[None, None, :]
        lg = _combo_logit(t1, t21, t22, eta, d, s)  # (draws, J+1, L+1)
        self._shape = lg.shape[1:]
        lg = lg.reshape(lg.shape[0], -1)
        self._p = expit(lg)
        self._log_p = log_expit(lg)
        self._log_q = log_expit(-lg)
        self._state_cache: dict = {}
        self._query_cache: dict = {}

    def _index(self, combo) -> int:
        j, l = combo
        if not (0 <= j < self._shape[0] and 0 <= l < self._shape[1]):
            raise ValueError(f"combination {combo} outside the grid")
        return j * self._shape[1] + l

    def indicator(self, q: ComboQuery) -> np.ndarray:
        key = (q.combo, q.lower, q.upper, q.excess)
        ind = self._query_cache.get(key)
        if ind is None:
            v = self._p[:, self._index(q.combo)]
            if q.excess:
                v = v - self._p[:, 0]
            ind = ((v >= q.lower) & (v <= q.upper)).astype(float)
            self._query_cache[key] = ind
        return ind

    def weights(self, n, y) -> np.ndarray:
        n = np.asarray(n, dtype=float).ravel()
        y = np.asarray(y, dtype=float).ravel()
        logw = self._log_p @ y + self._log_q @ (n - y)
        top = logw.max()
        if not np.isfinite(top):
            raise IntegrationError("non-finite posterior log-likelihood")
        w = np.exp(logw - top)
        return w / w.sum()

    def probabilities(self, n, y, queries: Sequence[ComboQuery]) -> np.ndarray:
        w = self.weights(n, y)
        mat = np.stack([self.indicator(q) for q in queries])
        return np.clip(mat @ w, 0.0, 1.0)

    def escalation_summary(self, n, y, policy: EscalationPolicy) -> tuple[np.ndarray, np.ndarray]:
        """Overdose and target-interval probabilities, each shaped ``(J, L)``."""
        n = np.asarray(n)
        y = np.asarray(y)
        key = (policy, n.tobytes(), y.tobytes())
        hit = self._state_cache.get(key)
        if hit is not None:
            return hit
        active = self.grid.active
        lo, hi = policy.target_interval
        qs = [ComboQuery(c, policy.overdose_threshold) for c in active]
        qs += [ComboQuery(c, lo, hi) for c in active]
        probs = self.probabilities(n, y, qs)
        k = len(active)
        shape = (self.grid.J, self.grid.L)
        out = (probs[:k].reshape(shape), probs[k:].reshape(shape))
        if len(self._state_cache) > 500_000:
            self._state_cache.clear()
        self._state_cache[key] = out
        return out


_ENGINES: dict = {}


def combo_engine(prior: SafetyPriorCombo, grid: ComboGrid, n_draws=2**14) -> ComboPosterior:
    key = (prior, grid, n_draws)
    eng = _ENGINES.get(key)
    if eng is None:
        if len(_ENGINES) > 32:
            _ENGINES.clear()
        eng = _ENGINES[key] = ComboPosterior(prior, grid, n_draws)
    return eng


def combo_posterior_expectations(prior: SafetyPriorCombo, grid: ComboGrid, data: SafetyDataCombo,
                                 queries: Sequence[ComboQuery]) -> list[float]:
    if (data.J, data.L) != (grid.J, grid.L):
        raise ValueError("data do not match the combination grid")
    n, y = data.counts()
    return combo_engine(prior, grid).probabilities(n, y, queries).tolist()


def combo_safe_set(overdose: np.ndarray, policy: EscalationPolicy) -> set[tuple[int, int]]:
    """1-based combinations whose overdose probability is below the threshold."""
    J, L = overdose.shape
    return {(j + 1, l + 1) for j in range(J) for l in range(L) if overdose[j, l] < policy.c_overdose}


def _rank(c, criterion):
    # larger criterion first, then lower j + l, then lower j
    return (-criterion[c], c[0] + c[1], c[0])


def select_next_combo(current: tuple[int, int], safe: set, criterion,
                      policy: EscalationPolicy | None = None) -> Decision:
    """Stay or move one level in one agent towards the best safe candidate.

    ``criterion`` maps a 1-based combination to its target-interval
    probability (a dict, or a ``(J, L)`` array indexed from zero).
    """
    if isinstance(criterion, np.ndarray):
        arr = criterion
        criterion = {(j + 1, l + 1): arr[j, l] for j in range(arr.shape[0]) for l in range(arr.shape[1])}
    if not safe:
        return Decision(Action.STOP_SAFETY)
    if safe == {current}:
        return Decision(Action.STAY, current)
    j, l = current
    moves = [(j, l), (j - 1, l), (j + 1, l), (j, l - 1), (j, l + 1)]
    candidates = [c for c in moves if c in safe]
    if not candidates:
        # nothing adjacent is safe: jump to the nearest safe combination
        dist = min(abs(a - j) + abs(b - l) for a, b in safe)
        candidates = [c for c in safe if abs(c[0] - j) + abs(c[1] - l) == dist]
    best = min(candidates, key=lambda c: _rank(c, criterion))
    return Decision(Action.STAY if best == current else Action.MOVE, best)
