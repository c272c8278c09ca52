"""Simulation-based choice of efficacy boundaries and safety-prior hyperparameters."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from .outcomes import Scenario, draw_outcomes, single_agent_scenario
from .safety_mono import EscalationPolicy, SafetyPriorMono, build_skeleton, mono_engine, select_next_dose


@dataclass(frozen=True)
class BoundarySearchConfig:
    c1: int = 4
    c2: int = 2
    n_c: int = 30
    n_level: int = 72
    first_stage_cohorts: int = 2
    psi_star: float = 1.75
    prior: float = 0.5
    lam: float = 1 / 320
    alpha: float = 0.10
    null_recovery: float = 0.70
    t_eff: float = 28.0
    n_traj: int = 20_000
    l_range: tuple = (0.01, 0.50)
    u_range: tuple = (0.50, 0.99)
    step: float = 0.001

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0.0 < self.null_recovery < 1.0:
            raise ValueError("null_recovery must lie in (0, 1)")
        if self.c1 < 1 or self.c2 < 1 or self.n_c < 0:
            raise ValueError("invalid cohort structure")
        if self.n_level % (self.c1 + self.c2):
            raise ValueError("n_level must be a multiple of the cohort size")
        if not 1 <= self.first_stage_cohorts <= self.n_level // (self.c1 + self.c2):
            raise ValueError("first_stage_cohorts out of range")
        if self.n_traj < 1 or self.step <= 0:
            raise ValueError("n_traj and step must be positive")

    @property
    def cohort_size(self) -> int:
        return self.c1 + self.c2

    @property
    def max_stages(self) -> int:
        return self.n_level // self.cohort_size - self.first_stage_cohorts + 1

    def stage_sizes(self) -> np.ndarray:
        """New patients (active + control) accrued by each stage."""
        k = np.arange(1, self.max_stages + 1)
        return (self.first_stage_cohorts + k - 1) * self.cohort_size

    def l_grid(self) -> np.ndarray:
        return _grid(*self.l_range, self.step)

    def u_grid(self) -> np.ndarray:
        return _grid(*self.u_range, self.step)


def _grid(lo, hi, step):
    n = int(round((hi - lo) / step))
    return np.round(lo + step * np.arange(n + 1), 10)


@dataclass
class Trajectories:
    """Log partial likelihoods at HR 1 and ``psi_star`` for each trajectory and stage."""

    ll_null: np.ndarray   # (n_traj, K)
    ll_alt: np.ndarray
    hypothesis: str

    @property
    def log_lr(self) -> np.ndarray:
        return self.ll_alt - self.ll_null

    def posterior(self, prior: float) -> np.ndarray:
        return expit(logit(prior) + self.log_lr)


def _stage_log_likelihoods(z, t, e, sizes, psi):
    """Breslow-free (tie-free) log partial likelihoods of nested prefixes.

    ``z``, ``t``, ``e`` have shape ``(n_traj, n_max)``; stage ``k`` uses the
    first ``sizes[k]`` subjects of each row.
    """
    n_traj = z.shape[0]
    out = np.zeros((n_traj, len(sizes), 2))
    log_psi = math.log(psi)
    for k, n in enumerate(sizes):
        zz, tt, ee = z[:, :n], t[:, :n], e[:, :n]
        order = np.argsort(-tt, axis=1, kind="stable")
        zs = np.take_along_axis(zz, order, 1)
        es = np.take_along_axis(ee, order, 1)
        # risk sets accumulate from the longest time downward
        n1 = np.cumsum(zs, axis=1)
        n0 = np.arange(1, n + 1)[None, :] - n1
        for j, hr in enumerate((1.0, psi)):
            term = es * (zs * (0.0 if hr == 1.0 else log_psi) - np.log(n0 + hr * n1))
            out[:, k, j] = term.sum(axis=1)
    return out[..., 0], out[..., 1]


def simulate_likelihood_trajectories(cfg: BoundarySearchConfig, hypothesis: str, n_traj: int | None = None,
                                     seed: int = 0) -> Trajectories:
    """Staged accrual to the final stage, with ``n_c`` null external controls in every analysis.

    Event times are exponential with the configured 28-day recovery under
    control; only their order matters to the partial likelihood.
    """
    if hypothesis not in ("null", "alternative"):
        raise ValueError("hypothesis must be 'null' or 'alternative'")
    n_traj = cfg.n_traj if n_traj is None else n_traj
    hr = 1.0 if hypothesis == "null" else cfg.psi_star
    rng = np.random.default_rng([int(seed), 0 if hypothesis == "null" else 1])
    rate = -math.log(1.0 - cfg.null_recovery) / cfg.t_eff
    n_cohorts = cfg.n_level // cfg.cohort_size
    z_coh = np.r_[np.ones(cfg.c1, int), np.zeros(cfg.c2, int)]
    z = np.concatenate([np.zeros(cfg.n_c, int), np.tile(z_coh, n_cohorts)])
    rates = rate * np.where(z == 1, hr, 1.0)
    t = rng.exponential(1.0, size=(n_traj, z.size)) / rates
    e = (t <= cfg.t_eff).astype(int)
    t = np.minimum(t, cfg.t_eff)
    zz = np.broadcast_to(z, t.shape)
    sizes = cfg.n_c + cfg.stage_sizes()
    ll0, ll1 = _stage_log_likelihoods(zz, t, e, sizes, cfg.psi_star)
    return Trajectories(ll0, ll1, hypothesis)


@dataclass
class BoundaryOCs:
    lower: float
    upper: float
    type1: float
    power: float
    en0: float
    en1: float
    criterion: float
    stop_profile: dict = field(default_factory=dict)


def _decisions(pi: np.ndarray, lower: float, upper: float):
    """Stopping stage (1-based) and efficacy flag for each posterior trajectory."""
    n, K = pi.shape
    eff = pi > upper
    fut = pi < lower
    stop = eff | fut
    stop[:, -1] = True
    stage = stop.argmax(axis=1)
    success = eff[np.arange(n), stage]
    return stage + 1, success


def evaluate_boundaries(null: Trajectories, alt: Trajectories, lower: float, upper: float,
                        cfg: BoundarySearchConfig) -> BoundaryOCs:
    if not 0.0 < lower < upper < 1.0:
        raise ValueError("boundaries must satisfy 0 < lower < upper < 1")
    sizes = cfg.stage_sizes()
    res = {}
    for name, traj in (("null", null), ("alternative", alt)):
        stage, success = _decisions(traj.posterior(cfg.prior), lower, upper)
        K = traj.ll_null.shape[1]
        res[name] = (
            float(success.mean()),
            float(sizes[stage - 1].mean()),
            {
                "efficacy": np.bincount(stage[success], minlength=K + 1)[1:] / stage.size,
                "futility": np.bincount(stage[~success], minlength=K + 1)[1:] / stage.size,
            },
        )
    type1, en0, prof0 = res["null"]
    power, en1, prof1 = res["alternative"]
    return BoundaryOCs(lower, upper, type1, power, en0, en1, power - cfg.lam * (en0 + en1),
                       {"null": prof0, "alternative": prof1})


def _grid_power(pi, l_grid, u_grid):
    """``P(stop for efficacy)`` for every ``(l, u)`` pair, shape ``(len(l), len(u))``."""
    n, K = pi.shape
    run_max = np.maximum.accumulate(pi, axis=1)
    run_min = np.minimum.accumulate(pi, axis=1)
    prev_min = np.concatenate([np.full((n, 1), np.inf), run_min[:, :-1]], axis=1)
    out = np.empty((l_grid.size, u_grid.size))
    for j, u in enumerate(u_grid):
        above = run_max > u
        hit = above.any(axis=1)
        first = above.argmax(axis=1)
        a = np.sort(prev_min[np.arange(n), first][hit])
        # count of a >= l for each l
        out[:, j] = (a.size - np.searchsorted(a, l_grid, side="left")) / n
    return out


def _grid_expected_stage(pi, l_grid, u_grid):
    """Expected stopping stage for every ``(l, u)`` pair."""
    n, K = pi.shape
    run_max = np.maximum.accumulate(pi, axis=1)
    run_min = np.minimum.accumulate(pi, axis=1)
    nl, nu = l_grid.size, u_grid.size
    total = np.ones((nl, nu))
    for k in range(K - 1):
        a = np.searchsorted(l_grid, run_min[:, k], side="right")   # l_i <= m  iff  i < a
        b = np.searchsorted(u_grid, run_max[:, k], side="left")    # M <= u_j  iff  j >= b
        hist = np.zeros((nl + 1, nu + 1))
        np.add.at(hist, (a, b), 1.0)
        # count(i, j) = sum_{a > i} sum_{b <= j} hist[a, b]
        cum = np.cumsum(hist, axis=1)[:, :nu]
        cum = np.cumsum(cum[::-1], axis=0)[::-1]
        total += cum[1:] / n
    return total


@dataclass
class BoundaryReport:
    lower: float
    upper: float
    best: BoundaryOCs
    feasible: int
    n_traj: int
    grid_l: np.ndarray
    grid_u: np.ndarray
    type1: np.ndarray
    power: np.ndarray
    en0: np.ndarray
    en1: np.ndarray

    def feasible_pairs(self, alpha: float):
        li, ui = np.nonzero((self.type1 <= alpha) & (self.grid_l[:, None] < self.grid_u[None, :]))
        return li, ui


class InfeasibleBoundaries(RuntimeError):
    pass


def optimize_boundaries(cfg: BoundarySearchConfig, seed: int = 0, null: Trajectories | None = None,
                        alt: Trajectories | None = None) -> BoundaryReport:
    """Grid search of ``power - lam * (E N0 + E N1)`` subject to the type-I cap."""
    null = null or simulate_likelihood_trajectories(cfg, "null", seed=seed)
    alt = alt or simulate_likelihood_trajectories(cfg, "alternative", seed=seed)
    lg, ug = cfg.l_grid(), cfg.u_grid()
    pi0, pi1 = null.posterior(cfg.prior), alt.posterior(cfg.prior)
    type1 = _grid_power(pi0, lg, ug)
    power = _grid_power(pi1, lg, ug)
    c, g = cfg.cohort_size, cfg.first_stage_cohorts
    en0 = c * (g - 1 + _grid_expected_stage(pi0, lg, ug))
    en1 = c * (g - 1 + _grid_expected_stage(pi1, lg, ug))
    crit = power - cfg.lam * (en0 + en1)
    ok = (type1 <= cfg.alpha + 1e-12) & (lg[:, None] < ug[None, :])
    if not ok.any():
        raise InfeasibleBoundaries("no boundary pair satisfies the type-I constraint")
    score = np.where(ok, crit, -np.inf)
    top = score.max()
    cand = np.argwhere(score >= top - 1e-12)
    i, j = min(cand, key=lambda ij: (en0[ij[0], ij[1]] + en1[ij[0], ij[1]], ij[0], ij[1]))
    best = evaluate_boundaries(null, alt, float(lg[i]), float(ug[j]), cfg)
    return BoundaryReport(float(lg[i]), float(ug[j]), best, int(ok.sum()), null.ll_null.shape[0],
                          lg, ug, type1, power, en0, en1)


# -- safety prior ------------------------------------------------------------

@dataclass(frozen=True)
class HyperparameterGrid:
    nu: tuple = (0.075, 0.100, 0.125, 0.150)
    mu2: tuple = (-0.5, -0.25, 0.0, 0.25, 0.5)
    var1: tuple = tuple(s**2 for s in (1.2, 1.3, 1.4, 1.5, 1.6))
    var2: tuple = tuple(s**2 for s in (0.15, 0.25, 0.35, 0.45, 0.55))
    p0: float = 0.10
    n_sims: int = 500
    n_cohorts: int = 10
    c1: int = 4
    c2: int = 2

    def __post_init__(self):
        if not (self.nu and self.mu2 and self.var1 and self.var2):
            raise ValueError("grids must be non-empty")
        if self.n_sims < 1 or self.n_cohorts < 1:
            raise ValueError("n_sims and n_cohorts must be positive")

    def points(self):
        return list(itertools.product(self.nu, self.mu2, self.var1, self.var2))


def geometric_mean(values) -> float:
    v = np.asarray(values, dtype=float)
    if np.any(v < 0):
        raise ValueError("proportions must be non-negative")
    if np.any(v == 0):
        return 0.0
    return float(np.exp(np.mean(np.log(v))))


def target_dose(scenario: Scenario, gamma: float = 0.20) -> int:
    """1-based dose whose true additional DLE risk is closest to ``gamma`` (lower dose on ties)."""
    gap = np.abs(scenario.adle() - gamma)
    return int(np.flatnonzero(gap <= gap.min() + 1e-12)[0] + 1)


def run_safety_only(scenario: Scenario, prior: SafetyPriorMono, policy: EscalationPolicy, n_cohorts: int,
                    rng: np.random.Generator, c1: int = 4, c2: int = 2) -> int | None:
    """Escalation without efficacy; returns the selected dose or ``None`` after a safety stop."""
    m = scenario.n_active
    eng = mono_engine(prior, build_skeleton(prior, m))
    n = np.zeros(m + 1, int)
    y = np.zeros(m + 1, int)
    current = 1
    p = np.asarray(scenario.dle)
    hr = np.asarray(scenario.hr)
    for _ in range(n_cohorts):
        arms = np.r_[np.full(c1, current), np.zeros(c2, int)]
        tox, _, _ = draw_outcomes(p[arms], hr[arms], scenario, rng)
        np.add.at(n, arms, 1)
        np.add.at(y, arms, tox)
        over, crit = eng.escalation_summary(n, y, policy)
        safe = {j + 1 for j in range(m) if over[j] < policy.c_overdose}
        if not safe:
            return None
        current = select_next_dose(current, safe, crit, policy).dose
    over, crit = eng.escalation_summary(n, y, policy)
    safe = sorted(j + 1 for j in range(m) if over[j] < policy.c_overdose)
    if not safe:
        return None
    return max(safe, key=lambda j: (crit[j - 1], -j))


@dataclass
class PriorCalibrationReport:
    best: tuple
    rows: list        # (nu, mu2, var1, var2, proportions..., geometric mean)
    scenarios: tuple


def calibrate_safety_prior(grid: HyperparameterGrid, scenarios=None, seed: int = 0,
                           policy: EscalationPolicy = EscalationPolicy()) -> PriorCalibrationReport:
    """Grid point maximising the geometric mean of target-dose selection proportions.

    Ties resolve to the earliest point in grid order. Every grid point sees
    the same simulated patients (common random numbers).
    """
    if scenarios is None:
        scenarios = [single_agent_scenario(s, 0) for s in (1, 2, 3)]
    targets = [target_dose(sc, policy.gamma) for sc in scenarios]
    rows = []
    best, best_score = None, -1.0
    for point in grid.points():
        nu, mu2, v1, v2 = point
        prior = SafetyPriorMono.from_control(p0=grid.p0, nu=nu, mu2=mu2, var1=v1, var2=v2)
        props = []
        for s_idx, (sc, tgt) in enumerate(zip(scenarios, targets)):
            hits = 0
            for r in range(grid.n_sims):
                rng = np.random.default_rng([int(seed), s_idx, r])
                hits += run_safety_only(sc, prior, policy, grid.n_cohorts, rng, grid.c1, grid.c2) == tgt
            props.append(hits / grid.n_sims)
        score = geometric_mean(props)
        rows.append((*point, *props, score))
        if score > best_score:
            best, best_score = point, score
    return PriorCalibrationReport(best, rows, tuple(sc.name for sc in scenarios))
