"""Acceptance criteria 1-8, one PASS/FAIL line each.

Monte Carlo criteria use 10^4 replications and boundary searches 2x10^5
trajectories per hypothesis; ``ACCEPTANCE_SIMS`` / ``ACCEPTANCE_TRAJ``
override these for quick local runs.
"""

import math
import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES

from seamless.calibration import optimize_boundaries
from seamless.config import load_config
from seamless.efficacy import (
    EfficacyConfig,
    SurvivalDataset,
    cox_log_partial_likelihood,
    posterior_efficacy_probability,
    stage_decision,
    translate_boundaries,
)
from seamless.outcomes import CONTROL_RATE, CONTROL_SHAPE, draw_outcomes, improvement_probability, \
    single_agent_scenario
from seamless.report import run_scenario_matrix
from seamless.safety_combo import ComboQuery, SafetyPriorCombo, build_combo_skeletons, combo_engine
from seamless.safety_mono import ProbabilityQuery, SafetyPriorMono, build_skeleton, mono_engine
from seamless.trial_engine import default_parallelism, run_batch

sys.path.insert(0, str(Path(__file__).parent))
from oracles.cox_product import log_partial_likelihood as cox_product  # noqa: E402

SIMS = int(os.environ.get("ACCEPTANCE_SIMS", 10_000))
TRAJ = int(os.environ.get("ACCEPTANCE_TRAJ", 200_000))
THREADS = int(os.environ.get("ACCEPTANCE_THREADS", default_parallelism()))

# (c1, c2, n_c) -> (l, u, power) as tabulated
TABLE2 = {
    (4, 2, 30): (0.224, 0.839, 0.800),
    (3, 3, 30): (0.268, 0.841, 0.747),
    (2, 1, 30): (0.192, 0.858, 0.794),
    (2, 2, 30): (0.227, 0.858, 0.744),
    (4, 2, 0): (0.317, 0.815, 0.634),
    (3, 3, 0): (0.271, 0.821, 0.691),
}


def record(criterion, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def check(criterion, items):
    """``items`` is a list of ``(ok, detail)``; one line each, then assert all."""
    results = [record(criterion, ok, detail) for ok, detail in items]
    assert all(results), [d for ok, d in items if not ok]


@pytest.fixture(scope="session")
def single_matrix():
    cfg = load_config("table3-baseline")
    cfg = cfg.__class__(**{**cfg.__dict__, "n_sims": SIMS, "parallelism": THREADS})
    res = run_scenario_matrix(cfg)
    return {(int(c.safety), int(c.efficacy)): c.oc for c in res.cells}


@pytest.fixture(scope="session")
def combo_matrix():
    cfg = load_config("table5-combination")
    cfg = cfg.__class__(**{**cfg.__dict__, "n_sims": SIMS, "parallelism": THREADS})
    res = run_scenario_matrix(cfg)
    return {(int(c.safety), int(c.efficacy)): c.oc for c in res.cells}


def _mc(p_pct, n):
    return 300 * math.sqrt(max(p_pct / 100 * (1 - p_pct / 100), 1e-12) / n)


# -- 1 ---------------------------------------------------------------------

def test_criterion_1_boundaries():
    cfg = load_config("table2-boundaries")
    items = []
    for bc in cfg.boundary_configs():
        bc = bc.__class__(**{**bc.__dict__, "n_traj": TRAJ})
        t0 = time.time()
        rep = optimize_boundaries(bc, seed=cfg.seed)
        secs = time.time() - t0
        l, u, pw = TABLE2[(bc.c1, bc.c2, bc.n_c)]
        b = rep.best
        ok = abs(b.lower - l) <= 0.03 and abs(b.upper - u) <= 0.03 and abs(b.power - pw) <= 0.02 and secs < 600
        items.append((ok, f"({bc.c1},{bc.c2},{bc.n_c}) l={b.lower:.3f} u={b.upper:.3f} power={b.power:.3f} "
                          f"type I={b.type1:.3f} vs ({l}, {u}, {pw}) tol l/u 0.03, power 0.02; {secs:.0f}s"))
    check(1, items)


# -- 2-4 ---------------------------------------------------------------------

def test_criterion_2_type_one_error(single_matrix):
    oc = single_matrix[0, 0]
    check(2, [(10.0 <= oc.any_rec_pct <= 15.0,
               f"Scenario 0-0 any recommendation {oc.any_rec_pct:.2f}% (se {oc.any_rec_se:.2f}) in [10, 15]")])


def test_criterion_3_table_cells(single_matrix):
    oc = single_matrix[0, 1]
    want = (0.4, 24.0, 67.2)
    ok1 = all(abs(a - b) <= 3.0 for a, b in zip(oc.rec_pct, want))
    got = ", ".join(f"{x:.1f}" for x in oc.rec_pct)
    oc14 = single_matrix[1, 4]
    check(3, [
        (ok1, f"Scenario 0-1 recommendations ({got}) vs {want} within 3 points"),
        (abs(oc14.any_desirable_pct - 89.0) <= 3.0,
         f"Scenario 1-4 any desirable {oc14.any_desirable_pct:.1f}% vs 89 within 3 points"),
    ])


def test_criterion_4_sample_size(single_matrix):
    mean_n = np.mean([oc.mean_n for oc in single_matrix.values()])
    s4 = [single_matrix[4, e] for e in range(5)]
    s4_n = np.mean([oc.mean_n for oc in s4])
    s4_w = np.mean([oc.mean_duration for oc in s4])
    over = np.mean([oc.pct_n_over_150 for oc in single_matrix.values()])
    check(4, [
        (58 <= mean_n <= 72, f"mean total sample size over 25 scenarios {mean_n:.1f} in [58, 72]"),
        (abs(s4_n - 30) <= 6, f"safety scenario 4 mean sample size {s4_n:.1f} vs 30 +/- 20%"),
        (abs(s4_w - 6) <= 1.2, f"safety scenario 4 mean duration {s4_w:.2f} weeks vs 6 +/- 20%"),
        (over <= 2.0, f"replications with N > 150: {over:.2f}% <= 2%"),
    ])


# -- 5 -------------------------------------------------------------------------

def test_criterion_5_combination(combo_matrix):
    oc00 = combo_matrix[0, 0]
    oc02 = combo_matrix[0, 2]
    ns = [oc.mean_n for oc in combo_matrix.values()]
    lo, hi = min(ns), max(ns)
    check(5, [
        (10.0 <= oc00.any_rec_pct <= 15.0, f"combination 0-0 any recommendation {oc00.any_rec_pct:.2f}% in [10, 15]"),
        (abs(oc02.any_desirable_pct - 81.7) <= 4.0,
         f"combination 0-2 any desirable {oc02.any_desirable_pct:.1f}% vs 81.7 within 4 points"),
        (65 <= np.mean(ns) <= 85, f"combination mean sample size {np.mean(ns):.1f} in [65, 85]"),
        (abs(lo - 42) <= 8.4 and abs(hi - 89) <= 17.8,
         f"combination sample-size range {lo:.1f}-{hi:.1f} vs 42-89 +/- 20%"),
    ])


# -- 6 -------------------------------------------------------------------------

def test_criterion_6_oracles(mono_oracle, combo_oracle):
    pr = SafetyPriorMono.from_control()
    eng = mono_engine(pr, build_skeleton(pr, 3))
    q = [ProbabilityQuery(d, lo, math.inf if hi is None else hi, ex) for d, lo, hi, ex in mono_oracle["queries"]]
    mono_err = max(float(np.max(np.abs(eng.probabilities(np.array(c["n"]), np.array(c["y"]), q) - c["probs"])))
                   for c in mono_oracle["cases"])

    cp = SafetyPriorCombo.from_control()
    ceng = combo_engine(cp, build_combo_skeletons(cp, 2, 3))
    cq = [ComboQuery(tuple(c), lo, math.inf if hi is None else hi) for c, lo, hi in combo_oracle["queries"]]
    combo_err = max(float(np.max(np.abs(ceng.probabilities(np.array(c["n"]), np.array(c["y"]), cq) - c["probs"])))
                    for c in combo_oracle["cases"])

    rng = np.random.default_rng(0)
    cox_err = 0.0
    for _ in range(500):
        n = int(rng.integers(2, 40))
        t = rng.permutation(n) + rng.random(n) * 0.5 + 0.1
        z, e = rng.integers(0, 2, n), rng.integers(0, 2, n)
        hr = float(rng.uniform(0.3, 4))
        d = SurvivalDataset(z, t, e)
        cox_err = max(cox_err, abs(cox_log_partial_likelihood(d, hr) - cox_product(z.tolist(), t.tolist(),
                                                                                   e.tolist(), hr)))
    two = SurvivalDataset([1, 0], [5.0, 28.0], [1, 0])
    pi = posterior_efficacy_probability(two, EfficacyConfig())
    check(6, [
        (mono_err <= 1e-3, f"single-agent posterior vs dense grid max error {mono_err:.2e} <= 1e-3 "
                           f"({len(mono_oracle['cases'])} datasets)"),
        (combo_err <= 5e-3, f"combination posterior vs 2^20-draw oracle max error {combo_err:.2e} <= 5e-3"),
        (cox_err <= 1e-10, f"Cox partial likelihood vs product form max error {cox_err:.1e} <= 1e-10"),
        (abs(pi - 0.56) <= 1e-12, f"two-subject posterior {pi!r} vs 0.5600 to 1e-12"),
    ])


# -- 7 -------------------------------------------------------------------------

def test_criterion_7_invariants():
    rng = np.random.default_rng(1)
    cfg = EfficacyConfig()
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(1, 80))
        e = rng.integers(0, 2, n)
        data = SurvivalDataset(rng.integers(0, 2, n), np.where(e == 1, rng.integers(1, 29, n), 28).astype(float), e)
        new = float(rng.uniform(0.05, 0.95))
        l2, u2 = translate_boundaries(cfg.lower, cfg.upper, cfg.prior, new)
        cfg2 = EfficacyConfig(prior=new, lower=l2, upper=u2)
        k = int(rng.integers(1, cfg.max_stages + 1))
        a = stage_decision(posterior_efficacy_probability(data, cfg), k, cfg)
        b = stage_decision(posterior_efficacy_probability(data, cfg2), k, cfg2)
        mismatches += a is not b

    rank_err = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 40))
        t = rng.permutation(n) + rng.random(n) * 0.5 + 0.1
        d = SurvivalDataset(rng.integers(0, 2, n), t, rng.integers(0, 2, n))
        moved = SurvivalDataset(d.z, np.log1p(t) * 7 + 2, d.event)
        rank_err = max(rank_err, abs(cox_log_partial_likelihood(d, 1.75) - cox_log_partial_likelihood(moved, 1.75)))

    anchors = [build_skeleton(SafetyPriorMono.from_control(nu=nu, mu2=mu2), 3)[0]
               for nu in (0.075, 0.1, 0.125, 0.15) for mu2 in (-0.5, 0.0, 0.5)]

    s14 = 1 - float(improvement_probability(CONTROL_RATE, CONTROL_SHAPE, 1.0, 14))
    p28 = float(improvement_probability(CONTROL_RATE, CONTROL_SHAPE, 1.0, 28))

    m = 100_000
    sc = single_agent_scenario(0, 0)
    y, _, ev = draw_outcomes(np.full(m, 0.3), np.full(m, 1.75), sc, np.random.default_rng(2))
    p_ev = float(improvement_probability(CONTROL_RATE, CONTROL_SHAPE, 1.75, 28))
    z_y = abs(y.mean() - 0.3) / math.sqrt(0.21 / m)
    z_e = abs(ev.mean() - p_ev) / math.sqrt(p_ev * (1 - p_ev) / m)
    check(7, [
        (mismatches == 0, f"prior translation: {mismatches} decision changes over 1000 datasets"),
        (rank_err <= 1e-10, f"rank invariance of partial likelihood, max change {rank_err:.1e}"),
        (all(a == 0.0 for a in anchors), "skeleton anchoring d0 = 0 across 12 priors"),
        (0.49 <= s14 <= 0.51 and 0.69 <= p28 <= 0.71, f"Weibull S(14)={s14:.4f}, P(T<=28)={p28:.4f}"),
        (z_y <= 3 and z_e <= 3, f"copula marginals at 1e5 draws: DLE z={z_y:.2f}, 28-day improvement z={z_e:.2f}"),
    ])


# -- 8 -------------------------------------------------------------------------

def test_criterion_8_determinism():
    items = []
    for name in ("table3-baseline", "table5-combination"):
        cfg = load_config(name)
        tc = cfg.trial_config()
        _, _, sc = cfg.scenario_cells()[6]
        a = run_batch(sc, tc, 60, cfg.seed, parallelism=1)
        b = run_batch(sc, tc, 60, cfg.seed, parallelism=3)
        items.append((a == b, f"{name} scenario {sc.name}: 1 vs 3 workers identical"))
    check(8, items)
