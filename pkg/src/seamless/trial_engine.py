"""Weekly-cohort simulation of the seamless safety/efficacy design.

Calendar model: one cohort of ``c1`` active and ``c2`` control patients is
enrolled per cohort interval. At each weekly boundary the safety posterior
is refreshed with every DLE outcome observed so far, doses with two cohorts
of complete efficacy follow-up graduate while safe, graduated doses are
reviewed whenever a further cohort completes follow-up, and the next cohort
goes to the dose chosen by the escalation rule. When that dose cannot take
patients (stopped or at its cap) the cohort goes to a graduated dose whose
review asked for more patients and which has none in follow-up.
"""

from __future__ import annotations

import enum
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .efficacy import (ControlBuffer, ControlRecord, EfficacyConfig, StageDecision, SurvivalDataset,
                       assemble_analysis_set, posterior_efficacy_probability, stage_decision)
from .outcomes import Scenario, draw_outcomes
from .safety_combo import SafetyPriorCombo, build_combo_skeletons, combo_engine, select_next_combo
from .safety_mono import (Action, EscalationPolicy, SafetyPriorMono, build_skeleton, mono_engine,
                          select_next_dose)

SAFE_ADLE = 0.30
GRADUATION_RULES = ("safe", "target", "current", "either")
_EPS = 1e-9


@dataclass(frozen=True)
class TrialConfig:
    c1: int = 4
    c2: int = 2
    n_level: int = 72
    t_safe: float = 7.0
    t_eff: float = 28.0
    cohort_interval: float = 7.0
    share_controls: bool = True
    graduation_cohorts: int = 2
    graduation: str = "safe"
    policy: EscalationPolicy = EscalationPolicy()
    efficacy: EfficacyConfig = EfficacyConfig()
    safety_prior: object = None
    max_weeks: int = 1000

    def __post_init__(self):
        if self.c1 < 1 or self.c2 < 1:
            raise ValueError("cohort sizes must be at least 1")
        if self.n_level % (self.c1 + self.c2):
            raise ValueError("n_level must be a multiple of the cohort size")
        if self.graduation_cohorts < 1 or self.graduation_cohorts > self.cohorts_per_level:
            raise ValueError("graduation_cohorts must lie in 1..n_level/(c1+c2)")
        if self.t_safe <= 0 or self.t_eff <= 0 or self.cohort_interval <= 0:
            raise ValueError("time parameters must be positive")
        if self.t_safe > self.cohort_interval:
            raise ValueError("DLE outcomes must be available before the next cohort")
        if self.graduation not in GRADUATION_RULES:
            raise ValueError(f"graduation must be one of {GRADUATION_RULES}")
        if self.safety_prior is None:
            object.__setattr__(self, "safety_prior", SafetyPriorMono.from_control())
        stages = self.cohorts_per_level - self.graduation_cohorts + 1
        if self.efficacy.max_stages != stages:
            object.__setattr__(self, "efficacy", replace(self.efficacy, max_stages=stages))

    @property
    def cohort_size(self) -> int:
        return self.c1 + self.c2

    @property
    def cohorts_per_level(self) -> int:
        return self.n_level // self.cohort_size


class Phase(enum.Enum):
    ESCALATION = "escalation"
    GRADUATED = "graduated"
    STOPPED_SAFETY = "stopped-safety"
    STOPPED_FUTILITY = "stopped-futility"
    STOPPED_EFFICACY = "stopped-efficacy"
    EXHAUSTED = "exhausted"


TERMINAL = {Phase.STOPPED_SAFETY, Phase.STOPPED_FUTILITY, Phase.STOPPED_EFFICACY, Phase.EXHAUSTED}


@dataclass
class TrialResult:
    recommended: tuple
    phase: tuple            # final phase per active arm
    stages: tuple           # efficacy reviews per active arm
    patients: tuple         # patients (active + control) enrolled in each arm's cohorts
    total_n: int
    duration_weeks: int
    safety_stop: bool
    trace: list = field(default_factory=list)


# -- designs ---------------------------------------------------------------

class _MonoDesign:
    def __init__(self, prior: SafetyPriorMono, m: int):
        self.engine = mono_engine(prior, build_skeleton(prior, m))
        self.n_arms = m + 1
        self.start = 1

    def counts_shape(self):
        return (self.n_arms,)

    def cell(self, arm):
        return arm

    def summary(self, n, y, policy):
        over, crit = self.engine.escalation_summary(n, y, policy)
        return np.concatenate([[np.nan], over]), np.concatenate([[np.nan], crit])

    def next(self, current, safe, crit, policy):
        return select_next_dose(current, safe, crit[1:], policy)

    def label(self, arm):
        return f"d{arm}"


class _ComboDesign:
    def __init__(self, prior: SafetyPriorCombo, J: int, L: int):
        self.grid = build_combo_skeletons(prior, J, L)
        self.engine = combo_engine(prior, self.grid)
        self.J, self.L = J, L
        self.n_arms = J * L + 1
        self.start = 1

    def counts_shape(self):
        return (self.J + 1, self.L + 1)

    def cell(self, arm):
        if arm == 0:
            return (0, 0)
        return ((arm - 1) // self.L + 1, (arm - 1) % self.L + 1)

    def arm(self, combo):
        j, l = combo
        return (j - 1) * self.L + l

    def summary(self, n, y, policy):
        over, crit = self.engine.escalation_summary(n, y, policy)
        return np.concatenate([[np.nan], over.ravel()]), np.concatenate([[np.nan], crit.ravel()])

    def next(self, current, safe, crit, policy):
        table = {self.cell(a): crit[a] for a in range(1, self.n_arms)}
        dec = select_next_combo(self.cell(current), {self.cell(a) for a in safe}, table, policy)
        if dec.dose is None:
            return dec
        return replace(dec, dose=self.arm(dec.dose))

    def label(self, arm):
        j, l = self.cell(arm)
        return f"(d{j},s{l})"


def make_design(scenario: Scenario, cfg: TrialConfig):
    prior = cfg.safety_prior
    if scenario.grid_shape is None:
        if not isinstance(prior, SafetyPriorMono):
            raise ValueError("single-agent scenario requires a single-agent safety prior")
        return _MonoDesign(prior, scenario.n_active)
    if not isinstance(prior, SafetyPriorCombo):
        raise ValueError("combination scenario requires a combination safety prior")
    return _ComboDesign(prior, *scenario.grid_shape)


# -- one replication -------------------------------------------------------

@dataclass
class _Cohort:
    arm: int
    day: float
    y: np.ndarray          # treated first, then controls
    time: np.ndarray
    event: np.ndarray
    ids: np.ndarray
    z: np.ndarray


class _Trial:
    def __init__(self, scenario: Scenario, cfg: TrialConfig, seed, rep: int, verbose: bool, design=None):
        self.sc = scenario
        self.cfg = cfg
        self.design = design or make_design(scenario, cfg)
        self.rng = np.random.default_rng([int(seed), int(rep)])
        self.verbose = verbose
        self.trace: list[str] = []
        A = self.design.n_arms
        self.active = list(range(1, A))
        self.phase = {a: Phase.ESCALATION for a in self.active}
        self.cohorts = {a: [] for a in self.active}
        self.reviewed = {a: 0 for a in self.active}
        self.k = {a: 0 for a in self.active}
        self.n = np.zeros(self.design.counts_shape(), dtype=int)
        self.y = np.zeros_like(self.n)
        self.unobserved: list[_Cohort] = []
        self.followup: list[_Cohort] = []
        self.own = {a: [] for a in self.active}
        self.buffers = {a: ControlBuffer(cfg.efficacy.n_c if cfg.share_controls else 0) for a in self.active}
        self.next_id = 0
        self.total = 0
        self.dle = np.asarray(scenario.dle)
        self.hr = np.asarray(scenario.hr)

    def log(self, msg):
        if self.verbose:
            self.trace.append(msg)

    def allocatable(self, a) -> bool:
        return self.phase[a] in (Phase.ESCALATION, Phase.GRADUATED) and \
            len(self.cohorts[a]) < self.cfg.cohorts_per_level

    def enroll(self, a, day):
        c1, c2 = self.cfg.c1, self.cfg.c2
        p = np.r_[np.full(c1, self.dle[a]), np.full(c2, self.dle[0])]
        h = np.r_[np.full(c1, self.hr[a]), np.full(c2, 1.0)]
        y, t, e = draw_outcomes(p, h, self.sc, self.rng)
        ids = np.arange(self.next_id, self.next_id + c1 + c2)
        self.next_id += c1 + c2
        z = np.r_[np.ones(c1, int), np.zeros(c2, int)]
        coh = _Cohort(a, day, y, t, e, ids, z)
        self.cohorts[a].append(coh)
        self.unobserved.append(coh)
        self.followup.append(coh)
        self.total += c1 + c2
        self.log(f"day {day:g}: cohort -> {self.design.label(a)}")

    def observe_safety(self, day):
        still = []
        for coh in self.unobserved:
            if coh.day + self.cfg.t_safe <= day:
                cell = self.design.cell(coh.arm)
                c1 = self.cfg.c1
                self.n[cell] += c1
                self.y[cell] += int(coh.y[:c1].sum())
                ctrl = self.design.cell(0)
                self.n[ctrl] += self.cfg.c2
                self.y[ctrl] += int(coh.y[c1:].sum())
            else:
                still.append(coh)
        self.unobserved = still

    def observe_efficacy(self, day):
        still = []
        for coh in self.followup:
            if coh.day + self.cfg.t_eff <= day:
                self.own[coh.arm].append(coh)
                c1 = self.cfg.c1
                for i in range(c1, c1 + self.cfg.c2):
                    rec = ControlRecord(int(coh.ids[i]), coh.day, float(coh.time[i]), int(coh.event[i]))
                    for b in self.active:
                        if b != coh.arm:
                            self.buffers[b].push(rec)
            else:
                still.append(coh)
        self.followup = still

    def stop(self, a, phase, day):
        self.phase[a] = phase
        self.log(f"day {day:g}: {self.design.label(a)} {phase.value}")

    def review(self, a, day):
        done = self.own[a]
        self.reviewed[a] = len(done)
        self.k[a] += 1
        own = SurvivalDataset(
            np.concatenate([c.z for c in done]),
            np.concatenate([c.time for c in done]),
            np.concatenate([c.event for c in done]),
            np.concatenate([c.ids for c in done]),
        )
        data = assemble_analysis_set(own, self.buffers[a], day, self.cfg.t_eff)
        eff = self.cfg.efficacy
        pi = posterior_efficacy_probability(data, eff)
        final = len(done) >= self.cfg.cohorts_per_level or self.k[a] >= eff.max_stages
        k = eff.max_stages if final else min(self.k[a], eff.max_stages - 1)
        dec = stage_decision(pi, k, eff)
        self.log(f"day {day:g}: review {self.design.label(a)} k={self.k[a]} n={len(data)} "
                 f"pi={pi:.3f} -> {dec.value}")
        if dec is StageDecision.STOP_EFFICACY:
            self.stop(a, Phase.STOPPED_EFFICACY, day)
        elif dec is StageDecision.STOP_FUTILITY:
            self.stop(a, Phase.EXHAUSTED if final and pi >= eff.lower else Phase.STOPPED_FUTILITY, day)

    def run(self) -> TrialResult:
        cfg = self.cfg
        current = self.design.start
        self.enroll(current, 0.0)
        week = 0
        safety_stop = False
        while True:
            week += 1
            if week > cfg.max_weeks:
                raise RuntimeError("trial did not terminate")
            day = week * cfg.cohort_interval
            self.observe_safety(day)
            self.observe_efficacy(day)
            over, crit = self.design.summary(self.n, self.y, cfg.policy)
            safe = {a for a in self.active if over[a] < cfg.policy.c_overdose}
            if not safe:
                for a in self.active:
                    if self.phase[a] not in TERMINAL:
                        self.stop(a, Phase.STOPPED_SAFETY, day)
                safety_stop = True
                break
            for a in self.active:
                if self.phase[a] is Phase.GRADUATED and a not in safe:
                    self.stop(a, Phase.STOPPED_SAFETY, day)
            dec = self.design.next(current, safe, crit, cfg.policy)
            target = dec.dose
            for a in self.active:
                ph = self.phase[a]
                rule = cfg.graduation
                eligible = a in safe and (rule == "safe" or (a == target and rule in ("target", "either"))
                                          or (a == current and rule in ("current", "either")))
                if ph is Phase.ESCALATION and eligible and len(self.own[a]) >= cfg.graduation_cohorts:
                    self.phase[a] = ph = Phase.GRADUATED
                    self.log(f"day {day:g}: {self.design.label(a)} graduates")
                if ph is Phase.GRADUATED and len(self.own[a]) > self.reviewed[a]:
                    self.review(a, day)
            allocated = False
            if self.allocatable(target):
                current = target
                self.enroll(target, day)
                allocated = True
            else:
                waiting = {c.arm for c in self.followup}
                needy = [a for a in self.active if self.phase[a] is Phase.GRADUATED
                         and self.allocatable(a) and a not in waiting]
                if needy:
                    a = min(needy, key=lambda b: (abs(b - target), b))
                    self.enroll(a, day)
                    allocated = True
            if not allocated:
                pending = any(self.phase[c.arm] not in TERMINAL for c in self.followup)
                if not pending:
                    break
        recommended = tuple(a for a in self.active if self.phase[a] is Phase.STOPPED_EFFICACY)
        return TrialResult(
            recommended=recommended,
            phase=tuple(self.phase[a].value for a in self.active),
            stages=tuple(self.k[a] for a in self.active),
            patients=tuple(len(self.cohorts[a]) * cfg.cohort_size for a in self.active),
            total_n=self.total,
            duration_weeks=week,
            safety_stop=safety_stop,
            trace=self.trace,
        )


def run_trial(scenario: Scenario, cfg: TrialConfig, seed: int, rep: int = 0, verbose: bool = False) -> TrialResult:
    """Simulate one replication; ``(seed, rep)`` fully determines the outcome."""
    return _Trial(scenario, cfg, seed, rep, verbose).run()


# -- classification --------------------------------------------------------

class Label(enum.Enum):
    INCORRECT = "incorrect"
    UNDESIRABLE = "undesirable"
    ACCEPTABLE = "acceptable"
    DESIRABLE = "desirable"


def classify_doses(scenario: Scenario, safe_adle: float = SAFE_ADLE) -> tuple[Label, ...]:
    """Label each active arm from its true additional DLE risk and hazard ratio.

    Hazard ratios between the tabulated values take the label of the
    highest threshold they reach.
    """
    out = []
    for adle, hr in zip(scenario.adle(), scenario.hr[1:]):
        if adle > safe_adle + _EPS or hr <= 1.0 + _EPS:
            out.append(Label.INCORRECT)
        elif hr >= 1.75 - _EPS:
            out.append(Label.DESIRABLE)
        elif hr >= 1.5 - _EPS:
            out.append(Label.ACCEPTABLE)
        else:
            out.append(Label.UNDESIRABLE)
    return tuple(out)


# -- batches ---------------------------------------------------------------

@dataclass
class OperatingCharacteristics:
    scenario: str
    n_sims: int
    labels: tuple
    rec_pct: tuple
    rec_se: tuple
    any_rec_pct: float
    any_rec_se: float
    all_desirable_pct: float
    all_desirable_se: float
    any_desirable_pct: float
    any_desirable_se: float
    mean_n: float
    mean_n_se: float
    median_n: float
    n_q10: float
    n_q90: float
    pct_n_over_150: float
    mean_duration: float
    safety_stop_pct: float
    null_scenario: bool
    arm_labels: tuple = ()


def _pct(hits: np.ndarray) -> tuple[float, float]:
    n = hits.size
    p = hits.mean() if n else float("nan")
    se = math.sqrt(p * (1 - p) / n) if n else float("nan")
    return 100 * p, 100 * se


def summarize(results: list[TrialResult], scenario: Scenario, arm_labels=()) -> OperatingCharacteristics:
    labels = classify_doses(scenario)
    A = len(labels)
    rec = np.zeros((len(results), A), dtype=bool)
    for i, r in enumerate(results):
        for a in r.recommended:
            rec[i, a - 1] = True
    desirable = np.array([lab is Label.DESIRABLE for lab in labels])
    rec_stats = [_pct(rec[:, j]) for j in range(A)]
    any_rec = _pct(rec.any(axis=1))
    if desirable.any():
        all_d = _pct(rec[:, desirable].all(axis=1))
        any_d = _pct(rec[:, desirable].any(axis=1))
    else:
        all_d = any_d = (float("nan"), float("nan"))
    ns = np.array([r.total_n for r in results], dtype=float)
    dur = np.array([r.duration_weeks for r in results], dtype=float)
    return OperatingCharacteristics(
        scenario=scenario.name,
        n_sims=len(results),
        labels=tuple(lab.value for lab in labels),
        rec_pct=tuple(s[0] for s in rec_stats),
        rec_se=tuple(s[1] for s in rec_stats),
        any_rec_pct=any_rec[0],
        any_rec_se=any_rec[1],
        all_desirable_pct=all_d[0],
        all_desirable_se=all_d[1],
        any_desirable_pct=any_d[0],
        any_desirable_se=any_d[1],
        mean_n=float(ns.mean()),
        mean_n_se=float(ns.std(ddof=1) / math.sqrt(ns.size)) if ns.size > 1 else 0.0,
        median_n=float(np.median(ns)),
        n_q10=float(np.quantile(ns, 0.1)),
        n_q90=float(np.quantile(ns, 0.9)),
        pct_n_over_150=float(100 * (ns > 150).mean()),
        mean_duration=float(dur.mean()),
        safety_stop_pct=float(100 * np.mean([r.safety_stop for r in results])),
        null_scenario=all(h == 1.0 for h in scenario.hr[1:]),
        arm_labels=tuple(arm_labels),
    )


def _run_chunk(args):
    scenario, cfg, seed, reps = args
    design = make_design(scenario, cfg)
    return [_Trial(scenario, cfg, seed, r, False, design).run() for r in reps]


def run_replications(scenario: Scenario, cfg: TrialConfig, n_sims: int, seed: int,
                     parallelism: int = 1) -> list[TrialResult]:
    """Replications ``0..n_sims-1`` in order; identical for any ``parallelism``."""
    if n_sims < 1:
        raise ValueError("n_sims must be at least 1")
    reps = list(range(n_sims))
    workers = max(1, int(parallelism or 1))
    if workers == 1:
        return _run_chunk((scenario, cfg, seed, reps))
    chunks = [reps[i::workers] for i in range(workers)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_run_chunk, [(scenario, cfg, seed, c) for c in chunks]))
    out = [None] * n_sims
    for chunk, res in zip(chunks, parts):
        for r, x in zip(chunk, res):
            out[r] = x
    return out


def run_batch(scenario: Scenario, cfg: TrialConfig, n_sims: int, seed: int,
              parallelism: int = 1) -> OperatingCharacteristics:
    results = run_replications(scenario, cfg, n_sims, seed, parallelism)
    design = make_design(scenario, cfg)
    return summarize(results, scenario, [design.label(a) for a in range(1, design.n_arms)])


def default_parallelism() -> int:
    return os.cpu_count() or 1
