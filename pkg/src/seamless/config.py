"""YAML run configuration: parsing, validation and conversion to engine objects.

Every block maps onto a dataclass; unknown keys are errors and the seed is
mandatory. ``RunConfig.to_dict`` output loads back to an equal config.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .calibration import BoundarySearchConfig, HyperparameterGrid
from .efficacy import EfficacyConfig
from .outcomes import (COMBO_EFFICACY, COMBO_SAFETY, SINGLE_EFFICACY, SINGLE_SAFETY, Scenario,
                       combination_scenario, single_agent_scenario)
from .safety_combo import SafetyPriorCombo
from .safety_mono import EscalationPolicy, SafetyPriorMono
from .trial_engine import GRADUATION_RULES, TrialConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrialBlock:
    c1: int = 4
    c2: int = 2
    n_level: int = 72
    t_safe: float = 7.0
    t_eff: float = 28.0
    cohort_interval: float = 7.0
    share_controls: bool = True
    graduation_cohorts: int = 2
    graduation: str = "current"


@dataclass(frozen=True)
class OutcomeBlock:
    rate: float = 0.085
    shape: float = 0.797
    rho: float = 0.8
    sign: int = 1


@dataclass(frozen=True)
class EfficacyBlock:
    psi_star: float = 1.75
    prior: float = 0.5
    lower: float = 0.224
    upper: float = 0.839
    n_c: int = 30


@dataclass(frozen=True)
class MonoPriorBlock:
    p0: float = 0.10
    nu: float = 0.125
    mu2: float = -0.25
    var1: float = 1.40**2
    var2: float = 0.35**2
    cov12: float = 0.0


@dataclass(frozen=True)
class ComboPriorBlock:
    p0: float = 0.10
    nu_d: float = 0.075
    nu_s: float = 0.075
    mu21: float = 0.0
    mu22: float = 0.0
    mu_eta: float = 0.0
    var1: float = 0.6**2
    var21: float = 0.25**2
    var22: float = 0.25**2
    var_eta: float = 0.10**2
    cov1_21: float = 0.0
    cov1_22: float = 0.0


@dataclass(frozen=True)
class InlineScenario:
    name: str
    dle: tuple
    hr: tuple
    grid_shape: tuple | None = None


@dataclass(frozen=True)
class ScenarioBlock:
    safety: tuple = (0, 1, 2, 3, 4)
    efficacy: tuple = (0, 1, 2, 3, 4)
    custom: tuple = ()


@dataclass(frozen=True)
class BoundaryBlock:
    structures: tuple = ((4, 2, 30), (3, 3, 30), (2, 1, 30), (2, 2, 30), (4, 2, 0), (3, 3, 0))
    n_level: int = 72
    first_stage_cohorts: int = 2
    lam: float = 1 / 320
    alpha: float = 0.10
    null_recovery: float = 0.70
    n_traj: int = 200_000
    step: float = 0.001


@dataclass(frozen=True)
class PriorGridBlock:
    nu: tuple = (0.075, 0.100, 0.125, 0.150)
    mu2: tuple = (-0.5, -0.25, 0.0, 0.25, 0.5)
    var1: tuple = tuple(s**2 for s in (1.2, 1.3, 1.4, 1.5, 1.6))
    var2: tuple = tuple(s**2 for s in (0.15, 0.25, 0.35, 0.45, 0.55))
    n_sims: int = 500
    n_cohorts: int = 10


@dataclass(frozen=True)
class RunConfig:
    seed: int
    name: str = "run"
    mode: str = "single"
    n_sims: int = 10_000
    parallelism: int = 1
    output: str = "results"
    scenarios: ScenarioBlock = ScenarioBlock()
    trial: TrialBlock = TrialBlock()
    policy: EscalationPolicy = EscalationPolicy()
    efficacy: EfficacyBlock = EfficacyBlock()
    safety_prior: MonoPriorBlock | ComboPriorBlock = MonoPriorBlock()
    outcomes: OutcomeBlock = OutcomeBlock()
    boundaries: BoundaryBlock = BoundaryBlock()
    prior_grid: PriorGridBlock = PriorGridBlock()

    # -- engine objects --------------------------------------------------

    def trial_config(self) -> TrialConfig:
        t = self.trial
        eff = EfficacyConfig(psi_star=self.efficacy.psi_star, prior=self.efficacy.prior,
                             lower=self.efficacy.lower, upper=self.efficacy.upper,
                             n_c=self.efficacy.n_c, t_eff=t.t_eff)
        return TrialConfig(c1=t.c1, c2=t.c2, n_level=t.n_level, t_safe=t.t_safe, t_eff=t.t_eff,
                           cohort_interval=t.cohort_interval, share_controls=t.share_controls,
                           graduation_cohorts=t.graduation_cohorts, graduation=t.graduation,
                           policy=self.policy, efficacy=eff, safety_prior=self.prior())

    def prior(self):
        p = self.safety_prior
        if self.mode == "single":
            return SafetyPriorMono.from_control(p.p0, p.nu, p.mu2, p.var1, p.var2, p.cov12)
        return SafetyPriorCombo.from_control(
            p.p0, mu21=p.mu21, mu22=p.mu22, mu_eta=p.mu_eta, var1=p.var1, var21=p.var21, var22=p.var22,
            var_eta=p.var_eta, cov1_21=p.cov1_21, cov1_22=p.cov1_22, nu_d=p.nu_d, nu_s=p.nu_s)

    def scenario_cells(self) -> list[tuple[str, str, Scenario]]:
        """``(safety, efficacy, scenario)`` for every requested cell."""
        o = dataclasses.asdict(self.outcomes)
        cells = []
        make = single_agent_scenario if self.mode == "single" else combination_scenario
        for s in self.scenarios.safety:
            for e in self.scenarios.efficacy:
                cells.append((str(s), str(e), make(s, e, t_eff=self.trial.t_eff, **o)))
        for c in self.scenarios.custom:
            sc = Scenario(c.name, c.dle, c.hr, grid_shape=c.grid_shape, t_eff=self.trial.t_eff, **o)
            cells.append((c.name, "", sc))
        return cells

    def boundary_configs(self) -> list[BoundarySearchConfig]:
        b = self.boundaries
        return [BoundarySearchConfig(c1=c1, c2=c2, n_c=nc, n_level=b.n_level,
                                     first_stage_cohorts=b.first_stage_cohorts,
                                     psi_star=self.efficacy.psi_star, prior=self.efficacy.prior,
                                     lam=b.lam, alpha=b.alpha, null_recovery=b.null_recovery,
                                     t_eff=self.trial.t_eff, n_traj=b.n_traj, step=b.step)
                for c1, c2, nc in b.structures]

    def hyperparameter_grid(self) -> HyperparameterGrid:
        g = self.prior_grid
        return HyperparameterGrid(nu=g.nu, mu2=g.mu2, var1=g.var1, var2=g.var2,
                                  p0=self.safety_prior.p0, n_sims=g.n_sims, n_cohorts=g.n_cohorts,
                                  c1=self.trial.c1, c2=self.trial.c2)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def _tuplify(x):
    if isinstance(x, list):
        return tuple(_tuplify(v) for v in x)
    return x


_BLOCKS = {
    "scenarios": ScenarioBlock,
    "trial": TrialBlock,
    "policy": EscalationPolicy,
    "efficacy": EfficacyBlock,
    "outcomes": OutcomeBlock,
    "boundaries": BoundaryBlock,
    "prior_grid": PriorGridBlock,
}

_TYPES = {int: "an integer", float: "a number", bool: "a boolean", str: "a string"}


def _expected(cls, name):
    hints = {f.name: f.type for f in dataclasses.fields(cls)}
    t = hints.get(name)
    if isinstance(t, str):
        t = {"int": int, "float": float, "bool": bool, "str": str}.get(t)
    return t


def _check_scalar(value, kind, where):
    if kind is bool and not isinstance(value, bool):
        raise ConfigError(f"{where}: expected {_TYPES[bool]}, got {value!r}")
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(f"{where}: expected {_TYPES[int]}, got {value!r}")
    if kind is float and (isinstance(value, bool) or not isinstance(value, (int, float))):
        raise ConfigError(f"{where}: expected {_TYPES[float]}, got {value!r}")
    if kind is str and not isinstance(value, str):
        raise ConfigError(f"{where}: expected {_TYPES[str]}, got {value!r}")
    return float(value) if kind is float else value


def _build(cls, data, where, lines):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{_loc(where, lines)}: expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        key = f"{where}.{unknown[0]}" if where else unknown[0]
        raise ConfigError(f"{_loc(key, lines)}: unknown key {unknown[0]!r}")
    kw = {}
    for k, v in data.items():
        key = f"{where}.{k}" if where else k
        kind = _expected(cls, k)
        kw[k] = _check_scalar(v, kind, _loc(key, lines)) if kind in _TYPES else _tuplify(v)
    try:
        return cls(**kw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{_loc(where or 'config', lines)}: {exc}") from None


def _loc(key, lines):
    line = lines.get(key)
    return f"{key} (line {line})" if line else key


def _key_lines(node, prefix="", out=None):
    """Map dotted key paths to 1-based source lines."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = f"{prefix}.{k.value}" if prefix else str(k.value)
            out[key] = k.start_mark.line + 1
            _key_lines(v, key, out)
    return out


def config_from_dict(data: dict, lines: dict | None = None) -> RunConfig:
    lines = lines or {}
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    if "seed" not in data or data["seed"] is None:
        raise ConfigError("seed: missing mandatory field (no wall-clock seeding)")
    top = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(data) - top)
    if unknown:
        raise ConfigError(f"{_loc(unknown[0], lines)}: unknown key {unknown[0]!r}")
    kw = {}
    for k in ("seed", "n_sims", "parallelism"):
        if k in data:
            kw[k] = _check_scalar(data[k], int, _loc(k, lines))
    for k in ("name", "mode", "output"):
        if k in data:
            kw[k] = _check_scalar(data[k], str, _loc(k, lines))
    mode = kw.get("mode", "single")
    if mode not in ("single", "combination"):
        raise ConfigError(f"{_loc('mode', lines)}: mode must be 'single' or 'combination'")
    for k, cls in _BLOCKS.items():
        if k in data:
            kw[k] = _build(cls, data[k], k, lines)
    prior_cls = MonoPriorBlock if mode == "single" else ComboPriorBlock
    kw["safety_prior"] = _build(prior_cls, data.get("safety_prior"), "safety_prior", lines)
    if "scenarios" in data and data["scenarios"] and "custom" in data["scenarios"]:
        custom = tuple(_build(InlineScenario, c, f"scenarios.custom[{i}]", lines)
                       for i, c in enumerate(data["scenarios"]["custom"] or ()))
        kw["scenarios"] = dataclasses.replace(kw["scenarios"], custom=custom)
    cfg = RunConfig(**kw)
    _validate(cfg, lines)
    return cfg


def _validate(cfg: RunConfig, lines):
    if cfg.n_sims < 1:
        raise ConfigError(f"{_loc('n_sims', lines)}: n_sims must be at least 1")
    if cfg.parallelism < 1:
        raise ConfigError(f"{_loc('parallelism', lines)}: parallelism must be at least 1")
    if cfg.trial.graduation not in GRADUATION_RULES:
        raise ConfigError(f"{_loc('trial.graduation', lines)}: must be one of {GRADUATION_RULES}")
    sc = cfg.scenarios
    safety, efficacy = (SINGLE_SAFETY, SINGLE_EFFICACY) if cfg.mode == "single" else (COMBO_SAFETY, COMBO_EFFICACY)
    for name, table, ids in (("safety", safety, sc.safety), ("efficacy", efficacy, sc.efficacy)):
        bad = [i for i in ids if i not in table]
        if bad:
            raise ConfigError(f"{_loc('scenarios.' + name, lines)}: unknown built-in scenario {bad[0]!r}")
    for c in sc.custom:
        if (c.grid_shape is None) != (cfg.mode == "single"):
            raise ConfigError(f"scenarios.custom: {c.name!r} grid_shape does not match mode {cfg.mode!r}")
    try:
        cfg.trial_config()
        cells = cfg.scenario_cells()
        if cfg.mode == "combination":
            from .trial_engine import make_design
            for _, _, s in cells[:1]:
                make_design(s, cfg.trial_config())
        cfg.boundary_configs()
        cfg.hyperparameter_grid()
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None


def load_config(path) -> RunConfig:
    """Load a YAML file, or a shipped config by name (e.g. ``table3-baseline``)."""
    p = Path(path)
    if not p.exists():
        shipped = resources.files("seamless") / "configs" / f"{path}.yaml"
        if not shipped.is_file():
            raise ConfigError(f"{path}: no such file or shipped config")
        text, label = shipped.read_text(), f"{path}.yaml"
    else:
        text, label = p.read_text(), str(p)
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError(f"{label}: parse error at {where}: {exc.problem}") from None
    lines = _key_lines(node) if node is not None else {}
    try:
        return config_from_dict(data or {}, lines)
    except ConfigError as exc:
        raise ConfigError(f"{label}: {exc}") from None


def shipped_configs() -> list[str]:
    d = resources.files("seamless") / "configs"
    return sorted(f.name[:-5] for f in d.iterdir() if f.name.endswith(".yaml"))
