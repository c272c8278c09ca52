"""Scenario-matrix execution and result files (CSV tables, JSON summary, plot data)."""

from __future__ import annotations

import csv
import dataclasses
import datetime as _dt
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import BoundaryReport, PriorCalibrationReport
from .config import RunConfig
from .trial_engine import OperatingCharacteristics, run_batch


@dataclass
class MatrixCell:
    safety: str
    efficacy: str
    oc: OperatingCharacteristics


@dataclass
class MatrixResult:
    mode: str
    cells: list = field(default_factory=list)


class ScenarioFailure(RuntimeError):
    pass


def run_scenario_matrix(cfg: RunConfig, progress=None) -> MatrixResult:
    tc = cfg.trial_config()
    out = MatrixResult(cfg.mode)
    for s, e, sc in cfg.scenario_cells():
        try:
            oc = run_batch(sc, tc, cfg.n_sims, cfg.seed, cfg.parallelism)
        except Exception as exc:
            raise ScenarioFailure(f"scenario {sc.name}: {exc}") from exc
        out.cells.append(MatrixCell(s, e, oc))
        if progress:
            progress(sc.name, oc)
    return out


# -- formatting ----------------------------------------------------------------

def _f1(x) -> str:
    return "NA" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.1f}"


def format_recommendations(oc: OperatingCharacteristics, mode: str, grid_shape=None) -> str:
    """Per-arm percentages as in the published tables.

    Combination cells list one ``(d1, d2, ...)`` tuple per level of the
    second agent, separated by ``;``.
    """
    vals = [_f1(v) for v in oc.rec_pct]
    if mode == "single" or grid_shape is None:
        return "(" + ", ".join(vals) + ")"
    J, L = grid_shape
    rows = []
    for l in range(L):
        rows.append("(" + ", ".join(vals[j * L + l] for j in range(J)) + ")")
    return "; ".join(rows)


_METRICS = {
    "any_recommendation": "any_rec_pct",
    "all_desirable": "all_desirable_pct",
    "any_desirable": "any_desirable_pct",
    "mean_sample_size": "mean_n",
    "mean_duration_weeks": "mean_duration",
}


def _wide(cells, value):
    safety = list(dict.fromkeys(c.safety for c in cells))
    efficacy = list(dict.fromkeys(c.efficacy for c in cells))
    lookup = {(c.safety, c.efficacy): value(c) for c in cells}
    header = ["safety"] + [f"efficacy_{e}" if e else "value" for e in efficacy]
    rows = [[s] + [lookup.get((s, e), "") for e in efficacy] for s in safety]
    return header, rows


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _clean(x):
    if isinstance(x, float) and math.isnan(x):
        return None
    if isinstance(x, (np.floating,)):
        return _clean(float(x))
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    return x


def summary_document(results: MatrixResult, cfg: RunConfig, timestamp: str | None = None) -> dict:
    return {
        "artifact": "seamless",
        "version": __version__,
        "generated_at": timestamp or _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "cells": [
            {"safety": c.safety, "efficacy": c.efficacy, **_clean(dataclasses.asdict(c.oc))}
            for c in results.cells
        ],
    }


def emit_reports(results: MatrixResult, cfg: RunConfig, out_dir, timestamp: str | None = None) -> list[Path]:
    """Write tables, the JSON summary and plot data; returns the files written."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from None
    shapes = {c.oc.scenario: None for c in results.cells}
    for s, e, sc in cfg.scenario_cells():
        shapes[sc.name] = sc.grid_shape
    cells = results.cells
    written = []

    def emit(name, header, rows):
        p = out / name
        _write_csv(p, header, rows)
        written.append(p)

    if cells:
        emit("recommendations.csv",
             *_wide(cells, lambda c: format_recommendations(c.oc, results.mode, shapes.get(c.oc.scenario))))
        for fname, attr in _METRICS.items():
            emit(f"{fname}.csv", *_wide(cells, lambda c, a=attr: _f1(getattr(c.oc, a))))
    else:
        emit("recommendations.csv", ["safety"], [])
        for fname in _METRICS:
            emit(f"{fname}.csv", ["safety"], [])

    cell_header = ["scenario", "safety", "efficacy", "n_sims", "any_rec_pct", "any_rec_se", "all_desirable_pct",
                   "all_desirable_se", "any_desirable_pct", "any_desirable_se", "mean_n", "mean_n_se", "median_n",
                   "n_q10", "n_q90", "pct_n_over_150", "mean_duration", "safety_stop_pct", "null_scenario"]
    emit("cells.csv", cell_header, [
        [c.oc.scenario, c.safety, c.efficacy, c.oc.n_sims] + [_f1(getattr(c.oc, k)) for k in cell_header[4:-1]]
        + [int(c.oc.null_scenario)] for c in cells])
    arm_header = ["scenario", "safety", "efficacy", "arm", "label", "rec_pct", "rec_se"]
    arm_rows = []
    for c in cells:
        for i, (lab, p, se) in enumerate(zip(c.oc.labels, c.oc.rec_pct, c.oc.rec_se)):
            name = c.oc.arm_labels[i] if c.oc.arm_labels else str(i + 1)
            arm_rows.append([c.oc.scenario, c.safety, c.efficacy, name, lab, _f1(p), _f1(se)])
    emit("arms.csv", arm_header, arm_rows)

    for fname, attr in (("plot_all_desirable.csv", "all_desirable_pct"),
                        ("plot_any_desirable.csv", "any_desirable_pct"),
                        ("plot_sample_size.csv", "mean_n")):
        emit(fname, ["x", "y"], [[c.oc.scenario, repr(float(getattr(c.oc, attr)))] for c in cells
                                 if not math.isnan(getattr(c.oc, attr))])

    p = out / "summary.json"
    p.write_text(json.dumps(summary_document(results, cfg, timestamp), indent=2, sort_keys=True) + "\n")
    written.append(p)
    return written


def config_from_summary(path) -> RunConfig:
    from .config import config_from_dict
    return config_from_dict(json.loads(Path(path).read_text())["config"])


# -- calibration reports -----------------------------------------------------

def emit_boundary_reports(reports: list[BoundaryReport], configs, out_dir, all_pairs: bool = True) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    header = ["c1", "c2", "n_c", "lower", "upper", "type1", "power", "en0", "en1", "criterion",
              "n_traj", "feasible_pairs"]
    rows = []
    for rep, bc in zip(reports, configs):
        b = rep.best
        rows.append([bc.c1, bc.c2, bc.n_c, f"{b.lower:.3f}", f"{b.upper:.3f}", f"{b.type1:.4f}",
                     f"{b.power:.4f}", f"{b.en0:.2f}", f"{b.en1:.2f}", f"{b.criterion:.4f}",
                     rep.n_traj, rep.feasible])
        if all_pairs:
            li, ui = rep.feasible_pairs(bc.alpha)
            p = out / f"feasible_pairs_{bc.c1}-{bc.c2}-{bc.n_c}.csv"
            crit = rep.power - bc.lam * (rep.en0 + rep.en1)
            _write_csv(p, ["lower", "upper", "type1", "power", "en0", "en1", "criterion"], [
                [f"{rep.grid_l[i]:.3f}", f"{rep.grid_u[j]:.3f}", f"{rep.type1[i, j]:.4f}",
                 f"{rep.power[i, j]:.4f}", f"{rep.en0[i, j]:.2f}", f"{rep.en1[i, j]:.2f}", f"{crit[i, j]:.4f}"]
                for i, j in zip(li, ui)])
            written.append(p)
    p = out / "boundaries.csv"
    _write_csv(p, header, rows)
    written.insert(0, p)
    return written


def emit_prior_report(report: PriorCalibrationReport, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = ["nu", "mu2", "var1", "var2"] + [f"p_target_{s}" for s in report.scenarios] + ["geometric_mean"]
    p = out / "prior_grid.csv"
    _write_csv(p, header, [[repr(float(v)) for v in row] for row in report.rows])
    q = out / "prior_selected.json"
    nu, mu2, v1, v2 = report.best
    q.write_text(json.dumps({"nu": nu, "mu2": mu2, "var1": v1, "var2": v2}, indent=2) + "\n")
    return [p, q]
