"""Command-line entry point: ``seamless {simulate,calibrate-boundaries,calibrate-prior,run-one}``."""

from __future__ import annotations

import argparse
import dataclasses
import sys
import time

from .config import ConfigError, load_config


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML file or shipped config name")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--sims", type=int, help="override n_sims (simulations per scenario)")
    common.add_argument("--threads", type=int, help="worker processes")
    common.add_argument("--out", help="output directory")

    p = argparse.ArgumentParser(prog="seamless", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="run the scenario matrix")
    cb = sub.add_parser("calibrate-boundaries", parents=[common], help="optimise efficacy boundaries")
    cb.add_argument("--no-pairs", action="store_true", help="skip per-structure feasible-pair tables")
    sub.add_parser("calibrate-prior", parents=[common], help="grid-search safety prior hyperparameters")
    r1 = sub.add_parser("run-one", parents=[common], help="one replication with a decision trace")
    r1.add_argument("--scenario", required=True, help="cell as SAFETY-EFFICACY (e.g. 1-4) or custom name")
    r1.add_argument("--rep", type=int, default=0, help="replication index")
    return p


def _apply_overrides(cfg, args):
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.sims is not None:
        if args.sims < 1:
            raise ConfigError("--sims must be at least 1")
        kw["n_sims"] = args.sims
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        kw["parallelism"] = args.threads
    if args.out is not None:
        kw["output"] = args.out
    if args.command == "calibrate-prior" and args.sims is not None:
        kw["prior_grid"] = dataclasses.replace(cfg.prior_grid, n_sims=args.sims)
    return dataclasses.replace(cfg, **kw)


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


def cmd_simulate(cfg):
    from .report import emit_reports, run_scenario_matrix
    t0 = time.time()
    res = run_scenario_matrix(cfg, lambda name, oc: _log(
        f"{name}: any-rec {oc.any_rec_pct:.1f}%  mean N {oc.mean_n:.1f}  ({time.time() - t0:.0f}s)"))
    for p in emit_reports(res, cfg, cfg.output):
        print(p)


def cmd_calibrate_boundaries(cfg, args):
    from .calibration import optimize_boundaries
    from .report import emit_boundary_reports
    reports, configs = [], cfg.boundary_configs()
    for bc in configs:
        t0 = time.time()
        rep = optimize_boundaries(bc, seed=cfg.seed)
        b = rep.best
        _log(f"({bc.c1},{bc.c2},{bc.n_c}): l={b.lower:.3f} u={b.upper:.3f} power={b.power:.3f} "
             f"type I={b.type1:.3f} criterion={b.criterion:.3f} ({time.time() - t0:.0f}s)")
        reports.append(rep)
    for p in emit_boundary_reports(reports, configs, cfg.output, all_pairs=not args.no_pairs):
        print(p)


def cmd_calibrate_prior(cfg):
    if cfg.mode != "single":
        raise ConfigError("calibrate-prior supports mode 'single' only")
    from .calibration import calibrate_safety_prior
    from .report import emit_prior_report
    rep = calibrate_safety_prior(cfg.hyperparameter_grid(), seed=cfg.seed, policy=cfg.policy)
    _log(f"selected nu={rep.best[0]} mu2={rep.best[1]} var1={rep.best[2]} var2={rep.best[3]}")
    for p in emit_prior_report(rep, cfg.output):
        print(p)


def cmd_run_one(cfg, args):
    from .trial_engine import run_trial
    cells = {f"{s}-{e}" if e else s: sc for s, e, sc in cfg.scenario_cells()}
    if args.scenario not in cells:
        raise ConfigError(f"unknown scenario {args.scenario!r}; available: {', '.join(cells)}")
    res = run_trial(cells[args.scenario], cfg.trial_config(), cfg.seed, args.rep, verbose=True)
    for line in res.trace:
        print(line)
    print(f"recommended: {list(res.recommended)}")
    print(f"phases: {list(res.phase)}")
    print(f"reviews: {list(res.stages)}")
    print(f"total patients: {res.total_n}; duration: {res.duration_weeks} weeks")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        if args.command == "simulate":
            cmd_simulate(cfg)
        elif args.command == "calibrate-boundaries":
            cmd_calibrate_boundaries(cfg, args)
        elif args.command == "calibrate-prior":
            cmd_calibrate_prior(cfg)
        else:
            cmd_run_one(cfg, args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report any execution failure as a diagnostic
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
