"""Command-line front end.

    tvtomo simulate   --out DIR [scenario flags | --config cfg.json]
    tvtomo ingest     --tracks T.csv --serology S.csv --serotype EHDV-1 --lattice L.json ...
    tvtomo fit        --data DIR --method TV|empirical|GPR [--lam L] --out map.csv
    tvtomo qut        --data DIR --out qut.json
    tvtomo test       --data DIR --method TV|LRT_exact|LRT_chi2 --out report.json
    tvtomo bootstrap  --data DIR --method TV --out result.csv
    tvtomo evaluate   --map map.csv --profile lake --out metrics.csv
    tvtomo reproduce  table1|table2|power --out DIR [--cells ...] [--runs R] [--full]

Exit status: 0 success, 2 usage error, 3 data error, 4 numerical failure.
Logs go to stderr; every artifact carries (config hash, seed, version).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from datetime import timedelta
from pathlib import Path

import numpy as np

from . import io as tio
from .baselines import METHODS, estimate, scaled_mse
from .bootstrap import BootstrapConfig, bootstrap_fit
from .experiments import (LEVEL_STUDY, PowerConfig, ScenarioConfig, parse_cell,
                          rejection_rates, table1, table1_wide, table2, table2_wide)
from .lattice import LatticeError, LatticeSpec, difference_operator
from .model import DegenerateResponseError, FitConfig
from .qut import LambdaZeroError, lambda_zero, lrt, qut_estimate, tv_test
from .simulate import PROFILES, CalibrationError, make_profile, simulate_scenario
from .tracks import UNIT, GridGeometry, TrackError, dataset_from_files
from .tvsolve import fit_tv

log = logging.getLogger("tvtomo")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

DESK = {"mc_runs": 20, "n_boot": 500, "boot_runs": 30, "table2_runs": 10}
FULL = {"mc_runs": 100, "n_boot": 5000, "boot_runs": 100, "table2_runs": 100}
FULL_CELLS = [f"{p}:{n}:{N}:{t}" for N in (30, 50) for t in (96, 1) for p in PROFILES
              for n in (500, 5000)]
DESK_CELLS = [f"{p}:500:30:96" for p in PROFILES]


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------- helpers


def _scenario_config(args) -> ScenarioConfig:
    base = {}
    if getattr(args, "config", None):
        base = tio.read_json(args.config)
        base.pop("output", None)
    cfg = ScenarioConfig.from_dict(base) if base else ScenarioConfig()
    overrides = {}
    for key in ("profile", "n0", "T", "n", "N", "t", "target_prevalence", "baseline", "N0",
                "alpha", "qut_m", "seed"):
        v = getattr(args, key, None)
        if v is not None:
            overrides[key] = v
    return replace(cfg, **overrides)


def _provenance(config: dict, seed) -> dict:
    return tio.provenance(config, seed)


def _fit_config(args) -> FitConfig:
    return FitConfig(max_iter=args.max_iter) if getattr(args, "max_iter", None) else FitConfig()


def _cfg_of(args, skip=("func", "verbose")) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


# --------------------------------------------------------------------------- commands


def cmd_simulate(args):
    cfg = _scenario_config(args)
    ds, profile, pop = simulate_scenario(cfg.scenario(), args.run)
    config = {**cfg.to_dict(), "run": args.run}
    meta = {"provenance": _provenance(config, [cfg.seed, args.run]), "config": config,
            "amplitude": list(pop.amplitude), "prevalence": float(pop.y0.mean())}
    out = Path(args.out)
    tio.write_dataset(out, ds, meta)
    truth_lattice = LatticeSpec.full(cfg.N0)
    tio.write_map_csv(out / "truth.csv", profile.flat(), truth_lattice)
    log.info("wrote dataset n=%d p=%d to %s", ds.n, ds.p, out)


def cmd_ingest(args):
    lattice = tio.read_lattice(args.lattice)
    geom = GridGeometry(args.x0, args.y0, args.cell_size)
    step = timedelta(minutes=args.step_minutes)
    ds = dataset_from_files(args.tracks, args.serology, args.serotype, lattice, geom, step)
    config = _cfg_of(args)
    tio.write_dataset(args.out, ds, {"provenance": _provenance(config, None), "config": config,
                                     "crs": "projected planar metres"})


def _load(args):
    ds = tio.read_dataset(args.data)
    return ds, ds.lattice, difference_operator(ds.lattice)


def cmd_fit(args):
    ds, lattice, D = _load(args)
    info = {}
    if args.method == "TV" and args.lam is not None:
        lz = lambda_zero(ds.X, ds.y, D, method="flow")
        if args.lam >= lz.lambda0:
            mu = np.full(lattice.p, lz.beta0)
            info = {"constant": True}
        else:
            sol = fit_tv(ds.X, ds.y, D, args.lam, _fit_config(args))
            if not sol.converged:
                raise ArithmeticError(
                    f"TV solve did not converge (dual residual {sol.dual_residual:.3g})")
            mu = sol.mu_hat
            info = {"constant": False, "dual_residual": sol.dual_residual, "gap": sol.gap,
                    "iterations": sol.iterations, "objective": sol.objective}
        info.update(lam=args.lam, lambda0=lz.lambda0, beta0=lz.beta0)
    else:
        out = estimate(args.method, ds.X, ds.y, lattice, D, seed=args.seed, alpha=args.alpha,
                       qut_m=args.m)
        mu, info = out.map, out.info
    config = _cfg_of(args)
    tio.write_map_csv(args.out, mu, lattice)
    tio.write_json(Path(args.out).with_suffix(".json"),
                   {"method": args.method, "info": info,
                    "provenance": _provenance(config, args.seed), "config": config})
    if args.pgm:
        tio.write_pgm(args.pgm, mu, lattice)


def cmd_qut(args):
    ds, lattice, D = _load(args)
    res = qut_estimate(ds.X, D, alpha=args.alpha, m=args.m, seed=args.seed, y=ds.y,
                       workers=args.workers)
    config = _cfg_of(args, skip=("func", "verbose", "workers"))
    tio.write_json(args.out, {"lambda_qut": res.lambda_qut, "alpha": res.alpha, "m": res.m,
                              "seed": res.seed, "beta0": res.beta0, "discards": res.discards,
                              "provenance": _provenance(config, args.seed)})
    tio.write_csv(Path(args.out).with_suffix(".samples.csv"), ["lambda0"],
                  [[v] for v in res.samples])


def cmd_test(args):
    ds, lattice, D = _load(args)
    if args.method == "TV":
        rep = tv_test(ds.X, ds.y, D, alpha=args.alpha, m=args.m, seed=args.seed,
                      workers=args.workers)
    elif args.method == "LRT_exact":
        rep = lrt(ds.X, ds.y, mode="exact", alpha=args.alpha, m=args.m, seed=args.seed)
    else:
        rep = lrt(ds.X, ds.y, mode="chi2", alpha=args.alpha)
    config = _cfg_of(args, skip=("func", "verbose", "workers"))
    tio.write_json(args.out, {**rep.to_dict(), "provenance": _provenance(config, args.seed)})
    print(f"{rep.method}: statistic={rep.statistic:.6g} threshold={rep.threshold:.6g} "
          f"reject={rep.reject}")


def cmd_bootstrap(args):
    ds, lattice, D = _load(args)
    bcfg = BootstrapConfig(n_boot=args.n_boot, n_locations=args.n_locations, runs=args.runs,
                           alpha=args.alpha, seed=args.seed, qut_m=args.m)
    res = bootstrap_fit(ds, lattice, D, bcfg, args.method)
    write_bootstrap(args.out, res, lattice, bcfg, _cfg_of(args))


def write_bootstrap(path, res, lattice, bcfg, config):
    from .baselines import minmax_scale
    rows = [[k, res.lower[k], res.mu_bc[k], res.upper[k], res.mu_hat[k]]
            for k in range(lattice.p)]
    tio.write_csv(path, ["cell", "lower", "estimate_bc", "upper", "estimate"], rows)
    ls, us = minmax_scale(res.lower), minmax_scale(res.upper)
    scaled = [[k, min(ls[k], us[k]), max(ls[k], us[k])] for k in range(lattice.p)]
    tio.write_csv(Path(path).with_suffix(".scaled.csv"), ["cell", "lower", "upper"], scaled)
    tio.write_json(Path(path).with_suffix(".json"), {
        "method": res.method, "replicates": res.replicate_count, "discards": res.discards,
        "bootstrap": asdict(bcfg), "lattice": tio.lattice_to_dict(lattice),
        "provenance": _provenance(config, bcfg.seed)})


def cmd_evaluate(args):
    if args.N is not None:
        lattice = LatticeSpec.full(args.N)
    else:
        with open(args.map) as fh:
            n_cells = sum(1 for _ in fh) - 1
        N = int(round(np.sqrt(n_cells)))
        if N * N != n_cells:
            raise UsageError(f"{args.map}: {n_cells} cells is not a square lattice; pass --N")
        lattice = LatticeSpec.full(N)
    mu = tio.read_map_csv(args.map, lattice)
    truth = make_profile(args.profile, args.N0)
    mse = scaled_mse(mu, truth, lattice.n_rows)
    tio.write_csv(args.out, ["scenario", "method", "run", "mse"],
                  [[args.scenario or args.profile, args.method, args.run, mse]])
    print(f"scaled MSE = {mse:.6f}")


def cmd_reproduce(args):
    scale = FULL if args.full else DESK
    cfg = _scenario_config(args)
    out = Path(args.out)
    if args.what == "table1":
        runs = args.runs or scale["mc_runs"]
        cells = args.cells or (FULL_CELLS if args.full else DESK_CELLS)
        for c in cells:
            parse_cell(c)
        cfg = replace(cfg, mc_runs=runs)
        per_run, summary = table1(cfg, cells, runs, workers=args.workers)
        header, body = table1_wide(summary)
        tio.write_csv(out / "table1.csv", header, body)
        tio.write_csv(out / "table1_summary.csv", ["scenario", "method", "mean_mse", "sd_mse",
                                                   "runs"],
                      [[s["scenario"], s["method"], s["mean_mse"], s["sd_mse"], s["runs"]]
                       for s in summary])
        tio.write_csv(out / "table1_runs.csv", ["scenario", "method", "run", "mse"],
                      [[r["scenario"], r["method"], r["run"], r["mse"]] for r in per_run])
        config = {**cfg.to_dict(), "cells": list(cells), "runs": runs}
        _sidecar(out / "table1.json", config, cfg.seed, runs)
    elif args.what == "table2":
        runs = args.runs or scale["table2_runs"]
        bcfg = replace(cfg.bootstrap, n_boot=args.n_boot or scale["n_boot"],
                       runs=args.boot_runs or scale["boot_runs"])
        cfg = replace(cfg, bootstrap=bcfg, mc_runs=runs)
        profiles = tuple(args.profiles or (PROFILES if args.full else ("lake",)))
        cell = (args.n or 500, args.N or 30, args.t or 1)
        cfg = replace(cfg, n=cell[0], N=cell[1], t=cell[2])
        per_run, summary = table2(cfg, profiles, runs, workers=args.workers, cell=cell)
        header, body = table2_wide(summary)
        tio.write_csv(out / "table2.csv", header, body)
        keys = ("mse_bc", "mse_plain", "coverage", "width")
        tio.write_csv(out / "table2_summary.csv",
                      ["scenario", "method", *[f"mean_{k}" for k in keys], "runs"],
                      [[s["scenario"], s["method"], *[s[f"mean_{k}"] for k in keys], s["runs"]]
                       for s in summary])
        tio.write_csv(out / "table2_runs.csv", ["scenario", "method", "run", *keys, "discards"],
                      [[r["scenario"], r["method"], r["run"], *[r[k] for k in keys],
                        r["discards"]] for r in per_run])
        config = {**cfg.to_dict(), "profiles": list(profiles), "cell": list(cell), "runs": runs}
        _sidecar(out / "table2.json", config, cfg.seed, runs)
    else:
        pcfg = PowerConfig(seed=cfg.seed, alpha=cfg.alpha, m=cfg.qut_m)
        lcfg = replace(LEVEL_STUDY, seed=cfg.seed, alpha=cfg.alpha, m=cfg.qut_m)
        runs = args.runs or pcfg.runs
        level_runs = args.level_runs or lcfg.runs
        _, level = rejection_rates(lcfg, null=True, runs=level_runs, workers=args.workers)
        _, power = rejection_rates(pcfg, null=False, runs=runs, workers=args.workers)
        cols = ["n", "p", "runs", *pcfg.tests, "degenerate"]
        tio.write_csv(out / "level.csv", cols, [[r[c] for c in cols] for r in level])
        tio.write_csv(out / "power.csv", cols, [[r[c] for c in cols] for r in power])
        config = {"power": {**pcfg.to_dict(), "runs": runs},
                  "level": {**lcfg.to_dict(), "runs": level_runs}}
        _sidecar(out / "power.json", config, cfg.seed, runs)


def _sidecar(path, config, seed, runs):
    tio.write_json(path, {"config": config, "runs": runs, "seeds": {"base": seed,
                          "per_run": "[base, run]"}, "provenance": _provenance(config, seed)})


# --------------------------------------------------------------------------- parser


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def _level(s):
    v = float(s)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"expected a level in (0, 1), got {s}")
    return v


def _add_scenario_flags(p):
    p.add_argument("--config", help="scenario config JSON; flags override its values")
    p.add_argument("--profile", choices=PROFILES)
    p.add_argument("--n0", type=_positive_int)
    p.add_argument("--T", type=_positive_int)
    p.add_argument("--n", type=_positive_int)
    p.add_argument("--N", type=_positive_int)
    p.add_argument("--t", type=_positive_int)
    p.add_argument("--N0", type=_positive_int)
    p.add_argument("--target-prevalence", dest="target_prevalence", type=float)
    p.add_argument("--baseline", choices=("zero", "symmetric"))
    p.add_argument("--seed", type=int)


def _add_stat_flags(p):
    p.add_argument("--alpha", type=_level, default=0.05)
    p.add_argument("--m", type=int, default=200, help="Monte Carlo draws for QUT / exact LRT")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tvtomo", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a tracer dataset")
    _add_scenario_flags(p)
    p.add_argument("--run", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ingest", help="build a dataset from GPS tracks and serology")
    p.add_argument("--tracks", required=True)
    p.add_argument("--serology", required=True)
    p.add_argument("--serotype", required=True)
    p.add_argument("--lattice", required=True, help="lattice JSON")
    p.add_argument("--x0", type=float, required=True, help="lower-left corner, metres")
    p.add_argument("--y0", type=float, required=True)
    p.add_argument("--cell-size", dest="cell_size", type=float, required=True)
    p.add_argument("--step-minutes", dest="step_minutes", type=float,
                   default=UNIT.total_seconds() / 60)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("fit", help="estimate a propensity map")
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=METHODS, default="TV")
    p.add_argument("--lam", type=float, help="fixed TV penalty (default: QUT)")
    p.add_argument("--max-iter", dest="max_iter", type=_positive_int)
    _add_stat_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--pgm", help="also write a grayscale preview")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("qut", help="quantile universal threshold")
    p.add_argument("--data", required=True)
    _add_stat_flags(p)
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_qut)

    p = sub.add_parser("test", help="test the constant-map null")
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=("TV", "LRT_exact", "LRT_chi2"), default="TV")
    _add_stat_flags(p)
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("bootstrap", help="bias-corrected map with pointwise intervals")
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=METHODS, default="TV")
    p.add_argument("--n-boot", dest="n_boot", type=_positive_int, default=500)
    p.add_argument("--n-locations", dest="n_locations", type=_positive_int, default=720)
    p.add_argument("--runs", type=int, default=30)
    _add_stat_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("evaluate", help="scaled MSE of a map against a truth profile")
    p.add_argument("--map", required=True)
    p.add_argument("--profile", choices=PROFILES, required=True)
    p.add_argument("--N0", type=_positive_int, default=50)
    p.add_argument("--N", type=_positive_int)
    p.add_argument("--method", default="unknown")
    p.add_argument("--scenario")
    p.add_argument("--run", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("reproduce", help="desk-scale Monte Carlo experiments")
    p.add_argument("what", choices=("table1", "table2", "power"))
    _add_scenario_flags(p)
    p.add_argument("--alpha", type=_level)
    p.add_argument("--qut-m", dest="qut_m", type=int)
    p.add_argument("--cells", nargs="+", help="profile:n:N:t entries (table1)")
    p.add_argument("--profiles", nargs="+", choices=PROFILES, help="table2 profiles")
    p.add_argument("--runs", type=_positive_int, help="Monte Carlo runs")
    p.add_argument("--level-runs", dest="level_runs", type=_positive_int)
    p.add_argument("--n-boot", dest="n_boot", type=_positive_int)
    p.add_argument("--boot-runs", dest="boot_runs", type=_positive_int)
    p.add_argument("--full", action="store_true", help="full-scale run counts (slow)")
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reproduce)
    return ap


def _qualified(e: BaseException) -> str:
    mod = type(e).__module__
    where = mod if mod.startswith("tvtomo") else "tvtomo"
    return f"{where}: {type(e).__name__}: {e}"


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as e:
        print(f"tvtomo: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (TrackError, LatticeError, DegenerateResponseError, OSError,
            json.JSONDecodeError) as e:
        print(_qualified(e), file=sys.stderr)
        return EXIT_DATA
    except (LambdaZeroError, CalibrationError, ArithmeticError, np.linalg.LinAlgError,
            RuntimeError) as e:
        print(_qualified(e), file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(_qualified(e), file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
