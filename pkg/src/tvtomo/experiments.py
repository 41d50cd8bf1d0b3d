"""Monte Carlo harnesses: MSE benchmark, bootstrap coverage, test level and power.

Every task carries its own seed derived from (base seed, run index), and
results are collected in task order, so outputs do not depend on the number
of worker processes.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ._seeding import rng_for
from .baselines import METHODS, estimate, scaled_mse, truth_on_grid
from .bootstrap import BootstrapConfig, bootstrap_fit, interval_coverage
from .lattice import LatticeSpec, difference_operator
from .qut import lrt, tv_test
from .simulate import (PROFILES, Scenario, generate_infections, make_profile,
                       simulate_population, subsample_dataset)

log = logging.getLogger(__name__)


@dataclass
class ScenarioConfig:
    """Everything needed to regenerate one experiment; serialisable as JSON."""

    profile: str = "lake"
    n0: int = 5000
    T: int = 2880
    n: int = 500
    N: int = 30
    t: int = 96
    target_prevalence: float = 0.6
    baseline: str = "zero"
    N0: int = 50
    mc_runs: int = 20
    alpha: float = 0.05
    qut_m: int = 200
    seed: int = 0
    output: str | None = None
    bootstrap: BootstrapConfig = field(default_factory=BootstrapConfig)

    def __post_init__(self):
        if isinstance(self.bootstrap, dict):
            self.bootstrap = BootstrapConfig(**self.bootstrap)
        if self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}; expected one of {PROFILES}")
        if not 1 <= self.N <= self.N0:
            raise ValueError(f"N={self.N} must lie in [1, N0={self.N0}]")
        if not 1 <= self.n <= self.n0:
            raise ValueError(f"n={self.n} must lie in [1, n0={self.n0}]")
        if not 1 <= self.t <= self.T:
            raise ValueError(f"t={self.t} must lie in [1, T={self.T}]")
        if self.mc_runs < 1:
            raise ValueError("mc_runs must be >= 1")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.qut_m < 50:
            raise ValueError("qut_m must be >= 50")

    def scenario(self) -> Scenario:
        return Scenario(self.profile, self.n0, self.T, self.n, self.N, self.t,
                        self.target_prevalence, self.seed, self.baseline, self.N0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("output")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)


def parse_cell(spec: str):
    """'lake:500:30:96' -> ('lake', 500, 30, 96)."""
    parts = spec.split(":")
    if len(parts) != 4:
        raise ValueError(f"cell {spec!r} must look like profile:n:N:t")
    try:
        return parts[0], int(parts[1]), int(parts[2]), int(parts[3])
    except ValueError:
        raise ValueError(f"cell {spec!r}: n, N and t must be integers") from None


def cell_id(cell) -> str:
    return ":".join(map(str, cell))


def run_tasks(fn, tasks, workers: int = 1):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks, chunksize=1))


# --------------------------------------------------------------------------- MSE table


def _population(cfg: ScenarioConfig, profile: str, run: int):
    truth = make_profile(profile, cfg.N0)
    seed = [cfg.seed, run]
    pop = simulate_population(truth, cfg.n0, cfg.T, seed=seed)
    generate_infections(pop, truth, cfg.target_prevalence, seed=seed, baseline=cfg.baseline)
    return truth, pop, seed


def _table1_task(args):
    cfg, profile, cells, run, methods = args
    truth, pop, seed = _population(cfg, profile, run)
    rows = []
    for cell in cells:
        _, n, N, t = cell
        ds = subsample_dataset(pop, n, N, t, seed=seed)
        D = difference_operator(ds.lattice)
        for m in methods:
            out = estimate(m, ds.X, ds.y, ds.lattice, D, seed=seed, alpha=cfg.alpha,
                           qut_m=cfg.qut_m)
            mse = scaled_mse(out.map, truth, N)
            rows.append({"scenario": cell_id(cell), "method": m, "run": run, "mse": mse})
            log.info("table1 %s run %d %s mse=%.4f", cell_id(cell), run, m, mse)
    return rows


def table1(cfg: ScenarioConfig, cells, runs: int | None = None, methods=METHODS,
           workers: int = 1):
    """Scaled MSE per (cell, method, run). Returns (per-run rows, summary rows)."""
    runs = runs or cfg.mc_runs
    cells = [parse_cell(c) if isinstance(c, str) else tuple(c) for c in cells]
    for c in cells:
        replace(cfg, profile=c[0], n=c[1], N=c[2], t=c[3])   # validates the cell
    by_profile: dict = {}
    for c in cells:
        by_profile.setdefault(c[0], []).append(c)
    tasks = [(cfg, prof, cs, run, tuple(methods))
             for prof, cs in by_profile.items() for run in range(runs)]
    per_run = [r for chunk in run_tasks(_table1_task, tasks, workers) for r in chunk]
    per_run.sort(key=lambda r: ([cell_id(c) for c in cells].index(r["scenario"]),
                                list(methods).index(r["method"]), r["run"]))
    summary = summarise(per_run, ("scenario", "method"), ("mse",))
    return per_run, summary


def summarise(rows, keys, metrics):
    groups: dict = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    out = []
    for key, rs in groups.items():
        d = dict(zip(keys, key))
        for m in metrics:
            v = np.array([r[m] for r in rs], dtype=float)
            d[f"mean_{m}"] = float(v.mean())
            d[f"sd_{m}"] = float(v.std(ddof=1)) if len(v) > 1 else 0.0
        d["runs"] = len(rs)
        out.append(d)
    return out


def table1_wide(summary):
    """Rows (N, t, method) x columns profile_n<size>, one row per estimator and lattice."""
    cols, rows = [], {}
    for s in summary:
        prof, n, N, t = parse_cell(s["scenario"])
        col = f"{prof}_n{n}"
        if col not in cols:
            cols.append(col)
        rows.setdefault((N, t, s["method"]), {})[col] = s["mean_mse"]
    header = ["N", "t", "estimator", *cols]
    body = [[N, t, m, *(vals.get(c, float("nan")) for c in cols)]
            for (N, t, m), vals in rows.items()]
    return header, body


# --------------------------------------------------------------------------- coverage


def _table2_task(args):
    cfg, profile, cell, run, methods = args
    truth, pop, seed = _population(cfg, profile, run)
    _, n, N, t = cell
    ds = subsample_dataset(pop, n, N, t, seed=seed)
    D = difference_operator(ds.lattice)
    truth_scaled = truth_on_grid(truth, N)
    bcfg = replace(cfg.bootstrap, seed=int(rng_for(seed, 11).integers(2**31)),
                   alpha=cfg.alpha, qut_m=cfg.qut_m)
    rows = []
    for m in methods:
        res = bootstrap_fit(ds, ds.lattice, D, bcfg, m)
        cov, width = interval_coverage(res.lower, res.upper, truth_scaled)
        row = {"scenario": cell_id(cell), "method": m, "run": run,
               "mse_bc": scaled_mse(res.mu_bc, truth, N),
               "mse_plain": scaled_mse(res.mu_hat, truth, N),
               "coverage": cov, "width": width, "discards": res.discards}
        log.info("table2 %s run %d %s %s", cell_id(cell), run, m,
                 {k: round(v, 4) for k, v in row.items() if isinstance(v, float)})
        rows.append(row)
    return rows


def table2(cfg: ScenarioConfig, profiles=("lake",), runs: int | None = None,
           methods=METHODS, workers: int = 1, cell=(500, 30, 1)):
    """Bootstrap MSE, coverage and width. Returns (per-run rows, summary rows)."""
    runs = runs or cfg.mc_runs
    cells = [(p, *cell) for p in profiles]
    tasks = [(cfg, c[0], c, run, tuple(methods)) for c in cells for run in range(runs)]
    per_run = [r for chunk in run_tasks(_table2_task, tasks, workers) for r in chunk]
    summary = summarise(per_run, ("scenario", "method"),
                        ("mse_bc", "mse_plain", "coverage", "width"))
    return per_run, summary


def table2_wide(summary):
    profs, rows = [], {}
    for s in summary:
        prof = s["scenario"].split(":")[0]
        if prof not in profs:
            profs.append(prof)
        rows.setdefault(s["method"], {})[prof] = s
    header = ["estimator"] + [f"{p}_{k}" for p in profs for k in ("mse", "coverage", "width")]
    body = []
    for m, d in rows.items():
        vals = []
        for p in profs:
            s = d.get(p, {})
            vals += [s.get("mean_mse_bc", float("nan")), s.get("mean_coverage", float("nan")),
                     s.get("mean_width", float("nan"))]
        body.append([m, *vals])
    return header, body


# --------------------------------------------------------------------------- level / power


@dataclass
class PowerConfig:
    """Testing study on an N x N lattice (p = N * N cells).

    Defaults describe the power study; ``LEVEL_STUDY`` holds the level study.
    """

    profile: str = "lake_corner"
    N0: int = 24
    N: int = 8
    T: int = 96
    t: int = 1
    sample_sizes: tuple = (100, 200, 400)
    runs: int = 200
    target_prevalence: float = 0.7
    null_prevalence: float = 0.5
    alpha: float = 0.05
    m: int = 200
    seed: int = 0
    tests: tuple = ("TV", "LRT_exact", "LRT_chi2")

    def to_dict(self) -> dict:
        return asdict(self)


LEVEL_STUDY = PowerConfig(N0=10, N=5, T=720, sample_sizes=(100,), runs=500)


def _test_data(cfg: PowerConfig, n: int, run: int, null: bool):
    truth = make_profile(cfg.profile, cfg.N0)
    seed = [cfg.seed, n, run, int(null)]
    n_walk = n + (n % 2)
    pop = simulate_population(truth, n_walk, cfg.T, seed=seed)
    if null:
        rng = rng_for(seed, 5)
        pop.y0 = (rng.random(n_walk) < cfg.null_prevalence).astype(float)
    else:
        generate_infections(pop, truth, cfg.target_prevalence, seed=seed)
    ds = subsample_dataset(pop, n, cfg.N, cfg.t, seed=seed)
    return ds, seed


def _power_task(args):
    cfg, n, run, null = args
    ds, seed = _test_data(cfg, n, run, null)
    out = {"n": n, "run": run, "null": null}
    y = ds.y
    if y.min() == y.max():
        # no information in a one-class sample: nothing can be rejected
        for name in cfg.tests:
            out[name] = 0
        out["degenerate"] = 1
        return out
    out["degenerate"] = 0
    D = difference_operator(ds.lattice)
    X = ds.dense_X()
    for name in cfg.tests:
        if name == "TV":
            rep = tv_test(X, y, D, alpha=cfg.alpha, m=cfg.m, seed=seed)
        elif name == "LRT_exact":
            rep = lrt(X, y, mode="exact", alpha=cfg.alpha, m=cfg.m, seed=seed)
        elif name == "LRT_chi2":
            rep = lrt(X, y, mode="chi2", alpha=cfg.alpha)
        else:
            raise ValueError(f"unknown test {name!r}")
        out[name] = int(rep.reject)
    return out


def rejection_rates(cfg: PowerConfig, null: bool, sample_sizes=None, runs=None, workers=1):
    """Per (n, test) rejection rate. Returns (per-run rows, summary rows)."""
    sizes = tuple(sample_sizes or cfg.sample_sizes)
    runs = runs or cfg.runs
    p = cfg.N * cfg.N
    for n in sizes:
        if "LRT_exact" in cfg.tests or "LRT_chi2" in cfg.tests:
            if n < p:
                raise ValueError(f"LRT needs n >= p = {p}, got n = {n}")
    tasks = [(cfg, n, run, null) for n in sizes for run in range(runs)]
    per_run = run_tasks(_power_task, tasks, workers)
    summary = []
    for n in sizes:
        rs = [r for r in per_run if r["n"] == n]
        row = {"n": n, "p": p, "runs": len(rs), "null": null,
               "degenerate": int(sum(r["degenerate"] for r in rs))}
        for name in cfg.tests:
            rate = float(np.mean([r[name] for r in rs]))
            row[name] = rate
            row[f"{name}_se"] = math.sqrt(rate * (1 - rate) / len(rs))
        summary.append(row)
    return per_run, summary


def binomial_band(alpha: float, runs: int, z: float = 1.96):
    """Normal-approximation 95% band for a rejection rate at nominal alpha."""
    half = z * math.sqrt(alpha * (1 - alpha) / runs)
    return alpha - half, alpha + half
