"""Bootstrap data augmentation, bias correction and pointwise intervals.

Each replicate resamples ``n_boot`` individuals with replacement and, for every
resampled individual, redraws ``n_locations`` fixes from the donor's own
occupancy distribution (its normalised dwell row). A rebuilt row is the draw
counts times a common step unit, so every rebuilt row sums to
``n_locations * step_unit``. The default unit keeps the mean dwell per
individual unchanged. Donors carry their outcome. Replicates with a single
outcome class are redrawn.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ._seeding import rng_for
from .baselines import estimate, minmax_scale, scaled_mse, truth_on_grid
from .lattice import DifferenceOperator, LatticeSpec, difference_operator
from .simulate import Scenario, simulate_scenario
from .tracks import Dataset

log = logging.getLogger(__name__)


@dataclass
class BootstrapConfig:
    n_boot: int = 500
    n_locations: int = 720
    runs: int = 30
    alpha: float = 0.05
    seed: int = 0
    qut_m: int = 200
    step_unit: float | None = None   # None: mean row total / n_locations

    def __post_init__(self):
        if self.n_boot < 1 or self.n_locations < 1:
            raise ValueError("n_boot and n_locations must be positive")
        if self.runs < 2:
            raise ValueError("need at least 2 bootstrap runs")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")


@dataclass
class BootstrapResult:
    mu_hat: np.ndarray
    mu_bar_boot: np.ndarray
    mu_bc: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    replicate_count: int
    discards: int = 0
    method: str = "TV"
    replicates: np.ndarray | None = field(default=None, repr=False)


def order_stat(sorted_vals, level: float):
    """ceil(level * R)-th smallest along axis 0 (values already sorted, NaNs last)."""
    R = np.sum(np.isfinite(sorted_vals), axis=0)
    k = np.clip(np.ceil(level * R - 1e-9).astype(int), 1, np.maximum(R, 1)) - 1
    out = np.take_along_axis(sorted_vals, k[None, :], axis=0)[0]
    return np.where(R > 0, out, np.nan)


def aggregate(mu_hat, replicates, alpha: float):
    """Pointwise mean, bias correction and (alpha/2, 1 - alpha/2) order statistics.

    Sorting along the replicate axis first makes every output independent of
    replicate order.
    """
    reps = np.sort(np.asarray(replicates, dtype=float), axis=0)
    with np.errstate(invalid="ignore"):
        mean = np.nanmean(reps, axis=0) if np.isnan(reps).any() else reps.mean(axis=0)
    lower = order_stat(reps, alpha / 2)
    upper = order_stat(reps, 1 - alpha / 2)
    mu_bc = 2 * np.asarray(mu_hat, dtype=float) - mean
    return mean, mu_bc, lower, upper


def default_step_unit(X, n_locations: int) -> float:
    return float(np.asarray(X.sum(axis=1)).mean()) / n_locations


def resample_rows(X, idx, n_locations: int, rng, step_unit: float) -> sp.csr_matrix:
    """Rebuild donor rows from multinomial draws over each donor's dwell profile."""
    X = sp.csr_matrix(X)
    p = X.shape[1]
    totals = np.asarray(X.sum(axis=1)).ravel()
    rows, cols, vals = [], [], []
    for r, i in enumerate(idx):
        start, end = X.indptr[i], X.indptr[i + 1]
        cells = X.indices[start:end]
        w = X.data[start:end] / totals[i]
        counts = rng.multinomial(n_locations, w)
        nz = counts > 0
        rows.append(np.full(nz.sum(), r))
        cols.append(cells[nz])
        vals.append(counts[nz] * step_unit)
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(len(idx), p),
    )


def bootstrap_replicate(dataset: Dataset, config: BootstrapConfig, r: int, budget: int):
    """Augmented (X, y) for replicate r; redraws degenerate outcomes. Returns (X, y, discards)."""
    n = dataset.n
    unit = config.step_unit or default_step_unit(dataset.X, config.n_locations)
    for attempt in range(budget):
        rng = rng_for(config.seed, r, attempt)
        idx = rng.integers(0, n, config.n_boot)
        yb = dataset.y[idx]
        if yb.min() == yb.max():
            continue
        Xb = resample_rows(dataset.X, idx, config.n_locations, rng, unit)
        return Xb, yb, attempt
    raise RuntimeError(f"bootstrap replicate {r}: every draw had a single outcome class")


def bootstrap_fit(dataset: Dataset, lattice: LatticeSpec, D: DifferenceOperator | None,
                  config: BootstrapConfig, estimator: str = "TV", keep_replicates=False,
                  gpr_hyper=None) -> BootstrapResult:
    """Bootstrap the chosen estimator; TV recomputes lambda_QUT on every replicate.

    For GPR, hyperparameters are selected once on the original sample and
    reused across replicates.
    """
    D = D or difference_operator(lattice)
    base = estimate(estimator, dataset.X, dataset.y, lattice, D, seed=config.seed,
                    alpha=0.05, qut_m=config.qut_m, gpr_hyper=gpr_hyper)
    if estimator == "GPR":
        gpr_hyper = base.info.get("hyper") or None
    reps = []
    discards = 0
    for r in range(config.runs):
        Xb, yb, d = bootstrap_replicate(dataset, config, r, budget=10)
        discards += d
        out = estimate(estimator, Xb, yb, lattice, D, seed=[config.seed, r],
                       alpha=0.05, qut_m=config.qut_m, gpr_hyper=gpr_hyper)
        reps.append(out.map)
    reps = np.asarray(reps)
    mean, mu_bc, lower, upper = aggregate(base.map, reps, config.alpha)
    return BootstrapResult(base.map, mean, mu_bc, lower, upper, len(reps), discards,
                           estimator, reps if keep_replicates else None)


def interval_coverage(lower, upper, truth_scaled):
    """Coverage and mean width on the [0, 1] axis.

    Lower and upper maps are each min-max scaled; a cell is covered when the
    scaled truth lies between them. Cells with a NaN bound are skipped.
    """
    ls, us = minmax_scale(lower), minmax_scale(upper)
    lo, hi = np.fmin(ls, us), np.fmax(ls, us)
    ok = np.isfinite(lo) & np.isfinite(hi)
    eps = 1e-9
    covered = (lo[ok] - eps <= truth_scaled[ok]) & (truth_scaled[ok] <= hi[ok] + eps)
    return float(covered.mean()), float(np.mean(hi[ok] - lo[ok]))


@dataclass
class CoverageSummary:
    method: str
    mse_bc: float
    coverage: float
    width: float
    runs: int
    per_run: list = field(default_factory=list, repr=False)


def coverage_eval(scenario: Scenario, estimator: str, mc_runs: int,
                  config: BootstrapConfig) -> CoverageSummary:
    """Average bias-corrected MSE, interval coverage and width over fresh datasets."""
    per_run = []
    for run in range(mc_runs):
        ds, profile, _ = simulate_scenario(scenario, run)
        cfg = BootstrapConfig(**{**config.__dict__, "seed": config.seed * 1000 + run})
        res = bootstrap_fit(ds, ds.lattice, None, cfg, estimator)
        truth = truth_on_grid(profile, scenario.N)
        cov, width = interval_coverage(res.lower, res.upper, truth)
        mse = scaled_mse(res.mu_bc, profile, scenario.N)
        per_run.append({"run": run, "mse_bc": mse, "coverage": cov, "width": width,
                        "mse_plain": scaled_mse(res.mu_hat, profile, scenario.N)})
        log.info("coverage %s run %d: mse_bc=%.3f cov=%.3f width=%.3f",
                 estimator, run, mse, cov, width)
    avg = {k: float(np.mean([r[k] for r in per_run])) for k in ("mse_bc", "coverage", "width")}
    return CoverageSummary(estimator, avg["mse_bc"], avg["coverage"], avg["width"], mc_runs,
                           per_run)
