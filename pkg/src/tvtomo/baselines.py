"""Comparison estimators and the scaled-MSE benchmark metric."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.special import expit, logit

from ._seeding import rng_for
from .lattice import DifferenceOperator, LatticeSpec, downsample_map
from .model import FitConfig, as_design
from .qut import lambda_zero, qut_estimate
from .simulate import ProfileMap
from .tvsolve import fit_tv

METHODS = ("TV", "empirical", "GPR")
CLAMP = 0.01


@dataclass
class EstimatorOutput:
    method: str
    map: np.ndarray
    scaled: np.ndarray = field(init=False)
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.scaled = minmax_scale(self.map)


def minmax_scale(values) -> np.ndarray:
    """Affine map onto [0, 1] ignoring NaNs; a zero-range map becomes all zeros."""
    v = np.asarray(values, dtype=float)
    finite = np.isfinite(v)
    out = np.full_like(v, np.nan)
    if not finite.any():
        return out
    lo, hi = v[finite].min(), v[finite].max()
    out[finite] = 0.0 if hi == lo else (v[finite] - lo) / (hi - lo)
    return out


def empirical_estimate(X, y) -> np.ndarray:
    """Share of each cell's dwell time contributed by infected individuals.

    Cells nobody visited are NaN.
    """
    X = as_design(X)
    y = np.asarray(y, dtype=float)
    num = np.asarray(X.T @ y).ravel()
    den = np.asarray(X.sum(axis=0)).ravel()
    out = np.full(len(den), np.nan)
    vis = den > 0
    out[vis] = num[vis] / den[vis]
    return out


# --------------------------------------------------------------------------- GPR


def se_kernel(A, B, lengthscale):
    d2 = ((A[:, None, :] - B[None, :, :]) ** 2).sum(-1)
    return np.exp(-0.5 * d2 / lengthscale**2)


def gp_posterior_mean(coords_train, z_train, coords_test, lengthscale, signal, noise):
    """Posterior mean of a zero-mean GP (signal * SE kernel + noise * I) on centred z."""
    K = signal * se_kernel(coords_train, coords_train, lengthscale)
    K[np.diag_indices_from(K)] += noise
    Ks = signal * se_kernel(coords_test, coords_train, lengthscale)
    c = sla.cho_factor(K, lower=True)
    return Ks @ sla.cho_solve(c, z_train)


def _default_grid(z, extent):
    var = max(float(np.var(z)), 1e-12)
    return {
        "lengthscale": np.geomspace(0.5, max(extent / 2, 1.0), 6),
        "signal": var * np.array([0.3, 1.0, 3.0]),
        "noise": var * np.geomspace(1e-3, 3.0, 6),
    }


def select_gp_hyper(coords, z, folds: int = 5, seed: int = 0, grid: dict | None = None):
    """K-fold CV over a log-spaced (lengthscale, signal, noise) grid.

    Returns the triple with the smallest mean squared prediction error on
    held-out cells. Ties go to the first grid point.
    """
    n = len(z)
    grid = grid or _default_grid(z, np.ptp(coords, axis=0).max() + 1)
    rng = rng_for(seed, 7)
    fold_of = rng.permutation(n) % folds
    combos = [(s, e) for s in grid["signal"] for e in grid["noise"]]
    err = np.zeros((len(grid["lengthscale"]), len(combos)))
    for f in range(folds):
        tr, te = fold_of != f, fold_of == f
        ztr = z[tr]
        mean = ztr.mean()
        zc = ztr - mean
        for i, ell in enumerate(grid["lengthscale"]):
            evals, Q = np.linalg.eigh(se_kernel(coords[tr], coords[tr], ell))
            evals = np.clip(evals, 0, None)
            Ks = se_kernel(coords[te], coords[tr], ell)
            KsQ = Ks @ Q
            Qz = Q.T @ zc
            for j, (sig, noise) in enumerate(combos):
                pred = mean + sig * (KsQ @ (Qz / (sig * evals + noise)))
                err[i, j] += np.sum((pred - z[te]) ** 2)
    i, j = np.unravel_index(np.argmin(err), err.shape)
    sig, noise = combos[j]
    return {"lengthscale": float(grid["lengthscale"][i]), "signal": float(sig),
            "noise": float(noise), "cv_mse": float(err[i, j] / n)}


def gpr_logodds(empirical_map, lattice: LatticeSpec, cv_folds: int = 5, seed: int = 0,
                hyper: dict | None = None, return_params: bool = False):
    """Smooth the empirical map by GP regression on its clamped log-odds.

    Predicts at every active cell (visited or not) and maps back with the
    inverse logit. ``hyper`` skips cross-validation.
    """
    emp = np.asarray(empirical_map, dtype=float)
    vis = np.isfinite(emp)
    if vis.sum() < 10:
        raise ValueError(f"GPR needs at least 10 visited cells, got {int(vis.sum())}")
    if np.ptp(emp[vis]) == 0:
        out = np.full(len(emp), emp[vis][0])
        return (out, {}) if return_params else out
    z = logit(np.clip(emp[vis], CLAMP, 1 - CLAMP))
    coords = lattice.cell_coords().astype(float)
    if hyper is None:
        hyper = select_gp_hyper(coords[vis], z, cv_folds, seed)
    mean = z.mean()
    pred = mean + gp_posterior_mean(coords[vis], z - mean, coords, hyper["lengthscale"],
                                    hyper["signal"], hyper["noise"])
    out = expit(pred)
    return (out, hyper) if return_params else out


# --------------------------------------------------------------------------- metric


def truth_on_grid(profile: ProfileMap, N: int) -> np.ndarray:
    return minmax_scale(downsample_map(profile.flat(), profile.n0, N))


def scaled_mse(estimate, truth_profile: ProfileMap, N: int) -> float:
    """Mean squared difference of min-max scaled estimate and downsampled truth.

    NaN entries of the estimate (unvisited cells) are left out.
    """
    est = minmax_scale(estimate)
    truth = truth_on_grid(truth_profile, N)
    ok = np.isfinite(est)
    return float(np.mean((est[ok] - truth[ok]) ** 2))


# --------------------------------------------------------------------------- dispatch


def tv_qut_estimate(X, y, D: DifferenceOperator, alpha: float = 0.05, m: int = 200,
                    seed: int = 0, config: FitConfig | None = None):
    """TV estimate at lambda = lambda_QUT.

    When lambda_0(y) < lambda_QUT the estimate is the constant map and no
    TV solve is needed.
    """
    lz = lambda_zero(X, y, D, method="flow")
    qut = qut_estimate(X, D, alpha=alpha, m=m, seed=seed, beta0=lz.beta0)
    info = {"lambda": qut.lambda_qut, "lambda0": lz.lambda0, "beta0": lz.beta0,
            "discards": qut.discards}
    if lz.lambda0 < qut.lambda_qut:
        info.update(constant=True, dual_residual=0.0, converged=True)
        return np.full(D.p, lz.beta0), info
    sol = fit_tv(X, y, D, qut.lambda_qut, config)
    info.update(constant=False, dual_residual=sol.dual_residual, converged=sol.converged,
                iterations=sol.iterations)
    return sol.mu_hat, info


def estimate(method: str, X, y, lattice: LatticeSpec, D: DifferenceOperator | None = None,
             seed: int = 0, alpha: float = 0.05, qut_m: int = 200, gpr_hyper=None,
             cv_folds: int = 5) -> EstimatorOutput:
    if sp.issparse(X):
        X = X.tocsr()
    if method == "TV":
        mu, info = tv_qut_estimate(X, y, D, alpha=alpha, m=qut_m, seed=seed)
        return EstimatorOutput("TV", mu, info)
    emp = empirical_estimate(X, y)
    if method == "empirical":
        return EstimatorOutput("empirical", emp)
    if method == "GPR":
        out, hyper = gpr_logodds(emp, lattice, cv_folds=cv_folds, seed=seed, hyper=gpr_hyper,
                                 return_params=True)
        return EstimatorOutput("GPR", out, {"hyper": hyper})
    raise ValueError(f"unknown estimator {method!r}; expected one of {METHODS}")
