"""Binomial GLM with logit link: negative log-likelihood, gradient, intercept MLE."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import expit, logit


class DegenerateResponseError(ValueError):
    """All responses are equal, so the constant-map MLE sits at +/- infinity."""


@dataclass(frozen=True)
class Link:
    forward: callable
    inverse: callable


LOGIT = Link(forward=logit, inverse=expit)


@dataclass
class FitConfig:
    tol: float = 1e-9          # relative duality-gap target
    tol_kkt: float = 1e-6      # absolute bound on the KKT certificate residual
    max_iter: int = 200
    seed: int = 0

    def __post_init__(self):
        if not self.tol > 0 or not self.tol_kkt > 0:
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


def as_design(X):
    """Return X as float CSR if sparse, else float ndarray."""
    if sp.issparse(X):
        return sp.csr_matrix(X, dtype=float)
    return np.asarray(X, dtype=float)


def check_binary(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or not np.all((y == 0) | (y == 1)):
        raise ValueError("y must be a 1-D vector of 0/1 values")
    return y


def require_both_classes(y):
    if y.min() == y.max():
        raise DegenerateResponseError(
            f"all {len(y)} responses equal {int(y[0])}; need at least one 0 and one 1"
        )


def _finite(name, a):
    data = a.data if sp.issparse(a) else a
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{name} contains non-finite entries")


def softplus(z):
    """log(1 + exp(z)) without overflow."""
    return np.logaddexp(0.0, z)


def negloglik_from_eta(eta, y) -> float:
    # y log(1+e^-eta) + (1-y) log(1+e^eta) = softplus(eta) - y*eta
    return float(np.sum(softplus(eta) - y * eta))


def negloglik(X, y, mu) -> float:
    X = as_design(X)
    y = check_binary(y)
    return negloglik_from_eta(X @ np.asarray(mu, dtype=float), y)


def negloglik_and_grad(X, y, mu):
    """Return (h, grad) with h = -log L and grad = X^T (sigmoid(X mu) - y)."""
    X = as_design(X)
    y = check_binary(y)
    mu = np.asarray(mu, dtype=float)
    _finite("X", X)
    _finite("mu", mu)
    if X.shape != (len(y), len(mu)):
        raise ValueError(f"shape mismatch: X {X.shape}, y {len(y)}, mu {len(mu)}")
    eta = X @ mu
    h = negloglik_from_eta(eta, y)
    g = X.T @ (expit(eta) - y)
    return h, np.asarray(g).ravel()


def fit_intercept(X, y, tol: float = 1e-13, max_iter: int = 200) -> float:
    """Constant-map MLE: minimise beta -> h(beta * 1).

    The 1-D problem depends on X only through the row sums s = X 1.
    Safeguarded Newton inside a shrinking bracket, bisection when a step leaves it.
    """
    X = as_design(X)
    y = check_binary(y)
    require_both_classes(y)
    s = np.asarray(X.sum(axis=1)).ravel()
    if np.any(s <= 0):
        raise ValueError("every row of X needs positive total dwell")
    return _intercept_from_rowsums(s, y, tol=tol, max_iter=max_iter)


def _intercept_from_rowsums(s, y, tol=1e-13, max_iter=200) -> float:
    def score(b):
        return float(s @ (expit(b * s) - y))  # increasing in b

    ybar = y.mean()
    b = logit(ybar) / np.mean(s)
    # bracket the root of the score
    lo, hi = b, b
    step = max(abs(b), 1.0 / np.max(s))
    while score(lo) > 0:
        lo -= step
        step *= 2
    step = max(abs(b), 1.0 / np.max(s))
    while score(hi) < 0:
        hi += step
        step *= 2
    scale = float(np.sum(s))
    for _ in range(max_iter):
        g = score(b)
        if abs(g) <= tol * scale:
            break
        if g > 0:
            hi = b
        else:
            lo = b
        pr = expit(b * s)
        curv = float(np.sum(s * s * pr * (1 - pr)))
        nb = b - g / curv if curv > 0 else 0.5 * (lo + hi)
        if not lo < nb < hi:
            nb = 0.5 * (lo + hi)
        if nb == b or hi - lo <= 4 * np.finfo(float).eps * max(abs(lo), abs(hi)):
            b = nb
            break
        b = nb
    return float(b)


def null_residual(X, y, beta0=None):
    """u = X^T (y - sigmoid(beta0 * X 1)); beta0 defaults to the intercept MLE."""
    X = as_design(X)
    y = check_binary(y)
    if beta0 is None:
        beta0 = fit_intercept(X, y)
    s = np.asarray(X.sum(axis=1)).ravel()
    return np.asarray(X.T @ (y - expit(beta0 * s))).ravel(), beta0


def fit_logistic_mle(X, y, tol: float = 1e-10, max_iter: int = 100):
    """Unpenalised logistic MLE by damped Newton.

    Returns (mu, h, converged, separated). ``separated`` flags divergence of the
    MLE (complete or quasi-complete separation): h heads to a floor while the
    coefficients blow up.
    """
    X = as_design(X)
    y = check_binary(y)
    dense = X.toarray() if sp.issparse(X) else X
    n, p = dense.shape
    # the constant map beta0_hat * 1 lies in the model; start there
    mu = np.full(p, _intercept_from_rowsums(dense.sum(axis=1), y)) if 0 < y.sum() < n else np.zeros(p)
    h, g = negloglik_and_grad(dense, y, mu)
    converged = False
    for _ in range(max_iter):
        if h <= 1e-9 * max(n, 1):
            break   # complete separation: the likelihood is saturated
        eta = dense @ mu
        w = expit(eta) * expit(-eta)
        H = dense.T @ (w[:, None] * dense)
        H[np.diag_indices(p)] += 1e-12 * max(1.0, np.trace(H) / p)
        try:
            step = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, -g, rcond=None)[0]
        dec = -g @ step
        if dec / 2 <= tol * max(1.0, h):
            converged = True
            break
        t = 1.0
        while True:
            mu_new = mu + t * step
            h_new = negloglik(dense, y, mu_new)
            if h_new <= h - 0.25 * t * dec or t < 1e-10:
                break
            t *= 0.5
        if h_new > h:
            break
        mu = mu_new
        h, g = negloglik_and_grad(dense, y, mu)
    big = np.max(np.abs(dense @ mu)) if n else 0.0
    # a saturated likelihood is only reachable with diverging coefficients
    separated = (not converged and big > 30) or h <= 1e-6 * n
    return mu, h, converged, separated
