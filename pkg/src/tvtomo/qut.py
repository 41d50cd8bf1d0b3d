"""Zero-thresholding function, quantile universal threshold and tests of a constant map.

lambda_0(y, X) is the smallest penalty at which the TV estimate collapses to the
constant map beta0_hat * 1. It solves

    min ||omega||_inf   s.t.  D' omega = u,   u = X'(y - sigmoid(beta0_hat X 1)).

Two routes are provided. ``method="lp"`` solves the linear program in (omega, lam)
with HiGHS. ``method="flow"`` uses that the problem is a minimum-congestion flow on
the lattice graph: lambda_0 = max_S u(S) / cut(S) over cell sets S, found by
parametric min-cut (Dinkelbach iterations on integer max-flow), after which the
final flow gives omega. Both return the polished certificate omega.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy import stats
from scipy.optimize import linprog
from scipy.sparse.csgraph import breadth_first_order, maximum_flow
from scipy.special import expit

from ._seeding import rng_for
from .lattice import DifferenceOperator
from .model import (
    DegenerateResponseError,
    as_design,
    check_binary,
    fit_intercept,
    fit_logistic_mle,
    negloglik_from_eta,
    null_residual,
    require_both_classes,
)

log = logging.getLogger(__name__)

_FLOW_SCALE = 2**30  # scipy's max-flow stores capacities as int32


class LambdaZeroError(RuntimeError):
    """The LP was infeasible: broken first-order condition or disconnected lattice."""


@dataclass
class LambdaZeroResult:
    lambda0: float
    omega: np.ndarray = field(repr=False)
    feasible: bool
    beta0: float = float("nan")
    lower_bound: float = float("nan")   # best cut ratio u(S)/cut(S) (flow route)
    method: str = "lp"


@dataclass
class QutResult:
    lambda_qut: float
    alpha: float
    samples: np.ndarray = field(repr=False)
    seed: int
    beta0: float
    discards: int = 0

    @property
    def m(self) -> int:
        return len(self.samples)


@dataclass
class TestReport:
    statistic: float
    threshold: float
    reject: bool
    method: str
    alpha: float
    m: int | None = None
    seed: int | None = None
    discards: int = 0
    separated: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["reject"] = bool(d["reject"])
        return d


def upper_quantile(samples, alpha: float) -> float:
    """k-th smallest of m values with k = ceil((1 - alpha) m)."""
    xs = np.sort(np.asarray(samples, dtype=float))
    m = len(xs)
    k = math.ceil((1 - alpha) * m - 1e-9)
    k = min(max(k, 1), m)
    return float(xs[k - 1])


# --------------------------------------------------------------------------- lambda_0


def _lambda0_lp(u, D: DifferenceOperator):
    q, p = D.q, D.p
    scale = float(np.max(np.abs(u)))
    un = u / scale
    # one equality row is redundant on a connected lattice (columns of D sum to 0)
    A_eq = sp.hstack([D.matrix.T, sp.csr_matrix((p, 1))]).tocsr()[:-1]
    eye = sp.identity(q, format="csr")
    ones = sp.csr_matrix(np.ones((q, 1)))
    A_ub = sp.vstack([sp.hstack([eye, -ones]), sp.hstack([-eye, -ones])]).tocsr()
    c = np.zeros(q + 1)
    c[-1] = 1.0
    res = linprog(
        c,
        A_ub=A_ub,
        b_ub=np.zeros(2 * q),
        A_eq=A_eq,
        b_eq=un[:-1],
        bounds=[(None, None)] * q + [(0, None)],
        method="highs",
    )
    if res.status != 0:
        raise LambdaZeroError(f"lambda_0 LP failed: {res.message}")
    return res.x[:q] * scale, float(res.x[-1]) * scale


def _cut_ratio(u, pairs, S):
    cut = int(np.count_nonzero(S[pairs[:, 0]] != S[pairs[:, 1]]))
    return float(u[S].sum()), cut


class _FlowNetwork:
    """Arc pattern of the lattice flow problem, fixed for one residual vector u.

    Capacities change between Dinkelbach iterations but the pattern does not,
    so it is assembled once. scipy returns the flow on the symmetric pattern
    G + G', which is also the pattern of the residual graph.
    """

    def __init__(self, pairs, p, sup, dem):
        self.p = p
        self.src, self.snk = p, p + 1
        q = len(pairs)
        rows = np.r_[pairs[:, 0], pairs[:, 1], np.full(len(sup), self.src), dem]
        cols = np.r_[pairs[:, 1], pairs[:, 0], sup, np.full(len(dem), self.snk)]
        n_arcs = len(rows)
        shape = (p + 2, p + 2)
        tag = sp.csr_matrix((np.arange(1, n_arcs + 1, dtype=float), (rows, cols)), shape=shape)
        sym = (tag + sp.csr_matrix((np.full(n_arcs, 0.5), (cols, rows)), shape=shape)).tocsr()
        sym.sort_indices()
        self.indptr, self.indices = sym.indptr, sym.indices
        arc = np.floor(sym.data).astype(np.int64) - 1      # -1 on reverse-only entries
        self.arc = arc
        tag.sort_indices()
        self.g_indptr, self.g_indices = tag.indptr, tag.indices
        self.g_arc = tag.data.astype(np.int64) - 1
        self.row_of = np.repeat(np.arange(p + 2), np.diff(self.indptr))
        self.shape = shape
        # position of each forward pair arc inside the symmetric pattern
        pos = np.full(n_arcs, -1)
        pos[arc[arc >= 0]] = np.flatnonzero(arc >= 0)
        self.pair_pos = pos[:q]
        self.q = q

    def solve(self, caps):
        """Max flow with per-arc capacities; returns (flow on sym pattern, source side)."""
        G = sp.csr_matrix((caps[self.g_arc].astype(np.int32), self.g_indices, self.g_indptr),
                          shape=self.shape)
        F = maximum_flow(G, self.src, self.snk, method="dinic").flow
        if not (np.array_equal(F.indptr, self.indptr) and np.array_equal(F.indices, self.indices)):
            F = F.tocsr()
            F.sort_indices()
            F = sp.csr_matrix((np.asarray(F[self.row_of, self.indices]).ravel(),
                               self.indices, self.indptr), shape=self.shape)
        cap_sym = np.where(self.arc >= 0, caps[np.maximum(self.arc, 0)], 0)
        resid = cap_sym - F.data.astype(np.int64)
        keep = (resid > 0) & (self.row_of != self.snk)
        # eliminate_zeros compacts in place, so R must not share the cached pattern
        R = sp.csr_matrix((keep.astype(np.int8), self.indices.copy(), self.indptr.copy()),
                          shape=self.shape)
        R.eliminate_zeros()
        reach = breadth_first_order(R, self.src, directed=True, return_predecessors=False)
        S = np.zeros(self.p + 2, dtype=bool)
        S[reach] = True
        return F.data, S[: self.p]


def _lambda0_flow(u, D: DifferenceOperator):
    pairs = np.asarray(D.pairs)
    p, q = D.p, D.q
    total = float(np.clip(u, 0, None).sum())
    un = u / total
    K = float(_FLOW_SCALE)
    sup_cap = np.floor(np.clip(un, 0, None) * K).astype(np.int64)
    dem_cap = np.floor(np.clip(-un, 0, None) * K).astype(np.int64)
    sup = np.flatnonzero(sup_cap)
    dem = np.flatnonzero(dem_cap)
    net = _FlowNetwork(pairs, p, sup, dem)

    # start from the cut separating positive entries
    S = un > 0
    num, cut = _cut_ratio(un, pairs, S)
    lam = num / cut if cut else 0.0
    flow = None
    for _ in range(100):
        cap = max(min(int(math.ceil(lam * K)), _FLOW_SCALE), 1)
        caps = np.r_[np.full(2 * q, cap, dtype=np.int64), sup_cap[sup], dem_cap[dem]]
        flow, S = net.solve(caps)
        num, cut = _cut_ratio(un, pairs, S)
        if cut == 0 or num - lam * cut <= 1e-12:
            break
        new = num / cut
        if new <= lam * (1 + 1e-13):
            break
        lam = new

    # omega_j = -(net flow from pairs[j,0] to pairs[j,1])
    omega = -flow[net.pair_pos].astype(float) / K
    return omega * total, lam * total


def lambda_zero(X, y, D: DifferenceOperator, method: str = "lp", beta0=None) -> LambdaZeroResult:
    """Smallest lambda for which the TV estimate is the constant map."""
    X = as_design(X)
    y = check_binary(y)
    require_both_classes(y)
    u, beta0 = null_residual(X, y, beta0)
    # rounding in u is relative to the total dwell entering X'(y - p)
    atol = 1e-10 * float(abs(X).sum())
    return lambda_zero_from_u(u, D, method=method, beta0=beta0, atol=atol)


def lambda_zero_from_u(u, D: DifferenceOperator, method: str = "lp", beta0=float("nan"),
                       atol: float = 0.0):
    """lambda_0 for a given null residual u; |1'u| <= atol is treated as rounding."""
    u = np.asarray(u, dtype=float)
    if len(u) != D.p:
        raise ValueError(f"u has length {len(u)}, lattice has {D.p} cells")
    total = float(u.sum())
    if abs(total) > 1e-6 * np.abs(u).sum() and abs(total) > atol:
        raise LambdaZeroError(
            f"1'u = {total:.3g} is not zero: the intercept first-order condition failed"
        )
    if len(u):
        u = u - total / len(u)
    scale = float(np.max(np.abs(u))) if len(u) else 0.0
    if D.q == 0 or scale <= atol:
        return LambdaZeroResult(0.0, np.zeros(D.q), True, beta0, 0.0, method)
    lower = float("nan")
    if method == "lp":
        omega, _ = _lambda0_lp(u, D)
    elif method == "flow":
        omega, lower = _lambda0_flow(u, D)
    else:
        raise ValueError(f"unknown method {method!r}")
    # polish: remove the equality residual with a least-norm correction
    r = u - D.adjoint(omega)
    r -= r.mean()
    omega = omega + D.min_norm_preimage(r)
    lam0 = float(np.max(np.abs(omega)))
    if method == "flow" and lam0 > lower * (1 + 1e-5) + 1e-12 * scale:
        log.debug("flow bracket [%g, %g] loose; falling back to LP", lower, lam0)
        return lambda_zero_from_u(u, D, method="lp", beta0=beta0, atol=atol)
    return LambdaZeroResult(lam0, omega, True, beta0, lower, method)


# --------------------------------------------------------------------------- QUT


def _draw_seed(seed, j):
    return rng_for(seed, j)


def _null_draws(s, beta0, m, seed, budget_factor=10):
    """m non-degenerate Bernoulli(sigmoid(beta0 * s)) vectors; per-draw seeds (seed, j)."""
    prob = expit(beta0 * s)
    out = []
    discards = 0
    j = 0
    while len(out) < m:
        if j >= budget_factor * m:
            raise DegenerateResponseError(
                f"only {len(out)} of {m} null draws had both classes after {j} attempts; "
                f"beta0={beta0:.4g} is too extreme for these dwell totals"
            )
        yj = (_draw_seed(seed, j).random(len(s)) < prob).astype(float)
        j += 1
        if yj.min() == yj.max():
            discards += 1
            continue
        out.append(yj)
    return out, discards


def _lambda0_batch(args):
    X, D, ys, method = args
    return [lambda_zero(X, yj, D, method=method).lambda0 for yj in ys]


def _map_chunks(fn, X, D, ys, method, workers):
    if workers <= 1 or len(ys) < 2 * workers:
        return fn((X, D, ys, method))
    chunks = np.array_split(np.arange(len(ys)), workers)
    tasks = [(X, D, [ys[i] for i in c], method) for c in chunks]
    with ProcessPoolExecutor(workers) as ex:
        parts = list(ex.map(fn, tasks))
    return [v for part in parts for v in part]


def qut_estimate(X, D: DifferenceOperator, alpha: float = 0.05, m: int = 200, seed: int = 0,
                 beta0=None, y=None, method: str = "flow", workers: int = 1) -> QutResult:
    """Monte Carlo quantile universal threshold.

    Simulates m null responses from Bernoulli(sigmoid(beta0 X 1)) and returns the
    ceil((1 - alpha) m)-th smallest lambda_0. ``beta0`` defaults to the intercept
    MLE of the observed ``y``.
    """
    if m < 50:
        raise ValueError("m must be at least 50")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    X = as_design(X)
    if beta0 is None:
        if y is None:
            raise ValueError("give either beta0 or the observed y")
        beta0 = fit_intercept(X, y)
    s = np.asarray(X.sum(axis=1)).ravel()
    ys, discards = _null_draws(s, beta0, m, seed)
    lam = _map_chunks(_lambda0_batch, X, D, ys, method, workers)
    samples = np.sort(np.asarray(lam))
    return QutResult(upper_quantile(samples, alpha), alpha, samples, seed, float(beta0), discards)


def tv_test(X, y, D: DifferenceOperator, alpha: float = 0.05, m: int = 200, seed: int = 0,
            method: str = "flow", workers: int = 1) -> TestReport:
    """Reject the constant-map null when lambda_0(y, X) >= lambda_QUT."""
    X = as_design(X)
    y = check_binary(y)
    require_both_classes(y)
    stat = lambda_zero(X, y, D, method=method)
    qut = qut_estimate(X, D, alpha=alpha, m=m, seed=seed, beta0=stat.beta0,
                       method=method, workers=workers)
    return TestReport(stat.lambda0, qut.lambda_qut, bool(stat.lambda0 >= qut.lambda_qut),
                      "TV", alpha, m, seed, qut.discards)


# --------------------------------------------------------------------------- LRT


def lr_statistic(X, y):
    """2 [h(beta0_hat 1) - h(mu_mle)], clipped at zero, plus a separation flag."""
    X = as_design(X)
    beta0 = fit_intercept(X, y)
    s = np.asarray(X.sum(axis=1)).ravel()
    h0 = negloglik_from_eta(beta0 * s, y)
    _, h1, _, separated = fit_logistic_mle(X, y)
    return max(2.0 * (h0 - h1), 0.0), separated, beta0


def lrt(X, y, mode: str = "exact", alpha: float = 0.05, m: int = 200, seed: int = 0) -> TestReport:
    """Likelihood-ratio test of a constant map against a free map (needs n >= p)."""
    X = as_design(X)
    y = check_binary(y)
    n, p = X.shape
    if n < p:
        raise ValueError(
            f"likelihood-ratio test needs n >= p (got n={n}, p={p}); use tv_test instead"
        )
    require_both_classes(y)
    stat, separated, beta0 = lr_statistic(X, y)
    if separated:
        log.info("MLE diverges (separation); statistic is its supremum %.4g", stat)
    if mode == "chi2":
        thr = float(stats.chi2.ppf(1 - alpha, p - 1))
        return TestReport(stat, thr, bool(stat >= thr), "LRT_chi2", alpha, None, None, 0, separated)
    if mode != "exact":
        raise ValueError(f"unknown LRT mode {mode!r}")
    s = np.asarray(X.sum(axis=1)).ravel()
    ys, discards = _null_draws(s, beta0, m, seed)
    null = [lr_statistic(X, yj)[0] for yj in ys]
    thr = upper_quantile(null, alpha)
    return TestReport(stat, thr, bool(stat >= thr), "LRT_exact", alpha, m, seed, discards, separated)
