"""Synthetic benchmark: binary propensity profiles, herd random walks, infections.

A population of n0 individuals walks T steps on an N0 x N0 grid. At every step
the candidate moves are stay / north / south / east / west (off-grid candidates
removed). Half the population chooses uniformly; the other half gives weight 2
to candidates whose propensity strictly exceeds the current cell's.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from ._seeding import rng_for
from .lattice import LatticeSpec, fine_to_coarse_index
from .tracks import Dataset

PROFILES = ("lake", "river", "lake_corner")

# stay, north, south, west, east
_MOVES = np.array([[0, 0], [-1, 0], [1, 0], [0, -1], [0, 1]])


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ProfileMap:
    name: str
    grid: np.ndarray = field(repr=False)    # N0 x N0 values
    low: float
    high: float

    @property
    def n0(self) -> int:
        return self.grid.shape[0]

    @property
    def feature(self) -> np.ndarray:
        """Boolean N0 x N0 mask of the high-propensity region."""
        return self.grid > self.low if self.high > self.low else np.zeros_like(self.grid, bool)

    def with_levels(self, low: float, high: float) -> "ProfileMap":
        return make_profile(self.name, self.n0, low, high, allow_constant=low == high)

    def flat(self) -> np.ndarray:
        return self.grid.ravel()


def _feature_mask(name: str, n0: int) -> np.ndarray:
    centres = np.arange(n0) + 0.5
    r, c = np.meshgrid(centres, centres, indexing="ij")
    mid = n0 / 2
    disk = (r - mid) ** 2 + (c - mid) ** 2 <= (0.22 * n0) ** 2
    if name == "lake":
        return disk
    if name == "river":
        # band of width 0.12 n0 around the main diagonal (row == col)
        return np.abs(r - c) / np.sqrt(2) <= 0.06 * n0
    if name == "lake_corner":
        side = 0.2 * n0
        corner = (r < side) & (c > n0 - side)   # top-right block
        return disk | corner
    raise ValueError(f"unknown profile {name!r}; expected one of {PROFILES}")


def make_profile(name: str, n0: int = 50, low: float = 0.0, high: float = 1.0,
                 allow_constant: bool = False) -> ProfileMap:
    """Binary propensity map on an n0 x n0 grid.

    lake: disk of radius 0.22 n0 at the centre. river: diagonal band of width
    0.12 n0. lake_corner: the lake plus a 0.2 n0 square in the top-right corner.
    """
    if n0 < 10:
        raise ValueError("profiles need n0 >= 10")
    if high < low or (high == low and not allow_constant):
        raise ValueError("need high > low (pass allow_constant=True for a flat map)")
    grid = np.where(_feature_mask(name, n0), high, low).astype(float)
    grid.setflags(write=False)
    return ProfileMap(name, grid, float(low), float(high))


@dataclass
class PopulationData:
    L0: np.ndarray = field(repr=False)      # n0 x T cell ids (row-major on the N0 grid)
    herd: np.ndarray = field(repr=False)    # 0 = uniform mover, 1 = biased mover
    n_grid: int = 50
    X0: sp.csr_matrix | None = field(default=None, repr=False)
    y0: np.ndarray | None = field(default=None, repr=False)
    amplitude: tuple | None = None

    @property
    def n0(self) -> int:
        return self.L0.shape[0]

    @property
    def T(self) -> int:
        return self.L0.shape[1]

    def dwell_matrix(self) -> sp.csr_matrix:
        if self.X0 is None:
            self.X0 = occupancy_counts(self.L0, self.n_grid**2)
        return self.X0


def occupancy_counts(L, p: int, weight: float = 1.0) -> sp.csr_matrix:
    n, T = L.shape
    rows = np.repeat(np.arange(n), T)
    X = sp.csr_matrix((np.full(n * T, weight), (rows, L.ravel())), shape=(n, p))
    X.sum_duplicates()
    return X


def move_probabilities(grid: np.ndarray, r: int, c: int, biased: bool) -> np.ndarray:
    """Probabilities of (stay, N, S, W, E) from cell (r, c); zero for off-grid moves."""
    n = grid.shape[0]
    w = np.zeros(5)
    for k, (dr, dc) in enumerate(_MOVES):
        rr, cc = r + dr, c + dc
        if 0 <= rr < n and 0 <= cc < n:
            w[k] = 2.0 if biased and grid[rr, cc] > grid[r, c] else 1.0
    return w / w.sum()


def simulate_population(profile: ProfileMap, n0: int = 5000, T: int = 2880,
                        seed: int = 0) -> PopulationData:
    """Walk n0 individuals for T steps; the second half of the population is biased."""
    if n0 < 2 or n0 % 2:
        raise ValueError("n0 must be a positive even number (two equal herds)")
    if T < 1:
        raise ValueError("T must be >= 1")
    rng = rng_for(seed)
    n = profile.n0
    grid = profile.grid
    herd = np.repeat([0, 1], n0 // 2)
    biased = herd == 1
    r = rng.integers(0, n, n0)
    c = rng.integers(0, n, n0)
    L = np.empty((n0, T), dtype=np.int32)
    cand_r = np.empty((n0, 5), dtype=np.int64)
    cand_c = np.empty((n0, 5), dtype=np.int64)
    for t in range(T):
        cand_r[:] = r[:, None] + _MOVES[:, 0]
        cand_c[:] = c[:, None] + _MOVES[:, 1]
        valid = (cand_r >= 0) & (cand_r < n) & (cand_c >= 0) & (cand_c < n)
        dest = grid[np.clip(cand_r, 0, n - 1), np.clip(cand_c, 0, n - 1)]
        up = dest > grid[r, c][:, None]
        w = np.where(valid, np.where(up & biased[:, None], 2.0, 1.0), 0.0)
        cw = np.cumsum(w, axis=1)
        u = rng.random(n0) * cw[:, -1]
        k = (cw <= u[:, None]).sum(axis=1)
        r = cand_r[np.arange(n0), k]
        c = cand_c[np.arange(n0), k]
        L[:, t] = r * n + c
    return PopulationData(L, herd, n)


def _prevalence(d_feat, T, low, high):
    # eta_i = high * (time in feature) + low * (time outside)
    return float(np.mean(expit(high * d_feat + low * (T - d_feat))))


def generate_infections(pop: PopulationData, profile: ProfileMap, target_prevalence: float = 0.6,
                        seed: int = 0, baseline: str = "zero", tol: float = 0.01):
    """Calibrate the map amplitude to a target prevalence, then draw y0 from the GLM.

    ``baseline="zero"`` uses levels (0, b); ``baseline="symmetric"`` uses (-a, a).
    The amplitude is found by bisection on mean(sigmoid(X0 mu0)). Returns
    (y0, (low, high)) and stores both on ``pop``.
    """
    if not 0.05 < target_prevalence < 0.95:
        raise ValueError("target prevalence must lie in (0.05, 0.95)")
    feat = profile.feature.ravel()
    d_feat = feat[pop.L0].sum(axis=1).astype(float)   # steps spent in the feature
    T = pop.T

    def levels(a):
        return (0.0, a) if baseline == "zero" else (-a, a)

    if baseline not in ("zero", "symmetric"):
        raise ValueError(f"unknown baseline {baseline!r}")

    f0 = _prevalence(d_feat, T, *levels(0.0))
    if abs(f0 - target_prevalence) <= tol:
        a = 0.0
    else:
        lo, hi = 0.0, 1.0 / T
        g = lambda a: _prevalence(d_feat, T, *levels(a)) - target_prevalence  # noqa: E731
        sign0 = np.sign(g(0.0))
        for _ in range(60):
            if np.sign(g(hi)) != sign0:
                break
            lo, hi = hi, hi * 2
        else:
            raise CalibrationError(
                f"prevalence {target_prevalence} unreachable: achieved "
                f"[{_prevalence(d_feat, T, *levels(0.0)):.3f}, "
                f"{_prevalence(d_feat, T, *levels(hi)):.3f}] over amplitudes [0, {hi:.3g}]"
            )
        for _ in range(200):
            a = 0.5 * (lo + hi)
            ga = g(a)
            if abs(ga) <= tol / 4:
                break
            if np.sign(ga) == sign0:
                lo = a
            else:
                hi = a
    low, high = levels(a)
    eta = high * d_feat + low * (T - d_feat)
    rng = rng_for(seed, 1)
    y0 = (rng.random(pop.n0) < expit(eta)).astype(float)
    pop.y0 = y0
    pop.amplitude = (low, high)
    return y0, (low, high)


def subsample_dataset(pop: PopulationData, n: int, N: int, t: int, seed: int = 0,
                      lattice: LatticeSpec | None = None) -> Dataset:
    """Tracer subsample: n individuals (balanced over herds), N x N grid, every t-th fix.

    Keeps floor(T/t) fixes per track (columns 0, t, 2t, ...); each fix is worth t
    units of dwell, so row sums lie in [T - t + 1, T].
    """
    if pop.y0 is None:
        raise ValueError("generate infections before subsampling")
    if not 1 <= n <= pop.n0:
        raise ValueError(f"n={n} must lie in [1, {pop.n0}]")
    if not 1 <= N <= pop.n_grid:
        raise ValueError(f"N={N} must lie in [1, {pop.n_grid}]")
    if not 1 <= t <= pop.T:
        raise ValueError(f"t={t} must lie in [1, {pop.T}]")
    rng = rng_for(seed, 2)
    if n == pop.n0:
        rows = np.arange(pop.n0)
    else:
        herds = [np.flatnonzero(pop.herd == h) for h in (0, 1)]
        take = [n - n // 2, n // 2]
        rows = np.sort(np.concatenate(
            [rng.choice(h, k, replace=False) for h, k in zip(herds, take)]
        ))
    cols = np.arange(pop.T // t) * t
    L = pop.L0[np.ix_(rows, cols)]
    n0g = pop.n_grid
    f2c = fine_to_coarse_index(n0g, N)
    coarse = f2c[L // n0g] * N + f2c[L % n0g]
    X = occupancy_counts(coarse, N * N, weight=float(t))
    lattice = lattice or LatticeSpec.full(N)
    return Dataset(X, pop.y0[rows], [str(i) for i in rows], lattice, float(t))


@dataclass
class Scenario:
    """One Monte Carlo cell: truth profile, population size/length and tracer design."""

    profile: str = "lake"
    n0: int = 5000
    T: int = 2880
    n: int = 500
    N: int = 30
    t: int = 96
    target_prevalence: float = 0.6
    seed: int = 0
    baseline: str = "zero"
    N0: int = 50

    def truth(self) -> ProfileMap:
        return make_profile(self.profile, self.N0)

    def run_seed(self, run: int) -> list:
        return [int(self.seed), int(run)]


def simulate_scenario(scenario: Scenario, run: int = 0):
    """Fresh population, infections and tracer subsample for Monte Carlo run ``run``."""
    profile = scenario.truth()
    seed = scenario.run_seed(run)
    pop = simulate_population(profile, scenario.n0, scenario.T, seed=seed)
    generate_infections(pop, profile, scenario.target_prevalence, seed=seed,
                        baseline=scenario.baseline)
    ds = subsample_dataset(pop, scenario.n, scenario.N, scenario.t, seed=seed)
    return ds, profile, pop
