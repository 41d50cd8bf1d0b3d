"""Masked 2-D lattices, 4-neighbour graphs and the TV difference operator."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class LatticeError(ValueError):
    pass


@dataclass(frozen=True)
class LatticeSpec:
    """Rectangular grid with a boolean activity mask (True = cell in the domain)."""

    n_rows: int
    n_cols: int
    mask: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.n_rows < 1 or self.n_cols < 1:
            raise LatticeError("lattice dimensions must be positive")
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != (self.n_rows, self.n_cols):
            raise LatticeError(
                f"mask shape {mask.shape} does not match ({self.n_rows}, {self.n_cols})"
            )
        if not mask.any():
            raise LatticeError("lattice mask has no active cell")
        mask = mask.copy()
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def full(cls, n_rows: int, n_cols: int | None = None) -> "LatticeSpec":
        n_cols = n_rows if n_cols is None else n_cols
        return cls(n_rows, n_cols, np.ones((n_rows, n_cols), dtype=bool))

    @property
    def p(self) -> int:
        return int(self.mask.sum())

    @property
    def is_full(self) -> bool:
        return bool(self.mask.all())

    def cell_index(self) -> np.ndarray:
        """(n_rows, n_cols) array of cell ids, -1 on masked cells. Row-major."""
        idx = np.full(self.mask.shape, -1, dtype=np.int64)
        idx[self.mask] = np.arange(self.p)
        return idx

    def cell_coords(self) -> np.ndarray:
        """(p, 2) array of (row, col) for each cell id."""
        return np.argwhere(self.mask)

    def to_grid(self, values, fill=np.nan) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.shape != (self.p,):
            raise LatticeError(f"expected {self.p} values, got shape {values.shape}")
        grid = np.full(self.mask.shape, fill, dtype=float)
        grid[self.mask] = values
        return grid

    def from_grid(self, grid) -> np.ndarray:
        grid = np.asarray(grid, dtype=float)
        if grid.shape != self.mask.shape:
            raise LatticeError(f"grid shape {grid.shape} != {self.mask.shape}")
        return grid[self.mask]


@dataclass(frozen=True)
class NeighborGraph:
    lattice: LatticeSpec
    pairs: np.ndarray  # (q, 2) int, first < second in cell id order

    @property
    def p(self) -> int:
        return self.lattice.p

    @property
    def q(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True)
class DifferenceOperator:
    """Sparse signed incidence matrix: row r is -1 at pairs[r, 0] and +1 at pairs[r, 1]."""

    graph: NeighborGraph
    matrix: sp.csr_matrix

    @property
    def q(self) -> int:
        return self.matrix.shape[0]

    @property
    def p(self) -> int:
        return self.matrix.shape[1]

    @property
    def pairs(self) -> np.ndarray:
        return self.graph.pairs

    def apply(self, mu) -> np.ndarray:
        return self.matrix @ np.asarray(mu, dtype=float)

    def adjoint(self, omega) -> np.ndarray:
        return self.matrix.T @ np.asarray(omega, dtype=float)

    def tv(self, mu) -> float:
        return float(np.abs(self.apply(mu)).sum())

    def laplacian(self) -> sp.csr_matrix:
        return (self.matrix.T @ self.matrix).tocsr()

    def __getstate__(self):
        # the cached LU factor is not picklable; workers rebuild it on demand
        state = self.__dict__.copy()
        state.pop("_grounded_lu", None)
        return state

    @cached_property
    def _grounded_lu(self):
        lap = self.laplacian().tocsc()
        return spla.splu(lap[1:, 1:].tocsc())

    def min_norm_preimage(self, r) -> np.ndarray:
        """Least-norm omega with D'omega = r (r must sum to zero)."""
        r = np.asarray(r, dtype=float)
        x = np.zeros(self.p)
        if self.p > 1:
            x[1:] = self._grounded_lu.solve(r[1:])
        return self.matrix @ x


def _components(p: int, pairs: np.ndarray) -> np.ndarray:
    adj = [[] for _ in range(p)]
    for a, b in pairs:
        adj[a].append(b)
        adj[b].append(a)
    label = np.full(p, -1, dtype=np.int64)
    n_comp = 0
    for start in range(p):
        if label[start] >= 0:
            continue
        label[start] = n_comp
        queue = deque([start])
        while queue:
            v = queue.popleft()
            for w in adj[v]:
                if label[w] < 0:
                    label[w] = n_comp
                    queue.append(w)
        n_comp += 1
    return label


def build_neighbor_graph(spec: LatticeSpec) -> NeighborGraph:
    """Enumerate every unordered north-south / east-west pair of active cells once.

    Raises LatticeError if the active cells do not form one connected component.
    """
    idx = spec.cell_index()
    mask = spec.mask
    east = mask[:, :-1] & mask[:, 1:]
    south = mask[:-1, :] & mask[1:, :]
    pairs = np.concatenate(
        [
            np.column_stack([idx[:, :-1][east], idx[:, 1:][east]]),
            np.column_stack([idx[:-1, :][south], idx[1:, :][south]]),
        ]
    ).astype(np.int64)
    # stable order: by first endpoint, then second
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    pairs = pairs[order]

    label = _components(spec.p, pairs)
    if label.max() > 0:
        coords = spec.cell_coords()
        a = coords[np.argmax(label == 0)]
        b = coords[np.argmax(label == 1)]
        raise LatticeError(
            f"active cells are disconnected: cell {tuple(int(v) for v in a)} "
            f"cannot reach cell {tuple(int(v) for v in b)}"
        )
    pairs.setflags(write=False)
    return NeighborGraph(spec, pairs)


def build_difference_operator(graph: NeighborGraph) -> DifferenceOperator:
    q, p = graph.q, graph.p
    rows = np.repeat(np.arange(q), 2)
    cols = graph.pairs.ravel()
    vals = np.tile([-1.0, 1.0], q)
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(q, p))
    return DifferenceOperator(graph, mat)


def difference_operator(spec: LatticeSpec) -> DifferenceOperator:
    return build_difference_operator(build_neighbor_graph(spec))


def downsample_map(values, n_from: int, n_to: int) -> np.ndarray:
    """Nearest-neighbour resampling of a full n_from x n_from map onto n_to x n_to.

    Each coarse cell takes the value of the fine cell containing its centre.
    Accepts a flat row-major vector or a 2-D grid; returns the same layout.
    """
    if n_to > n_from:
        raise LatticeError(f"cannot downsample from {n_from} to a finer grid {n_to}")
    if n_to < 1:
        raise LatticeError("target grid size must be positive")
    arr = np.asarray(values, dtype=float)
    flat = arr.ndim == 1
    grid = arr.reshape(n_from, n_from)
    src = coarse_to_fine_index(n_from, n_to)
    out = grid[np.ix_(src, src)]
    return out.ravel() if flat else out


def coarse_to_fine_index(n_fine: int, n_coarse: int) -> np.ndarray:
    """Fine-grid row index containing the centre of each coarse row."""
    centres = (np.arange(n_coarse) + 0.5) * n_fine / n_coarse
    return np.minimum(np.floor(centres).astype(np.int64), n_fine - 1)


def fine_to_coarse_index(n_fine: int, n_coarse: int) -> np.ndarray:
    """Coarse-grid row index containing the centre of each fine row."""
    centres = (np.arange(n_fine) + 0.5) * n_coarse / n_fine
    return np.minimum(np.floor(centres).astype(np.int64), n_coarse - 1)
