"""GPS tracks and serology records -> dwell-time matrix X and binary outcomes y.

Coordinates must already be projected to planar metres. One regular sampling
interval of 15 minutes is the dwell unit (1.0).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone

import numpy as np
import scipy.sparse as sp

from .lattice import LatticeSpec

UNIT = timedelta(minutes=15)
SEROTYPES = ("EHDV-1", "EHDV-2", "EHDV-6")


class TrackError(ValueError):
    pass


@dataclass(frozen=True)
class TrackPoint:
    animal_id: str
    timestamp: datetime
    x: float
    y: float


@dataclass(frozen=True)
class SerologyRecord:
    animal_id: str
    serotype: str
    titer_start: float
    titer_end: float | None
    baseline_positive: bool = False

    def __post_init__(self):
        if self.serotype not in SEROTYPES:
            raise TrackError(f"unknown serotype {self.serotype!r}; expected one of {SEROTYPES}")
        if self.titer_start < 0 or (self.titer_end is not None and self.titer_end < 0):
            raise TrackError(f"negative titer for {self.animal_id}")


@dataclass
class GridGeometry:
    """Placement of a lattice in projected coordinates: origin is the lower-left corner."""

    x0: float
    y0: float
    cell_size: float

    def cell_of(self, x, y, lattice: LatticeSpec):
        col = np.floor((np.asarray(x) - self.x0) / self.cell_size).astype(np.int64)
        row_from_bottom = np.floor((np.asarray(y) - self.y0) / self.cell_size).astype(np.int64)
        row = lattice.n_rows - 1 - row_from_bottom
        return row, col


@dataclass
class Dataset:
    X: np.ndarray | sp.csr_matrix
    y: np.ndarray
    animal_ids: list = field(default_factory=list)
    lattice: LatticeSpec | None = None
    step_units: float = 1.0

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        n = self.X.shape[0]
        if len(self.y) != n:
            raise TrackError(f"X has {n} rows but y has {len(self.y)} entries")
        if not self.animal_ids:
            self.animal_ids = [str(i) for i in range(n)]
        if self.lattice is not None and self.X.shape[1] != self.lattice.p:
            raise TrackError(f"X has {self.X.shape[1]} columns, lattice has {self.lattice.p}")
        rows = np.asarray(self.X.sum(axis=1)).ravel()
        if np.any(rows <= 0):
            bad = int(np.flatnonzero(rows <= 0)[0])
            raise TrackError(f"animal {self.animal_ids[bad]} has no dwell time on the lattice")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def dense_X(self) -> np.ndarray:
        return self.X.toarray() if sp.issparse(self.X) else np.asarray(self.X)


def _parse_time(s: str) -> datetime:
    ts = datetime.fromisoformat(s.strip().replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def interpolate_track(points, step: timedelta = UNIT, max_gap: timedelta | None = None):
    """Resample one animal's track onto a regular time grid by linear interpolation.

    The grid starts at the first fix. Grid instants that fall strictly inside an
    observation gap longer than ``max_gap`` (default 16 steps) are dropped.
    """
    points = list(points)
    if len(points) < 2:
        raise TrackError("a track needs at least two fixes to interpolate")
    if step <= timedelta(0):
        raise TrackError("step must be positive")
    if max_gap is None:
        max_gap = 16 * step
    for p0, p1 in zip(points, points[1:]):
        if p1.timestamp <= p0.timestamp:
            raise TrackError(
                f"timestamps not increasing for {p0.animal_id}: "
                f"{p0.timestamp.isoformat()} then {p1.timestamp.isoformat()}"
            )
    t0 = points[0].timestamp
    secs = np.array([(p.timestamp - t0).total_seconds() for p in points])
    xs = np.array([p.x for p in points], dtype=float)
    ys = np.array([p.y for p in points], dtype=float)
    dt = step.total_seconds()
    grid = np.arange(0.0, secs[-1] + 1e-9, dt)

    seg = np.clip(np.searchsorted(secs, grid, side="right") - 1, 0, len(secs) - 2)
    gap = secs[seg + 1] - secs[seg]
    on_fix = np.isclose(grid, secs[seg]) | np.isclose(grid, secs[seg + 1])
    keep = (gap <= max_gap.total_seconds()) | on_fix
    # grid points sitting exactly on the far fix of a long gap are kept via on_fix
    gx = np.interp(grid, secs, xs)
    gy = np.interp(grid, secs, ys)
    aid = points[0].animal_id
    return [
        TrackPoint(aid, t0 + timedelta(seconds=float(g)), float(a), float(b))
        for g, a, b, k in zip(grid, gx, gy, keep)
        if k
    ]


def build_time_matrix(tracks: dict, lattice: LatticeSpec, geometry: GridGeometry,
                      step: timedelta = UNIT):
    """Dwell matrix: each interpolated fix adds one step of time to its cell.

    ``tracks`` maps animal id -> list of interpolated TrackPoints. Returns
    (ids, X) with X dense, n x p, in units of 15 minutes.
    """
    units = step / UNIT
    idx = lattice.cell_index()
    ids = list(tracks)
    X = np.zeros((len(ids), lattice.p))
    for i, aid in enumerate(ids):
        pts = tracks[aid]
        if not pts:
            continue
        row, col = geometry.cell_of([p.x for p in pts], [p.y for p in pts], lattice)
        inside = (row >= 0) & (row < lattice.n_rows) & (col >= 0) & (col < lattice.n_cols)
        cell = np.full(len(pts), -1)
        cell[inside] = idx[row[inside], col[inside]]
        if np.any(cell < 0):
            k = int(np.flatnonzero(cell < 0)[0])
            raise TrackError(
                f"fix of animal {aid} at {pts[k].timestamp.isoformat()} lies outside the "
                f"active lattice (check the projection)"
            )
        X[i] = np.bincount(cell, minlength=lattice.p) * units
    return ids, X


def derive_outcomes(records, serotype: str | None = None):
    """Binary infection indicator per animal: titer rose strictly over the season.

    Animals seropositive at baseline or missing an end titer are dropped.
    Returns (kept ids, y).
    """
    seen = set()
    ids, y = [], []
    for r in records:
        if serotype is not None and r.serotype != serotype:
            continue
        key = (r.animal_id, r.serotype)
        if key in seen:
            raise TrackError(f"duplicate serology record for {key}")
        seen.add(key)
        if r.baseline_positive or r.titer_end is None:
            continue
        ids.append(r.animal_id)
        y.append(1.0 if r.titer_end > r.titer_start else 0.0)
    return ids, np.asarray(y, dtype=float)


# --------------------------------------------------------------------------- CSV


def read_tracks_csv(path) -> dict:
    """animal_id,timestamp,x,y -> {animal_id: [TrackPoint, ...]} sorted by time."""
    out: dict = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"animal_id", "timestamp", "x", "y"} - set(reader.fieldnames or [])
        if missing:
            raise TrackError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            p = TrackPoint(row["animal_id"], _parse_time(row["timestamp"]),
                           float(row["x"]), float(row["y"]))
            out.setdefault(p.animal_id, []).append(p)
    for aid, pts in out.items():
        pts.sort(key=lambda p: p.timestamp)
        # drop exact duplicate fixes
        dedup = [pts[0]]
        for p in pts[1:]:
            if p.timestamp != dedup[-1].timestamp:
                dedup.append(p)
        out[aid] = dedup
    return out


def _as_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "t", "y"):
        return True
    if v in ("0", "false", "no", "f", "n", ""):
        return False
    raise TrackError(f"cannot read {s!r} as a boolean")


def read_serology_csv(path) -> list:
    recs = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"animal_id", "serotype", "titer_start", "titer_end", "baseline_positive"}
        missing = need - set(reader.fieldnames or [])
        if missing:
            raise TrackError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            end = row["titer_end"].strip()
            recs.append(
                SerologyRecord(
                    row["animal_id"],
                    row["serotype"].strip(),
                    float(row["titer_start"]),
                    None if end in ("", "NA", "nan") else float(end),
                    _as_bool(row["baseline_positive"]),
                )
            )
    return recs


def dataset_from_files(tracks_csv, serology_csv, serotype: str, lattice: LatticeSpec,
                       geometry: GridGeometry, step: timedelta = UNIT,
                       max_gap: timedelta | None = None) -> Dataset:
    tracks = read_tracks_csv(tracks_csv)
    ids, y = derive_outcomes(read_serology_csv(serology_csv), serotype)
    keep = [(aid, yi) for aid, yi in zip(ids, y) if aid in tracks]
    if not keep:
        raise TrackError(f"no animal has both a track and a {serotype} outcome")
    interp = {aid: interpolate_track(tracks[aid], step, max_gap) for aid, _ in keep}
    ids, X = build_time_matrix(interp, lattice, geometry, step)
    return Dataset(X, np.array([yi for _, yi in keep]), ids, lattice, step / UNIT)
