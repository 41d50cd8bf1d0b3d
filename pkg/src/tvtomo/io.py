"""File formats: lattice JSON, map/metric CSVs, dataset export, PGM previews.

Every writer goes through a temporary file in the target directory followed by
an atomic rename, so interrupted runs never leave half-written artifacts.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .lattice import LatticeError, LatticeSpec
from .tracks import Dataset, TrackError

FLOAT_FMT = "{:.10g}"


def package_version() -> str:
    from . import __version__
    return __version__


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def provenance(config: dict, seed) -> dict:
    return {"config_hash": config_hash(config), "seed": seed, "version": package_version()}


def fmt(x) -> str:
    x = float(x)
    if np.isnan(x):
        return "nan"
    return FLOAT_FMT.format(x)


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_json(path, obj) -> Path:
    return atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def write_csv(path, header, rows) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return atomic_write_text(path, buf.getvalue())


# --------------------------------------------------------------------------- lattice


def lattice_to_dict(lattice: LatticeSpec) -> dict:
    d = {"n_rows": lattice.n_rows, "n_cols": lattice.n_cols}
    if not lattice.is_full:
        d["mask"] = lattice.mask.astype(int).tolist()
    return d


def lattice_from_dict(d: dict) -> LatticeSpec:
    try:
        n_rows, n_cols = int(d["n_rows"]), int(d["n_cols"])
    except KeyError as e:
        raise LatticeError(f"lattice JSON is missing {e.args[0]!r}") from None
    if "mask" in d:
        return LatticeSpec(n_rows, n_cols, np.asarray(d["mask"], dtype=bool))
    return LatticeSpec.full(n_rows, n_cols)


def write_lattice(path, lattice: LatticeSpec) -> Path:
    return write_json(path, lattice_to_dict(lattice))


def read_lattice(path) -> LatticeSpec:
    return lattice_from_dict(read_json(path))


# --------------------------------------------------------------------------- maps


def write_map_csv(path, values, lattice: LatticeSpec, extra: dict | None = None) -> Path:
    """row,col,value[,extra...] for every active cell in cell-id order."""
    coords = lattice.cell_coords()
    extra = extra or {}
    header = ["row", "col", "value", *extra]
    rows = (
        [int(r), int(c), float(values[k]), *(float(v[k]) for v in extra.values())]
        for k, (r, c) in enumerate(coords)
    )
    return write_csv(path, header, rows)


def read_map_csv(path, lattice: LatticeSpec) -> np.ndarray:
    idx = lattice.cell_index()
    out = np.full(lattice.p, np.nan)
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            k = idx[int(row["row"]), int(row["col"])]
            if k < 0:
                raise LatticeError(f"{path}: cell ({row['row']}, {row['col']}) is masked")
            out[k] = float(row["value"])
    return out


def write_pgm(path, values, lattice: LatticeSpec) -> Path:
    """Plain-text grayscale preview; masked and NaN cells are black."""
    grid = lattice.to_grid(np.asarray(values, dtype=float))
    finite = np.isfinite(grid)
    img = np.zeros(grid.shape, dtype=int)
    if finite.any():
        lo, hi = grid[finite].min(), grid[finite].max()
        scaled = np.zeros_like(grid) if hi == lo else (grid - lo) / (hi - lo)
        img[finite] = np.rint(1 + 254 * scaled[finite]).astype(int)
    lines = ["P2", f"{lattice.n_cols} {lattice.n_rows}", "255"]
    lines += [" ".join(map(str, r)) for r in img]
    return atomic_write_text(path, "\n".join(lines) + "\n")


# --------------------------------------------------------------------------- datasets


def write_dataset(directory, ds: Dataset, meta: dict | None = None) -> Path:
    """X.csv (dense, header = cell ids), y.csv, dataset.json sidecar."""
    d = Path(directory)
    X = ds.dense_X()
    write_csv(d / "X.csv", [f"c{j}" for j in range(X.shape[1])], X.tolist())
    write_csv(d / "y.csv", ["y"], [[int(v)] for v in ds.y])
    sidecar = {
        "lattice": lattice_to_dict(ds.lattice or LatticeSpec.full(1, X.shape[1])),
        "step_units": ds.step_units,
        "animal_ids": list(ds.animal_ids),
        "n": ds.n,
        "p": ds.p,
    }
    sidecar.update(meta or {})
    write_json(d / "dataset.json", sidecar)
    return d


def _read_numeric_csv(path) -> np.ndarray:
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as e:
        raise TrackError(f"{path}: {e}") from None
    return data


def read_dataset(directory) -> Dataset:
    d = Path(directory)
    for name in ("X.csv", "y.csv", "dataset.json"):
        if not (d / name).exists():
            raise TrackError(f"{d}: missing {name}")
    meta = read_json(d / "dataset.json")
    X = _read_numeric_csv(d / "X.csv")
    y = _read_numeric_csv(d / "y.csv").ravel()
    lattice = lattice_from_dict(meta["lattice"])
    return Dataset(sp.csr_matrix(X), y, [str(a) for a in meta.get("animal_ids", [])],
                   lattice, float(meta.get("step_units", 1.0)))
