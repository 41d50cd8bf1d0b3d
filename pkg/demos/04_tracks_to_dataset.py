"""From GPS fixes and serology tables to a tracer dataset.

Synthetic tracks in projected planar metres are written to CSV together with
paired serology titres.  The tracks are interpolated to 15-minute fixes,
gridded onto a 4 x 4 lattice of 250 m cells and converted into a dwell
matrix; seroconversion (a fourfold titre rise) gives the binary outcome.

Run:  python demos/04_tracks_to_dataset.py [outdir]
"""
import sys
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from tvtomo import GridGeometry, LatticeSpec, dataset_from_files
from tvtomo.io import write_dataset

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out") / "tracks"
out.mkdir(parents=True, exist_ok=True)
rng = np.random.default_rng(0)
t0 = datetime(2019, 7, 1, tzinfo=timezone.utc)

lines = ["animal_id,timestamp,x,y"]
for k in range(6):
    xy = np.array([500.0, 500.0]) + rng.normal(0, 120, 2)
    t = t0
    for _ in range(60):
        t += timedelta(minutes=int(rng.choice([15, 30, 60])))
        xy = np.clip(xy + rng.normal(0, 60, 2), 1, 999)
        lines.append(f"cow{k},{t.isoformat()},{xy[0]:.1f},{xy[1]:.1f}")
(out / "tracks.csv").write_text("\n".join(lines) + "\n")

sero = ["animal_id,serotype,titer_start,titer_end,baseline_positive"]
for k in range(6):
    sero.append(f"cow{k},EHDV-6,{0 if k % 2 else 2},{16 if k % 2 else 2},false")
(out / "serology.csv").write_text("\n".join(sero) + "\n")

ds = dataset_from_files(out / "tracks.csv", out / "serology.csv", "EHDV-6",
                        LatticeSpec.full(4), GridGeometry(x0=0.0, y0=0.0, cell_size=250.0))
write_dataset(out / "dataset", ds)
print(f"animals {ds.animal_ids}, outcomes {ds.y.astype(int).tolist()}")
print("dwell (15-minute units) per cell, first animal:")
print(ds.dense_X()[0].reshape(4, 4).astype(int))
print(f"dataset written to {out / 'dataset'}")
