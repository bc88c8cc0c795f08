"""Verification and identification metrics from a score file, plus fusion."""

import tempfile
from pathlib import Path

import numpy as np

from fdd.evalkit import ScoreRow, metrics_report, read_score_csv, write_score_csv
from fdd.matchkit import fuse

rng = np.random.default_rng(5)
rows_a, rows_b = [], []
for p in range(100):
    for g in range(100):
        mate = p == g
        rows_a.append(ScoreRow(f"p{p}", f"g{g}", rng.normal(0.75 if mate else 0.5, 0.06), "genuine" if mate else "impostor"))
        rows_b.append(ScoreRow(f"p{p}", f"g{g}", rng.normal(0.7 if mate else 0.5, 0.06), "genuine" if mate else "impostor"))

fused = [ScoreRow(a.probe_id, a.gallery_id, fuse([(a.score, 0.5), (b.score, 0.5)]), a.label) for a, b in zip(rows_a, rows_b)]

with tempfile.TemporaryDirectory() as d:
    path = Path(d) / "fused.csv"
    write_score_csv(path, fused)
    fused = read_score_csv(path)

for name, rows in (("matcher A", rows_a), ("matcher B", rows_b), ("fused", fused)):
    rep = dict(metrics_report(rows, [0.001, 0.01], [1, 5]))
    print(f"{name:10s}", "  ".join(f"{k}={v:.3f}" for k, v in rep.items() if not k.startswith("n_")))
