"""Verification and identification accuracy metrics.

Operating points are conservative: at a requested FAR the threshold is the
lowest observed score at which the impostor acceptance rate does not exceed
the FAR, where a score is accepted when it is >= the threshold.
"""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import ParameterError

GENUINE = "genuine"
IMPOSTOR = "impostor"


@dataclass
class ScoreSet:
    genuine: np.ndarray = field(default_factory=lambda: np.zeros(0))
    impostor: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self) -> None:
        self.genuine = np.asarray(self.genuine, dtype=np.float64).reshape(-1)
        self.impostor = np.asarray(self.impostor, dtype=np.float64).reshape(-1)
        if not (np.all(np.isfinite(self.genuine)) and np.all(np.isfinite(self.impostor))):
            raise ParameterError("scores must be finite")


def _allowed_false_accepts(far: float, m: int) -> int:
    # tolerate representation error in far*m (e.g. 0.001 * 1000)
    return int(math.floor(far * m * (1 + 1e-12) + 1e-9))


def impostor_cut(s: ScoreSet, far: float) -> float:
    """Largest impostor score that must be rejected at ``far`` (-inf if none)."""
    if not 0 < far < 1:
        raise ParameterError(f"far must lie in (0, 1), got {far}")
    m = s.impostor.size
    if m == 0:
        raise ParameterError("TAR@FAR needs at least one impostor score")
    allowed = _allowed_false_accepts(far, m)
    if allowed >= m:
        return -math.inf
    desc = np.sort(s.impostor)[::-1]
    return float(desc[allowed])


def tar_at_far(s: ScoreSet, far: float) -> float:
    """True accept rate at the given false accept rate."""
    cut = impostor_cut(s, far)
    if s.genuine.size == 0:
        return 0.0
    return float(np.count_nonzero(s.genuine > cut)) / s.genuine.size


def det_points(s: ScoreSet, fars: Sequence[float]) -> list[tuple[float, float]]:
    """``(far, false reject rate)`` pairs."""
    return [(float(f), 1.0 - tar_at_far(s, f)) for f in fars]


def _mate_rank(true_id, ranked: Sequence) -> int | None:
    for r, cand in enumerate(ranked, start=1):
        cid = getattr(cand, "id", cand)
        if cid == true_id:
            return r
    return None


def rank_k_rate(results: Iterable[tuple[object, Sequence]], k: int) -> float:
    """Fraction of probes whose mate is among the first ``k`` candidates.

    ``results`` holds ``(true_id, ranked_candidates)`` pairs; candidates may be
    bare ids or objects with an ``id`` attribute.
    """
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    results = list(results)
    if not results:
        return 0.0
    hits = 0
    for true_id, ranked in results:
        r = _mate_rank(true_id, ranked)
        hits += r is not None and r <= k
    return hits / len(results)


def cmc_curve(results: Iterable[tuple[object, Sequence]], k_max: int) -> list[tuple[int, float]]:
    results = list(results)
    if k_max < 1:
        raise ParameterError("k_max must be >= 1")
    if not results:
        return [(k, 0.0) for k in range(1, k_max + 1)]
    ranks = [_mate_rank(t, r) for t, r in results]
    counts = np.zeros(k_max + 1)
    for r in ranks:
        if r is not None and r <= k_max:
            counts[r] += 1
    cum = np.cumsum(counts)[1:] / len(results)
    return [(k, float(cum[k - 1])) for k in range(1, k_max + 1)]


# --- score files -------------------------------------------------------------


@dataclass(frozen=True)
class ScoreRow:
    probe_id: str
    gallery_id: str
    score: float
    label: str


def read_score_csv(path) -> list[ScoreRow]:
    """Parse ``probe_id,gallery_id,score,label`` lines; a header line is optional."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or (len(rec) == 1 and not rec[0].strip()):
                continue
            if lineno == 1 and rec[:3] == ["probe_id", "gallery_id", "score"]:
                continue
            if len(rec) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 fields, got {len(rec)}")
            label = rec[3].strip().lower()
            if label not in (GENUINE, IMPOSTOR):
                raise ValueError(f"{path}:{lineno}: label must be genuine or impostor, got {rec[3]!r}")
            try:
                score = float(rec[2])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: bad score {rec[2]!r}") from None
            rows.append(ScoreRow(rec[0].strip(), rec[1].strip(), score, label))
    return rows


def write_score_csv(path, rows: Iterable[ScoreRow]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["probe_id", "gallery_id", "score", "label"])
    for r in rows:
        w.writerow([r.probe_id, r.gallery_id, repr(float(r.score)), r.label])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def scoreset_from_rows(rows: Iterable[ScoreRow]) -> ScoreSet:
    rows = list(rows)
    return ScoreSet(
        [r.score for r in rows if r.label == GENUINE],
        [r.score for r in rows if r.label == IMPOSTOR],
    )


def rankings_from_rows(rows: Iterable[ScoreRow]) -> list[tuple[set, list[str]]]:
    """Per probe: the set of mate gallery ids and the gallery ids ranked by score.

    Probes without any genuine row are skipped (no mate to find).
    """
    by_probe: dict[str, list[ScoreRow]] = defaultdict(list)
    for r in rows:
        by_probe[r.probe_id].append(r)
    out = []
    for probe in sorted(by_probe):
        rs = by_probe[probe]
        mates = {r.gallery_id for r in rs if r.label == GENUINE}
        if not mates:
            continue
        ranked = [r.gallery_id for r in sorted(rs, key=lambda r: -r.score)]
        out.append((mates, ranked))
    return out


def rank_k_from_rows(rows: Sequence[ScoreRow], k: int) -> float:
    ranked = rankings_from_rows(rows)
    if not ranked:
        return 0.0
    hits = sum(any(g in mates for g in order[:k]) for mates, order in ranked)
    return hits / len(ranked)


def metrics_report(rows: Sequence[ScoreRow], fars: Sequence[float], ranks: Sequence[int]) -> list[tuple[str, float]]:
    s = scoreset_from_rows(rows)
    out: list[tuple[str, float]] = [("n_genuine", float(s.genuine.size)), ("n_impostor", float(s.impostor.size))]
    for f in fars:
        out.append((f"TAR@FAR={f:g}", tar_at_far(s, f)))
    for k in ranks:
        out.append((f"rank-{k}", rank_k_from_rows(rows, k)))
    return out
