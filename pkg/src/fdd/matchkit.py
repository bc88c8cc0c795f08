"""Pairwise template comparison and score fusion.

The float score is a cosine restricted to the overlap of the two masks,
mapped to [0, 1]::

    s = 1/2 * <q, g> / (||q * mask_g|| ||g * mask_q||) + 1/2

Because each descriptor is already zero outside its own mask, the inner
product only picks up overlapping cells; the norms restrict each side to
the partner's foreground.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .core import CELLS, BinaryFddTemplate, FddTemplate, ParameterError

EPS = 1e-12


@dataclass(frozen=True)
class MatchResult:
    score: float
    overlap_cells: int
    empty_overlap: bool = False


def _check_pair(q, g) -> None:
    if q.c != g.c:
        raise ParameterError(f"channel count mismatch: {q.c} vs {g.c}")


def normalized_score(num, norm_q, norm_g):
    """Map a masked inner product and the two masked norms to [0, 1]."""
    return np.clip(0.5 * num / ((norm_q + EPS) * (norm_g + EPS)) + 0.5, 0.0, 1.0)


def match(q: FddTemplate, g: FddTemplate) -> MatchResult:
    _check_pair(q, g)
    overlap = int(np.count_nonzero(q.mask & g.mask))
    if overlap == 0:
        return MatchResult(0.0, 0, True)
    fq = q.descriptor.astype(np.float64)
    fg = g.descriptor.astype(np.float64)
    num = float(np.dot(fq.ravel(), fg.ravel()))
    norm_q = np.sqrt(np.sum(fq[:, g.mask] ** 2))
    norm_g = np.sqrt(np.sum(fg[:, q.mask] ** 2))
    return MatchResult(float(normalized_score(num, norm_q, norm_g)), overlap)


def _words(t: BinaryFddTemplate) -> tuple[np.ndarray, np.ndarray]:
    # each channel plane is 256 bits = 4 little-endian u64 words, aligned with the mask words
    bits = np.frombuffer(t.bits.tobytes(), dtype="<u8").reshape(2 * t.c, CELLS // 64)
    mask = np.frombuffer(np.packbits(t.mask.reshape(-1), bitorder="little").tobytes(), dtype="<u8")
    return bits, mask


def match_binary(q: BinaryFddTemplate, g: BinaryFddTemplate) -> MatchResult:
    """Fraction of agreeing bits over the overlapping cells of all channels."""
    _check_pair(q, g)
    qb, qm = _words(q)
    gb, gm = _words(g)
    ov = qm & gm
    overlap = int(np.bitwise_count(ov).sum())
    if overlap == 0:
        return MatchResult(0.0, 0, True)
    disagree = int(np.bitwise_count((qb ^ gb) & ov).sum())
    compared = overlap * 2 * q.c
    return MatchResult((compared - disagree) / compared, overlap)


def fuse(scores: Iterable[tuple[float, float]]) -> float:
    """Weighted mean of ``(score, weight)`` pairs."""
    pairs = [(float(s), float(w)) for s, w in scores]
    if not pairs:
        raise ParameterError("nothing to fuse")
    if any(w < 0 for _, w in pairs):
        raise ParameterError("fusion weights must be nonnegative")
    total = sum(w for _, w in pairs)
    if total <= 0:
        raise ParameterError("at least one fusion weight must be positive")
    return sum(s * w for s, w in pairs) / total
