"""Enrollment store and exhaustive 1:N identification.

The masked-cosine score needs, for probe ``q`` and gallery entry ``g``,

* ``<q, g>``             -- one inner product of flattened descriptors,
* ``||q * mask_g||**2``  -- the probe's per-cell energy summed over g's mask,
* ``||g * mask_q||**2``  -- g's per-cell energy summed over the probe's mask.

Storing each entry's 256 per-cell energies ``sum_ch desc[ch, cell]**2`` next
to its mask turns all three into matrix products over the whole gallery::

    num    = D  @ q_flat         (n x 512c)
    norm_g = E  @ q_mask         (n x 256), E = per-cell energies
    norm_q = M  @ q_energy       (n x 256), M = masks

so a batch of probes costs a few GEMMs instead of n masked norm evaluations.
This is exact algebra: scores agree with :func:`fdd.matchkit.match` to
rounding.  Descriptors are kept as float32 (their native precision) and
promoted to float64 one row block at a time.

Binary galleries keep packed sign bits and mask words and are scored with
XOR + popcount in a compiled kernel.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, Union

import numba
import numpy as np
from numba import types
from numba.extending import intrinsic

from . import formats
from .core import CELLS, GRID, BinaryFddTemplate, FddTemplate, ParameterError
from .matchkit import EPS

DEFAULT_BLOCK_ROWS = 256
_WORDS_PER_PLANE = CELLS // 64


@dataclass(frozen=True)
class Candidate:
    id: str
    score: float
    rank: int
    index: int
    empty_overlap: bool = False


def top_k(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` best scores, descending, ties by lower index."""
    n = scores.shape[0]
    if k >= n:
        return np.argsort(-scores, kind="stable")
    part = np.argpartition(-scores, k - 1)[:k]
    kth = scores[part].min()
    above = np.flatnonzero(scores > kth)
    ties = np.flatnonzero(scores == kth)[: k - above.size]
    idx = np.concatenate([above, ties])
    return idx[np.argsort(-scores[idx], kind="stable")]


class _Store:
    """Row storage shared by the float and binary galleries."""

    binary = False

    def __init__(self, c: int, block_rows: int = DEFAULT_BLOCK_ROWS):
        if c < 1:
            raise ParameterError(f"c must be >= 1, got {c}")
        if block_rows < 1:
            raise ParameterError("block_rows must be positive")
        self.c = int(c)
        self.block_rows = int(block_rows)
        self.ids: list[str] = []
        self.metas: list[dict] = []
        self._arrays: dict[str, np.ndarray] = {}
        self.n = 0

    def __len__(self) -> int:
        return self.n

    def _alloc(self, specs: dict[str, tuple[tuple, np.dtype]]) -> None:
        self._arrays = {k: np.zeros((0, *shape), dtype=dt) for k, (shape, dt) in specs.items()}

    def _reserve(self, extra: int) -> None:
        need = self.n + extra
        cap = next(iter(self._arrays.values())).shape[0]
        if need <= cap:
            return
        new_cap = max(need, 2 * cap, 16)
        for k, a in self._arrays.items():
            grown = np.zeros((new_cap, *a.shape[1:]), dtype=a.dtype)
            grown[: self.n] = a[: self.n]
            self._arrays[k] = grown

    def reserve(self, n: int) -> None:
        """Pre-allocate room for ``n`` more entries."""
        self._reserve(n)

    def _view(self, key: str) -> np.ndarray:
        v = self._arrays[key][: self.n]
        v = v.view()
        v.setflags(write=False)
        return v

    def _check_c(self, t) -> None:
        if t.c != self.c:
            raise ParameterError(f"template has c={t.c}, gallery expects c={self.c}")

    def _blocks(self) -> list[tuple[int, int]]:
        return [(s, min(s + self.block_rows, self.n)) for s in range(0, self.n, self.block_rows)]

    def _run_blocks(self, fn, threads: int) -> None:
        blocks = self._blocks()
        if threads <= 1 or len(blocks) < 2:
            for b in blocks:
                fn(*b)
            return
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda b: fn(*b), blocks))

    def _rank(self, scores: np.ndarray, overlap: np.ndarray, k: int) -> list[Candidate]:
        if k < 1:
            raise ParameterError(f"k must be >= 1, got {k}")
        if self.n == 0:
            return []
        order = top_k(scores, k)
        return [
            Candidate(self.ids[i], float(scores[i]), r + 1, int(i), bool(overlap[i] == 0))
            for r, i in enumerate(order)
        ]

    def identify(self, probe, k: int = 1, threads: int = 1) -> list[Candidate]:
        return self.identify_batch([probe], k, threads)[0]

    def identify_batch(self, probes: Sequence, k: int = 1, threads: int = 1) -> list[list[Candidate]]:
        if k < 1:
            raise ParameterError(f"k must be >= 1, got {k}")
        scores, overlap = self.score_matrix(probes, threads)
        return [self._rank(scores[p], overlap[p], k) for p in range(len(probes))]

    def entries(self) -> Iterable[tuple[str, object]]:
        for i in range(self.n):
            yield self.ids[i], self.template(i)

    def save(self, path) -> None:
        save(self, path)


class GalleryIndex(_Store):
    """Float-descriptor gallery."""

    def __init__(self, c: int, block_rows: int = DEFAULT_BLOCK_ROWS):
        super().__init__(c, block_rows)
        self._alloc(
            {
                "desc": ((2 * self.c * CELLS,), np.float32),
                "cell_norms": ((CELLS,), np.float64),
                "masks": ((CELLS,), np.float64),
            }
        )

    @property
    def flat_desc(self) -> np.ndarray:
        return self._view("desc")

    @property
    def cell_norms(self) -> np.ndarray:
        return self._view("cell_norms")

    @property
    def masks(self) -> np.ndarray:
        return self._view("masks")

    def enroll(self, t: FddTemplate, ident: str) -> "GalleryIndex":
        return self.enroll_many([t], [ident])

    def enroll_many(self, templates: Sequence[FddTemplate], ids: Sequence[str]) -> "GalleryIndex":
        if len(templates) != len(ids):
            raise ParameterError("templates and ids differ in length")
        for t in templates:
            if not isinstance(t, FddTemplate):
                raise ParameterError("float gallery accepts FddTemplate only")
            self._check_c(t)
        if not templates:
            return self
        desc = np.stack([t.descriptor for t in templates])
        masks = np.stack([t.mask for t in templates])
        self._append(desc, masks, ids, [t.meta for t in templates])
        return self

    def _append(self, desc: np.ndarray, masks: np.ndarray, ids, metas) -> None:
        m = desc.shape[0]
        self._reserve(m)
        s, e = self.n, self.n + m
        d32 = desc.astype(np.float32, copy=False)
        self._arrays["desc"][s:e] = d32.reshape(m, -1)
        d64 = d32.astype(np.float64).reshape(m, 2 * self.c, CELLS)
        self._arrays["cell_norms"][s:e] = np.einsum("nck,nck->nk", d64, d64)
        self._arrays["masks"][s:e] = masks.reshape(m, CELLS)
        self.ids.extend(str(i) for i in ids)
        self.metas.extend(dict(x) for x in metas)
        self.n = e

    def append_arrays(self, desc: np.ndarray, masks: np.ndarray, ids: Sequence[str]) -> None:
        """Bulk-enroll ``(m, 2c, 16, 16)`` descriptors and ``(m, 16, 16)`` masks.

        Descriptors must already be zero outside their masks.
        """
        desc = np.asarray(desc)
        masks = np.asarray(masks, dtype=bool)
        m = desc.shape[0]
        if desc.shape[1:] != (2 * self.c, GRID, GRID) or masks.shape != (m, GRID, GRID) or len(ids) != m:
            raise ParameterError(f"bad bulk shapes {desc.shape} / {masks.shape} / {len(ids)} ids")
        if np.any(np.where(masks[:, None], 0, desc)):
            raise ParameterError("descriptors must be zero outside their masks")
        self._append(desc, masks, ids, [{} for _ in range(m)])

    @classmethod
    def from_arrays(
        cls, desc: np.ndarray, masks: np.ndarray, ids: Sequence[str] | None = None, chunk: int = 4096, **kw
    ) -> "GalleryIndex":
        n = desc.shape[0]
        idx = cls(desc.shape[1] // 2, **kw)
        ids = [str(i) for i in range(n)] if ids is None else list(ids)
        idx.reserve(n)
        for s in range(0, n, chunk):
            idx.append_arrays(desc[s : s + chunk], masks[s : s + chunk], ids[s : s + chunk])
        return idx

    def template(self, i: int) -> FddTemplate:
        desc = self._arrays["desc"][i].reshape(2 * self.c, GRID, GRID)
        mask = self._arrays["masks"][i].reshape(GRID, GRID) > 0
        return FddTemplate(self.c, desc, mask, self.metas[i])

    def score_matrix(self, probes: Sequence[FddTemplate], threads: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """Scores and overlap cell counts, each shaped ``(n_probes, n)``."""
        for q in probes:
            if not isinstance(q, FddTemplate):
                raise ParameterError("float gallery needs FddTemplate probes")
            self._check_c(q)
        p = len(probes)
        scores = np.zeros((p, self.n))
        overlap = np.zeros((p, self.n), dtype=np.int64)
        if p == 0 or self.n == 0:
            return scores, overlap
        qd = np.stack([q.descriptor.reshape(-1) for q in probes]).astype(np.float64)  # (p, D)
        qmask = np.stack([q.mask.reshape(-1) for q in probes]).astype(np.float64)  # (p, 256)
        qcell = np.einsum("pck,pck->pk", *(2 * [qd.reshape(p, 2 * self.c, CELLS)]))
        q_cols = qd.T.copy()
        mask_rhs = np.concatenate([qmask.T, qcell.T], axis=1)  # (256, 2p)
        qmask_t = qmask.T.copy()
        desc, cn, gm = self._arrays["desc"], self._arrays["cell_norms"], self._arrays["masks"]

        def block(s: int, e: int) -> None:
            num = desc[s:e].astype(np.float64) @ q_cols
            by_mask = gm[s:e] @ mask_rhs
            ov = by_mask[:, :p]
            norm_q = np.sqrt(by_mask[:, p:])  # probe energy on gallery foreground
            norm_g = np.sqrt(cn[s:e] @ qmask_t)  # gallery energy on probe foreground
            sc = np.clip(0.5 * num / ((norm_q + EPS) * (norm_g + EPS)) + 0.5, 0.0, 1.0)
            cnt = np.rint(ov).astype(np.int64)
            sc[cnt == 0] = 0.0
            scores[:, s:e] = sc.T
            overlap[:, s:e] = cnt.T

        self._run_blocks(block, threads)
        return scores, overlap


# --- binary kernel -----------------------------------------------------------


@intrinsic
def _popcount(typingctx, x):
    sig = types.uint64(types.uint64)

    def codegen(context, builder, signature, args):
        return builder.ctpop(args[0])

    return sig, codegen


@numba.njit(cache=True, nogil=True)
def _binary_scores(G, GM, Q, QM, s, e, scores, overlap):  # pragma: no cover - compiled
    planes = G.shape[1] // 4
    for i in range(s, e):
        g0 = GM[i, 0]
        g1 = GM[i, 1]
        g2 = GM[i, 2]
        g3 = GM[i, 3]
        for p in range(Q.shape[0]):
            o0 = g0 & QM[p, 0]
            o1 = g1 & QM[p, 1]
            o2 = g2 & QM[p, 2]
            o3 = g3 & QM[p, 3]
            ov = _popcount(o0) + _popcount(o1) + _popcount(o2) + _popcount(o3)
            overlap[p, i] = ov
            if ov == 0:
                scores[p, i] = 0.0
                continue
            dis = np.uint64(0)
            for ch in range(planes):
                b = 4 * ch
                dis += _popcount((G[i, b] ^ Q[p, b]) & o0)
                dis += _popcount((G[i, b + 1] ^ Q[p, b + 1]) & o1)
                dis += _popcount((G[i, b + 2] ^ Q[p, b + 2]) & o2)
                dis += _popcount((G[i, b + 3] ^ Q[p, b + 3]) & o3)
            compared = ov * np.uint64(planes)
            scores[p, i] = np.float64(compared - dis) / np.float64(compared)


def _mask_words(mask: np.ndarray) -> np.ndarray:
    m = np.asarray(mask, dtype=bool).reshape(-1, CELLS)
    return np.packbits(m, axis=1, bitorder="little").view("<u8")


class BinaryGalleryIndex(_Store):
    """Sign-bit gallery scored by XOR + popcount over the mask overlap."""

    binary = True

    def __init__(self, c: int, block_rows: int = 8192):
        super().__init__(c, block_rows)
        self._alloc({"bits": ((2 * self.c * _WORDS_PER_PLANE,), np.uint64), "mask_words": ((4,), np.uint64)})

    @property
    def bit_words(self) -> np.ndarray:
        return self._view("bits")

    @property
    def mask_words(self) -> np.ndarray:
        return self._view("mask_words")

    def enroll(self, t: BinaryFddTemplate, ident: str) -> "BinaryGalleryIndex":
        return self.enroll_many([t], [ident])

    def enroll_many(self, templates: Sequence[BinaryFddTemplate], ids: Sequence[str]) -> "BinaryGalleryIndex":
        if len(templates) != len(ids):
            raise ParameterError("templates and ids differ in length")
        for t in templates:
            if not isinstance(t, BinaryFddTemplate):
                raise ParameterError("binary gallery accepts BinaryFddTemplate only")
            self._check_c(t)
        if not templates:
            return self
        bits = np.stack([t.bits for t in templates])
        masks = np.stack([t.mask for t in templates])
        self._append(bits, masks, ids, [t.meta for t in templates])
        return self

    def _append(self, packed: np.ndarray, masks: np.ndarray, ids, metas) -> None:
        m = packed.shape[0]
        self._reserve(m)
        s, e = self.n, self.n + m
        self._arrays["bits"][s:e] = np.ascontiguousarray(packed, dtype=np.uint8).view("<u8")
        self._arrays["mask_words"][s:e] = _mask_words(masks)
        self.ids.extend(str(i) for i in ids)
        self.metas.extend(dict(x) for x in metas)
        self.n = e

    def append_packed(self, packed: np.ndarray, masks: np.ndarray, ids: Sequence[str]) -> None:
        """Bulk-enroll ``(m, 64c)`` packed sign bits and ``(m, 16, 16)`` masks."""
        packed = np.asarray(packed, dtype=np.uint8)
        if packed.ndim != 2 or packed.shape[1] != 64 * self.c or len(ids) != packed.shape[0]:
            raise ParameterError(f"bad packed shape {packed.shape} for c={self.c}")
        self._append(packed, np.asarray(masks, dtype=bool), ids, [{} for _ in ids])

    @classmethod
    def from_arrays(cls, packed: np.ndarray, masks: np.ndarray, ids: Sequence[str] | None = None, **kw):
        """Bulk-build from ``(n, 64c)`` packed bytes and ``(n, 16, 16)`` masks."""
        packed = np.asarray(packed, dtype=np.uint8)
        n = packed.shape[0]
        if packed.ndim != 2 or packed.shape[1] % 64:
            raise ParameterError(f"bad packed shape {packed.shape}")
        idx = cls(packed.shape[1] // 64, **kw)
        ids = [str(i) for i in range(n)] if ids is None else list(ids)
        idx._append(packed, np.asarray(masks, dtype=bool), ids, [{} for _ in range(n)])
        return idx

    def template(self, i: int) -> BinaryFddTemplate:
        bits = self._arrays["bits"][i].view(np.uint8)
        mask = np.unpackbits(self._arrays["mask_words"][i].view(np.uint8), bitorder="little").astype(bool)
        return BinaryFddTemplate(self.c, bits, mask.reshape(GRID, GRID), self.metas[i])

    def score_matrix(self, probes: Sequence[BinaryFddTemplate], threads: int = 1) -> tuple[np.ndarray, np.ndarray]:
        for q in probes:
            if not isinstance(q, BinaryFddTemplate):
                raise ParameterError("binary gallery needs BinaryFddTemplate probes")
            self._check_c(q)
        p = len(probes)
        scores = np.zeros((p, self.n))
        overlap = np.zeros((p, self.n), dtype=np.int64)
        if p == 0 or self.n == 0:
            return scores, overlap
        qb = np.ascontiguousarray(np.stack([q.bits for q in probes])).view("<u8")
        qm = _mask_words(np.stack([q.mask for q in probes]))
        G, GM = self._arrays["bits"], self._arrays["mask_words"]
        self._run_blocks(lambda s, e: _binary_scores(G, GM, qb, qm, s, e, scores, overlap), threads)
        return scores, overlap


AnyGallery = Union[GalleryIndex, BinaryGalleryIndex]


def new_gallery(c: int, binary: bool = False) -> AnyGallery:
    return BinaryGalleryIndex(c) if binary else GalleryIndex(c)


def identify_binary(idx: BinaryGalleryIndex, q: BinaryFddTemplate, k: int = 1) -> list[Candidate]:
    return idx.identify(q, k)


def save(idx: AnyGallery, path) -> None:
    data = formats.gallery_to_bytes(idx.c, idx.binary, idx.entries())
    formats.atomic_write(path, data)


def load(path) -> AnyGallery:
    c, binary, entries = formats.gallery_from_bytes(Path(path).read_bytes())
    idx = new_gallery(c, binary)
    idx.enroll_many([t for _, t in entries], [i for i, _ in entries])
    return idx


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("FDD_THREADS", "1")))
    except ValueError:
        return 1
