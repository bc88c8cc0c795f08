"""Training objectives with analytic gradients.

Each loss returns its value together with gradients with respect to its raw
inputs, so any trainer (or a finite-difference check) can consume them
without an autograd framework.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_softmax, softmax

from .core import GRID, CosFaceParams, LossWeights, MinutiaMap, ParameterError, ShapeError


@dataclass(frozen=True)
class Batch:
    features: np.ndarray  # (N, D) raw descriptor vectors
    labels: np.ndarray  # (N,) class indices

    def __post_init__(self) -> None:
        f = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels)
        if f.ndim != 2 or f.shape[0] < 1:
            raise ShapeError(f"features must be (N, D) with N >= 1, got {f.shape}")
        if y.shape != (f.shape[0],) or not np.issubdtype(y.dtype, np.integer):
            raise ShapeError("labels must be N integer class indices")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", y.astype(np.intp))


def _normalize_rows(x: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ParameterError(f"zero-norm {what} vector")
    return x / norms, norms


def _through_normalization(grad_unit: np.ndarray, unit: np.ndarray, norms: np.ndarray) -> np.ndarray:
    # d(x/|x|)/dx = (I - u u^T)/|x|
    radial = np.sum(grad_unit * unit, axis=1, keepdims=True)
    return (grad_unit - radial * unit) / norms


def cosface_loss(batch: Batch, params: CosFaceParams) -> tuple[float, np.ndarray, np.ndarray]:
    """Additive-margin cosine softmax loss, averaged over the batch.

    Returns ``(loss, grad_features, grad_weights)``; gradients are taken with
    respect to the raw, un-normalized features and class weights.
    """
    f, y = batch.features, batch.labels
    w = params.class_weights
    if f.shape[1] != w.shape[1]:
        raise ShapeError(f"feature dim {f.shape[1]} != class weight dim {w.shape[1]}")
    k = w.shape[0]
    if np.any((y < 0) | (y >= k)):
        raise ParameterError(f"labels must lie in [0, {k})")
    n = f.shape[0]
    u, fn = _normalize_rows(f, "feature")
    v, wn = _normalize_rows(w, "class weight")
    cos = u @ v.T
    rows = np.arange(n)
    logits = params.a_scale * cos
    logits[rows, y] -= params.a_scale * params.b_margin
    logp = log_softmax(logits, axis=1)
    loss = float(-logp[rows, y].mean())

    d_logits = softmax(logits, axis=1)
    d_logits[rows, y] -= 1.0
    d_cos = params.a_scale * d_logits / n
    grad_f = _through_normalization(d_cos @ v, u, fn)
    grad_w = _through_normalization(d_cos.T @ u, v, wn)
    return loss, grad_f, grad_w


def local_similarity_loss(
    f_q: np.ndarray, f_g: np.ndarray, overlap: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean squared distance between per-cell channel vectors on ``overlap``."""
    a = np.asarray(f_q, dtype=np.float64)
    b = np.asarray(f_g, dtype=np.float64)
    ov = np.asarray(overlap, dtype=bool)
    if a.shape != b.shape or a.ndim != 3 or a.shape[1:] != ov.shape:
        raise ShapeError(f"incompatible shapes {a.shape}, {b.shape}, overlap {ov.shape}")
    count = int(ov.sum())
    if count == 0:
        raise ParameterError("empty overlap: the similarity loss is undefined")
    diff = (a - b) * ov[None]
    loss = float(np.sum(diff**2) / count)
    grad_q = 2.0 * diff / count
    return loss, grad_q, -grad_q


def mask_bce_loss(logits: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy of ``sigmoid(logits)`` against a binary target."""
    x = np.asarray(logits, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if x.shape != t.shape:
        raise ShapeError(f"logits {x.shape} vs target {t.shape}")
    if not np.all((t == 0) | (t == 1)):
        raise ParameterError("mask target must be binary")
    # softplus(x) - t*x, written to avoid overflow
    per_cell = np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))
    grad = (expit(x) - t) / x.size
    return float(per_cell.mean()), grad


def minutia_mse_loss(pred, target) -> tuple[float, np.ndarray]:
    p = pred.grid if isinstance(pred, MinutiaMap) else np.asarray(pred, dtype=np.float64)
    t = target.grid if isinstance(target, MinutiaMap) else np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeError(f"prediction {p.shape} vs target {t.shape}")
    d = p - t
    return float(np.mean(d**2)), 2.0 * d / d.size


def composite_loss(
    cls_texture: float,
    cls_minutia: float,
    mask: float,
    minutia: float,
    similarity: float,
    weights: LossWeights = LossWeights(),
) -> float:
    parts = (cls_texture, cls_minutia, mask, minutia, similarity)
    if not all(np.isfinite(parts)):
        raise ParameterError("loss components must be finite")
    return (
        cls_texture
        + cls_minutia
        + weights.lambda_mask * mask
        + weights.lambda_minu * minutia
        + weights.lambda_sim * similarity
    )


def overlap_mask(mask_q: np.ndarray, mask_g: np.ndarray) -> np.ndarray:
    """Cells present in both masks."""
    a = np.asarray(mask_q, dtype=bool)
    b = np.asarray(mask_g, dtype=bool)
    if a.shape != (GRID, GRID) or b.shape != (GRID, GRID):
        raise ShapeError("masks must be 16x16")
    return a & b
