"""2D sinusoidal positional embedding.

The first half of the channels encodes the row index and the second half
the column index.  Within each half of size ``d2``, channel ``2i`` carries
``sin(p / 10000**(2i/d2))`` and channel ``2i+1`` the matching cosine.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .core import ParameterError, ShapeError

BASE = 10000.0


def _axis_table(n_pos: int, d2: int) -> np.ndarray:
    # (d2, n_pos): interleaved sin/cos over positions 0..n_pos-1
    pos = np.arange(n_pos, dtype=np.float64)
    i = np.arange(d2 // 2, dtype=np.float64)
    freq = BASE ** (2 * i / d2)
    angle = pos[None, :] / freq[:, None]
    table = np.empty((d2, n_pos))
    table[0::2] = np.sin(angle)
    table[1::2] = np.cos(angle)
    return table


@lru_cache(maxsize=32)
def _cached(channels: int, height: int, width: int) -> np.ndarray:
    d2 = channels // 2
    rows = _axis_table(height, d2)
    cols = _axis_table(width, d2)
    pe = np.empty((channels, height, width))
    pe[:d2] = rows[:, :, None]
    pe[d2:] = cols[:, None, :]
    pe.setflags(write=False)
    return pe


def make_embedding(channels: int, height: int, width: int) -> np.ndarray:
    """Return the read-only ``(channels, height, width)`` embedding grid."""
    if channels <= 0 or channels % 4:
        raise ParameterError(f"channels must be a positive multiple of 4, got {channels}")
    if height <= 0 or width <= 0:
        raise ParameterError(f"spatial dims must be positive, got {height}x{width}")
    return _cached(int(channels), int(height), int(width))


def add_embedding(features: np.ndarray, pe: np.ndarray) -> np.ndarray:
    if features.shape != pe.shape:
        raise ShapeError(f"feature map {features.shape} does not match embedding {pe.shape}")
    return features + pe.astype(features.dtype, copy=False)
