"""Domain types shared across the package.

A dense descriptor is a ``(2c, 16, 16)`` tensor: ``c`` texture channels
followed by ``c`` minutia channels on a 16x16 spatial grid, zeroed wherever
the 16x16 foreground mask is off.  Everything flattens channel-outermost,
row-major, so index ``ch*256 + row*16 + col`` addresses one value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.special import expit

GRID = 16
CELLS = GRID * GRID  # 256 spatial cells
MINUTIA_CHANNELS = 6
MINUTIA_SIZE = 128
ALIGNED_SIZE = 256


class ShapeError(ValueError):
    """Array dimensions do not match what an operation requires."""


class ParameterError(ValueError):
    """An argument is outside its valid domain."""


@dataclass(frozen=True)
class FingerprintImage:
    """Grayscale fingerprint with intensities in [0, 255]."""

    pixels: np.ndarray
    ppi: float = 500.0

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ShapeError(f"image must be a non-empty 2-D grid, got shape {px.shape}")
        if not np.all(np.isfinite(px)) or px.min() < 0 or px.max() > 255:
            raise ParameterError("image intensities must lie in [0, 255]")
        if not self.ppi > 0:
            raise ParameterError(f"ppi must be positive, got {self.ppi}")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "ppi", float(self.ppi))

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


def normalize_angle(theta: float) -> float:
    """Wrap an angle in radians into (-pi, pi]."""
    t = math.fmod(theta, 2 * math.pi)
    if t <= -math.pi:
        t += 2 * math.pi
    elif t > math.pi:
        t -= 2 * math.pi
    return t


@dataclass(frozen=True)
class PoseTransform:
    """Rigid pose of a finger in source-image pixels.

    ``theta`` is counter-clockwise as seen on screen (image y axis pointing
    down) and is wrapped into (-pi, pi].
    """

    center_x: float
    center_y: float
    theta: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))

    @classmethod
    def identity_for(cls, shape: tuple[int, int]) -> "PoseTransform":
        """Zero rotation centred on an image of the given (rows, cols)."""
        rows, cols = shape
        return cls((cols - 1) / 2.0, (rows - 1) / 2.0, 0.0)

    @classmethod
    def from_degrees(cls, cx: float, cy: float, theta_deg: float) -> "PoseTransform":
        return cls(cx, cy, math.radians(theta_deg))


def _as_mask(mask: Any) -> np.ndarray:
    m = np.asarray(mask)
    if m.shape != (GRID, GRID):
        raise ShapeError(f"mask must be {GRID}x{GRID}, got {m.shape}")
    if m.dtype != np.bool_:
        if not np.all((m == 0) | (m == 1)):
            raise ParameterError("mask must be binary")
        m = m.astype(bool)
    return m


@dataclass(frozen=True, eq=False)
class FddTemplate:
    """Masked dense descriptor of one fingerprint.

    The descriptor is stored as float32, the precision of the on-disk format,
    so a template and its file representation are always bit-identical.
    """

    c: int
    descriptor: np.ndarray
    mask: np.ndarray
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        c = int(self.c)
        if c < 1:
            raise ParameterError(f"channel count must be >= 1, got {c}")
        desc = np.array(self.descriptor, dtype=np.float32, copy=True)
        if desc.shape != (2 * c, GRID, GRID):
            raise ShapeError(f"descriptor must be {(2 * c, GRID, GRID)}, got {desc.shape}")
        if not np.all(np.isfinite(desc)):
            raise ParameterError("descriptor contains non-finite values")
        mask = _as_mask(self.mask).copy()
        if np.any(desc[:, ~mask]):
            raise ParameterError("descriptor must be zero wherever the mask is 0")
        desc.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "descriptor", desc)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "meta", {str(k): str(v) for k, v in self.meta.items()})

    @property
    def empty_mask(self) -> bool:
        """True when no foreground cell survived thresholding."""
        return not self.mask.any()

    @property
    def dim(self) -> int:
        return 2 * self.c * CELLS

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FddTemplate):
            return NotImplemented
        return (
            self.c == other.c
            and np.array_equal(self.descriptor, other.descriptor)
            and np.array_equal(self.mask, other.mask)
            and self.meta == other.meta
        )


@dataclass(frozen=True, eq=False)
class BinaryFddTemplate:
    """Sign-binarized descriptor: ``bits`` holds ``512*c`` bits packed LSB-first
    in channel-outermost, row-major order."""

    c: int
    bits: np.ndarray
    mask: np.ndarray
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        c = int(self.c)
        if c < 1:
            raise ParameterError(f"channel count must be >= 1, got {c}")
        bits = np.array(self.bits, dtype=np.uint8, copy=True).reshape(-1)
        if bits.size != 64 * c:
            raise ShapeError(f"expected {64 * c} packed bytes for c={c}, got {bits.size}")
        mask = _as_mask(self.mask).copy()
        bits.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "meta", {str(k): str(v) for k, v in self.meta.items()})

    @property
    def n_bits(self) -> int:
        return 2 * self.c * CELLS

    @property
    def empty_mask(self) -> bool:
        return not self.mask.any()

    def unpack(self) -> np.ndarray:
        """Bits as a boolean ``(2c, 16, 16)`` array."""
        flat = np.unpackbits(self.bits, bitorder="little").astype(bool)
        return flat.reshape(2 * self.c, GRID, GRID)

    @classmethod
    def from_bool(cls, bits: np.ndarray, mask: np.ndarray, meta: dict | None = None) -> "BinaryFddTemplate":
        b = np.asarray(bits, dtype=bool)
        if b.ndim != 3 or b.shape[1:] != (GRID, GRID) or b.shape[0] % 2:
            raise ShapeError(f"bit tensor must be (2c, 16, 16), got {b.shape}")
        packed = np.packbits(b.reshape(-1), bitorder="little")
        return cls(b.shape[0] // 2, packed, mask, dict(meta or {}))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BinaryFddTemplate):
            return NotImplemented
        return (
            self.c == other.c
            and np.array_equal(self.bits, other.bits)
            and np.array_equal(self.mask, other.mask)
            and self.meta == other.meta
        )


@dataclass(frozen=True)
class MinutiaMap:
    """6x128x128 minutia heatmap with values in [0, 1]."""

    grid: np.ndarray

    def __post_init__(self) -> None:
        g = np.asarray(self.grid, dtype=np.float64)
        if g.shape != (MINUTIA_CHANNELS, MINUTIA_SIZE, MINUTIA_SIZE):
            raise ShapeError(f"minutia map must be (6, 128, 128), got {g.shape}")
        if not np.all((g >= 0) & (g <= 1)):
            raise ParameterError("minutia map values must lie in [0, 1]")
        object.__setattr__(self, "grid", g)

    @property
    def channels(self) -> int:
        return MINUTIA_CHANNELS


@dataclass(frozen=True)
class CosFaceParams:
    """Large-margin cosine classifier head.

    ``class_weights`` holds the raw (un-normalized) class vectors as rows;
    the loss normalizes them itself so gradients flow to the raw values.
    """

    class_weights: np.ndarray
    a_scale: float = 30.0
    b_margin: float = 0.4

    def __post_init__(self) -> None:
        w = np.asarray(self.class_weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] < 1:
            raise ShapeError(f"class_weights must be (K, D), got {w.shape}")
        if not self.a_scale > 0:
            raise ParameterError("a_scale must be positive")
        if not 0 <= self.b_margin < 1:
            raise ParameterError("b_margin must lie in [0, 1)")
        if np.any(np.linalg.norm(w, axis=1) == 0):
            raise ParameterError("class weight vectors must be nonzero")
        object.__setattr__(self, "class_weights", w)

    @property
    def k_classes(self) -> int:
        return self.class_weights.shape[0]

    def normalized_weights(self) -> np.ndarray:
        w = self.class_weights
        return w / np.linalg.norm(w, axis=1, keepdims=True)


@dataclass(frozen=True)
class LossWeights:
    lambda_mask: float = 1.0
    lambda_minu: float = 0.01
    lambda_sim: float = 0.00125

    def __post_init__(self) -> None:
        if min(self.lambda_mask, self.lambda_minu, self.lambda_sim) < 0:
            raise ParameterError("loss weights must be nonnegative")


def flatten_template(t: FddTemplate) -> np.ndarray:
    """Descriptor as a ``512*c`` vector, channel-outermost row-major."""
    return t.descriptor.reshape(-1).copy()


def unflatten_descriptor(vec: np.ndarray, c: int) -> np.ndarray:
    v = np.asarray(vec)
    if v.size != 2 * c * CELLS:
        raise ShapeError(f"expected {2 * c * CELLS} values for c={c}, got {v.size}")
    return v.reshape(2 * c, GRID, GRID)


def apply_mask(desc: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Zero every channel at cells where ``mask`` is 0."""
    d = np.asarray(desc)
    m = np.asarray(mask)
    if d.ndim != 3 or d.shape[1:] != m.shape or m.shape != (GRID, GRID):
        raise ShapeError(f"cannot mask descriptor {d.shape} with mask {m.shape}")
    return np.where(m.astype(bool)[None], d, np.zeros((), dtype=d.dtype))


def make_template(desc: np.ndarray, mask: np.ndarray, meta: dict | None = None) -> FddTemplate:
    """Mask ``desc`` and wrap it as a template; ``c`` is inferred."""
    d = np.asarray(desc, dtype=np.float32)
    if d.ndim != 3 or d.shape[0] % 2:
        raise ShapeError(f"descriptor must be (2c, 16, 16), got {d.shape}")
    return FddTemplate(d.shape[0] // 2, apply_mask(d, mask), mask, dict(meta or {}))


def sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)
