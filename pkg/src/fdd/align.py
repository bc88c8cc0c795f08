"""Pose alignment: raw fingerprint -> canonical 256x256 network input.

The canonical window is 512x512 pixels at 500 ppi, centred on the pose
centre and rotated by ``-theta`` so the finger points up.  Output pixel
``(u, v)`` of that window sits at offset ``d = (u - 255.5, v - 255.5)`` from
the centre and is sampled at ``center + R(theta) @ d`` in the source, where::

    R(theta) = [[ cos theta, sin theta],
                [-sin theta, cos theta]]

is a counter-clockwise rotation on screen (y axis down).  Samples are
bilinear with white (255) beyond the image border; the window is then
2x2 box-averaged down to 256x256 and scaled to [0, 1].
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .core import ALIGNED_SIZE, FingerprintImage, ParameterError, PoseTransform, ShapeError

CROP_SIZE = 2 * ALIGNED_SIZE
BACKGROUND = 255.0
MIN_SIDE = 8


def bilinear_sample(img: np.ndarray, xs: np.ndarray, ys: np.ndarray, fill: float | None = BACKGROUND) -> np.ndarray:
    """Bilinear interpolation of ``img`` at float coordinates (x = column).

    With ``fill`` set, pixels outside the image read as ``fill``; with
    ``fill=None`` coordinates are clamped to the border instead.
    """
    rows, cols = img.shape
    if fill is None:
        xs = np.clip(xs, 0, cols - 1)
        ys = np.clip(ys, 0, rows - 1)
        padded = img
        off = 0
    else:
        padded = np.pad(img, 1, constant_values=fill)
        off = 1
    x = xs + off
    y = ys + off
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    pr, pc = padded.shape
    # a sample is fully outside when its 2x2 neighbourhood leaves the padded grid
    outside = (x0 < 0) | (y0 < 0) | (x0 > pc - 1) | (y0 > pr - 1)
    xi = np.clip(x0, 0, pc - 1).astype(np.intp)
    yi = np.clip(y0, 0, pr - 1).astype(np.intp)
    xi1 = np.minimum(xi + 1, pc - 1)
    yi1 = np.minimum(yi + 1, pr - 1)
    top = padded[yi, xi] * (1 - fx) + padded[yi, xi1] * fx
    bot = padded[yi1, xi] * (1 - fx) + padded[yi1, xi1] * fx
    out = top * (1 - fy) + bot * fy
    if fill is not None and outside.any():
        out = np.where(outside, fill, out)
    return out


def crop_coordinates(pose: PoseTransform, size: int = CROP_SIZE) -> tuple[np.ndarray, np.ndarray]:
    """Source (x, y) sample grids for the canonical ``size``x``size`` window."""
    half = (size - 1) / 2.0
    d = np.arange(size, dtype=np.float64) - half
    dx, dy = np.meshgrid(d, d)  # dx varies along columns
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    xs = pose.center_x + c * dx + s * dy
    ys = pose.center_y - s * dx + c * dy
    return xs, ys


def downsample2x(a: np.ndarray) -> np.ndarray:
    r, c = a.shape
    return a.reshape(r // 2, 2, c // 2, 2).mean(axis=(1, 3))


def align_and_crop(img: FingerprintImage, pose: PoseTransform) -> np.ndarray:
    """Canonical 256x256 input in [0, 1] for a 500 ppi image and its pose."""
    rows, cols = img.shape
    if rows < MIN_SIDE or cols < MIN_SIDE:
        raise ShapeError(f"image {rows}x{cols} is smaller than {MIN_SIDE}x{MIN_SIDE}")
    xs, ys = crop_coordinates(pose)
    window = bilinear_sample(img.pixels, xs, ys)
    out = downsample2x(window) / 255.0
    return np.clip(out, 0.0, 1.0)


def rescale_to_500ppi(img: FingerprintImage) -> FingerprintImage:
    """Bilinear rescale by ``500/ppi`` with pixel-centre alignment."""
    if img.ppi == 500.0:
        return img
    scale = 500.0 / img.ppi
    rows, cols = img.shape
    out_r = max(1, int(round(rows * scale)))
    out_c = max(1, int(round(cols * scale)))
    # map output pixel centres back onto the source grid
    ys = (np.arange(out_r) + 0.5) / scale - 0.5
    xs = (np.arange(out_c) + 0.5) / scale - 0.5
    gx, gy = np.meshgrid(xs, ys)
    out = bilinear_sample(img.pixels, gx, gy, fill=None)
    return FingerprintImage(np.clip(out, 0, 255), 500.0)


def check_aligned(a: np.ndarray) -> np.ndarray:
    arr = np.asarray(a)
    if arr.shape != (ALIGNED_SIZE, ALIGNED_SIZE):
        raise ShapeError(f"aligned image must be 256x256, got {arr.shape}")
    if not np.all((arr >= 0) & (arr <= 1)):
        raise ParameterError("aligned image values must lie in [0, 1]")
    return arr


# --- image and pose files ----------------------------------------------------


def read_image(path, ppi: float = 500.0) -> FingerprintImage:
    """Load an 8-bit grayscale PGM or PNG."""
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            im.load()
            gray = np.asarray(im.convert("L"), dtype=np.float64)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    return FingerprintImage(gray, ppi)


def write_pgm(path, pixels: np.ndarray) -> None:
    a = np.clip(np.rint(pixels), 0, 255).astype(np.uint8)
    header = f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + a.tobytes())


def read_pose_file(path) -> PoseTransform:
    """Parse a ``cx cy theta_degrees`` sidecar."""
    fields = Path(path).read_text().split()
    if len(fields) != 3:
        raise ValueError(f"{path}: expected 'cx cy theta_degrees', got {len(fields)} fields")
    cx, cy, deg = (float(f) for f in fields)
    return PoseTransform.from_degrees(cx, cy, deg)


def write_pose_file(path, pose: PoseTransform) -> None:
    Path(path).write_text(f"{pose.center_x!r} {pose.center_y!r} {math.degrees(pose.theta)!r}\n")
