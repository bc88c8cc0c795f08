"""Binary file formats: templates (FDD1), galleries (FDDG) and weights (FDDW).

All integers and floats are little-endian.

Template (FDD1)::

    b"FDD1" | version u16 | c u16 | flags u16 | mask 32 bytes | payload | meta

``flags`` bit 0 marks a binarized template.  The mask bitmap is row-major,
LSB-first.  The payload is either ``512*c`` float32 values or ``64*c`` packed
bytes (same bit order as the mask, channel outermost).  ``meta`` is a u32 byte
length followed by a UTF-8 JSON object of string tags with sorted keys.

Gallery (FDDG)::

    b"FDDG" | version u16 | c u16 | flags u16 | n u64 | n records

where each record is ``id length u16 | UTF-8 id | FDD1 body without magic``.

Weights (FDDW)::

    b"FDDW" | version u16 | count u32 | per tensor:
        name length u16 | UTF-8 name | rank u8 | dims u32[rank] | float32 data
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import BinaryIO, Iterable, Union

import numpy as np

from .core import GRID, BinaryFddTemplate, FddTemplate

TEMPLATE_MAGIC = b"FDD1"
GALLERY_MAGIC = b"FDDG"
WEIGHTS_MAGIC = b"FDDW"
FORMAT_VERSION = 1
FLAG_BINARY = 0x1

Template = Union[FddTemplate, BinaryFddTemplate]


class FormatError(ValueError):
    """A file is truncated, has the wrong magic/version, or is malformed."""


class _Reader:
    def __init__(self, buf: bytes, what: str):
        self.buf = memoryview(buf)
        self.pos = 0
        self.what = what

    def take(self, n: int) -> memoryview:
        if n < 0 or self.pos + n > len(self.buf):
            raise FormatError(f"truncated {self.what}: needed {n} bytes at offset {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str) -> tuple:
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))

    def done(self) -> None:
        if self.pos != len(self.buf):
            raise FormatError(f"{len(self.buf) - self.pos} trailing bytes in {self.what}")


def pack_mask(mask: np.ndarray) -> bytes:
    return np.packbits(np.asarray(mask, dtype=bool).reshape(-1), bitorder="little").tobytes()


def unpack_mask(raw: bytes) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")
    return bits.astype(bool).reshape(GRID, GRID)


def _encode_meta(meta: dict) -> bytes:
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    return struct.pack("<I", len(blob)) + blob


def _decode_meta(r: _Reader) -> dict:
    (n,) = r.unpack("<I")
    raw = bytes(r.take(n))
    try:
        meta = json.loads(raw.decode("utf-8")) if n else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad metadata block: {exc}") from exc
    if not isinstance(meta, dict):
        raise FormatError("metadata block is not a JSON object")
    return meta


def _template_body(t: Template) -> bytes:
    binary = isinstance(t, BinaryFddTemplate)
    head = struct.pack("<HHH", FORMAT_VERSION, t.c, FLAG_BINARY if binary else 0)
    if binary:
        payload = t.bits.tobytes()
    else:
        payload = t.descriptor.astype("<f4", copy=False).tobytes()
    return head + pack_mask(t.mask) + payload + _encode_meta(t.meta)


def _read_template_body(r: _Reader) -> Template:
    version, c, flags = r.unpack("<HHH")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported template version {version}")
    if c < 1:
        raise FormatError("template channel count is zero")
    mask = unpack_mask(bytes(r.take(GRID * GRID // 8)))
    if flags & FLAG_BINARY:
        bits = np.frombuffer(bytes(r.take(64 * c)), dtype=np.uint8)
        return BinaryFddTemplate(c, bits, mask, _decode_meta(r))
    desc = np.frombuffer(bytes(r.take(4 * 512 * c)), dtype="<f4").reshape(2 * c, GRID, GRID)
    meta = _decode_meta(r)
    try:
        return FddTemplate(c, desc, mask, meta)
    except ValueError as exc:
        raise FormatError(f"invalid template payload: {exc}") from exc


def template_to_bytes(t: Template) -> bytes:
    return TEMPLATE_MAGIC + _template_body(t)


def template_from_bytes(buf: bytes) -> Template:
    r = _Reader(buf, "template")
    if bytes(r.take(4)) != TEMPLATE_MAGIC:
        raise FormatError("not an FDD1 template (bad magic)")
    t = _read_template_body(r)
    r.done()
    return t


def atomic_write(path: Union[str, os.PathLike], data: bytes) -> None:
    """Write ``data`` to a temp file next to ``path`` and rename it into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_template(t: Template, path) -> None:
    atomic_write(path, template_to_bytes(t))


def load_template(path) -> Template:
    return template_from_bytes(Path(path).read_bytes())


# --- gallery -----------------------------------------------------------------


def gallery_to_bytes(c: int, binary: bool, entries: Iterable[tuple[str, Template]]) -> bytes:
    records = []
    for ident, t in entries:
        name = ident.encode("utf-8")
        if len(name) > 0xFFFF:
            raise ValueError(f"id too long: {ident[:32]}...")
        records.append(struct.pack("<H", len(name)) + name + _template_body(t))
    head = GALLERY_MAGIC + struct.pack("<HHHQ", FORMAT_VERSION, c, FLAG_BINARY if binary else 0, len(records))
    return head + b"".join(records)


def gallery_from_bytes(buf: bytes) -> tuple[int, bool, list[tuple[str, Template]]]:
    """Parse a gallery file into ``(c, binary, [(id, template), ...])``."""
    r = _Reader(buf, "gallery")
    if bytes(r.take(4)) != GALLERY_MAGIC:
        raise FormatError("not an FDDG gallery (bad magic)")
    version, c, flags, n = r.unpack("<HHHQ")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported gallery version {version}")
    binary = bool(flags & FLAG_BINARY)
    entries = []
    for _ in range(n):
        (ln,) = r.unpack("<H")
        try:
            ident = bytes(r.take(ln)).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("gallery id is not UTF-8") from exc
        t = _read_template_body(r)
        if t.c != c or isinstance(t, BinaryFddTemplate) != binary:
            raise FormatError(f"record {ident!r} does not match gallery header")
        entries.append((ident, t))
    r.done()
    return c, binary, entries


# --- weights -----------------------------------------------------------------


def weights_to_bytes(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [WEIGHTS_MAGIC, struct.pack("<HI", FORMAT_VERSION, len(tensors))]
    for name, arr in tensors.items():
        a = np.asarray(arr)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    return b"".join(parts)


def weights_from_bytes(buf: bytes) -> dict[str, np.ndarray]:
    r = _Reader(buf, "weight file")
    if bytes(r.take(4)) != WEIGHTS_MAGIC:
        raise FormatError("not an FDDW weight file (bad magic)")
    version, count = r.unpack("<HI")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported weight file version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (ln,) = r.unpack("<H")
        try:
            name = bytes(r.take(ln)).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("tensor name is not UTF-8") from exc
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I")
        size = int(np.prod(dims, dtype=np.int64))
        data = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(dims).astype(np.float32)
        if name in out:
            raise FormatError(f"duplicate tensor {name!r}")
        out[name] = data
    r.done()
    return out


def read_weights(source: Union[str, os.PathLike, BinaryIO]) -> dict[str, np.ndarray]:
    if hasattr(source, "read"):
        return weights_from_bytes(source.read())
    return weights_from_bytes(Path(source).read_bytes())
