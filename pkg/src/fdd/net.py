"""Forward-only inference of the dual-branch descriptor network.

Layout (spatial sizes for a 256x256 input)::

    encoder     7x7/2 conv 64 (128) -> 3 res blocks 64 (128)
                -> 4 res blocks 128, first /2 (64) -> + positional embedding
    per branch  6 res blocks 256, first /2 (32) -> 3 res blocks 512, first /2 (16)
    heads       minutia map   from minutia 256-stage: 6x conv3 128, 2x deconv4/2 64, conv3 6
                mask          from texture 512-stage: conv3 512, conv1 1
                descriptor    from each 512-stage:    conv3 512, conv1 c

Every conv except the final projections is followed by batch norm (running
statistics) and ReLU.  Residual blocks are conv-BN-ReLU-conv-BN plus an
identity or 1x1-conv-BN projection shortcut, then ReLU.  Computation is in
float32; convolutions are cross-correlations lowered to one matrix product.

Parameter names follow the module path, e.g. ``encoder.layer2.0.conv1.weight``
or ``texture.mask_decoder.out.bias``; :func:`param_shapes` is the full
manifest for a given ``c``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import formats
from .align import check_aligned
from .core import (
    ALIGNED_SIZE,
    BinaryFddTemplate,
    FddTemplate,
    MinutiaMap,
    ParameterError,
    ShapeError,
    apply_mask,
    sigmoid,
)
from .posenc import make_embedding

log = logging.getLogger(__name__)

BN_EPS = 1e-5
BRANCHES = ("texture", "minutia")


class WeightError(ValueError):
    """A required weight tensor is missing or has the wrong shape."""


# --- graph description -------------------------------------------------------


@dataclass(frozen=True)
class Conv:
    name: str
    cin: int
    cout: int
    k: int
    stride: int = 1
    bn_relu: bool = True  # False: linear projection with bias
    transposed: bool = False

    @property
    def pad(self) -> int:
        return 1 if self.transposed else self.k // 2

    def params(self) -> dict[str, tuple]:
        if self.transposed:
            shapes = {f"{self.name}.weight": (self.cin, self.cout, self.k, self.k)}
        else:
            shapes = {f"{self.name}.weight": (self.cout, self.cin, self.k, self.k)}
        if self.bn_relu:
            shapes.update(_bn_params(self.name.rsplit(".", 1)[0] + ".bn" + _suffix(self.name), self.cout))
        else:
            shapes[f"{self.name}.bias"] = (self.cout,)
        return shapes

    def out_size(self, size: int) -> int:
        if self.transposed:
            return (size - 1) * self.stride - 2 * self.pad + self.k
        return (size + 2 * self.pad - self.k) // self.stride + 1


def _suffix(conv_name: str) -> str:
    # "x.conv1" -> "1", "x.conv" -> "", "x.deconv0" -> "_deconv0"
    last = conv_name.rsplit(".", 1)[-1]
    if last.startswith("conv"):
        return last[4:]
    return "_" + last


def _bn_params(prefix: str, ch: int) -> dict[str, tuple]:
    return {f"{prefix}.{k}": (ch,) for k in ("weight", "bias", "running_mean", "running_var")}


@dataclass(frozen=True)
class ResBlock:
    name: str
    cin: int
    cout: int
    stride: int = 1

    @property
    def projects(self) -> bool:
        return self.stride != 1 or self.cin != self.cout

    def params(self) -> dict[str, tuple]:
        shapes = {
            f"{self.name}.conv1.weight": (self.cout, self.cin, 3, 3),
            **_bn_params(f"{self.name}.bn1", self.cout),
            f"{self.name}.conv2.weight": (self.cout, self.cout, 3, 3),
            **_bn_params(f"{self.name}.bn2", self.cout),
        }
        if self.projects:
            shapes[f"{self.name}.downsample.conv.weight"] = (self.cout, self.cin, 1, 1)
            shapes.update(_bn_params(f"{self.name}.downsample.bn", self.cout))
        return shapes

    def out_size(self, size: int) -> int:
        return (size + 2 - 3) // self.stride + 1


@dataclass(frozen=True)
class PosEnc:
    name: str
    channels: int

    def params(self) -> dict[str, tuple]:
        return {}

    def out_size(self, size: int) -> int:
        return size


Layer = Union[Conv, ResBlock, PosEnc]


@dataclass(frozen=True)
class Section:
    name: str
    source: str  # "image" or another section name
    layers: tuple[Layer, ...]


@dataclass
class Graph:
    c: int
    sections: list[Section]
    shapes: dict[str, tuple[int, int, int]] = field(default_factory=dict)

    def param_shapes(self) -> dict[str, tuple]:
        out: dict[str, tuple] = {}
        for sec in self.sections:
            for layer in sec.layers:
                out.update(layer.params())
        return out


def _res_stage(prefix: str, n: int, cin: int, cout: int, stride: int) -> list[ResBlock]:
    return [ResBlock(f"{prefix}.{i}", cin if i == 0 else cout, cout, stride if i == 0 else 1) for i in range(n)]


def build_graph(c: int = 6, input_size: int = ALIGNED_SIZE) -> Graph:
    """Describe the network for ``c`` descriptor channels per branch.

    ``Graph.shapes`` maps every layer and section name to its output
    ``(channels, height, width)`` for a square ``input_size`` image.
    """
    if c < 1:
        raise ParameterError(f"c must be >= 1, got {c}")
    sections = [
        Section(
            "encoder",
            "image",
            (
                Conv("encoder.conv1", 1, 64, 7, stride=2),
                *_res_stage("encoder.layer1", 3, 64, 64, 1),
                *_res_stage("encoder.layer2", 4, 64, 128, 2),
                PosEnc("encoder.posenc", 128),
            ),
        )
    ]
    for br in BRANCHES:
        sections.append(Section(f"{br}.layer3", "encoder", tuple(_res_stage(f"{br}.layer3", 6, 128, 256, 2))))
        sections.append(Section(f"{br}.layer4", f"{br}.layer3", tuple(_res_stage(f"{br}.layer4", 3, 256, 512, 2))))
    md = "minutia.map_decoder"
    sections.append(
        Section(
            md,
            "minutia.layer3",
            (
                *(Conv(f"{md}.conv{i}", 256 if i == 0 else 128, 128, 3) for i in range(6)),
                Conv(f"{md}.deconv0", 128, 64, 4, stride=2, transposed=True),
                Conv(f"{md}.deconv1", 64, 64, 4, stride=2, transposed=True),
                Conv(f"{md}.out", 64, 6, 3, bn_relu=False),
            ),
        )
    )
    sections.append(
        Section(
            "texture.mask_decoder",
            "texture.layer4",
            (Conv("texture.mask_decoder.conv", 512, 512, 3), Conv("texture.mask_decoder.out", 512, 1, 1, bn_relu=False)),
        )
    )
    for br in BRANCHES:
        p = f"{br}.desc_decoder"
        sections.append(
            Section(p, f"{br}.layer4", (Conv(f"{p}.conv", 512, 512, 3), Conv(f"{p}.out", 512, c, 1, bn_relu=False)))
        )

    graph = Graph(c, sections)
    shapes: dict[str, tuple[int, int, int]] = {"image": (1, input_size, input_size)}
    for sec in sections:
        ch, size, _ = shapes[sec.source]
        for layer in sec.layers:
            size = layer.out_size(size)
            ch = layer.channels if isinstance(layer, PosEnc) else layer.cout
            shapes[layer.name] = (ch, size, size)
        shapes[sec.name] = (ch, size, size)
    graph.shapes = shapes
    return graph


def param_shapes(c: int = 6) -> dict[str, tuple]:
    """Name manifest: every parameter tensor the graph reads, with its shape."""
    return build_graph(c).param_shapes()


# --- weights -----------------------------------------------------------------


class WeightStore:
    """Read-only mapping of parameter names to float32 arrays."""

    def __init__(self, tensors: dict[str, np.ndarray]):
        self.tensors = {k: np.asarray(v, dtype=np.float32) for k, v in tensors.items()}
        for v in self.tensors.values():
            v.setflags(write=False)

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.tensors[name]
        except KeyError:
            raise WeightError(f"missing weight tensor {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __len__(self) -> int:
        return len(self.tensors)

    def validate(self, c: int) -> None:
        """Raise :class:`WeightError` naming the first absent or mis-shaped tensor."""
        for name, shape in param_shapes(c).items():
            t = self[name]
            if t.shape != shape:
                raise WeightError(f"weight tensor {name!r} has shape {t.shape}, expected {shape}")
            if not np.all(np.isfinite(t)):
                raise WeightError(f"weight tensor {name!r} contains non-finite values")

    @classmethod
    def random(cls, c: int = 6, seed: int = 0, scale: float = 0.05) -> "WeightStore":
        """Seeded test weights: conv tensors ~ U(-scale, scale), identity batch norm."""
        rng = np.random.default_rng(seed)
        out = {}
        for name, shape in param_shapes(c).items():
            if ".bn" in name:
                fill = 1.0 if name.endswith((".weight", ".running_var")) else 0.0
                out[name] = np.full(shape, fill, dtype=np.float32)
            else:
                out[name] = rng.uniform(-scale, scale, size=shape).astype(np.float32)
        return cls(out)

    @classmethod
    def zeros(cls, c: int = 6) -> "WeightStore":
        return cls({name: np.zeros(shape, dtype=np.float32) for name, shape in param_shapes(c).items()})

    @classmethod
    def load(cls, path) -> "WeightStore":
        return cls(formats.read_weights(path))

    def save(self, path) -> None:
        formats.atomic_write(path, formats.weights_to_bytes(self.tensors))


# --- primitives --------------------------------------------------------------


def conv2d(x: np.ndarray, w: np.ndarray, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Cross-correlate ``x`` (C, H, W) with ``w`` (O, C, k, k), zero padding."""
    cin, _, _ = x.shape
    cout, wc, kh, kw = w.shape
    if wc != cin:
        raise ShapeError(f"conv expects {wc} input channels, got {cin}")
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    ho, wo = win.shape[1:3]
    cols = win.transpose(0, 3, 4, 1, 2).reshape(cin * kh * kw, ho * wo)
    return (w.reshape(cout, -1) @ cols).reshape(cout, ho, wo)


def conv_transpose2d(x: np.ndarray, w: np.ndarray, stride: int = 2, pad: int = 1) -> np.ndarray:
    """Transposed convolution with ``w`` shaped (C_in, C_out, k, k)."""
    cin, h, wd = x.shape
    wcin, cout, k, _ = w.shape
    if wcin != cin:
        raise ShapeError(f"deconv expects {wcin} input channels, got {cin}")
    # zero-insertion then an ordinary correlation with the flipped kernel
    dil = np.zeros((cin, (h - 1) * stride + 1, (wd - 1) * stride + 1), dtype=x.dtype)
    dil[:, ::stride, ::stride] = x
    flipped = np.ascontiguousarray(w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
    return conv2d(dil, flipped, 1, k - 1 - pad)


def _bn(x: np.ndarray, ws: WeightStore, prefix: str) -> np.ndarray:
    gamma = ws[f"{prefix}.weight"]
    beta = ws[f"{prefix}.bias"]
    mean = ws[f"{prefix}.running_mean"]
    var = ws[f"{prefix}.running_var"]
    scale = gamma / np.sqrt(var + np.float32(BN_EPS))
    shift = beta - mean * scale
    return x * scale[:, None, None] + shift[:, None, None]


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, np.float32(0), out=x)


def _run_conv(layer: Conv, x: np.ndarray, ws: WeightStore) -> np.ndarray:
    w = ws[f"{layer.name}.weight"]
    if layer.transposed:
        y = conv_transpose2d(x, w, layer.stride, layer.pad)
    else:
        y = conv2d(x, w, layer.stride, layer.pad)
    if layer.bn_relu:
        bn = layer.name.rsplit(".", 1)[0] + ".bn" + _suffix(layer.name)
        return _relu(_bn(y, ws, bn))
    return y + ws[f"{layer.name}.bias"][:, None, None]


def _run_block(b: ResBlock, x: np.ndarray, ws: WeightStore) -> np.ndarray:
    y = _relu(_bn(conv2d(x, ws[f"{b.name}.conv1.weight"], b.stride, 1), ws, f"{b.name}.bn1"))
    y = _bn(conv2d(y, ws[f"{b.name}.conv2.weight"], 1, 1), ws, f"{b.name}.bn2")
    if b.projects:
        sc = _bn(conv2d(x, ws[f"{b.name}.downsample.conv.weight"], b.stride, 0), ws, f"{b.name}.downsample.bn")
    else:
        sc = x
    return _relu(y + sc)


def _run_layer(layer: Layer, x: np.ndarray, ws: WeightStore) -> np.ndarray:
    if isinstance(layer, ResBlock):
        return _run_block(layer, x, ws)
    if isinstance(layer, Conv):
        return _run_conv(layer, x, ws)
    pe = make_embedding(layer.channels, x.shape[1], x.shape[2])
    return x + pe.astype(np.float32)


# --- inference ---------------------------------------------------------------


@dataclass(frozen=True)
class NetOutput:
    """Raw network heads; mask and minutia outputs are logits."""

    f_t: np.ndarray
    f_m: np.ndarray
    mask_logits: np.ndarray
    minutia_logits: np.ndarray

    def minutia_map(self) -> MinutiaMap:
        return MinutiaMap(sigmoid(self.minutia_logits.astype(np.float64)))

    @property
    def c(self) -> int:
        return self.f_t.shape[0]


def forward(img: np.ndarray, ws: WeightStore, c: int = 6, trace: dict | None = None) -> NetOutput:
    """Run the network on a 256x256 aligned image with values in [0, 1].

    If ``trace`` is a dict it receives the output shape of every layer and
    section, keyed like :attr:`Graph.shapes`.
    """
    graph = build_graph(c)
    ws.validate(c)
    x0 = check_aligned(img).astype(np.float32)[None]
    acts: dict[str, np.ndarray] = {"image": x0}
    for sec in graph.sections:
        x = acts[sec.source]
        for layer in sec.layers:
            x = _run_layer(layer, x, ws)
            if trace is not None:
                trace[layer.name] = x.shape
        acts[sec.name] = x
        if trace is not None:
            trace[sec.name] = x.shape
    return NetOutput(
        f_t=acts["texture.desc_decoder"],
        f_m=acts["minutia.desc_decoder"],
        mask_logits=acts["texture.mask_decoder"][0],
        minutia_logits=acts["minutia.map_decoder"],
    )


def template_from_output(out: NetOutput, mask_threshold: float = 0.5, meta: dict | None = None) -> FddTemplate:
    """Threshold the mask head and build the masked, concatenated descriptor."""
    if not 0 < mask_threshold < 1:
        raise ParameterError(f"mask_threshold must lie in (0, 1), got {mask_threshold}")
    mask = sigmoid(np.asarray(out.mask_logits, dtype=np.float64)) >= mask_threshold
    desc = np.concatenate([out.f_t, out.f_m], axis=0).astype(np.float32)
    t = FddTemplate(out.c, apply_mask(desc, mask), mask, dict(meta or {}))
    if t.empty_mask:
        log.warning("empty foreground mask; template will not match anything")
    return t


def extract_template(
    img: np.ndarray, ws: WeightStore, c: int = 6, mask_threshold: float = 0.5, meta: dict | None = None
) -> FddTemplate:
    return template_from_output(forward(img, ws, c), mask_threshold, meta)


def binarize_template(t: FddTemplate) -> BinaryFddTemplate:
    """Sign bits of the descriptor: 1 where the value is strictly positive."""
    return BinaryFddTemplate.from_bool(t.descriptor > 0, t.mask, t.meta)


def load_weights(path: Union[str, Path], c: int) -> WeightStore:
    ws = WeightStore.load(path)
    ws.validate(c)
    return ws
