"""Binarized templates: 32x smaller and matched by XOR + popcount."""

import numpy as np

from fdd import formats
from fdd.core import GRID, make_template
from fdd.matchkit import match, match_binary
from fdd.net import binarize_template

rng = np.random.default_rng(3)
base = rng.standard_normal((12, GRID, GRID))
full = np.ones((GRID, GRID), bool)
a = make_template(base, full)
b = make_template(base + rng.normal(0, 0.5, base.shape), full)
other = make_template(rng.standard_normal((12, GRID, GRID)), full)

for name, t in (("mate", b), ("non-mate", other)):
    print(f"{name:9s} float={match(a, t).score:.4f} binary={match_binary(binarize_template(a), binarize_template(t)).score:.4f}")

print("bytes on disk: float", len(formats.template_to_bytes(a)), "binary", len(formats.template_to_bytes(binarize_template(a))))
