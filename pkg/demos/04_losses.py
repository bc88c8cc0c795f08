"""Training objectives: values, analytic gradients and a finite-difference check."""

import numpy as np

from fdd import losskit
from fdd.core import CosFaceParams, LossWeights

rng = np.random.default_rng(4)
f = rng.standard_normal((4, 24))
w = rng.standard_normal((3, 24))
y = np.array([0, 1, 2, 0])
params = CosFaceParams(w)

loss, gf, gw = losskit.cosface_loss(losskit.Batch(f, y), params)
print(f"cosface loss {loss:.6f}")

h = 1e-5
i, j = 2, 7
fp, fm = f.copy(), f.copy()
fp[i, j] += h
fm[i, j] -= h
numeric = (losskit.cosface_loss(losskit.Batch(fp, y), params)[0] - losskit.cosface_loss(losskit.Batch(fm, y), params)[0]) / (2 * h)
print(f"d loss / d f[{i},{j}]: analytic {gf[i, j]:.8f} numeric {numeric:.8f}")

ov = rng.random((16, 16)) < 0.4
sim, _, _ = losskit.local_similarity_loss(rng.standard_normal((12, 16, 16)), rng.standard_normal((12, 16, 16)), ov)
bce, _ = losskit.mask_bce_loss(rng.standard_normal((16, 16)), ov.astype(float))
mse, _ = losskit.minutia_mse_loss(rng.random((6, 128, 128)), rng.random((6, 128, 128)))
total = losskit.composite_loss(loss, loss, bce, mse, sim, LossWeights())
print(f"similarity {sim:.4f} mask {bce:.4f} minutia {mse:.4f} -> composite {total:.4f}")
