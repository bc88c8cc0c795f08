"""Finite-difference gradient checks for each loss, one random case per seed."""

import numpy as np

from fdd import losskit
from fdd.core import CosFaceParams

from oracles import central_diff, rel_err


def _full(fn, x, grad):
    num = central_diff(fn, x)
    return rel_err(grad.reshape(-1), [num[i] for i in range(x.size)])


def cosface(seed):
    rng = np.random.default_rng(seed)
    n, k, dim = 4, 3, 24
    f = rng.standard_normal((n, dim))
    w = rng.standard_normal((k, dim))
    y = rng.integers(0, k, n)
    _, gf, gw = losskit.cosface_loss(losskit.Batch(f, y), CosFaceParams(w))
    ef = _full(lambda v: losskit.cosface_loss(losskit.Batch(v, y), CosFaceParams(w))[0], f, gf)
    ew = _full(lambda v: losskit.cosface_loss(losskit.Batch(f, y), CosFaceParams(v))[0], w, gw)
    return max(ef, ew)


def similarity(seed):
    rng = np.random.default_rng(seed)
    c = 2
    a = rng.standard_normal((2 * c, 16, 16))
    b = rng.standard_normal((2 * c, 16, 16))
    ov = rng.random((16, 16)) < 0.5
    ov[0, 0] = True
    _, gq, gg = losskit.local_similarity_loss(a, b, ov)
    eq = _full(lambda v: losskit.local_similarity_loss(v, b, ov)[0], a, gq)
    eg = _full(lambda v: losskit.local_similarity_loss(a, v, ov)[0], b, gg)
    return max(eq, eg)


def mask_bce(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((16, 16)) * 3
    t = (rng.random((16, 16)) < 0.5).astype(float)
    _, g = losskit.mask_bce_loss(x, t)
    return _full(lambda v: losskit.mask_bce_loss(v, t)[0], x, g)


def minutia_mse(seed, n_coords=64):
    # 98k entries: check a random coordinate sample plus one random direction
    rng = np.random.default_rng(seed)
    p = rng.random((6, 128, 128))
    t = rng.random((6, 128, 128))
    _, g = losskit.minutia_mse_loss(p, t)
    idx = rng.choice(p.size, n_coords, replace=False)
    num = central_diff(lambda v: losskit.minutia_mse_loss(v, t)[0], p, idx)
    e1 = rel_err(g.reshape(-1)[idx], [num[i] for i in idx])
    d = rng.standard_normal(p.shape)
    h = 1e-5
    dd = (losskit.minutia_mse_loss(p + h * d, t)[0] - losskit.minutia_mse_loss(p - h * d, t)[0]) / (2 * h)
    e2 = rel_err(np.sum(g * d), dd)
    return max(e1, e2)


CHECKS = {"cosface": cosface, "similarity": similarity, "mask_bce": mask_bce, "minutia_mse": minutia_mse}
