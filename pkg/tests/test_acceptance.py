"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` (or plain ``pytest``); the
verdicts are printed in the terminal summary under "acceptance criteria".
"""

import itertools
import json

import numpy as np
import pytest

from fdd import cli, formats, gallery, losskit, net
from fdd.bench import random_masks
from fdd.core import CosFaceParams, GRID, make_template
from fdd.evalkit import ScoreSet, tar_at_far
from fdd.formats import FormatError
from fdd.matchkit import match, match_binary

import gradchecks
from conftest import random_template
from oracles import binary_score, match_score_elementwise
from test_losskit import descent_run
from test_net import EXPECTED

pytestmark = pytest.mark.acceptance


def test_c1_match_oracle_equivalence(criterion):
    with criterion(1, "match equals scalar oracle, symmetric, scale invariant", 30) as cr:
        rng = np.random.default_rng(101)
        worst = {"oracle": 0.0, "symmetry": 0.0, "scale_pow2": 0.0, "scale_any": 0.0}
        for i in range(10_000):
            c = (1, 3, 6, 9, 12)[i % 5]
            q = random_template(rng, c, rng.uniform(0.05, 1.0))
            g = random_template(rng, c, rng.uniform(0.05, 1.0))
            s = match(q, g).score
            ref = match_score_elementwise(q.descriptor, q.mask, g.descriptor, g.mask)
            worst["oracle"] = max(worst["oracle"], abs(s - ref))
            worst["symmetry"] = max(worst["symmetry"], abs(s - match(g, q).score))
            # powers of two scale float32 descriptors exactly; the lower end keeps
            # alpha*|q| far above the 1e-12 norm guard
            e = int(rng.integers(-8, 21))
            s2 = match(make_template(q.descriptor * 2.0**e, q.mask), g).score
            worst["scale_pow2"] = max(worst["scale_pow2"], abs(s - s2))
            if i % 10 == 0:
                a = float(np.exp(rng.uniform(-5, 5)))
                sa = match(make_template(q.descriptor * a, q.mask), g).score
                worst["scale_any"] = max(worst["scale_any"], abs(s - sa))
        cr.details.append(", ".join(f"max|d| {k}={v:.1e}" for k, v in worst.items()))
        assert worst["oracle"] <= 1e-9
        assert worst["symmetry"] <= 1e-9
        assert worst["scale_pow2"] <= 1e-9
        # arbitrary factors also round the scaled values to float32
        assert worst["scale_any"] <= 1e-7


def test_c2_gallery_decomposition(criterion):
    with criterion(2, "gallery scores and rankings equal pairwise matching", 60) as cr:
        rng = np.random.default_rng(202)
        n, c = 1000, 6
        masks = random_masks(rng, n, min_side=3)
        ts = [make_template(rng.standard_normal((2 * c, GRID, GRID)), m) for m in masks]
        ids = [f"e{i:04d}" for i in range(n)]
        probes = [ts[i] for i in range(0, n, 100)] + [random_template(rng, c, 0.4) for _ in range(10)]
        worst = 0.0
        for binary in (False, True):
            gal = ts if not binary else [net.binarize_template(t) for t in ts]
            pro = probes if not binary else [net.binarize_template(t) for t in probes]
            idx = gallery.new_gallery(c, binary).enroll_many(gal, ids)
            fn = match_binary if binary else match
            for q in pro:
                ref = np.array([fn(q, t).score for t in gal])
                got = idx.identify(q, n)
                order = sorted(range(n), key=lambda i: (-ref[i], i))
                assert [x.index for x in got] == order
                diff = max(abs(x.score - ref[x.index]) for x in got)
                if binary:
                    assert diff == 0.0
                    qb = q.unpack()
                    for i in rng.choice(n, 20, replace=False):
                        assert ref[i] == binary_score(qb, q.mask, gal[i].unpack(), gal[i].mask)
                else:
                    worst = max(worst, diff)
        cr.details.append(f"float max|d|={worst:.1e}, binary exact, {len(probes)} probes x {n}")
        assert worst <= 1e-9


def test_c3_efficiency_floor(criterion, capsys):
    with criterion(3, "comparison throughput floor on 100k templates") as cr:
        code = cli.main(["bench", "--n", "100000", "--c", "6", "--probes", "64", "--threads", "1", "--extract", "1", "--seed", "0"])
        rep = json.loads(capsys.readouterr().out)
        assert code == 0
        f, b = rep["float_pairs_per_s"], rep["binary_pairs_per_s"]
        cr.details.append(
            f"float {f:.2e}/s batched ({rep['float_single_pairs_per_s']:.2e}/s single probe), "
            f"binary {b:.2e}/s ({rep['binary_single_pairs_per_s']:.2e}/s single), "
            f"extract {rep['extract_s_per_sample']:.2f} s/sample"
        )
        assert f >= 1e6
        assert b >= 5e6


def test_c4_network_shapes(criterion):
    with criterion(4, "network output and intermediate shapes", 10) as cr:
        img = np.random.default_rng(404).random((256, 256))
        trace = {}
        out = net.forward(img, net.WeightStore.random(6, 404), 6, trace=trace)
        assert out.f_t.shape == out.f_m.shape == (6, 16, 16)
        assert out.mask_logits.shape == (16, 16)
        assert out.minutia_map().grid.shape == (6, 128, 128)
        bad = [k for k, v in EXPECTED.items() if trace.get(k) != v]
        assert not bad, bad
        zero = net.forward(img, net.WeightStore.zeros(6), 6)
        assert np.all(1 / (1 + np.exp(-zero.mask_logits.astype(float))) == 0.5)
        cr.details.append(f"{len(EXPECTED)} layer shapes checked")


def test_c5_gradients(criterion):
    with criterion(5, "finite-difference gradients, closed forms, descent", 60) as cr:
        worst = {}
        for name, fn in gradchecks.CHECKS.items():
            worst[name] = max(fn(seed) for seed in range(100))
        f = np.array([[3.0, -1.0, 2.0]])
        l0 = losskit.cosface_loss(losskit.Batch(f, np.array([0])), CosFaceParams(f / np.linalg.norm(f)))[0]
        w0 = np.array([[1.0, 2.0, -2.0]]) / 3
        l1 = losskit.cosface_loss(losskit.Batch(2 * w0, np.array([0])), CosFaceParams(np.vstack([w0, -w0])))[0]
        trace = descent_run()
        cr.details.append(", ".join(f"{k} rel={v:.1e}" for k, v in worst.items()))
        assert all(v < 1e-4 for v in worst.values())
        assert abs(l0) <= 1e-9
        assert abs(l1 - np.log1p(np.exp(-48.0))) <= 1e-9
        assert len(trace) == 201 and all(b < a for a, b in zip(trace, trace[1:]))


def _impression(rng, base, sigma):
    h, w = rng.integers(10, 17, 2)
    top, left = rng.integers(0, GRID - h + 1), rng.integers(0, GRID - w + 1)
    mask = np.zeros((GRID, GRID), bool)
    mask[top:top + h, left:left + w] = True
    return make_template(base + rng.normal(0.0, sigma, base.shape), mask)


def test_c6_synthetic_end_to_end(criterion):
    with criterion(6, "synthetic genuine scores dominate impostors", 60) as cr:
        rng = np.random.default_rng(606)
        c = 6
        bases = [rng.standard_normal((2 * c, GRID, GRID)) for _ in range(50)]
        sigma = 0.1 * float(np.std(np.stack(bases)))
        imps = [(f, _impression(rng, b, sigma)) for f, b in enumerate(bases) for _ in range(3)]
        gen, imp = [], []
        for (fa, a), (fb, b) in itertools.combinations(imps, 2):
            (gen if fa == fb else imp).append(match(a, b).score)
        s = ScoreSet(gen, imp)
        tar = tar_at_far(s, 0.001)
        cr.details.append(
            f"{len(gen)} genuine min={min(gen):.4f}, {len(imp)} impostor max={max(imp):.4f}, TAR@FAR=0.1%={tar:.3f}"
        )
        assert min(gen) > max(imp)
        assert tar >= 0.95


def test_c7_format_roundtrips(criterion, tmp_path):
    with criterion(7, "FDD1/FDDG/FDDW round-trips and corruption rejection") as cr:
        rng = np.random.default_rng(707)
        checked = 0
        for c in (1, 6, 12):
            t = random_template(rng, c, meta={"subject": "f1", "source": "x.png"})
            for tt in (t, net.binarize_template(t)):
                p = tmp_path / "t.fdd"
                formats.save_template(tt, p)
                raw = p.read_bytes()
                back = formats.load_template(p)
                assert back == tt and formats.template_to_bytes(back) == raw
                for cut in range(len(raw)):
                    with pytest.raises(FormatError):
                        formats.template_from_bytes(raw[:cut])
                with pytest.raises(FormatError):
                    formats.template_from_bytes(b"FDD2" + raw[4:])
                checked += 1
        for binary in (False, True):
            ts = [random_template(rng, 3) for _ in range(4)]
            if binary:
                ts = [net.binarize_template(t) for t in ts]
            idx = gallery.new_gallery(3, binary).enroll_many(ts, ["a", "b", "c", "d"])
            p = tmp_path / "g.fddg"
            gallery.save(idx, p)
            raw = p.read_bytes()
            back = gallery.load(p)
            gallery.save(back, tmp_path / "g2.fddg")
            assert (tmp_path / "g2.fddg").read_bytes() == raw
            for cut in range(0, len(raw), 7):
                with pytest.raises(FormatError):
                    formats.gallery_from_bytes(raw[:cut])
            with pytest.raises(FormatError):
                formats.gallery_from_bytes(b"GDDF" + raw[4:])
            checked += 1
        ws = net.WeightStore.random(1, 7)
        p = tmp_path / "w.fddw"
        ws.save(p)
        raw = p.read_bytes()
        back = net.WeightStore.load(p)
        assert list(back.tensors) == list(ws.tensors)
        assert all(np.array_equal(back[k], ws[k]) for k in ws.tensors)
        assert formats.weights_to_bytes(back.tensors) == raw
        for cut in list(range(0, 64)) + list(range(64, len(raw), len(raw) // 97)):
            with pytest.raises(FormatError):
                formats.weights_from_bytes(raw[:cut])
        with pytest.raises(FormatError):
            formats.weights_from_bytes(b"WDDF" + raw[4:])
        cr.details.append(f"{checked} template/gallery files plus a {len(raw) / 1e6:.0f} MB weight file")
