import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdd.core import ParameterError, make_template
from fdd.matchkit import fuse, match, match_binary
from fdd.net import binarize_template

from conftest import random_template, rect_mask
from oracles import binary_score, match_score


@settings(max_examples=60, deadline=None)
@given(st.sampled_from([1, 3, 6, 9, 12]), st.integers(0, 2**32 - 1), st.floats(0.05, 1.0))
def test_match_vs_oracle_and_symmetry(c, seed, density):
    rng = np.random.default_rng(seed)
    q = random_template(rng, c, density)
    g = random_template(rng, c, density)
    r = match(q, g)
    assert r.score == pytest.approx(match_score(q.descriptor, q.mask, g.descriptor, g.mask), abs=1e-9)
    assert match(g, q).score == pytest.approx(r.score, abs=1e-9)
    assert 0 <= r.score <= 1
    assert r.overlap_cells == int((q.mask & g.mask).sum())


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(-6, 6))
def test_power_of_two_scaling_exact(seed, e):
    rng = np.random.default_rng(seed)
    q = random_template(rng, 6)
    g = random_template(rng, 6)
    s = match(q, g).score
    q2 = make_template(q.descriptor * 2.0**e, q.mask)
    assert match(q2, g).score == pytest.approx(s, abs=1e-9)


def test_norm_guard_breaks_invariance_only_for_tiny_scales(rng):
    q, g = random_template(rng, 6), random_template(rng, 6)
    s = match(q, g).score
    tiny = match(make_template(q.descriptor * 2.0**-40, q.mask), g).score
    # alpha*|q| ~ 1e-11 is comparable to the guard, pulling the score toward 0.5
    assert abs(tiny - 0.5) < abs(s - 0.5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_locality_outside_overlap(seed):
    rng = np.random.default_rng(seed)
    q = random_template(rng, 3, 0.8)
    g = random_template(rng, 3, 0.5)
    outside = q.mask & ~g.mask
    d = q.descriptor.copy()
    d[:, outside] = rng.standard_normal((6, int(outside.sum())))
    assert match(make_template(d, q.mask), g).score == match(q, g).score


def test_scaling_any_positive_factor_float32_limit(rng):
    q, g = random_template(rng, 6), random_template(rng, 6)
    s = match(q, g).score
    for a in (0.1, 3.7, 1e4):
        assert match(make_template(q.descriptor * a, q.mask), g).score == pytest.approx(s, abs=1e-6)


def test_self_match_is_one(rng):
    t = random_template(rng, 6)
    assert match(t, t).score == pytest.approx(1.0, abs=1e-12)
    neg = make_template(-t.descriptor, t.mask)
    assert match(t, neg).score == pytest.approx(0.0, abs=1e-12)


def test_disjoint_masks_flagged(rng):
    d = rng.standard_normal((12, 16, 16))
    q = make_template(d, rect_mask(0, 0, 8, 16))
    g = make_template(d, rect_mask(8, 0, 8, 16))
    r = match(q, g)
    assert r.score == 0.0 and r.empty_overlap and r.overlap_cells == 0


def test_norms_restricted_to_overlap(rng):
    d = rng.standard_normal((2, 16, 16))
    q = make_template(d, rect_mask(0, 0, 16, 16))
    g = make_template(d, rect_mask(0, 0, 4, 4))
    # q's energy outside g's mask must not dilute the score
    assert match(q, g).score == pytest.approx(1.0, abs=1e-12)


def test_channel_mismatch(rng):
    with pytest.raises(ParameterError):
        match(random_template(rng, 1), random_template(rng, 2))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_binary_vs_bit_loop(c, seed):
    rng = np.random.default_rng(seed)
    q = binarize_template(random_template(rng, c))
    g = binarize_template(random_template(rng, c))
    r = match_binary(q, g)
    assert r.score == binary_score(q.unpack(), q.mask, g.unpack(), g.mask)
    assert match_binary(g, q).score == r.score


def test_binary_edge_cases(rng):
    t = binarize_template(random_template(rng, 6))
    assert match_binary(t, t).score == 1.0
    d = np.ones((2, 16, 16))
    a = binarize_template(make_template(d, rect_mask(0, 0, 4, 4)))
    b = binarize_template(make_template(-d, rect_mask(0, 0, 4, 4)))
    assert match_binary(a, b).score == 0.0
    c = binarize_template(make_template(d, rect_mask(8, 8, 4, 4)))
    assert match_binary(a, c).empty_overlap


def test_fuse():
    assert fuse([(0.9, 0.7), (0.5, 0.3)]) == pytest.approx(0.78, abs=1e-12)
    assert fuse([(0.42, 1), (0.9, 0)]) == 0.42
    for bad in ([], [(0.5, -1)], [(0.5, 0), (0.2, 0)]):
        with pytest.raises(ParameterError):
            fuse(bad)
