import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdd.core import ParameterError
from fdd.evalkit import (
    ScoreRow,
    ScoreSet,
    cmc_curve,
    det_points,
    impostor_cut,
    metrics_report,
    rank_k_from_rows,
    rank_k_rate,
    read_score_csv,
    tar_at_far,
    write_score_csv,
)

from oracles import rank_k, tar_at_far_sweep


def test_perfect_separation():
    s = ScoreSet(np.linspace(0.8, 1, 50), np.linspace(0, 0.5, 5000))
    assert tar_at_far(s, 0.001) == 1.0


def test_conservative_cut():
    imp = np.arange(1000) / 1000.0  # 0.000 .. 0.999
    s = ScoreSet([0.9985, 0.9975, 0.5], imp)
    # one false accept allowed: threshold must reject 0.998 and below
    assert impostor_cut(s, 0.001) == 0.998
    assert tar_at_far(s, 0.001) == pytest.approx(1 / 3)
    assert impostor_cut(ScoreSet([1.0], imp[:999]), 0.001) == 0.998


def test_ties_straddling_threshold():
    s = ScoreSet([0.7, 0.7, 0.6], [0.7, 0.7, 0.1, 0.1])
    # accepting at 0.7 would let half the impostors through
    assert tar_at_far(s, 0.25) == 0.0
    assert tar_at_far(s, 0.5) == pytest.approx(1.0)


def test_errors():
    with pytest.raises(ParameterError):
        tar_at_far(ScoreSet([0.5], []), 0.01)
    with pytest.raises(ParameterError):
        tar_at_far(ScoreSet([0.5], [0.1]), 0.0)
    with pytest.raises(ParameterError):
        ScoreSet([np.nan], [0.1])


def test_vs_exhaustive_sweep():
    rng = np.random.default_rng(0)
    gen = np.round(rng.normal(0.7, 0.1, 300), 3)
    imp = np.round(rng.normal(0.4, 0.1, 5000), 3)
    s = ScoreSet(gen, imp)
    for far in (0.0002, 0.001, 0.01, 0.1):
        assert tar_at_far(s, far) == pytest.approx(tar_at_far_sweep(gen.tolist(), imp.tolist(), far))


def test_large_sets_vs_sweep():
    rng = np.random.default_rng(1)
    gen = rng.normal(0.7, 0.1, 1000)
    imp = rng.normal(0.4, 0.1, 100_000)
    s = ScoreSet(gen, imp)
    # continuous scores: the sweep reduces to the 101st largest impostor
    top = np.sort(imp)[::-1]
    assert tar_at_far(s, 0.001) == np.mean(gen > top[100])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_monotone_and_transform_invariant(seed):
    rng = np.random.default_rng(seed)
    gen = rng.normal(0.6, 0.2, 50)
    imp = rng.normal(0.4, 0.2, 400)
    s = ScoreSet(gen, imp)
    fars = [0.0025, 0.01, 0.05, 0.2, 0.6]
    tars = [tar_at_far(s, f) for f in fars]
    assert tars == sorted(tars)
    t = ScoreSet(np.exp(3 * gen) + 1, np.exp(3 * imp) + 1)
    assert [tar_at_far(t, f) for f in fars] == tars
    assert det_points(s, fars) == [(f, 1 - v) for f, v in zip(fars, tars)]


def test_rank_k_and_cmc():
    results = [("a", ["a", "b"]), ("b", ["a", "b", "c"]), ("c", ["a", "b"])]
    assert rank_k_rate(results, 1) == pytest.approx(1 / 3)
    assert rank_k_rate(results, 2) == pytest.approx(2 / 3)
    assert rank_k_rate([("x", ["x"])] * 4, 1) == 1.0
    assert rank_k_rate([("x", ["y"])], 1) == 0.0
    assert cmc_curve(results, 3) == [(1, pytest.approx(1 / 3)), (2, pytest.approx(2 / 3)), (3, pytest.approx(2 / 3))]
    with pytest.raises(ParameterError):
        rank_k_rate(results, 0)


def test_rank_k_random_vs_counting_oracle():
    rng = np.random.default_rng(5)
    ids = [f"i{i}" for i in range(30)]
    results = [(ids[rng.integers(30)], list(rng.permutation(ids))) for _ in range(200)]
    for k in (1, 5, 30):
        assert rank_k_rate(results, k) == rank_k(results, k)
    curve = [v for _, v in cmc_curve(results, 30)]
    assert curve == sorted(curve) and curve[-1] == 1.0


def test_score_csv_roundtrip(tmp_path):
    rows = [ScoreRow("p1", "g1", 0.123456789012345, "genuine"), ScoreRow("p1", "g2", 0.1, "impostor")]
    p = tmp_path / "s.csv"
    write_score_csv(p, rows)
    assert read_score_csv(p) == rows
    p.write_text("p,g,0.5,genuine\n\np,h,0.25,IMPOSTOR\n")
    assert [r.label for r in read_score_csv(p)] == ["genuine", "impostor"]
    p.write_text("p,g,0.5,maybe\n")
    with pytest.raises(ValueError):
        read_score_csv(p)
    p.write_text("p,g,zz,genuine\n")
    with pytest.raises(ValueError):
        read_score_csv(p)


def test_report_from_rows():
    rows = [ScoreRow("p1", "g1", 0.9, "genuine"), ScoreRow("p1", "g2", 0.95, "impostor"),
            ScoreRow("p2", "g2", 0.8, "genuine"), ScoreRow("p2", "g1", 0.1, "impostor")]
    assert rank_k_from_rows(rows, 1) == 0.5
    rep = dict(metrics_report(rows, [0.5], [1, 2]))
    assert rep["n_genuine"] == 2 and rep["rank-2"] == 1.0
    assert rep["TAR@FAR=0.5"] == 1.0
