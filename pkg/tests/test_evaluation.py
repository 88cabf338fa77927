import json

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from uniqa.adapter import AdapterConfig
from uniqa.errors import ConfigError, DomainError, ShapeError, UndefinedMetricError
from uniqa.evaluation import (
    EvalReport,
    fractional_ranks,
    make_splits,
    parse_mode,
    plcc,
    retrieve,
    run_protocol,
    srcc,
)


def test_srcc_examples():
    assert srcc([1, 2, 3, 4], [1, 2, 3, 4]) == pytest.approx(1.0)
    assert srcc([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)
    assert srcc([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-12)


def test_plcc_examples(rng):
    x = rng.normal(size=20)
    assert plcc(x, 2 * x + 1) == pytest.approx(1.0, abs=1e-12)
    assert plcc(x, -x) == pytest.approx(-1.0, abs=1e-12)


def test_fractional_ranks_ties():
    np.testing.assert_array_equal(fractional_ranks([10, 20, 20, 5]), [2, 3.5, 3.5, 1])


def test_metric_errors():
    with pytest.raises(UndefinedMetricError):
        srcc([1, 2, 3], [5, 5, 5])
    with pytest.raises(UndefinedMetricError):
        plcc([1, 1, 1], [1, 2, 3])
    with pytest.raises(ShapeError):
        srcc([1, 2], [1, 2, 3])


vectors = st.integers(5, 200).flatmap(
    lambda n: st.tuples(
        st.lists(st.integers(0, 6).map(float) | st.floats(-1e3, 1e3), min_size=n, max_size=n),
        st.lists(st.integers(0, 6).map(float) | st.floats(-1e3, 1e3), min_size=n, max_size=n),
    )
).filter(lambda p: len(set(p[0])) > 1 and len(set(p[1])) > 1)


@settings(max_examples=100, deadline=None)
@given(vectors)
def test_against_direct_formulas(pair):
    a, b = pair
    assert abs(srcc(a, b) - oracles.spearman(a, b)) < 1e-12
    assert abs(plcc(a, b) - oracles.pearson(a, b)) < 1e-12
    assert abs(srcc(a, b) - scipy.stats.spearmanr(a, b).statistic) < 1e-10
    assert srcc(a, b) == pytest.approx(srcc(b, a), abs=1e-15)
    assert plcc(a, b) == pytest.approx(plcc(b, a), abs=1e-15)


int_vectors = st.integers(5, 60).flatmap(
    lambda n: st.tuples(st.lists(st.integers(-30, 30), min_size=n, max_size=n),
                        st.lists(st.integers(-30, 30), min_size=n, max_size=n))
).filter(lambda p: len(set(p[0])) > 1 and len(set(p[1])) > 1)


@settings(max_examples=100, deadline=None)
@given(int_vectors)
def test_srcc_monotone_invariance_exact(pair):
    a, b = pair
    f = [x**3 + 2 * x + 7 for x in a]  # strictly increasing, exact on small ints
    assert srcc(f, b) == srcc(a, b)


@settings(max_examples=40, deadline=None)
@given(vectors, st.floats(0.01, 100), st.floats(-100, 100))
def test_plcc_affine(pair, scale, shift):
    a, b = pair
    a = np.array(a)
    assert abs(plcc(scale * a + shift, b) - plcc(a, b)) < 1e-12
    assert abs(plcc(-scale * a + shift, b) + plcc(a, b)) < 1e-12


def test_splits():
    ids = [f"i{k}" for k in range(10)]
    plans = make_splits(ids, repeats=5, seed=3)
    for p in plans:
        assert len(p.train) == 8 and len(p.test) == 2
        assert not set(p.train) & set(p.test)
        assert set(p.train) | set(p.test) == set(ids)
    assert plans == make_splits(ids, repeats=5, seed=3)
    assert len({p.test for p in plans}) > 1
    assert [p.repeat for p in plans] == [1, 2, 3, 4, 5]
    with pytest.raises(DomainError):
        make_splits(ids[:4])


@pytest.mark.parametrize("n", [7, 11, 13, 37])
def test_split_rounding(n):
    assert len(make_splits([str(k) for k in range(n)], repeats=1)[0].train) == round(0.8 * n + 1e-9)


def test_mode_parsing():
    assert parse_mode("zero_shot") == ("zero_shot", None)
    assert parse_mode("few_label(50)") == ("few_label", 50)
    assert parse_mode("few_label", 100) == ("few_label", 100)
    with pytest.raises(ConfigError):
        parse_mode("few_label")
    with pytest.raises(ConfigError):
        parse_mode("half")


FAST = AdapterConfig(epochs=5)


def test_zero_shot_takes_no_steps(small_run, small_corpus):
    rep = run_protocol(small_run.checkpoint, small_corpus, "zero_shot", repeats=3)
    assert all(r.steps == 0 for r in rep.repeats)
    assert len(rep.repeats) == 3
    assert rep.median_srcc == pytest.approx(np.median([r.srcc for r in rep.repeats]))


def test_few_label_uses_exactly_k(small_run, small_corpus):
    rep = run_protocol(small_run.checkpoint, small_corpus, "few_label", repeats=2, k=20, adapter_config=FAST)
    assert rep.mode == "few_label(20)"
    assert all(r.n_train == 20 and r.steps > 0 for r in rep.repeats)
    with pytest.raises(ConfigError):
        run_protocol(small_run.checkpoint, small_corpus, "few_label", repeats=1, k=500)


def test_test_sets_shared_across_modes(small_run, small_corpus):
    a = run_protocol(small_run.checkpoint, small_corpus, "zero_shot", repeats=2, seed=4)
    b = run_protocol(small_run.checkpoint, small_corpus, "full", repeats=2, seed=4, adapter_config=FAST)
    assert [r.test_ids for r in a.repeats] == [r.test_ids for r in b.repeats]


def test_protocol_deterministic_and_schema(small_run, small_corpus):
    a = run_protocol(small_run.checkpoint, small_corpus, "full", repeats=2, adapter_config=FAST)
    b = run_protocol(small_run.checkpoint, small_corpus, "full", repeats=2, adapter_config=FAST)
    assert a.to_json() == b.to_json()
    d = json.loads(a.to_json())
    assert list(d) == ["mode", "repeats", "median_srcc", "median_plcc"]
    assert list(d["repeats"][0]) == ["srcc", "plcc"]
    assert all(-1 <= r["srcc"] <= 1 for r in d["repeats"])
    assert EvalReport.from_dict(d).to_json() == a.to_json()


def test_retrieve_permutation_and_order(small_run, small_corpus):
    n = len(small_corpus.images)
    hits = retrieve(small_run.checkpoint, "good image", small_corpus, n)
    assert sorted(i for i, _ in hits) == sorted(im.id for im in small_corpus.images)
    keys = [(-s, i) for i, s in hits]
    assert keys == sorted(keys)
    with pytest.raises(DomainError):
        retrieve(small_run.checkpoint, "good image", small_corpus, n + 1)
    with pytest.raises(DomainError):
        retrieve(small_run.checkpoint, "good image", small_corpus.subset([]), 1)


def test_caption_query_ranks_its_image_above_median(small_run, small_corpus):
    caps = small_corpus.captions_by_image(["gen_iqa"])
    n = len(small_corpus.images)
    positions = []
    for im in small_corpus.images[:20]:
        ranked = [i for i, _ in retrieve(small_run.checkpoint, caps[im.id][0].text, small_corpus, n)]
        positions.append(ranked.index(im.id))
    assert np.median(positions) < n / 2
