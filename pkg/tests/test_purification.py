import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from uniqa.corpus import CaptionRecord, CorpusManifest, ImageRecord
from uniqa.encoders import embed_image, embed_text
from uniqa.errors import ConfigError, DomainError
from uniqa.purification import PurificationConfig, air, informativeness, purify, rank_desc


def test_rank_desc_example():
    assert rank_desc([0.9, 0.5, 0.7]) == [1, 3, 2]


def test_rank_desc_all_equal():
    assert rank_desc([0.3] * 5) == [1, 2, 3, 4, 5]


def test_rank_desc_empty():
    with pytest.raises(DomainError):
        rank_desc([])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from([0.0, 0.1, 0.5, 0.9]) | st.floats(-1, 1), min_size=1, max_size=12))
def test_rank_desc_matches_counting_oracle(scores):
    assert rank_desc(scores) == oracles.counting_rank_desc(scores)


@pytest.mark.parametrize("text,n", [("a", 1), ("nice shot of a bird", 5), ("  nice   shot  of a   bird ", 5)])
def test_informativeness(text, n):
    assert informativeness(text) == n


def test_informativeness_rejects_blank():
    with pytest.raises(DomainError):
        informativeness("   ")


def test_air_single():
    assert air([0.4], [3]) == ([1], [1], [1])


def test_air_tie_example():
    assert air([0.9, 0.5], [3, 10]) == ([1, 2], [2, 1], [1, 2])


def test_config_validation():
    with pytest.raises(ConfigError):
        PurificationConfig(alpha=0, beta=0)
    with pytest.raises(ConfigError):
        PurificationConfig(k=0)


score_lists = st.integers(1, 6).flatmap(
    lambda n: st.tuples(
        st.lists(st.sampled_from([0.1, 0.2, 0.3]) | st.floats(-1, 1), min_size=n, max_size=n),
        st.lists(st.integers(1, 8).map(float), min_size=n, max_size=n),
    )
)


@settings(max_examples=200, deadline=None)
@given(score_lists, st.sampled_from([(1, 1), (1, 0), (0, 1), (2, 1), (0.5, 3)]))
def test_air_matches_exhaustive_oracle(pair, weights):
    s_a, s_i = pair
    cfg = PurificationConfig(alpha=weights[0], beta=weights[1])
    assert list(air(s_a, s_i, cfg)) == list(oracles.exhaustive_air(s_a, s_i, *weights))


@settings(max_examples=100, deadline=None)
@given(score_lists)
def test_ranks_are_permutations_and_endpoints(pair):
    s_a, s_i = pair
    n = len(s_a)
    ar, ir, airs = air(s_a, s_i)
    for r in (ar, ir, airs):
        assert sorted(r) == list(range(1, n + 1))
    assert air(s_a, s_i, PurificationConfig(alpha=1, beta=0))[2] == ar
    assert air(s_a, s_i, PurificationConfig(alpha=0, beta=1))[2] == ir


grid_lists = st.integers(1, 6).flatmap(
    lambda n: st.tuples(
        st.lists(st.integers(-1000, 1000).map(lambda v: v / 1000), min_size=n, max_size=n),
        st.lists(st.integers(1, 8).map(float), min_size=n, max_size=n),
    )
)


@settings(max_examples=100, deadline=None)
@given(grid_lists)
def test_monotone_transform_invariance(pair):
    # scores on a grid so the transform stays strictly increasing in floats
    s_a, s_i = pair
    base = air(s_a, s_i)
    assert air([np.tanh(3 * v) * 2 + 7 for v in s_a], s_i) == base
    assert air(s_a, [np.log(v) for v in s_i]) == base


def _image(i):
    return ImageRecord(f"im{i}", 50.0, (0, 100), "unassigned",
                       np.random.default_rng(i).uniform(size=(32, 32, 3)).astype(np.float32))


def test_small_images_keep_everything(small_run):
    caps = [CaptionRecord("im0", "sharp and vivid", "authentic"), CaptionRecord("im0", "nice", "authentic")]
    res = purify(CorpusManifest([_image(0)], caps), small_run.params)
    assert res.corpus.captions == caps
    assert all(r.kept for r in res.audit)


def test_six_captions_keep_four(small_corpus, small_run):
    by = small_corpus.captions_by_image(["authentic"])
    image_id = next(i for i, caps in by.items() if len(caps) == 6)
    res = purify(small_corpus.subset([image_id]), small_run.params)
    kept = [r for r in res.audit if r.kept]
    assert len(kept) == 4 and sorted(r.air for r in kept) == [1, 2, 3, 4]


def test_images_without_captions_are_skipped(small_run, caplog):
    m = CorpusManifest([_image(0), _image(1)], [CaptionRecord("im1", "nice", "authentic")])
    res = purify(m, small_run.params)
    assert [r.image_id for r in res.audit] == ["im1"]
    assert "im0" in caplog.text


def test_generated_captions_not_purified(small_corpus, small_run):
    res = purify(small_corpus, small_run.params)
    assert {c.source for c in res.corpus.captions} == {"authentic"}
    assert len(res.audit) == sum(c.source == "authentic" for c in small_corpus.captions)


def test_end_to_end_matches_oracle(small_corpus, small_run):
    params = small_run.params
    sub = small_corpus.subset([im.id for im in small_corpus.images[:20]])
    res = purify(sub, params)
    kept = {}
    for c in res.corpus.captions:
        kept.setdefault(c.image_id, []).append(c.text)
    by = sub.captions_by_image(["authentic"])
    for im in sub.images:
        caps = by[im.id]
        f = embed_image(im, params)
        s_a = [float(np.dot(f, embed_text(c.text, params))) for c in caps]
        s_i = [float(len(c.text.split())) for c in caps]
        want = [caps[i].text for i in sorted(oracles.kept_indices(s_a, s_i, 4))]
        assert kept.get(im.id, []) == want


def test_audit_schema_and_order(small_corpus, small_run):
    res = purify(small_corpus, small_run.params)
    ids = [r.image_id for r in res.audit]
    assert ids == sorted(ids)
    row = json.loads(res.audit_jsonl().splitlines()[0])
    assert list(row) == ["image_id", "i", "s_a", "s_i", "ar", "ir", "air", "kept"]


def test_deterministic(small_corpus, small_run):
    a = purify(small_corpus, small_run.checkpoint)
    b = purify(small_corpus, small_run.checkpoint.encoder())
    assert a.audit_jsonl() == b.audit_jsonl()
