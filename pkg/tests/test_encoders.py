import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uniqa import tensor as tn
from uniqa.encoders import (
    PARAM_KEYS,
    UNK,
    EncoderConfig,
    Vocabulary,
    embed_image,
    embed_images,
    embed_text,
    image_features_from_patches,
    init_params,
    patchify,
    tokenize,
)
from uniqa.errors import DegenerateInputError, ShapeError
from uniqa.pretrain import loss_on_batch

CFG = EncoderConfig(d=16, d_hidden=24)
VOCAB = Vocabulary.from_texts(["good image", "bad image", "a sharp photo", "blurry and noisy"])


@pytest.fixture(scope="module")
def params():
    return init_params(CFG, VOCAB, seed=0)


def test_tokenize_rules():
    assert tokenize("Good image.", VOCAB) == [VOCAB.lookup("good"), VOCAB.lookup("image")]
    assert tokenize("zebra", VOCAB) == [UNK]
    assert len(tokenize(" ".join(["good"] * 50), VOCAB)) == 32
    with pytest.raises(DegenerateInputError):
        tokenize(" ... ", VOCAB)


def test_vocabulary_dense_and_order_independent():
    a = Vocabulary.from_texts(["b a", "c"])
    b = Vocabulary.from_texts(["c", "a b"])
    assert a == b
    assert a.tokens[:2] == ["<pad>", "<unk>"]
    assert sorted(a.index.values()) == list(range(len(a)))


def test_init_deterministic_and_bounded(params):
    again = init_params(CFG, VOCAB, seed=0)
    for k in PARAM_KEYS:
        np.testing.assert_array_equal(params[k].data, again[k].data)
        assert np.all(np.isfinite(params[k].data))
    assert abs(params["img.patch.w"].data).max() <= 1 / math.sqrt(CFG.patch_dim)
    assert abs(params["img.h2.w"].data).max() <= 1 / math.sqrt(CFG.d_hidden)
    assert params.tau == pytest.approx(0.07)


def _pixels(seed):
    return np.random.default_rng(seed).uniform(size=(32, 32, 3)).astype(np.float32)


def test_unit_norm_and_determinism(params):
    f = embed_image(_pixels(1), params)
    assert abs(np.linalg.norm(f) - 1) < 1e-12
    np.testing.assert_array_equal(f, embed_image(_pixels(1), params))
    t = embed_text("a sharp photo", params)
    assert abs(np.linalg.norm(t) - 1) < 1e-12
    np.testing.assert_array_equal(t, embed_text("a sharp photo", params))


def test_patch_order_irrelevant(params):
    patches = patchify(_pixels(2), CFG)
    perm = np.random.default_rng(0).permutation(patches.shape[1])
    a = image_features_from_patches(patches, params).data
    b = image_features_from_patches(patches[:, perm], params).data
    np.testing.assert_allclose(a, b, atol=1e-14)


def test_word_order_irrelevant(params):
    np.testing.assert_allclose(embed_text("blurry and noisy", params), embed_text("noisy blurry and", params),
                               atol=1e-14)


def test_all_unknown_words_allowed(params):
    assert abs(np.linalg.norm(embed_text("zebra giraffe", params)) - 1) < 1e-12


def test_shape_mismatch(params):
    with pytest.raises(ShapeError):
        embed_image(np.zeros((16, 16, 3)), params)


def test_batched_matches_single(small_corpus, small_run):
    ims = small_corpus.images[:5]
    batch = embed_images(ims, small_run.params, batch=2)
    for im, row in zip(ims, batch):
        np.testing.assert_allclose(row, embed_image(im, small_run.params), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_cosine_bounded(seed):
    p = init_params(CFG, VOCAB, seed)
    s = float(embed_image(_pixels(seed), p) @ embed_text("good image", p))
    assert -1 - 1e-12 <= s <= 1 + 1e-12


def test_every_parameter_gets_gradient():
    texts = ["good image", "bad image", "a sharp photo", "blurry and noisy"]
    for seed in range(5):
        p = init_params(CFG, VOCAB, seed)
        patches = patchify(np.stack([_pixels(seed * 10 + i) for i in range(4)]), CFG)
        tape = tn.GradTape()
        with tape:
            _, _, loss = loss_on_batch(p, patches, [tokenize(t, VOCAB) for t in texts])
        grads = tn.backward(loss, tape, p.parameters())
        if all(np.any(grads[t] != 0) for t in p.parameters()):
            return
    pytest.fail("some parameter never received a gradient")
