"""Tiny dual encoder: patch MLP for images, bag-of-embeddings for text.

Both towers end in a two-layer ReLU head and an L2 normalisation, so image
and text features live on the same unit sphere of dimension ``d``.
"""

from __future__ import annotations

import math
import re
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from . import rng as rng_mod
from . import tensor as tn
from .corpus import ImageRecord
from .errors import DegenerateInputError, ShapeError
from .tensor import Tensor

PAD, UNK = 0, 1
_PUNCT = re.compile(r"[^\w\s]")


@dataclass(frozen=True)
class EncoderConfig:
    image_size: int = 32
    channels: int = 3
    patch: int = 8
    d: int = 64
    d_hidden: int = 128
    max_len: int = 32
    tau_init: float = 0.07
    tau_floor: float = 1e-3

    @property
    def n_patches(self) -> int:
        return (self.image_size // self.patch) ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch * self.patch * self.channels


class Vocabulary:
    """Token to id map with ``0=<pad>`` and ``1=<unk>``; words sorted for a
    construction order independent of corpus order."""

    def __init__(self, words: Iterable[str] = ()):
        self.tokens = ["<pad>", "<unk>"] + sorted(set(words) - {"<pad>", "<unk>"})
        self.index = {t: i for i, t in enumerate(self.tokens)}

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "Vocabulary":
        words = set()
        for t in texts:
            words.update(split_words(t))
        return cls(words)

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def lookup(self, word: str) -> int:
        return self.index.get(word, UNK)


def split_words(text: str) -> list[str]:
    return _PUNCT.sub(" ", text.lower()).split()


def tokenize(text: str, vocab: Vocabulary, max_len: int = 32) -> list[int]:
    words = split_words(text)
    if not words:
        raise DegenerateInputError(f"text {text!r} has no tokens")
    return [vocab.lookup(w) for w in words[:max_len]]


# ------------------------------------------------------------------- params

IMAGE_KEYS = ("img.patch.w", "img.patch.b", "img.h1.w", "img.h1.b", "img.h2.w", "img.h2.b")
TEXT_KEYS = ("txt.embed", "txt.h1.w", "txt.h1.b", "txt.h2.w", "txt.h2.b")
PARAM_KEYS = IMAGE_KEYS + TEXT_KEYS + ("log_tau",)


class EncoderParams:
    """Named parameter tensors plus the vocabulary they were built for."""

    def __init__(self, tensors: dict[str, Tensor], config: EncoderConfig, vocab: Vocabulary):
        self.tensors = tensors
        self.config = config
        self.vocab = vocab

    def __getitem__(self, key: str) -> Tensor:
        return self.tensors[key]

    def parameters(self) -> list[Tensor]:
        return [self.tensors[k] for k in PARAM_KEYS]

    @property
    def tau(self) -> float:
        return math.exp(float(self.tensors["log_tau"].data))

    def clamp_tau(self) -> None:
        lt = self.tensors["log_tau"]
        lt.data = np.maximum(lt.data, math.log(self.config.tau_floor))

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {k: self.tensors[k].data.astype(np.float32) for k in PARAM_KEYS}

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], config: EncoderConfig, vocab: Vocabulary,
                    trainable: bool = False) -> "EncoderParams":
        missing = [k for k in PARAM_KEYS if k not in arrays]
        if missing:
            raise ShapeError(f"encoder tensors missing: {missing}")
        tensors = {k: Tensor(np.asarray(arrays[k], dtype=np.float64), requires_grad=trainable, name=k)
                   for k in PARAM_KEYS}
        return cls(tensors, config, vocab)

    def config_dict(self) -> dict:
        return asdict(self.config)


def init_params(config: EncoderConfig, vocab: Vocabulary, seed: int) -> EncoderParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases,
    temperature at ``tau_init``."""
    gen = rng_mod.stream(seed, "encoders", "init")

    def weight(fan_in, *shape):
        bound = 1.0 / math.sqrt(fan_in)
        return gen.uniform(-bound, bound, size=shape)

    dh, d = config.d_hidden, config.d
    arrays = {
        "img.patch.w": weight(config.patch_dim, config.patch_dim, dh),
        "img.patch.b": np.zeros(dh),
        "img.h1.w": weight(dh, dh, dh),
        "img.h1.b": np.zeros(dh),
        "img.h2.w": weight(dh, dh, d),
        "img.h2.b": np.zeros(d),
        # a lookup row has fan-in 1
        "txt.embed": weight(1, len(vocab), dh),
        "txt.h1.w": weight(dh, dh, dh),
        "txt.h1.b": np.zeros(dh),
        "txt.h2.w": weight(dh, dh, d),
        "txt.h2.b": np.zeros(d),
        "log_tau": np.array(math.log(config.tau_init)),
    }
    params = EncoderParams.from_arrays(arrays, config, vocab, trainable=True)
    return params


# ------------------------------------------------------------------ forward


def patchify(pixels: np.ndarray, config: EncoderConfig) -> np.ndarray:
    """(B, H, W, C) -> (B, n_patches, patch*patch*C), row-major patch order."""
    px = np.asarray(pixels, dtype=np.float64)
    if px.ndim == 3:
        px = px[None]
    b, h, w, c = px.shape
    p = config.patch
    if h != config.image_size or w != config.image_size or c != config.channels:
        raise ShapeError(
            f"image shape {[h, w, c]} does not match encoder grid "
            f"{[config.image_size, config.image_size, config.channels]}"
        )
    grid = px.reshape(b, h // p, p, w // p, p, c).transpose(0, 1, 3, 2, 4, 5)
    return grid.reshape(b, (h // p) * (w // p), p * p * c)


def _head(x: Tensor, params: EncoderParams, prefix: str) -> Tensor:
    hidden = tn.relu(x @ params[f"{prefix}.h1.w"] + params[f"{prefix}.h1.b"])
    return tn.l2_normalize(hidden @ params[f"{prefix}.h2.w"] + params[f"{prefix}.h2.b"], axis=-1)


def image_features_from_patches(patches: np.ndarray, params: EncoderParams) -> Tensor:
    b, n, k = patches.shape
    flat = Tensor(patches.reshape(b * n, k) - 0.5)
    tokens = tn.relu(flat @ params["img.patch.w"] + params["img.patch.b"])
    pooled = tn.mean(tn.reshape(tokens, (b, n, -1)), axis=1)
    return _head(pooled, params, "img")


def image_features(pixels: np.ndarray, params: EncoderParams) -> Tensor:
    """Unit-norm features for a (B, H, W, C) batch: patch projection, ReLU,
    mean over patches, two-layer head."""
    return image_features_from_patches(patchify(pixels, params.config), params)


def pooling_matrix(token_lists: Sequence[Sequence[int]], vocab_size: int) -> np.ndarray:
    """Row b holds token frequencies of text b, so ``M @ E`` is a mean over
    its (non-pad) token embeddings."""
    m = np.zeros((len(token_lists), vocab_size))
    for row, ids in enumerate(token_lists):
        for i in ids:
            m[row, i] += 1.0
        m[row] /= len(ids)
    return m


def text_features_from_ids(token_lists: Sequence[Sequence[int]], params: EncoderParams) -> Tensor:
    pool = Tensor(pooling_matrix(token_lists, len(params.vocab)))
    return _head(pool @ params["txt.embed"], params, "txt")


def text_features(texts: Sequence[str], params: EncoderParams) -> Tensor:
    ids = [tokenize(t, params.vocab, params.config.max_len) for t in texts]
    return text_features_from_ids(ids, params)


def embed_image(image: ImageRecord | np.ndarray, params: EncoderParams) -> np.ndarray:
    px = image.pixels if isinstance(image, ImageRecord) else image
    if px is None:
        raise ShapeError(f"image {image.id} has no inline pixels")
    return image_features(px[None], params).data[0]


def embed_text(text: str, params: EncoderParams) -> np.ndarray:
    return text_features([text], params).data[0]


def embed_images(images: Sequence[ImageRecord], params: EncoderParams, batch: int = 256) -> np.ndarray:
    """Stacked (n, d) features, computed without recording gradients."""
    out = []
    for start in range(0, len(images), batch):
        chunk = images[start:start + batch]
        missing = [im.id for im in chunk if im.pixels is None]
        if missing:
            raise ShapeError(f"images without inline pixels: {missing[:5]}")
        out.append(image_features(np.stack([im.pixels for im in chunk]), params).data)
    return np.concatenate(out, axis=0) if out else np.zeros((0, params.config.d))
