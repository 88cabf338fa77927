"""Caption purification by aesthetics-relevance and informativeness ranks.

Per image with ``n`` authentic captions:

* ``AR`` ranks captions by cosine similarity under the aesthetics encoder,
* ``IR`` ranks them by sentence length,
* ``AIR`` ranks ``alpha * AR + beta * IR`` ascending,

and the captions with ``AIR <= K`` are kept. Rank 1 is always best; ties go
to the lower caption index.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .checkpoint import Checkpoint
from .corpus import CaptionRecord, CorpusManifest, atomic_write
from .encoders import EncoderParams, embed_images, text_features
from .errors import ConfigError, DomainError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PurificationConfig:
    k: int = 4
    alpha: float = 1.0
    beta: float = 1.0
    length_mode: str = "tokens"  # or "chars"

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"K must be >= 1, got {self.k}")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError(f"alpha and beta must be nonnegative, got ({self.alpha}, {self.beta})")
        if self.alpha == 0 and self.beta == 0:
            raise ConfigError("alpha and beta cannot both be zero")
        if self.length_mode not in ("tokens", "chars"):
            raise ConfigError(f"unknown length mode {self.length_mode!r}")


@dataclass(frozen=True)
class PurificationRecord:
    image_id: str
    i: int
    s_a: float
    s_i: float
    ar: int
    ir: int
    air: int
    kept: bool

    def to_json(self) -> str:
        return json.dumps({"image_id": self.image_id, "i": self.i, "s_a": self.s_a, "s_i": self.s_i,
                           "ar": self.ar, "ir": self.ir, "air": self.air, "kept": self.kept})


def rank_desc(scores: Sequence[float]) -> list[int]:
    """Rank 1 for the highest score; equal scores keep index order."""
    if len(scores) == 0:
        raise DomainError("cannot rank an empty list")
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    ranks = [0] * len(scores)
    for r, i in enumerate(order, start=1):
        ranks[i] = r
    return ranks


def rank_asc(values: Sequence[float]) -> list[int]:
    order = sorted(range(len(values)), key=lambda i: (values[i], i))
    ranks = [0] * len(values)
    for r, i in enumerate(order, start=1):
        ranks[i] = r
    return ranks


def informativeness(text: str, mode: str = "tokens") -> float:
    """Sentence length: whitespace tokens after trimming (or characters)."""
    stripped = text.strip()
    if not stripped:
        raise DomainError("cannot measure the length of empty text")
    return float(len(stripped) if mode == "chars" else len(stripped.split()))


def air(s_a: Sequence[float], s_i: Sequence[float], config: PurificationConfig = PurificationConfig()
        ) -> tuple[list[int], list[int], list[int]]:
    """(AR, IR, AIR) for one image's captions."""
    if len(s_a) != len(s_i):
        raise DomainError(f"score lists differ in length: {len(s_a)} vs {len(s_i)}")
    ar = rank_desc(s_a)
    ir = rank_desc(s_i)
    combined = [config.alpha * a + config.beta * b for a, b in zip(ar, ir)]
    return ar, ir, rank_asc(combined)


@dataclass
class PurifyResult:
    corpus: CorpusManifest  # the images with their kept authentic captions
    audit: list[PurificationRecord]

    def audit_jsonl(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.audit)


def relevance_scores(encoder: EncoderParams, image_feat: np.ndarray, texts: Sequence[str]) -> np.ndarray:
    return text_features(list(texts), encoder).data @ image_feat


def purify(corpus: CorpusManifest, encoder: Checkpoint | EncoderParams,
           config: PurificationConfig = PurificationConfig()) -> PurifyResult:
    """Keep the Top-K authentic captions per image by AIR.

    Images lacking authentic captions are skipped with a warning. The audit
    covers every authentic caption, in image-id order.
    """
    if isinstance(encoder, Checkpoint):
        encoder = encoder.encoder()
    by_image = corpus.captions_by_image(["authentic"])
    kept: list[CaptionRecord] = []
    audit: list[PurificationRecord] = []
    with_caps = [im for im in corpus.images if by_image[im.id]]
    for im in corpus.images:
        if not by_image[im.id]:
            log.warning("image %s has no authentic captions; skipped", im.id)
    feats = embed_images(with_caps, encoder) if with_caps else np.zeros((0, encoder.config.d))
    results: dict[str, tuple[list[CaptionRecord], list[PurificationRecord]]] = {}
    for im, feat in zip(with_caps, feats):
        caps = by_image[im.id]
        s_a = relevance_scores(encoder, feat, [c.text for c in caps]).tolist()
        s_i = [informativeness(c.text, config.length_mode) for c in caps]
        ar, ir, airs = air(s_a, s_i, config)
        recs = [
            PurificationRecord(im.id, i, float(s_a[i]), s_i[i], ar[i], ir[i], airs[i], airs[i] <= config.k)
            for i in range(len(caps))
        ]
        results[im.id] = ([c for c, r in zip(caps, recs) if r.kept], recs)
    for image_id in sorted(results):
        audit.extend(results[image_id][1])
    for im in with_caps:
        kept.extend(results[im.id][0])
    return PurifyResult(CorpusManifest(list(corpus.images), kept, corpus.name), audit)


def save_audit(result: PurifyResult, path) -> None:
    atomic_write(path, result.audit_jsonl())
