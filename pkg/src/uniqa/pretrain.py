"""Symmetric image-text contrastive pre-training."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng as rng_mod
from . import tensor as tn
from .checkpoint import Checkpoint, config_hash
from .corpus import CorpusManifest, atomic_write
from .encoders import (
    EncoderConfig,
    EncoderParams,
    Vocabulary,
    image_features_from_patches,
    init_params,
    patchify,
    text_features_from_ids,
    tokenize,
)
from .errors import ConfigError, ShapeError
from .tensor import Tensor

log = logging.getLogger(__name__)

ALL_SOURCES = ("gen_iqa", "gen_iaa", "authentic")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 20
    lr: float = 2e-3
    weight_decay: float = 0.0
    seed: int = 0
    sources: tuple[str, ...] = ALL_SOURCES
    # relative caption sampling weight per source; missing sources weigh 1
    source_weights: dict = field(default_factory=dict)
    encoder: EncoderConfig = EncoderConfig()

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError(f"contrastive batches need batch_size >= 2, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sources"] = list(self.sources)
        return d


@dataclass(frozen=True)
class TrainStepOutput:
    l_image: float
    l_text: float
    loss: float
    grad_norm: float = 0.0
    step: int = 0
    epoch: int = 0


def batch_logits(image_feats, text_feats, tau) -> Tensor:
    """``logits[i, j] = <I_i, T_j> / tau``; ``tau`` may be a float or a Tensor."""
    image_feats, text_feats = tn.as_tensor(image_feats), tn.as_tensor(text_feats)
    if image_feats.shape != text_feats.shape or image_feats.ndim != 2:
        raise ShapeError(f"feature batches must be equal N x D, got {list(image_feats.shape)} "
                         f"and {list(text_feats.shape)}")
    sims = image_feats @ tn.transpose(text_feats)
    if isinstance(tau, Tensor):
        return sims * tn.reciprocal(tau)
    if not tau > 0:
        raise ShapeError(f"temperature must be positive, got {tau}")
    return sims * (1.0 / tau)


def contrastive_terms(logits) -> tuple[Tensor, Tensor, Tensor]:
    """(L_image, L_text, L) as tensors: cross-entropy of each row (image to
    text) and each column (text to image) against the diagonal."""
    logits = tn.as_tensor(logits)
    if logits.ndim != 2 or logits.shape[0] != logits.shape[1]:
        raise ShapeError(f"contrastive logits must be square, got {list(logits.shape)}")
    l_image = -tn.mean(tn.diagonal(tn.log_softmax(logits, axis=1)))
    l_text = -tn.mean(tn.diagonal(tn.log_softmax(logits, axis=0)))
    return l_image, l_text, (l_image + l_text) * 0.5


def contrastive_loss(logits) -> TrainStepOutput:
    l_image, l_text, total = contrastive_terms(logits)
    return TrainStepOutput(l_image.item(), l_text.item(), total.item())


def _log_tau_tensor(params: EncoderParams) -> Tensor:
    return tn.exp(params["log_tau"])


def loss_on_batch(params: EncoderParams, patches: np.ndarray, token_lists) -> tuple[Tensor, Tensor, Tensor]:
    img = image_features_from_patches(patches, params)
    txt = text_features_from_ids(token_lists, params)
    return contrastive_terms(batch_logits(img, txt, _log_tau_tensor(params)))


def build_pairs(corpus: CorpusManifest, config: TrainConfig) -> tuple[list[str], dict[str, list[tuple[str, float]]]]:
    """Images that have at least one selected caption, and per image the
    candidate (text, weight) list."""
    keep = set(config.sources)
    per_image: dict[str, list[tuple[str, float]]] = {}
    for c in corpus.captions:
        if c.source in keep:
            w = float(config.source_weights.get(c.source, 1.0))
            if w > 0:
                per_image.setdefault(c.image_id, []).append((c.text, w))
    ids = [im.id for im in corpus.images if im.id in per_image]
    return ids, per_image


@dataclass
class PretrainResult:
    checkpoint: Checkpoint
    history: list[TrainStepOutput]
    params: EncoderParams

    def epoch_means(self) -> list[float]:
        by: dict[int, list[float]] = {}
        for h in self.history:
            by.setdefault(h.epoch, []).append(h.loss)
        return [float(np.mean(by[e])) for e in sorted(by)]


def pretrain_run(corpus: CorpusManifest, config: TrainConfig = TrainConfig(), kind: str = "uniqa") -> PretrainResult:
    """Adam on the symmetric contrastive loss.

    Each epoch draws one caption per image (seeded, weighted by source), so a
    batch never contains the same image twice. Runs ``epochs * (pairs // N)``
    steps.
    """
    ids, per_image = build_pairs(corpus, config)
    n_pairs = len(ids)
    if n_pairs < config.batch_size:
        raise ConfigError(
            f"corpus has {n_pairs} image-caption pairs from sources {list(config.sources)}, "
            f"fewer than batch_size={config.batch_size}"
        )
    images = corpus.by_id()
    vocab = Vocabulary.from_texts(t for i in ids for t, _ in per_image[i])
    params = init_params(config.encoder, vocab, config.seed)
    ecfg = config.encoder
    patches = {i: patchify(images[i].pixels, ecfg)[0] for i in ids}
    token_cache: dict[str, list[int]] = {}

    def tokens(text):
        if text not in token_cache:
            token_cache[text] = tokenize(text, vocab, ecfg.max_len)
        return token_cache[text]

    plist = params.parameters()
    opt = tn.Adam(plist, lr=config.lr, weight_decay=config.weight_decay)
    history: list[TrainStepOutput] = []
    steps_per_epoch = n_pairs // config.batch_size
    step = 0
    for epoch in range(config.epochs):
        gen = rng_mod.stream(config.seed, "pretrain", "epoch", epoch)
        order = gen.permutation(n_pairs)
        chosen = []
        for idx in range(n_pairs):
            cands = per_image[ids[idx]]
            w = np.array([c[1] for c in cands])
            chosen.append(cands[int(gen.choice(len(cands), p=w / w.sum()))][0])
        for b in range(steps_per_epoch):
            sel = order[b * config.batch_size:(b + 1) * config.batch_size]
            batch_patches = np.stack([patches[ids[i]] for i in sel])
            batch_tokens = [tokens(chosen[i]) for i in sel]
            tape = tn.GradTape()
            with tape:
                l_image, l_text, loss = loss_on_batch(params, batch_patches, batch_tokens)
            grads = tn.backward(loss, tape, plist)
            glist = [grads[p] for p in plist]
            opt.step(glist)
            params.clamp_tau()
            history.append(TrainStepOutput(l_image.item(), l_text.item(), loss.item(), tn.global_norm(glist),
                                           step, epoch))
            step += 1
        log.info("%s epoch %d: mean loss %.4f", kind, epoch,
                 np.mean([h.loss for h in history[-steps_per_epoch:]]))
    provenance = {
        "kind": kind,
        "corpus": corpus.name,
        "seed": config.seed,
        "config_hash": config_hash(config.to_dict()),
        "config": config.to_dict(),
        "steps": step,
    }
    return PretrainResult(Checkpoint.from_encoder(params, provenance), history, params)


def pretrain_aes(corpus: CorpusManifest, config: TrainConfig = TrainConfig()) -> PretrainResult:
    """Aesthetics-aware encoder trained on generated IAA captions only."""
    if not any(c.source == "gen_iaa" for c in corpus.captions):
        raise ConfigError("corpus has no gen_iaa captions to train the aesthetics encoder on")
    cfg = TrainConfig(**{**config.__dict__, "sources": ("gen_iaa",)})
    return pretrain_run(corpus, cfg, kind="clip_aes")


def loss_curve_csv(history: list[TrainStepOutput]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "epoch", "l_image", "l_text", "l"])
    for h in history:
        w.writerow([h.step, h.epoch, repr(h.l_image), repr(h.l_text), repr(h.loss)])
    return buf.getvalue()


def save_loss_curve(history: list[TrainStepOutput], path) -> None:
    atomic_write(path, loss_curve_csv(history))
