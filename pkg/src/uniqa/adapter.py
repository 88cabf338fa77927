"""Multi-cue integration adapter.

A residual bottleneck MLP nudges frozen image features; the adapted feature
is compared with the five level prompts of each prompt group, and a softmax
over those similarities weights the level scores ``c = (0.2, ..., 1.0)``.
Several groups are averaged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import rng as rng_mod
from . import tensor as tn
from .checkpoint import Checkpoint
from .encoders import EncoderParams, text_features
from .errors import ConfigError, DomainError, ParseError, ShapeError
from .tensor import Tensor

LEVEL_SCORES = (0.2, 0.4, 0.6, 0.8, 1.0)


@dataclass(frozen=True)
class PromptGroup:
    phrases: tuple[str, ...]
    template: str = "{level} image"
    scores: tuple[float, ...] = LEVEL_SCORES

    def __post_init__(self):
        if len(self.phrases) != 5:
            raise DomainError(f"a prompt group needs 5 phrases ordered bad to perfect, got {len(self.phrases)}")
        if len(self.scores) != 5 or any(b <= a for a, b in zip(self.scores, self.scores[1:])):
            raise DomainError(f"level scores must be 5 strictly increasing values, got {self.scores}")
        if not (0 < self.scores[0] and self.scores[-1] <= 1):
            raise DomainError(f"level scores must lie in (0, 1], got {self.scores}")
        if "{level}" not in self.template:
            raise DomainError(f"template {self.template!r} lacks a {{level}} slot")

    @property
    def prompts(self) -> list[str]:
        return [self.template.format(level=p) for p in self.phrases]


BASE_GROUP = PromptGroup(("bad", "poor", "fair", "good", "perfect"))
BLUR_GROUP = PromptGroup(("extremely blurry", "blurry", "fair", "sharp", "extremely sharp"))
NOISE_GROUP = PromptGroup(("extremely noisy", "noisy", "fair", "noise-free", "extremely noise-free"))
QUALITY_GROUP = PromptGroup(
    ("extremely low-quality", "low-quality", "fair", "high-quality", "extremely high-quality")
)
ENSEMBLE_GROUPS = (BASE_GROUP, BLUR_GROUP, NOISE_GROUP, QUALITY_GROUP)
AGIQA_GROUPS = (BASE_GROUP, PromptGroup(BASE_GROUP.phrases, template="{level} content"))


def parse_prompt_groups(text: str) -> list[PromptGroup]:
    """Blank-line separated blocks of five phrases (bad first), each with an
    optional ``template:`` line."""
    groups = []
    block: list[tuple[int, str]] = []
    for lineno, raw in enumerate(text.splitlines() + [""], start=1):
        line = raw.strip()
        if line.startswith("#"):
            continue
        if line:
            block.append((lineno, line))
            continue
        if not block:
            continue
        template = "{level} image"
        phrases = []
        for ln, item in block:
            if item.lower().startswith("template:"):
                template = item.split(":", 1)[1].strip()
            else:
                phrases.append(item)
        try:
            groups.append(PromptGroup(tuple(phrases), template))
        except DomainError as exc:
            raise ParseError(str(exc), line=block[0][0]) from None
        block = []
    return groups


def group_text_features(groups: Sequence[PromptGroup], encoder: EncoderParams) -> list[np.ndarray]:
    """Frozen (5, d) prompt features per group."""
    return [text_features(g.prompts, encoder).data for g in groups]


# ------------------------------------------------------------------ params


@dataclass
class AdapterParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    KEYS = ("adapter.w1", "adapter.b1", "adapter.w2", "adapter.b2")

    def parameters(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]

    @property
    def bottleneck(self) -> int:
        return self.w1.shape[1]

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {k: p.data.astype(np.float32) for k, p in zip(self.KEYS, self.parameters())}

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], trainable: bool = False) -> "AdapterParams":
        for k in cls.KEYS:
            if k not in arrays:
                raise ShapeError(f"adapter tensor {k!r} missing")
        return cls(*(Tensor(np.asarray(arrays[k], dtype=np.float64), requires_grad=trainable, name=k)
                     for k in cls.KEYS))

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "AdapterParams":
        return cls.from_arrays(ckpt.tensors)

    def copy(self, trainable: bool = True) -> "AdapterParams":
        return AdapterParams(*(Tensor(p.data.copy(), requires_grad=trainable, name=p.name)
                               for p in self.parameters()))


def init_adapter(d: int, bottleneck: int, seed: int) -> AdapterParams:
    """Random first layer, zero second layer: the adapter starts as identity."""
    if bottleneck < 1:
        raise ConfigError(f"adapter bottleneck must be >= 1, got {bottleneck}")
    bound = 1.0 / math.sqrt(d)
    w1 = rng_mod.stream(seed, "adapter", "init").uniform(-bound, bound, size=(d, bottleneck))
    return AdapterParams(
        tn.parameter(w1, "adapter.w1"),
        tn.parameter(np.zeros(bottleneck), "adapter.b1"),
        tn.parameter(np.zeros((bottleneck, d)), "adapter.w2"),
        tn.parameter(np.zeros(d), "adapter.b2"),
    )


# ----------------------------------------------------------------- forward


def adapt(features, params: AdapterParams | None) -> Tensor:
    """``normalize(W2 relu(W1 I + b1) + b2 + I)``; without params just
    ``normalize(I)``. Works on a single (d,) vector or an (n, d) batch."""
    x = tn.as_tensor(features)
    if params is None:
        return tn.l2_normalize(x, axis=-1)
    single = x.ndim == 1
    if single:
        x = tn.reshape(x, (1, -1))
    hidden = tn.relu(x @ params.w1 + params.b1)
    out = tn.l2_normalize(hidden @ params.w2 + params.b2 + x, axis=-1)
    return tn.reshape(out, (-1,)) if single else out


@dataclass(frozen=True)
class ScorePrediction:
    q: float
    q_f: float
    weights: tuple[float, ...]
    group_scores: tuple[float, ...] = field(default=())


def _weighted_level_score(adapted: Tensor, text_feats: np.ndarray, tau: float, scores) -> tuple[Tensor, Tensor]:
    sims = adapted @ Tensor(np.asarray(text_feats).T)
    weights = tn.softmax(sims, temperature=tau, axis=-1)
    return weights @ Tensor(np.asarray(scores, dtype=np.float64).reshape(-1, 1)), weights


def score_tensor(adapted: Tensor, group_feats: Sequence[np.ndarray], tau: float,
                 scores=LEVEL_SCORES) -> Tensor:
    """(n,) ensemble score for (n, d) adapted features: mean over groups of
    the softmax-weighted level score."""
    if not group_feats:
        raise DomainError("at least one prompt group is required")
    if not tau > 0:
        raise DomainError(f"temperature must be positive, got {tau}")
    total = None
    for feats in group_feats:
        q, _ = _weighted_level_score(adapted, feats, tau, scores)
        total = q if total is None else total + q
    return tn.reshape(total * (1.0 / len(group_feats)), (-1,))


def multi_cue_score(adapted, text_feats: np.ndarray, tau: float, scores=LEVEL_SCORES) -> ScorePrediction:
    """Score of one adapted feature against a single group's (5, d) prompt features."""
    if not tau > 0:
        raise DomainError(f"temperature must be positive, got {tau}")
    x = tn.as_tensor(adapted)
    q, weights = _weighted_level_score(tn.reshape(x, (1, -1)), text_feats, tau, scores)
    qv = float(q.data[0, 0])
    return ScorePrediction(qv, qv, tuple(float(w) for w in weights.data[0]), (qv,))


def ensemble_score(adapted, group_feats: Sequence[np.ndarray], tau: float, scores=LEVEL_SCORES) -> ScorePrediction:
    if not group_feats:
        raise DomainError("at least one prompt group is required")
    preds = [multi_cue_score(adapted, f, tau, scores) for f in group_feats]
    qs = [p.q for p in preds]
    return ScorePrediction(preds[0].q, sum(qs) / len(qs), preds[0].weights, tuple(qs))


def predict(features: np.ndarray, adapter: AdapterParams | None, group_feats: Sequence[np.ndarray],
            tau: float) -> np.ndarray:
    """Scores for an (n, d) batch of frozen image features."""
    return score_tensor(adapt(np.asarray(features), adapter), group_feats, tau).data.copy()


def predict_views(view_features: np.ndarray, adapter: AdapterParams | None, group_feats, tau: float) -> float:
    """Average score over several views (e.g. crops) of one image."""
    return float(np.mean(predict(view_features, adapter, group_feats, tau)))


# ---------------------------------------------------------------- training


@dataclass(frozen=True)
class AdapterConfig:
    bottleneck: int | None = None  # defaults to d // 4
    epochs: int = 40
    batch_size: int = 8
    lr: float = 2e-3
    seed: int = 0
    groups: tuple[PromptGroup, ...] = (BASE_GROUP,)


@dataclass
class FinetuneResult:
    adapter: AdapterParams
    mse_history: list[float]  # full-train-set MSE, index 0 before any step
    steps: int


def mse_loss(adapter: AdapterParams, features: np.ndarray, targets: np.ndarray, group_feats, tau: float) -> Tensor:
    pred = score_tensor(adapt(features, adapter), group_feats, tau)
    diff = pred - Tensor(np.asarray(targets, dtype=np.float64))
    return tn.mean(diff * diff)


def finetune_features(features: np.ndarray, targets: np.ndarray, group_feats: Sequence[np.ndarray], tau: float,
                      config: AdapterConfig = AdapterConfig(), init: AdapterParams | None = None) -> FinetuneResult:
    """Fit the adapter by minibatch Adam on MSE against [0, 1] targets.

    Only adapter tensors are updated; ``features`` and ``group_feats`` come
    from frozen encoders.
    """
    features = np.asarray(features, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    n = len(features)
    if n == 0:
        raise ConfigError("fine-tuning needs a non-empty training split")
    d = features.shape[1]
    adapter = init.copy() if init is not None else init_adapter(d, config.bottleneck or max(1, d // 4), config.seed)
    plist = adapter.parameters()
    opt = tn.Adam(plist, lr=config.lr)
    history = [float(mse_loss(adapter, features, targets, group_feats, tau).item())]
    steps = 0
    for epoch in range(config.epochs):
        order = rng_mod.stream(config.seed, "adapter", "epoch", epoch).permutation(n)
        for start in range(0, n, config.batch_size):
            sel = order[start:start + config.batch_size]
            tape = tn.GradTape()
            with tape:
                loss = mse_loss(adapter, features[sel], targets[sel], group_feats, tau)
            grads = tn.backward(loss, tape, plist)
            opt.step([grads[p] for p in plist])
            steps += 1
        history.append(float(mse_loss(adapter, features, targets, group_feats, tau).item()))
    for p in plist:
        p.requires_grad = False
    return FinetuneResult(adapter, history, steps)


def finetune(checkpoint: Checkpoint, corpus, config: AdapterConfig = AdapterConfig(),
             image_ids: Sequence[str] | None = None) -> FinetuneResult:
    """Fine-tune on ``image_ids`` (default: the corpus's train split, or all
    images when none are tagged train) with MOS normalised to [0, 1]."""
    from .encoders import embed_images

    encoder = checkpoint.encoder()
    if image_ids is None:
        train = [im for im in corpus.images if im.split == "train"] or list(corpus.images)
    else:
        lookup = corpus.by_id()
        train = [lookup[i] for i in image_ids]
    if not train:
        raise ConfigError("fine-tuning needs a non-empty training split")
    feats = embed_images(train, encoder)
    targets = np.array([im.normalized_mos for im in train])
    return finetune_features(feats, targets, group_text_features(config.groups, encoder), encoder.tau, config)
