"""SRCC/PLCC, the repeated 80/20 protocol, and text-to-image retrieval."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import rng as rng_mod
from .adapter import ENSEMBLE_GROUPS, AdapterConfig, PromptGroup, finetune_features, group_text_features, predict
from .checkpoint import Checkpoint
from .corpus import CorpusManifest, atomic_write
from .encoders import embed_images, embed_text
from .errors import ConfigError, DomainError, ShapeError, UndefinedMetricError


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(pred, dtype=np.float64).reshape(-1)
    b = np.asarray(gt, dtype=np.float64).reshape(-1)
    if a.size != b.size:
        raise ShapeError(f"length mismatch: {a.size} predictions vs {b.size} ground truth values")
    if a.size < 2:
        raise UndefinedMetricError("correlation needs at least 2 samples")
    return a, b


def fractional_ranks(x) -> np.ndarray:
    """1-based ranks, tied values sharing the mean of their positions."""
    a = np.asarray(x, dtype=np.float64).reshape(-1)
    order = np.argsort(a, kind="mergesort")
    sorted_a = a[order]
    # group boundaries of equal runs
    starts = np.flatnonzero(np.r_[True, sorted_a[1:] != sorted_a[:-1]])
    ends = np.r_[starts[1:], a.size]
    ranks = np.empty(a.size)
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = 0.5 * (s + e - 1) + 1.0
    return ranks


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    da = a - a.mean()
    db = b - b.mean()
    sa = math.sqrt(float(da @ da))
    sb = math.sqrt(float(db @ db))
    if sa == 0.0 or sb == 0.0:
        raise UndefinedMetricError("correlation is undefined for a constant input")
    return float(np.clip((da @ db) / (sa * sb), -1.0, 1.0))


def plcc(pred, gt) -> float:
    """Sample Pearson correlation on raw values (no logistic remapping)."""
    return _pearson(*_pair(pred, gt))


def srcc(pred, gt) -> float:
    """Spearman correlation: Pearson correlation of tie-averaged ranks."""
    a, b = _pair(pred, gt)
    if np.all(b == b[0]):
        raise UndefinedMetricError("SRCC is undefined for constant ground truth")
    return _pearson(fractional_ranks(a), fractional_ranks(b))


# ------------------------------------------------------------------ splits


@dataclass(frozen=True)
class SplitPlan:
    repeat: int
    train: tuple[str, ...]
    test: tuple[str, ...]
    seed: int


def make_splits(ids: Sequence[str] | CorpusManifest, repeats: int = 10, ratio: float = 0.8,
                seed: int = 0) -> list[SplitPlan]:
    """``repeats`` independent seeded shuffles, ``round(ratio * n)`` to train."""
    if isinstance(ids, CorpusManifest):
        ids = [im.id for im in ids.images]
    ids = list(ids)
    n = len(ids)
    if n < 5:
        raise DomainError(f"need at least 5 images to split, got {n}")
    if not 0 < ratio < 1:
        raise DomainError(f"split ratio must be in (0, 1), got {ratio}")
    n_train = int(math.floor(ratio * n + 0.5))
    plans = []
    for r in range(1, repeats + 1):
        perm = rng_mod.stream(seed, "splits", r).permutation(n)
        train = tuple(ids[i] for i in sorted(perm[:n_train]))
        test = tuple(ids[i] for i in sorted(perm[n_train:]))
        plans.append(SplitPlan(r, train, test, seed))
    return plans


# ---------------------------------------------------------------- protocol


def parse_mode(mode: str, k: int | None = None) -> tuple[str, int | None]:
    mode = mode.strip().replace("-", "_")
    if mode.startswith("few_label(") and mode.endswith(")"):
        k = int(mode[len("few_label("):-1])
        mode = "few_label"
    if mode not in ("zero_shot", "few_label", "full"):
        raise ConfigError(f"unknown evaluation mode {mode!r}")
    if mode == "few_label":
        if k is None or k < 1:
            raise ConfigError("few_label mode needs a positive label budget k")
        return mode, k
    return mode, None


def mode_label(mode: str, k: int | None) -> str:
    return f"few_label({k})" if mode == "few_label" else mode


@dataclass
class RepeatResult:
    srcc: float
    plcc: float
    steps: int = 0
    n_train: int = 0
    test_ids: tuple[str, ...] = ()
    predictions: tuple[float, ...] = ()


@dataclass
class EvalReport:
    mode: str
    repeats: list[RepeatResult]
    median_srcc: float
    median_plcc: float
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "repeats": [{"srcc": r.srcc, "plcc": r.plcc} for r in self.repeats],
            "median_srcc": self.median_srcc,
            "median_plcc": self.median_plcc,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        reps = [RepeatResult(float(r["srcc"]), float(r["plcc"])) for r in d["repeats"]]
        return cls(d["mode"], reps, float(d["median_srcc"]), float(d["median_plcc"]))


def save_report(report: EvalReport, path) -> None:
    atomic_write(path, report.to_json())


def default_groups(mode: str, adapter_config: AdapterConfig) -> tuple[PromptGroup, ...]:
    return adapter_config.groups if mode == "full" else ENSEMBLE_GROUPS


def run_protocol(checkpoint: Checkpoint, corpus: CorpusManifest, mode: str = "zero_shot", repeats: int = 10,
                 k: int | None = None, seed: int = 0, ratio: float = 0.8,
                 adapter_config: AdapterConfig = AdapterConfig(),
                 groups: Sequence[PromptGroup] | None = None) -> EvalReport:
    """Score each repeat's test split, fine-tuning the adapter first unless
    ``mode`` is zero_shot; report per-repeat and median SRCC/PLCC."""
    mode, k = parse_mode(mode, k)
    encoder = checkpoint.encoder()
    groups = tuple(groups) if groups is not None else default_groups(mode, adapter_config)
    group_feats = group_text_features(groups, encoder)
    tau = encoder.tau
    images = corpus.images
    index = {im.id: i for i, im in enumerate(images)}
    feats = embed_images(images, encoder)
    mos = np.array([im.mos for im in images])
    targets = np.array([im.normalized_mos for im in images])
    results = []
    for plan in make_splits([im.id for im in images], repeats, ratio, seed):
        train_idx = np.array([index[i] for i in plan.train])
        test_idx = np.array([index[i] for i in plan.test])
        adapter, steps = None, 0
        if mode != "zero_shot":
            if mode == "few_label":
                if k > len(train_idx):
                    raise ConfigError(f"few_label k={k} exceeds the {len(train_idx)} training images")
                pick = rng_mod.stream(seed, "few-label", plan.repeat).choice(len(train_idx), size=k, replace=False)
                train_idx = train_idx[np.sort(pick)]
            cfg = AdapterConfig(**{**adapter_config.__dict__, "seed": rng_mod.derive_seed(seed, "adapter",
                                                                                         plan.repeat)})
            fit = finetune_features(feats[train_idx], targets[train_idx], group_feats, tau, cfg)
            adapter, steps = fit.adapter, fit.steps
        pred = predict(feats[test_idx], adapter, group_feats, tau)
        results.append(RepeatResult(srcc(pred, mos[test_idx]), plcc(pred, mos[test_idx]), steps, len(train_idx),
                                    plan.test, tuple(float(p) for p in pred)))
    return EvalReport(
        mode_label(mode, k),
        results,
        float(np.median([r.srcc for r in results])),
        float(np.median([r.plcc for r in results])),
        {"groups": [g.prompts for g in groups]},
    )


# ---------------------------------------------------------------- retrieval


def retrieve(checkpoint: Checkpoint, query: str, corpus: CorpusManifest, k: int) -> list[tuple[str, float]]:
    """Top-``k`` (image id, cosine similarity), best first, ties by id."""
    if not corpus.images:
        raise DomainError("cannot retrieve from an empty corpus")
    if not 1 <= k <= len(corpus.images):
        raise DomainError(f"k must be in [1, {len(corpus.images)}], got {k}")
    encoder = checkpoint.encoder()
    q = embed_text(query, encoder)
    sims = embed_images(corpus.images, encoder) @ q
    ranked = sorted(zip((im.id for im in corpus.images), sims.tolist()), key=lambda t: (-t[1], t[0]))
    return ranked[:k]
