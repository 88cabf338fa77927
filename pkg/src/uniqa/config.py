"""One JSON document configuring every stage; unknown keys are rejected."""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .adapter import AGIQA_GROUPS, BASE_GROUP, ENSEMBLE_GROUPS, AdapterConfig, PromptGroup, parse_prompt_groups
from .corpus import SyntheticConfig
from .encoders import EncoderConfig
from .errors import ConfigError
from .pretrain import ALL_SOURCES, TrainConfig
from .purification import PurificationConfig

DEFAULTS: dict = {
    "synthetic": {
        "height": 32, "width": 32, "channels": 3, "scale": [0.0, 100.0], "sigma_max": 0.25, "blur_max": 2,
        "amplitude": 0.3, "authentic_min": 2, "authentic_max": 6, "relevant_prob": 0.55,
    },
    "captioner": {"url": "mock://0", "timeout": 30.0, "backoff": 0.5, "max_workers": 1, "observed_range": False},
    "encoder": {
        "image_size": 32, "channels": 3, "patch": 8, "d": 64, "d_hidden": 128, "max_len": 32,
        "tau_init": 0.07, "tau_floor": 1e-3,
    },
    "train": {
        "batch_size": 32, "epochs": 20, "lr": 2e-3, "weight_decay": 0.0, "seed": 0,
        "sources": list(ALL_SOURCES), "source_weights": {},
    },
    "purification": {"k": 4, "alpha": 1.0, "beta": 1.0, "length_mode": "tokens"},
    # groups: "base", "ensemble", "agiqa", or a path to a prompt-group file
    "adapter": {"bottleneck": None, "epochs": 40, "batch_size": 8, "lr": 2e-3, "seed": 0, "groups": "base"},
    "eval": {"repeats": 10, "ratio": 0.8, "seed": 0, "k": 50, "zero_shot_groups": "ensemble"},
}


def _check(doc: dict, ref: dict, where: str) -> None:
    for key, value in doc.items():
        if key not in ref:
            raise ConfigError(f"unknown config key '{where}{key}'")
        if isinstance(ref[key], dict) and key != "source_weights":
            if not isinstance(value, dict):
                raise ConfigError(f"config key '{where}{key}' must be an object")
            _check(value, ref[key], f"{where}{key}.")


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "source_weights":
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


class RunConfig:
    def __init__(self, doc: dict | None = None):
        doc = doc or {}
        _check(doc, DEFAULTS, "")
        self.doc = _merge(DEFAULTS, doc)

    @classmethod
    def load(cls, path) -> "RunConfig":
        if path is None:
            return cls()
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc.msg}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"config {path} must be a JSON object")
        return cls(doc)

    def override(self, section: str, **values) -> None:
        for k, v in values.items():
            if v is None:
                continue
            if k not in DEFAULTS[section]:
                raise ConfigError(f"unknown config key {section}.{k}")
            self.doc[section][k] = v

    def __getitem__(self, section: str) -> dict:
        return self.doc[section]

    def synthetic(self) -> SyntheticConfig:
        d = dict(self.doc["synthetic"])
        d["scale"] = tuple(d["scale"])
        return SyntheticConfig(**d)

    def encoder(self) -> EncoderConfig:
        return EncoderConfig(**self.doc["encoder"])

    def train(self) -> TrainConfig:
        d = dict(self.doc["train"])
        d["sources"] = tuple(d["sources"])
        try:
            return TrainConfig(encoder=self.encoder(), **d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def purification(self) -> PurificationConfig:
        return PurificationConfig(**self.doc["purification"])

    def adapter(self) -> AdapterConfig:
        d = dict(self.doc["adapter"])
        d["groups"] = resolve_groups(d["groups"])
        return AdapterConfig(**d)


def resolve_groups(spec) -> tuple[PromptGroup, ...]:
    if isinstance(spec, (list, tuple)) and all(isinstance(g, PromptGroup) for g in spec):
        return tuple(spec)
    named = {"base": (BASE_GROUP,), "single": (BASE_GROUP,), "ensemble": ENSEMBLE_GROUPS, "agiqa": AGIQA_GROUPS}
    if spec in named:
        return named[spec]
    path = Path(str(spec))
    if not path.exists():
        raise ConfigError(f"prompt groups {spec!r} are neither a preset ({', '.join(named)}) nor a file")
    groups = parse_prompt_groups(path.read_text(encoding="utf-8"))
    if not groups:
        raise ConfigError(f"prompt group file {path} defines no groups")
    return tuple(groups)
