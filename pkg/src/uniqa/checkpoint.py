"""Binary checkpoint container.

Layout (all integers u32 little-endian)::

    b"UNIQA1" | version | tensor count
    per tensor: name length | UTF-8 name | rank | dims... | f32 LE payload
    blob length | UTF-8 JSON (vocabulary, encoder config, provenance)
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import atomic_write
from .encoders import EncoderConfig, EncoderParams, Vocabulary
from .errors import CorruptionError, FormatError, VersionError

MAGIC = b"UNIQA1"
VERSION = 1


@dataclass(eq=False)
class Checkpoint:
    tensors: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)
    version: int = VERSION

    def __post_init__(self):
        # copy(order="C") rather than ascontiguousarray, which turns 0-d into 1-d
        self.tensors = {k: np.asarray(v, dtype=np.float32).copy(order="C") for k, v in self.tensors.items()}

    def __eq__(self, other) -> bool:
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return (
            self.version == other.version
            and self.meta == other.meta
            and list(self.tensors) == list(other.tensors)
            and all(
                self.tensors[k].shape == other.tensors[k].shape
                and self.tensors[k].tobytes() == other.tensors[k].tobytes()
                for k in self.tensors
            )
        )

    __hash__ = None

    @property
    def provenance(self) -> dict:
        return self.meta.get("provenance", {})

    @property
    def vocab(self) -> Vocabulary:
        v = Vocabulary()
        v.tokens = list(self.meta["vocab"])
        v.index = {t: i for i, t in enumerate(v.tokens)}
        return v

    @property
    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(**self.meta["encoder_config"])

    def encoder(self, trainable: bool = False) -> EncoderParams:
        return EncoderParams.from_arrays(self.tensors, self.encoder_config, self.vocab, trainable=trainable)

    def has_adapter(self) -> bool:
        return "adapter.w1" in self.tensors

    @classmethod
    def from_encoder(cls, params: EncoderParams, provenance: dict | None = None) -> "Checkpoint":
        meta = {
            "vocab": list(params.vocab.tokens),
            "encoder_config": params.config_dict(),
            "provenance": dict(provenance or {}),
        }
        return cls(params.to_arrays(), meta)

    def with_tensors(self, extra: dict[str, np.ndarray], provenance: dict | None = None) -> "Checkpoint":
        tensors = dict(self.tensors)
        tensors.update(extra)
        meta = json.loads(json.dumps(self.meta))
        if provenance:
            meta.setdefault("provenance", {}).update(provenance)
        return Checkpoint(tensors, meta, self.version)


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode("utf-8")).hexdigest()[:16]


def to_bytes(ckpt: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<II", ckpt.version, len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.astype("<f4").tobytes())
    blob = json.dumps(ckpt.meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts.append(struct.pack("<I", len(blob)) + blob)
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptionError(f"checkpoint truncated at byte {self.pos} (needed {n} more)")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def from_bytes(buf: bytes) -> Checkpoint:
    if buf[:len(MAGIC)] != MAGIC:
        raise FormatError("not a checkpoint: bad magic bytes")
    r = _Reader(buf)
    r.take(len(MAGIC))
    version = r.u32()
    if version != VERSION:
        raise VersionError(f"checkpoint version {version} is not supported (expected {VERSION})")
    count = r.u32()
    tensors = {}
    for _ in range(count):
        try:
            name = r.take(r.u32()).decode("utf-8")
        except UnicodeDecodeError:
            raise CorruptionError("tensor name is not valid UTF-8") from None
        rank = r.u32()
        shape = tuple(r.u32() for _ in range(rank))
        n = int(np.prod(shape)) if shape else 1
        tensors[name] = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
    try:
        meta = json.loads(r.take(r.u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CorruptionError("checkpoint metadata blob is unreadable") from None
    if r.pos != len(buf):
        raise CorruptionError(f"{len(buf) - r.pos} trailing bytes after checkpoint metadata")
    return Checkpoint(tensors, meta, version)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    atomic_write(path, to_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
