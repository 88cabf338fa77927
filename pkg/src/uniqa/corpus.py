"""Image/caption records, JSON Lines manifests and the synthetic corpus."""

from __future__ import annotations

import base64
import json
import math
import os
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.ndimage import uniform_filter

from . import rng as rng_mod
from .errors import ConflictError, DomainError, IntegrityError, ParseError
from .levels import LEXICONS, QualityLevel, bin_level

SPLITS = ("train", "test", "unassigned")
SOURCES = ("gen_iqa", "gen_iaa", "authentic")


@dataclass(eq=False)
class ImageRecord:
    id: str
    mos: float
    scale: tuple[float, float]
    split: str = "unassigned"
    pixels: np.ndarray | None = None
    path: str | None = None

    def __post_init__(self):
        self.mos = float(self.mos)
        self.scale = (float(self.scale[0]), float(self.scale[1]))
        lo, hi = self.scale
        if not lo < hi:
            raise DomainError(f"image {self.id}: scale must satisfy lo < hi, got {self.scale}")
        if not lo <= self.mos <= hi:
            raise DomainError(f"image {self.id}: mos {self.mos} outside scale {self.scale}")
        if self.split not in SPLITS:
            raise DomainError(f"image {self.id}: unknown split {self.split!r}")
        if self.pixels is not None:
            self.pixels = np.asarray(self.pixels, dtype=np.float32)
            if self.pixels.ndim != 3 or min(self.pixels.shape) <= 0:
                raise DomainError(f"image {self.id}: pixels must be a non-empty HxWxC array")
        elif self.path is None:
            raise DomainError(f"image {self.id}: needs inline pixels or a path")

    @property
    def normalized_mos(self) -> float:
        """MOS mapped linearly onto [0, 1] by the declared scale."""
        lo, hi = self.scale
        return (self.mos - lo) / (hi - lo)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ImageRecord):
            return NotImplemented
        same_pixels = (
            (self.pixels is None and other.pixels is None)
            or (self.pixels is not None and other.pixels is not None and np.array_equal(self.pixels, other.pixels))
        )
        return (
            self.id == other.id
            and self.mos == other.mos
            and self.scale == other.scale
            and self.split == other.split
            and self.path == other.path
            and same_pixels
        )

    __hash__ = None


@dataclass(frozen=True)
class CaptionRecord:
    image_id: str
    text: str
    source: str
    level: QualityLevel | None = None

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise DomainError(f"caption for {self.image_id}: text must be non-empty")
        if self.source not in SOURCES:
            raise DomainError(f"caption for {self.image_id}: unknown source {self.source!r}")


@dataclass(eq=False)
class CorpusManifest:
    images: list[ImageRecord] = field(default_factory=list)
    captions: list[CaptionRecord] = field(default_factory=list)
    name: str = "corpus"

    def __post_init__(self):
        seen: set[str] = set()
        dupes = set()
        for im in self.images:
            if im.id in seen:
                dupes.add(im.id)
            seen.add(im.id)
        if dupes:
            raise ConflictError(dupes)
        dangling = sorted({c.image_id for c in self.captions if c.image_id not in seen})
        if dangling:
            raise IntegrityError(f"captions reference unknown images: {', '.join(dangling)}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, CorpusManifest):
            return NotImplemented
        # names are labels, not content
        return self.images == other.images and self.captions == other.captions

    __hash__ = None

    def image(self, image_id: str) -> ImageRecord:
        for im in self.images:
            if im.id == image_id:
                return im
        raise KeyError(image_id)

    def by_id(self) -> dict[str, ImageRecord]:
        return {im.id: im for im in self.images}

    def captions_by_image(self, sources: Iterable[str] | None = None) -> dict[str, list[CaptionRecord]]:
        keep = None if sources is None else set(sources)
        out: dict[str, list[CaptionRecord]] = {im.id: [] for im in self.images}
        for c in self.captions:
            if keep is None or c.source in keep:
                out[c.image_id].append(c)
        return out

    def filter_sources(self, sources: Iterable[str]) -> "CorpusManifest":
        keep = set(sources)
        return CorpusManifest(list(self.images), [c for c in self.captions if c.source in keep], self.name)

    def subset(self, image_ids: Iterable[str]) -> "CorpusManifest":
        ids = set(image_ids)
        return CorpusManifest(
            [im for im in self.images if im.id in ids],
            [c for c in self.captions if c.image_id in ids],
            self.name,
        )


def merge(manifests: Iterable[CorpusManifest], name: str | None = None) -> CorpusManifest:
    """Union of images and captions.

    Images sharing an id must be identical (they are kept once). A caption is
    dropped only when a byte-identical one was already contributed by an
    earlier manifest that shares the same image.
    """
    manifests = list(manifests)
    images: dict[str, ImageRecord] = {}
    conflicts = set()
    for m in manifests:
        for im in m.images:
            prev = images.get(im.id)
            if prev is None:
                images[im.id] = im
            elif prev != im:
                conflicts.add(im.id)
    if conflicts:
        raise ConflictError(conflicts)
    captions: list[CaptionRecord] = []
    seen: set[CaptionRecord] = set()
    for m in manifests:
        local: set[CaptionRecord] = set()
        for c in m.captions:
            if c in seen and c not in local:
                continue
            captions.append(c)
            local.add(c)
        seen |= local
    if name is None:
        name = manifests[0].name if manifests else "corpus"
    return CorpusManifest(list(images.values()), captions, name)


# ---------------------------------------------------------------- persistence


def _encode_pixels(px: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(px, dtype="<f4").tobytes()).decode("ascii")


def image_to_json(im: ImageRecord) -> dict:
    row = {"kind": "image", "id": im.id, "mos": im.mos, "scale": list(im.scale), "split": im.split}
    if im.pixels is not None:
        h, w, c = im.pixels.shape
        row.update(pixels=_encode_pixels(im.pixels), h=h, w=w, c=c)
    else:
        row["path"] = im.path
    return row


def caption_to_json(c: CaptionRecord) -> dict:
    row = {"kind": "caption", "image_id": c.image_id, "text": c.text, "source": c.source}
    if c.level is not None:
        row["level"] = c.level.word
    return row


def dumps_manifest(m: CorpusManifest) -> str:
    lines = [json.dumps(image_to_json(im)) for im in m.images]
    lines += [json.dumps(caption_to_json(c)) for c in m.captions]
    return "".join(line + "\n" for line in lines)


def _umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


def atomic_write(path, data: str | bytes) -> None:
    """Write via a temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": "\n"})) as fh:
            fh.write(data)
        os.chmod(tmp, 0o666 & ~_umask())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_manifest(m: CorpusManifest, path) -> None:
    atomic_write(path, dumps_manifest(m))


def _require(row: dict, key: str, lineno: int):
    if key not in row:
        raise ParseError(f"missing field {key!r}", line=lineno, field=key)
    return row[key]


def _parse_image(row: dict, lineno: int) -> ImageRecord:
    image_id = str(_require(row, "id", lineno))
    mos = _require(row, "mos", lineno)
    scale = _require(row, "scale", lineno)
    if not isinstance(scale, list) or len(scale) != 2:
        raise ParseError("field 'scale' must be [lo, hi]", line=lineno, field="scale")
    split = row.get("split", "unassigned")
    pixels = None
    path = row.get("path")
    if "pixels" in row:
        h, w, c = (int(_require(row, k, lineno)) for k in ("h", "w", "c"))
        try:
            raw = base64.b64decode(row["pixels"], validate=True)
        except (ValueError, TypeError) as exc:
            raise ParseError(f"bad base64 pixels: {exc}", line=lineno, field="pixels") from None
        if len(raw) != 4 * h * w * c:
            raise ParseError(f"pixel payload has {len(raw)} bytes, expected {4 * h * w * c}", line=lineno,
                             field="pixels")
        pixels = np.frombuffer(raw, dtype="<f4").reshape(h, w, c).astype(np.float32)
    elif path is None:
        raise ParseError("image needs 'pixels' or 'path'", line=lineno, field="pixels")
    try:
        return ImageRecord(image_id, float(mos), (float(scale[0]), float(scale[1])), split, pixels, path)
    except (DomainError, TypeError, ValueError) as exc:
        raise ParseError(str(exc), line=lineno) from None


def _parse_caption(row: dict, lineno: int) -> CaptionRecord:
    image_id = str(_require(row, "image_id", lineno))
    text = _require(row, "text", lineno)
    source = _require(row, "source", lineno)
    level = row.get("level")
    try:
        return CaptionRecord(image_id, str(text), str(source), QualityLevel.from_word(level) if level else None)
    except DomainError as exc:
        raise ParseError(str(exc), line=lineno) from None


def loads_manifest(text: str, default_name: str = "corpus") -> CorpusManifest:
    images: list[ImageRecord] = []
    captions: list[CaptionRecord] = []
    name = default_name
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from None
        if not isinstance(row, dict):
            raise ParseError("each line must be a JSON object", line=lineno)
        kind = _require(row, "kind", lineno)
        if kind == "image":
            images.append(_parse_image(row, lineno))
        elif kind == "caption":
            captions.append(_parse_caption(row, lineno))
        else:
            raise ParseError(f"unknown kind {kind!r}", line=lineno, field="kind")
    return CorpusManifest(images, captions, name)


def load_manifest(path) -> CorpusManifest:
    path = Path(path)
    return loads_manifest(path.read_text(encoding="utf-8"), default_name=path.stem)


# ------------------------------------------------------------ synthetic data


@dataclass(frozen=True)
class SyntheticConfig:
    height: int = 32
    width: int = 32
    channels: int = 3
    scale: tuple[float, float] = (0.0, 100.0)
    sigma_max: float = 0.25
    blur_max: int = 2
    amplitude: float = 0.3
    # authentic comments per image, drawn uniformly from [min, max]
    authentic_min: int = 2
    authentic_max: int = 6
    relevant_prob: float = 0.55


def degradation(u: float, config: SyntheticConfig = SyntheticConfig()) -> tuple[float, int]:
    """Noise sigma and box-blur radius for latent quality ``u`` in [0, 1]."""
    sigma = config.sigma_max * (1.0 - u)
    radius = int(math.floor(config.blur_max * (1.0 - u) + 0.5))
    return sigma, radius


def base_pattern(gen: np.random.Generator, h: int, w: int, c: int, amplitude: float) -> np.ndarray:
    """Sum of two oriented sinusoids blended with a checkerboard, centred on 0.5."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    yy /= max(h, w)
    xx /= max(h, w)
    img = np.zeros((h, w, c))
    for _ in range(2):
        theta = gen.uniform(0.0, math.pi)
        freq = gen.uniform(1.5, 4.0)
        phase = gen.uniform(0.0, 2 * math.pi)
        wave = np.sin(2 * math.pi * freq * (xx * math.cos(theta) + yy * math.sin(theta)) + phase)
        img += wave[..., None] * gen.uniform(0.3, 1.0, size=c)
    cell = int(gen.integers(4, 9))
    checker = ((np.arange(h)[:, None] // cell + np.arange(w)[None, :] // cell) % 2) * 2.0 - 1.0
    mix = gen.uniform(0.2, 0.6)
    img = (1.0 - mix) * img / 2.0 + mix * checker[..., None] * gen.uniform(0.3, 1.0, size=c)
    peak = np.abs(img).max()
    return 0.5 + amplitude * img / (peak if peak > 0 else 1.0)


def render_image(gen: np.random.Generator, u: float, config: SyntheticConfig) -> np.ndarray:
    img = base_pattern(gen, config.height, config.width, config.channels, config.amplitude)
    sigma, radius = degradation(u, config)
    if radius > 0:
        img = uniform_filter(img, size=(2 * radius + 1, 2 * radius + 1, 1), mode="reflect")
    if sigma > 0:
        img = img + gen.normal(0.0, sigma, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


_RELEVANT_TEMPLATES = (
    "{a} shot",
    "the light is {a} and the framing {b}",
    "i find the colors {a} and the composition {b} , {c} overall",
    "really {a} , the subject feels {b} against a {c} background and the tones are {d}",
)
_IRRELEVANT = (
    "nice",
    "thanks for sharing",
    "first comment here",
    "congrats on the ribbon",
    "what lens did you use",
    "my cat would love this",
    "i was there last summer with my family and we had a great time",
    "see you in the next challenge , good luck to everyone who entered",
    "this reminds me of my grandfather who used to take us fishing every weekend",
)


def authentic_comment(gen: np.random.Generator, level: QualityLevel, relevant_prob: float) -> str:
    """A mock human comment: either level-relevant aesthetic talk or chatter."""
    if gen.random() < relevant_prob:
        lex = LEXICONS["iaa"][level]
        template = _RELEVANT_TEMPLATES[int(gen.integers(len(_RELEVANT_TEMPLATES)))]
        words = gen.choice(len(lex), size=4, replace=False)
        return template.format(**{k: lex[i] for k, i in zip("abcd", words)})
    return _IRRELEVANT[int(gen.integers(len(_IRRELEVANT)))]


def generate_synthetic(n_images: int, seed: int, config: SyntheticConfig = SyntheticConfig(),
                       name: str = "synthetic") -> CorpusManifest:
    """Procedural corpus with MOS planted through noise and blur strength.

    Latent quality ``u`` is uniform on [0, 1]; ``mos = lo + u * (hi - lo)``.
    """
    if n_images < 1:
        raise DomainError(f"n_images must be >= 1, got {n_images}")
    lo, hi = config.scale
    latent = rng_mod.stream(seed, "corpus", "latent").uniform(0.0, 1.0, size=n_images)
    width = len(str(n_images - 1))
    images, captions = [], []
    for i, u in enumerate(latent):
        image_id = f"img{i:0{width}d}"
        gen = rng_mod.stream(seed, "corpus", "image", i)
        mos = lo + float(u) * (hi - lo)
        images.append(ImageRecord(image_id, mos, (lo, hi), "unassigned", render_image(gen, float(u), config)))
        level = bin_level(mos, (lo, hi))
        cgen = rng_mod.stream(seed, "corpus", "comments", i)
        n_comments = int(cgen.integers(config.authentic_min, config.authentic_max + 1))
        for _ in range(n_comments):
            captions.append(CaptionRecord(image_id, authentic_comment(cgen, level, config.relevant_prob), "authentic"))
    return CorpusManifest(images, captions, name)


def with_splits(m: CorpusManifest, train_ids: Iterable[str]) -> CorpusManifest:
    """Copy of ``m`` with split tags set to train/test by membership."""
    train = set(train_ids)
    return CorpusManifest(
        [replace(im, split="train" if im.id in train else "test") for im in m.images], list(m.captions), m.name
    )
