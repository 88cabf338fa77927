"""MOS-guided caption generation.

Each image is binned into one of five quality levels; the level word is
injected into a task prompt and sent to a captioner. Captioners are either a
JSON-over-HTTP service (``POST {base}/caption``) or the deterministic mock
selected with a ``mock://<seed>`` URL.
"""

from __future__ import annotations

import base64
import json
import logging
import os
import re
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from . import rng as rng_mod
from .corpus import CaptionRecord, CorpusManifest, ImageRecord, merge
from .errors import ContentError, DomainError, TransportError
from .levels import LEVEL_WORDS, LEXICONS, QualityLevel, bin_level  # noqa: F401  (re-exported)

log = logging.getLogger(__name__)

TASKS = ("iqa", "iaa")
SOURCE_FOR_TASK = {"iqa": "gen_iqa", "iaa": "gen_iaa"}
CAPTIONS_PER_IMAGE = {"iqa": 3, "iaa": 1}


PROMPTS = {
    "iqa": (
        "The quality of this image is {level}. Describe the image quality, focusing on sharpness, "
        "color balance, and noise level.",
        "This photo has {level} visual quality. In one sentence, explain how its sharpness, color balance, "
        "and noise level support that rating.",
        "Given that the overall quality is {level}, comment on the sharpness, color balance, and noise level "
        "you observe in the picture.",
    ),
    "iaa": (
        "The aesthetic appeal of this image is {level}. Describe its aesthetics in terms of content, color, "
        "lighting, and composition.",
    ),
}


def build_prompt(task: str, level: QualityLevel, variant: int = 0) -> str:
    if task not in PROMPTS:
        raise DomainError(f"unknown task {task!r}")
    templates = PROMPTS[task]
    if not 0 <= variant < len(templates):
        raise DomainError(f"task {task!r} has {len(templates)} prompt variant(s), got index {variant}")
    return templates[variant].format(level=QualityLevel(level).word)


_WORD = re.compile(r"[a-z]+")


def level_in_prompt(prompt: str) -> QualityLevel:
    """Recover the guidance level from an instantiated prompt."""
    found = [w for w in _WORD.findall(prompt.lower()) if w in LEVEL_WORDS]
    if len(found) != 1:
        raise DomainError(f"prompt must contain exactly one level word, found {found}")
    return QualityLevel.from_word(found[0])


@dataclass(frozen=True)
class CaptionRequest:
    image_id: str
    prompt_text: str
    task: str
    level: QualityLevel
    variant: int = 0

    @classmethod
    def for_image(cls, image: ImageRecord, task: str, variant: int = 0,
                  scale: tuple[float, float] | None = None) -> "CaptionRequest":
        level = bin_level(image.mos, scale or image.scale)
        return cls(image.id, build_prompt(task, level, variant), task, level, variant)


# ------------------------------------------------------------------ the mock

_MOCK_TEMPLATES = {
    "iqa": (
        "the image quality is {level} , it looks {a} and {b}",
        "a {level} photo that is {a} , {b} and {c}",
        "overall {level} fidelity with {a} details and {b} tones",
    ),
    "iaa": (
        "the aesthetics are {level} , the composition feels {a} and the lighting is {b}",
        "a {level} picture with {a} content and {b} colors",
        "{a} and {b} scene with {level} appeal",
    ),
}


def mock_caption(level: QualityLevel, task: str, seed: int) -> str:
    """Template filled with seeded draws from the level's lexicon."""
    if task not in _MOCK_TEMPLATES:
        raise DomainError(f"unknown task {task!r}")
    level = QualityLevel(level)
    gen = rng_mod.stream(seed, "mock-caption", task, int(level))
    templates = _MOCK_TEMPLATES[task]
    template = templates[int(gen.integers(len(templates)))]
    lex = LEXICONS[task][level]
    picks = gen.choice(len(lex), size=3, replace=False)
    return template.format(level=level.word, **{k: lex[i] for k, i in zip("abc", picks)})


class CaptionerClient(Protocol):
    def caption(self, request: CaptionRequest, image: ImageRecord) -> str: ...


class MockCaptioner:
    """Offline stand-in for an MLLM. The caption depends only on
    (seed, image id, variant, task, level)."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def caption(self, request: CaptionRequest, image: ImageRecord) -> str:
        level = level_in_prompt(request.prompt_text)
        sub_seed = rng_mod.derive_seed(self.seed, image.id, request.task, request.variant)
        return mock_caption(level, request.task, sub_seed)


def _image_b64(image: ImageRecord) -> str:
    if image.pixels is not None:
        return base64.b64encode(np.ascontiguousarray(image.pixels, dtype="<f4").tobytes()).decode("ascii")
    with open(image.path, "rb") as fh:
        return base64.b64encode(fh.read()).decode("ascii")


class HttpCaptioner:
    """Minimal JSON client: body ``{"prompt", "image_b64"}``, reply ``{"text"}``."""

    def __init__(self, base_url: str, timeout: float = 30.0, attempts: int = 3, backoff: float = 0.5):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.attempts = attempts
        self.backoff = backoff

    def _post(self, body: bytes) -> dict:
        req = urllib.request.Request(
            self.base_url + "/caption", data=body, headers={"Content-Type": "application/json"}, method="POST"
        )
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            return json.loads(resp.read().decode("utf-8"))

    def caption(self, request: CaptionRequest, image: ImageRecord) -> str:
        body = json.dumps({"prompt": request.prompt_text, "image_b64": _image_b64(image)}).encode("utf-8")
        last = None
        for attempt in range(self.attempts):
            try:
                reply = self._post(body)
                break
            except (urllib.error.URLError, OSError, json.JSONDecodeError) as exc:
                last = exc
                log.warning("captioner attempt %d/%d for %s failed: %s", attempt + 1, self.attempts,
                            request.image_id, exc)
                if attempt + 1 < self.attempts:
                    time.sleep(self.backoff * 2**attempt)
        else:
            raise TransportError(f"captioner at {self.base_url} failed after {self.attempts} attempts: {last}")
        text = reply.get("text") if isinstance(reply, dict) else None
        if not isinstance(text, str) or not text.strip():
            raise ContentError(f"captioner returned empty text for image {request.image_id}")
        return text


def make_client(url: str | None = None, timeout: float = 30.0, backoff: float = 0.5) -> CaptionerClient:
    """Client for ``url``; ``UNIQA_CAPTIONER_URL`` overrides it when set."""
    url = os.environ.get("UNIQA_CAPTIONER_URL") or url or "mock://0"
    if url.startswith("mock://"):
        seed = url[len("mock://"):] or "0"
        try:
            return MockCaptioner(int(seed))
        except ValueError:
            raise DomainError(f"mock captioner seed must be an integer, got {seed!r}") from None
    return HttpCaptioner(url, timeout=timeout, backoff=backoff)


def request_caption(client: CaptionerClient, request: CaptionRequest, image: ImageRecord) -> CaptionRecord:
    text = client.caption(request, image)
    if not text or not text.strip():
        raise ContentError(f"captioner returned empty text for image {request.image_id}")
    return CaptionRecord(image.id, text.strip(), SOURCE_FOR_TASK[request.task], request.level)


def generate_corpus(manifest: CorpusManifest, task: str, client: CaptionerClient, max_workers: int = 1,
                    use_observed_range: bool = False) -> CorpusManifest:
    """Attach generated captions for ``task`` ("iqa", "iaa" or "both").

    IQA gets one caption per prompt variant (three), IAA a single caption.
    Level bins use each image's declared scale unless ``use_observed_range``.
    """
    tasks = TASKS if task == "both" else (task,)
    for t in tasks:
        if t not in TASKS:
            raise DomainError(f"unknown task {t!r}")
    scale = None
    if use_observed_range and manifest.images:
        scores = [im.mos for im in manifest.images]
        scale = (min(scores), max(scores))
    jobs = [
        (im, CaptionRequest.for_image(im, t, v, scale))
        for t in tasks
        for im in manifest.images
        for v in range(CAPTIONS_PER_IMAGE[t])
    ]

    def run(job):
        im, req = job
        try:
            return request_caption(client, req, im)
        except (TransportError, ContentError) as exc:
            raise type(exc)(f"image {im.id}: {exc}") from exc

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    order = sorted(range(len(jobs)), key=lambda i: (jobs[i][1].task, jobs[i][0].id, jobs[i][1].variant))
    generated = CorpusManifest(list(manifest.images), [results[i] for i in order], manifest.name)
    return merge([manifest, generated], name=manifest.name)

