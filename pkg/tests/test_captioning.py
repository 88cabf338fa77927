import json
import re
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest

from uniqa.captioning import (
    CaptionRequest,
    HttpCaptioner,
    MockCaptioner,
    PROMPTS,
    build_prompt,
    generate_corpus,
    level_in_prompt,
    make_client,
    mock_caption,
    request_caption,
)
from uniqa.corpus import generate_synthetic
from uniqa.encoders import split_words
from uniqa.errors import ContentError, DomainError, TransportError
from uniqa.levels import LEVELS, LEXICONS, QualityLevel


@pytest.mark.parametrize("task", ["iqa", "iaa"])
def test_prompt_contains_level_once(task):
    for lv in LEVELS:
        for v in range(len(PROMPTS[task])):
            p = build_prompt(task, lv, v)
            assert split_words(p).count(lv.word) == 1
            assert level_in_prompt(p) is lv


def test_lexicons_disjoint_at_token_level():
    for task, table in LEXICONS.items():
        tokens = [set(split_words(" ".join(table[lv]))) for lv in LEVELS]
        for i in range(5):
            for j in range(i + 1, 5):
                assert not tokens[i] & tokens[j], (task, i, j)


def test_prompt_topics():
    assert len(PROMPTS["iqa"]) == 3 and len(PROMPTS["iaa"]) == 1
    for v in range(3):
        p = build_prompt("iqa", QualityLevel.GOOD, v)
        assert all(k in p for k in ("sharpness", "color balance", "noise level"))
    p = build_prompt("iaa", QualityLevel.BAD, 0)
    assert all(k in p for k in ("content", "color", "lighting", "composition"))


def test_prompt_deterministic_and_validated():
    assert build_prompt("iqa", QualityLevel.GOOD, 0) == build_prompt("iqa", QualityLevel.GOOD, 0)
    with pytest.raises(DomainError):
        build_prompt("iaa", QualityLevel.GOOD, 1)
    with pytest.raises(DomainError):
        build_prompt("vqa", QualityLevel.GOOD, 0)


def _lexicon_words(text, task, level):
    return {w for w in LEXICONS[task][level] if re.search(rf"(?<![\w-]){re.escape(w)}(?![\w-])", text)}


@pytest.mark.parametrize("task", ["iqa", "iaa"])
def test_mock_levels_share_no_lexicon_words(task):
    for seed in range(20):
        bad = set(split_words(mock_caption(QualityLevel.BAD, task, seed)))
        perfect = set(split_words(mock_caption(QualityLevel.PERFECT, task, seed)))
        all_bad = set(LEXICONS[task][QualityLevel.BAD])
        all_perfect = set(LEXICONS[task][QualityLevel.PERFECT])
        assert not (bad & all_perfect) and not (perfect & all_bad)


@pytest.mark.parametrize("task", ["iqa", "iaa"])
def test_mock_lexicon_coverage_over_1000_draws(task):
    for lv in LEVELS:
        seen = set()
        for seed in range(1000):
            seen |= _lexicon_words(mock_caption(lv, task, seed), task, lv)
        assert seen == set(LEXICONS[task][lv])


def test_mock_positive_phrase_and_determinism():
    text = mock_caption(QualityLevel.GOOD, "iqa", 4)
    assert _lexicon_words(text, "iqa", QualityLevel.GOOD)
    assert text == mock_caption(QualityLevel.GOOD, "iqa", 4)


def test_request_caption_with_mock():
    im = generate_synthetic(1, seed=0).images[0]
    req = CaptionRequest.for_image(im, "iqa", 1)
    rec = request_caption(MockCaptioner(9), req, im)
    assert rec.source == "gen_iqa" and rec.level is req.level
    assert rec == request_caption(MockCaptioner(9), req, im)


def test_generate_corpus_counts_and_sources():
    base = generate_synthetic(10, seed=1)
    n_auth = len(base.captions)
    iqa = generate_corpus(base, "iqa", MockCaptioner(0))
    iaa = generate_corpus(base, "iaa", MockCaptioner(0))
    assert len(iqa.captions) - n_auth == 30
    assert len(iaa.captions) - n_auth == 10
    assert {c.source for c in iqa.captions[n_auth:]} == {"gen_iqa"}
    assert {c.source for c in iaa.captions[n_auth:]} == {"gen_iaa"}


def test_generate_corpus_order_independent_of_workers():
    base = generate_synthetic(8, seed=2)
    a = generate_corpus(base, "both", MockCaptioner(1), max_workers=1)
    b = generate_corpus(base, "both", MockCaptioner(1), max_workers=4)
    assert a == b


def test_caption_levels_follow_mos():
    base = generate_synthetic(30, seed=3)
    out = generate_corpus(base, "iqa", MockCaptioner(0))
    mos = {im.id: im.mos for im in base.images}
    for c in out.captions:
        if c.source == "gen_iqa":
            assert c.level == min(int(mos[c.image_id] // 20) + 1, 5)


class _Handler(BaseHTTPRequestHandler):
    calls = []
    reply = {"text": "a sharp and clean photo"}

    def do_POST(self):  # noqa: N802
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).calls.append((self.path, body))
        data = json.dumps(type(self).reply).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def server():
    _Handler.calls = []
    _Handler.reply = {"text": "a sharp and clean photo"}
    srv = HTTPServer(("127.0.0.1", 0), _Handler)
    t = threading.Thread(target=srv.serve_forever, daemon=True)
    t.start()
    yield f"http://127.0.0.1:{srv.server_address[1]}"
    srv.shutdown()
    srv.server_close()


def test_http_round_trip(server):
    im = generate_synthetic(1, seed=0).images[0]
    req = CaptionRequest.for_image(im, "iaa", 0)
    rec = request_caption(HttpCaptioner(server, timeout=5), req, im)
    assert rec.text == "a sharp and clean photo" and rec.source == "gen_iaa"
    path, body = _Handler.calls[0]
    assert path == "/caption"
    assert body["prompt"] == req.prompt_text
    assert len(body["image_b64"]) > 0


def test_http_empty_text_is_content_error(server):
    _Handler.reply = {"text": "  "}
    im = generate_synthetic(1, seed=0).images[0]
    with pytest.raises(ContentError):
        HttpCaptioner(server, timeout=5).caption(CaptionRequest.for_image(im, "iqa", 0), im)


def test_unreachable_endpoint_fails_after_three_attempts(monkeypatch):
    import socket
    import urllib.request

    attempts = []
    real = urllib.request.urlopen

    def counting(*a, **kw):
        attempts.append(1)
        return real(*a, **kw)

    monkeypatch.setattr(urllib.request, "urlopen", counting)
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    im = generate_synthetic(1, seed=0).images[0]
    client = HttpCaptioner(f"http://127.0.0.1:{port}", timeout=1, backoff=0.01)
    with pytest.raises(TransportError, match="3 attempts"):
        client.caption(CaptionRequest.for_image(im, "iqa", 0), im)
    assert len(attempts) == 3


def test_make_client_env_override(monkeypatch):
    monkeypatch.setenv("UNIQA_CAPTIONER_URL", "mock://5")
    c = make_client("http://example.invalid")
    assert isinstance(c, MockCaptioner) and c.seed == 5
    monkeypatch.delenv("UNIQA_CAPTIONER_URL")
    assert isinstance(make_client("http://example.invalid"), HttpCaptioner)
    with pytest.raises(DomainError):
        make_client("mock://abc")


def test_pixels_survive_encoding(server):
    import base64

    im = generate_synthetic(1, seed=0).images[0]
    HttpCaptioner(server, timeout=5).caption(CaptionRequest.for_image(im, "iqa", 0), im)
    raw = base64.b64decode(_Handler.calls[0][1]["image_b64"])
    np.testing.assert_array_equal(np.frombuffer(raw, "<f4").reshape(im.pixels.shape), im.pixels)
