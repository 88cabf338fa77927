import numpy as np
import pytest

from uniqa.captioning import MockCaptioner, generate_corpus
from uniqa.corpus import generate_synthetic
from uniqa.encoders import EncoderConfig
from uniqa.pretrain import TrainConfig, pretrain_run


@pytest.fixture(scope="session")
def small_corpus():
    """96 synthetic images with authentic comments and mock captions."""
    base = generate_synthetic(96, seed=3, name="small")
    return generate_corpus(base, "both", MockCaptioner(3))


@pytest.fixture(scope="session")
def small_encoder_config():
    return EncoderConfig(d=16, d_hidden=32)


@pytest.fixture(scope="session")
def small_run(small_corpus, small_encoder_config):
    cfg = TrainConfig(batch_size=16, epochs=3, seed=1, encoder=small_encoder_config)
    return pretrain_run(small_corpus, cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ------------------------------------------------------- acceptance summary

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): an acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _CRITERIA[number] = (title, "PASS" if report.passed else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, verdict = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {verdict}  {title}")
