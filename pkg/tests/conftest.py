import numpy as np
import pytest

from spkquant.data import SpeakerDatasetSpec, build_trials, generate
from spkquant.model import ModelConfig, init_model


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion")


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    report = yield
    mark = item.get_closest_marker("criterion")
    if mark is not None and report.when == "call":
        report.user_properties.append(("criterion", mark.args))
    return report


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            for key, args in getattr(rep, "user_properties", ()):
                if key == "criterion":
                    lines.append((args[0], outcome, args[1]))
    if lines:
        terminalreporter.section("acceptance criteria")
        for n, outcome, title in sorted(lines, key=lambda l: str(l[0])):
            terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {n}. {title}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def config():
    return ModelConfig()


@pytest.fixture(scope="session")
def weights(config):
    return init_model(config)


@pytest.fixture(scope="session")
def small_spec():
    return SpeakerDatasetSpec(n_speakers=6, utts_per_speaker=4, frames=40, noise=2.0, spread=0.5)


@pytest.fixture(scope="session")
def small_eval(small_spec):
    return generate(small_spec, "evaluation")


@pytest.fixture(scope="session")
def small_calib(small_spec):
    return generate(small_spec, "calibration").subset(8)


@pytest.fixture(scope="session")
def small_trials(small_eval):
    return build_trials(small_eval, 20, 30, seed=3)
