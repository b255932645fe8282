import numpy as np
import pytest

from nogp.torus_spectral import sample_bandlimited_gp

_REPORT: list[tuple[str, bool, str]] = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def random_inputs(rng):
    def make(n, band=3, variance=1.0, channels=1):
        return [sample_bandlimited_gp(band, variance, channels, rng) for _ in range(n)]
    return make


@pytest.fixture
def report():
    """Record one acceptance outcome; printed in the terminal summary."""
    def record(name: str, passed: bool, detail: str = "") -> None:
        _REPORT.append((name, bool(passed), detail))
    return record


def pytest_terminal_summary(terminalreporter):
    if not _REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _REPORT:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")
