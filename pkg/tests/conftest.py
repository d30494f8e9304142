import pytest

from coherencemap import scenarios
from coherencemap.geometry import BeamLayout, CoherenceArea
from coherencemap.noise import TwoModeSqueezedPair


@pytest.fixture
def single_layout():
    return scenarios.single_area()


@pytest.fixture
def two_area_layout():
    return scenarios.two_area()


@pytest.fixture
def three_area_layout():
    return scenarios.three_area()


def make_layout(specs, pump=(0.0, 0.0), conj_scale=0.5):
    """Layout from ``(x, sigma, gain, seed_flux)`` tuples."""
    areas = [
        CoherenceArea((x, 0.0), s, TwoModeSqueezedPair(g, n0, f"p{i}"))
        for i, (x, s, g, n0) in enumerate(specs)
    ]
    return BeamLayout(pump, tuple(areas), conj_scale)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS):
            terminalreporter.write_line(line)
