"""Reference layouts used by the examples, the acceptance suite and the CLI.

All fixtures use a pump at the origin, conjugate footprints half the probe
width and coherence areas of width ``sigma = 0.14`` mm.  Gains are chosen so
that each area, detected on its own with perfect efficiency, shows a given
standalone squeezing level.
"""

from __future__ import annotations

from .geometry import BeamLayout, CoherenceArea
from .noise import TwoModeSqueezedPair

AREA_SIGMA = 0.14
WEAK_DB = -0.8
STRONG_DB = -2.0


def gain_from_db(nrf_db: float) -> float:
    """Gain whose ideal difference detection gives ``nrf_db``.

    Inverts ``nrf = 1 / (2G - 1)``.
    """
    if nrf_db > 0:
        raise ValueError(f"standalone squeezing must be <= 0 dB, got {nrf_db}")
    return (10.0 ** (-nrf_db / 10.0) + 1.0) / 2.0


def _area(name: str, x: float, nrf_db: float, sigma: float = AREA_SIGMA,
          weight: float = 1.0, y: float = 0.0) -> CoherenceArea:
    return CoherenceArea((x, y), sigma, TwoModeSqueezedPair(gain_from_db(nrf_db), weight, name))


def single_area(nrf_db: float = STRONG_DB, center: float = 0.0,
                sigma: float = AREA_SIGMA) -> BeamLayout:
    return BeamLayout(areas=(_area("area", center, nrf_db, sigma),))


def two_area(separation: float = 0.5) -> BeamLayout:
    """Strong area left of the pump, weak area right of it.

    With mode A keeping the probe below its edge, the weak area is the one a
    rising probe edge uncovers last.
    """
    d = separation / 2.0
    return BeamLayout(areas=(
        _area("strong", -d, STRONG_DB),
        _area("weak", d, WEAK_DB),
    ))


def three_area(spacing: float = 0.4) -> BeamLayout:
    """Weak area left, one centered area and a strong area right."""
    return BeamLayout(areas=(
        _area("weak", -spacing, WEAK_DB),
        _area("mid", 0.0, STRONG_DB),
        _area("strong", spacing, STRONG_DB),
    ))
