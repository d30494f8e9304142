"""Coherence-area footprints, detector regions and geometric transmissions.

Transverse coordinates are in mm, axial positions in cm and wavelengths in
nm.  Coherence areas are isotropic Gaussian intensity spots; the conjugate
footprint of an area sits at the point reflection of the probe center
through the pump center and is ``conj_scale`` times narrower.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .noise import NoiseDomainError, TwoModeSqueezedPair

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))
AXES = {"x": 0, "y": 1}
ARMS = ("probe", "conjugate")


@dataclass(frozen=True)
class CoherenceArea:
    """Gaussian footprint of one pair in the probe image plane.

    ``conj_center`` overrides the inversion image of ``center``; it is only
    used by unconstrained reconstructions.
    """

    center: tuple[float, float]
    sigma: float
    pair: TwoModeSqueezedPair
    conj_center: tuple[float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        if self.conj_center is not None:
            object.__setattr__(
                self, "conj_center", (float(self.conj_center[0]), float(self.conj_center[1]))
            )
        if not self.sigma > 0:
            raise NoiseDomainError(f"sigma={self.sigma!r} must be > 0")

    @property
    def id(self) -> str:
        return self.pair.id

    @property
    def fwhm(self) -> float:
        return FWHM_PER_SIGMA * self.sigma


@dataclass(frozen=True)
class BeamLayout:
    """Pump center plus every coherence-area pair in the twin beams."""

    pump_center: tuple[float, float] = (0.0, 0.0)
    areas: tuple[CoherenceArea, ...] = ()
    conj_scale: float = 0.5
    probe_image_z: float = 94.0
    conj_image_z: float = 32.0
    wavelength_nm: float = 795.0

    def __post_init__(self):
        object.__setattr__(self, "areas", tuple(self.areas))
        object.__setattr__(
            self, "pump_center", (float(self.pump_center[0]), float(self.pump_center[1]))
        )
        if not self.conj_scale > 0:
            raise NoiseDomainError(f"conj_scale={self.conj_scale!r} must be > 0")
        ids = [a.id for a in self.areas]
        if len(set(ids)) != len(ids):
            raise NoiseDomainError(f"area ids must be unique, got {ids}")

    @property
    def pairs(self) -> list[TwoModeSqueezedPair]:
        return [a.pair for a in self.areas]

    def fingerprint(self) -> str:
        """Content hash of the layout (stable across runs and platforms)."""
        doc = {
            "pump_center": list(self.pump_center),
            "conj_scale": self.conj_scale,
            "probe_image_z": self.probe_image_z,
            "conj_image_z": self.conj_image_z,
            "wavelength_nm": self.wavelength_nm,
            "areas": [
                {
                    "id": a.id,
                    "center": list(a.center),
                    "sigma": a.sigma,
                    "gain": a.pair.gain,
                    "seed_flux": a.pair.seed_flux,
                    **({"conj_center": list(a.conj_center)} if a.conj_center else {}),
                }
                for a in self.areas
            ],
        }
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Region:
    """A detector region: the full plane, a half-plane or a strip.

    Half-planes keep the side ``below`` or ``above`` ``edge`` along
    ``axis``; strips keep ``lo <= coordinate < hi``.
    """

    kind: str = "full"
    axis: str = "x"
    edge: float = 0.0
    keep: str = "below"
    lo: float = -math.inf
    hi: float = math.inf

    def __post_init__(self):
        if self.kind not in ("full", "half_plane", "strip"):
            raise ValueError(f"unknown region kind {self.kind!r}")
        if self.axis not in AXES:
            raise ValueError(f"axis must be 'x' or 'y', got {self.axis!r}")
        if self.keep not in ("below", "above"):
            raise ValueError(f"keep must be 'below' or 'above', got {self.keep!r}")
        if self.kind == "strip" and not self.lo < self.hi:
            raise ValueError(f"strip needs lo < hi, got {self.lo}, {self.hi}")

    @classmethod
    def full(cls) -> "Region":
        return cls("full")

    @classmethod
    def half_plane(cls, edge: float, axis: str = "x", keep: str = "below") -> "Region":
        return cls("half_plane", axis=axis, edge=float(edge), keep=keep)

    @classmethod
    def strip(cls, lo: float, hi: float, axis: str = "x") -> "Region":
        return cls("strip", axis=axis, lo=float(lo), hi=float(hi))


@dataclass(frozen=True)
class DefocusParams:
    """Axial offset from an arm's image plane.

    ``rayleigh_range`` of ``None`` derives it per area from the footprint
    width and the layout wavelength.
    """

    z_offset: float = 0.0
    rayleigh_range: float | None = None

    def __post_init__(self):
        if self.rayleigh_range is not None and not self.rayleigh_range > 0:
            raise NoiseDomainError("rayleigh_range must be > 0")


def conjugate_center(probe_center, pump_center) -> tuple[float, float]:
    """Point reflection of a probe position through the pump center."""
    return (
        2.0 * pump_center[0] - probe_center[0],
        2.0 * pump_center[1] - probe_center[1],
    )


def effective_sigma(sigma0, z_offset, rayleigh_range):
    """Gaussian beamlet width after propagating ``z_offset`` from its waist."""
    return sigma0 * np.sqrt(1.0 + (np.asarray(z_offset) / rayleigh_range) ** 2)


def rayleigh_range_cm(sigma_mm: float, wavelength_nm: float) -> float:
    """``pi * (2 sigma)^2 / lambda`` with the waist taken as ``2 sigma``."""
    return math.pi * (2.0 * sigma_mm) ** 2 / (wavelength_nm * 1e-6) / 10.0


def footprint(area: CoherenceArea, layout: BeamLayout, arm: str = "probe",
              defocus: DefocusParams | None = None) -> tuple[tuple[float, float], float]:
    """Center and effective width of an area on one arm."""
    if arm not in ARMS:
        raise ValueError(f"arm must be one of {ARMS}, got {arm!r}")
    if arm == "probe":
        center, sigma = area.center, area.sigma
    else:
        center = area.conj_center or conjugate_center(area.center, layout.pump_center)
        sigma = area.sigma * layout.conj_scale
    if defocus is not None and defocus.z_offset != 0.0:
        z_r = defocus.rayleigh_range or rayleigh_range_cm(sigma, layout.wavelength_nm)
        sigma = float(effective_sigma(sigma, defocus.z_offset, z_r))
    return center, sigma


def half_plane_fraction(center, sigma, edge, keep="below"):
    """Fraction of a 1D Gaussian on one side of ``edge`` (vectorized)."""
    u = (np.asarray(edge, dtype=float) - center) / sigma
    return ndtr(u) if keep == "below" else ndtr(-u)


def region_fraction(center: tuple[float, float], sigma: float, region: Region) -> float:
    if region.kind == "full":
        return 1.0
    c = center[AXES[region.axis]]
    if region.kind == "half_plane":
        return float(half_plane_fraction(c, sigma, region.edge, region.keep))
    lo, hi = (region.lo - c) / sigma, (region.hi - c) / sigma
    if lo > 0:
        # both limits in the upper tail: difference of complements is accurate
        return float(ndtr(-lo) - ndtr(-hi))
    return float(ndtr(hi) - ndtr(lo))


def transmission(area: CoherenceArea, region: Region, layout: BeamLayout,
                 arm: str = "probe", defocus: DefocusParams | None = None) -> float:
    """Share of an area's intensity falling inside ``region`` on one arm."""
    center, sigma = footprint(area, layout, arm, defocus)
    return region_fraction(center, sigma, region)


def complementary_check(area: CoherenceArea, edge: float, layout: BeamLayout | None = None,
                        axis: str = "x", arm: str = "probe") -> tuple[float, float]:
    """Transmissions below and above one shared edge."""
    layout = layout or BeamLayout(areas=(area,))
    below = transmission(area, Region.half_plane(edge, axis, "below"), layout, arm)
    above = transmission(area, Region.half_plane(edge, axis, "above"), layout, arm)
    return below, above


def beam_profile(layout: BeamLayout, coords: Sequence[float], axis: str = "x",
                 arm: str = "probe") -> np.ndarray:
    """Marginal intensity of all areas on one arm along ``axis``."""
    x = np.asarray(coords, dtype=float)
    profile = np.zeros_like(x)
    for area in layout.areas:
        center, sigma = footprint(area, layout, arm)
        c = center[AXES[axis]]
        flux = area.pair.probe_flux if arm == "probe" else area.pair.conj_flux
        profile += flux * np.exp(-0.5 * ((x - c) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))
    return profile


def beam_fwhm(layout: BeamLayout, axis: str = "x", arm: str = "probe",
              n: int = 20001) -> float:
    """Full width at half maximum of the summed marginal profile."""
    span = []
    for area in layout.areas:
        center, sigma = footprint(area, layout, arm)
        c = center[AXES[axis]]
        span += [c - 6 * sigma, c + 6 * sigma]
    x = np.linspace(min(span), max(span), n)
    prof = beam_profile(layout, x, axis, arm)
    above = np.nonzero(prof >= 0.5 * prof.max())[0]
    i0, i1 = above[0], above[-1]

    def crossing(i, j):
        # linear interpolation between samples straddling half maximum
        half = 0.5 * prof.max()
        return x[i] + (half - prof[i]) * (x[j] - x[i]) / (prof[j] - prof[i])

    left = crossing(i0 - 1, i0) if i0 > 0 else x[0]
    right = crossing(i1, i1 + 1) if i1 < n - 1 else x[-1]
    return float(right - left)
