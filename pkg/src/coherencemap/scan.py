"""D-mirror scan protocols: channel configurations, rasters and sweeps.

Four beam portions are formed by one knife edge per arm:

====  ==========  ==================
mode  arm         side of the edge
====  ==========  ==================
A     probe       below
B     probe       above
C     conjugate   below
D     conjugate   above
====  ==========  ==================

Each portion is routed to the positive or negative input of a balanced
detector or blocked.  A raster moves both edges independently; a 1D sweep
moves them together as mirror images through the pump center.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import ndtr

from .geometry import (
    AXES,
    FWHM_PER_SIGMA,
    BeamLayout,
    DefocusParams,
    Region,
    beam_fwhm,
    footprint,
    transmission,
)
from .noise import (
    DetectionAssignment,
    NoiseDomainError,
    NoiseResult,
    RegionEntry,
    monte_carlo_nrf,
    nrf_covariance,
    nrf_paper_model,
)

MODES = ("A", "B", "C", "D")
_MODE_GEOMETRY = {
    "A": ("probe", "below"),
    "B": ("probe", "above"),
    "C": ("conjugate", "below"),
    "D": ("conjugate", "above"),
}
ENGINES = ("analytic", "paper", "monte_carlo")


@dataclass(frozen=True)
class ChannelConfig:
    """Sign of each beam portion on the balanced detector plus detector noise.

    ``signs`` maps A, B, C, D to +1, -1 or 0 (blocked).  ``edge_scatter``
    is stray variance, in SNL units, coupled in by a D-mirror edge; it is
    weighted by ``f (1 - f)`` of the beam the edge cuts, so it vanishes when
    the edge is clear of the beam.
    """

    signs: dict = field(default_factory=lambda: {"A": 1, "B": -1, "C": 1, "D": -1})
    sweep_axis: str = "x"
    efficiency: float = 1.0
    background: float = 0.0
    edge_scatter: float = 0.0
    cmrr_imbalance: float = 0.0
    name: str = "custom"

    def __post_init__(self):
        signs = {m: int(self.signs.get(m, 0)) for m in MODES}
        unknown = set(self.signs) - set(MODES)
        if unknown:
            raise ValueError(f"unknown mode labels {sorted(unknown)}")
        if any(s not in (-1, 0, 1) for s in signs.values()):
            raise ValueError(f"mode signs must be -1, 0 or +1, got {signs}")
        if all(s == 0 for s in signs.values()):
            raise NoiseDomainError("SNL = 0: every mode is blocked")
        if self.sweep_axis not in AXES:
            raise ValueError(f"sweep_axis must be 'x' or 'y', got {self.sweep_axis!r}")
        if not 0.0 < self.efficiency <= 1.0:
            raise NoiseDomainError(f"efficiency={self.efficiency!r} must lie in (0, 1]")
        if min(self.background, self.edge_scatter, self.cmrr_imbalance) < 0:
            raise NoiseDomainError("background, edge_scatter and cmrr_imbalance must be >= 0")
        object.__setattr__(self, "signs", signs)

    def coefficient(self, mode: str) -> float:
        s = self.signs[mode]
        return -(1.0 - self.cmrr_imbalance) if s < 0 else float(s)


SPLIT = ChannelConfig({"A": 1, "C": 1, "B": -1, "D": -1}, name="SPLIT")
AD_ONLY = ChannelConfig({"A": 1, "D": -1, "B": 0, "C": 0}, name="AD_ONLY")
ALL_DIFF = ChannelConfig({"A": 1, "B": 1, "C": -1, "D": -1}, name="ALL_DIFF")
PRESETS = {"SPLIT": SPLIT, "AD_ONLY": AD_ONLY, "ALL_DIFF": ALL_DIFF}


def preset(name: str, **changes) -> ChannelConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown channel preset {name!r}; expected one of {sorted(PRESETS)}") from None
    return replace(base, **changes)


def _monotone(values) -> bool:
    d = np.diff(values)
    return bool(np.all(d > 0) or np.all(d < 0))


@dataclass(frozen=True)
class ScanPlan:
    probe_positions: tuple[float, ...]
    conj_positions: tuple[float, ...]
    probe_defocus: DefocusParams = DefocusParams()
    conj_defocus: DefocusParams = DefocusParams()
    engine: str = "analytic"
    n_samples: int = 100_000
    seed: int = 0

    def __post_init__(self):
        p = tuple(float(v) for v in self.probe_positions)
        c = tuple(float(v) for v in self.conj_positions)
        if not p or not c:
            raise ValueError("scan position lists must be nonempty")
        if (len(p) > 1 and not _monotone(p)) or (len(c) > 1 and not _monotone(c)):
            raise ValueError("scan positions must be strictly monotone")
        if self.engine not in ENGINES:
            raise ValueError(f"engine must be one of {ENGINES}, got {self.engine!r}")
        object.__setattr__(self, "probe_positions", p)
        object.__setattr__(self, "conj_positions", c)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.probe_positions), len(self.conj_positions)


def default_plan(layout: BeamLayout, axis: str = "x", n_probe: int = 40, n_conj: int = 15,
                 span_sigma: float = 2.5, **kwargs) -> ScanPlan:
    """Raster of ``n_probe x n_conj`` edges spanning ``+-span_sigma`` beam widths."""
    sigma_beam = beam_fwhm(layout, axis) / FWHM_PER_SIGMA
    c = layout.pump_center[AXES[axis]]
    probe = np.linspace(c - span_sigma * sigma_beam, c + span_sigma * sigma_beam, n_probe)
    conj = np.linspace(c - span_sigma * sigma_beam, c + span_sigma * sigma_beam, n_conj)
    return ScanPlan(tuple(probe), tuple(conj), **kwargs)


@dataclass(frozen=True, eq=False)
class NoiseMap:
    """Noise results gridded over probe and conjugate edge positions.

    For ``kind == "raster"`` the arrays have shape
    ``(len(probe_coords), len(conj_coords))``; for ``kind == "sweep"`` the
    two coordinate lists are paired and the arrays are 1D.
    """

    probe_coords: np.ndarray
    conj_coords: np.ndarray
    variance: np.ndarray
    snl: np.ndarray
    nrf: np.ndarray
    stderr_nrf: np.ndarray
    config: ChannelConfig
    fingerprint: str = ""
    kind: str = "raster"
    engine: str = "analytic"
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        p, c = np.asarray(self.probe_coords, float), np.asarray(self.conj_coords, float)
        shape = (p.size, c.size) if self.kind == "raster" else (p.size,)
        if self.kind == "sweep" and p.size != c.size:
            raise ValueError("sweep coordinates must be paired")
        object.__setattr__(self, "probe_coords", p)
        object.__setattr__(self, "conj_coords", c)
        for name in ("variance", "snl", "nrf", "stderr_nrf"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(shape)
            object.__setattr__(self, name, arr)

    @property
    def nrf_db(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 10.0 * np.log10(self.nrf)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.nrf.shape

    def result(self, *index) -> NoiseResult:
        return NoiseResult(
            float(self.variance[index]), float(self.snl[index]), float(self.nrf[index]),
            float(self.nrf_db[index]), float(self.stderr_nrf[index]),
        )

    @property
    def values(self) -> np.ndarray:
        out = np.empty(self.shape, dtype=object)
        for index in np.ndindex(*self.shape):
            out[index] = self.result(*index)
        return out

    def cells(self):
        """Yield ``(probe_mm, conj_mm, index)`` in row-major probe order."""
        if self.kind == "raster":
            for i, p in enumerate(self.probe_coords):
                for j, c in enumerate(self.conj_coords):
                    yield float(p), float(c), (i, j)
        else:
            for i, (p, c) in enumerate(zip(self.probe_coords, self.conj_coords)):
                yield float(p), float(c), (i,)


# -- per-cell reference path -------------------------------------------------

def build_assignment(layout: BeamLayout, config: ChannelConfig, probe_edge: float,
                     conj_edge: float, probe_defocus: DefocusParams | None = None,
                     conj_defocus: DefocusParams | None = None) -> DetectionAssignment:
    """Detector assignment for one pair of D-mirror edge positions.

    The edge-scatter contribution is folded into the assignment background.
    """
    axis = config.sweep_axis
    edges = {"probe": probe_edge, "conjugate": conj_edge}
    defocus = {"probe": probe_defocus, "conjugate": conj_defocus}
    arms = {}
    for area in layout.areas:
        entries = {"probe": [], "conjugate": []}
        for mode in MODES:
            arm, keep = _MODE_GEOMETRY[mode]
            region = Region.half_plane(edges[arm], axis, keep)
            t = transmission(area, region, layout, arm, defocus[arm])
            entries[arm].append(RegionEntry(mode, t, config.signs[mode]))
        arms[area.id] = (tuple(entries["probe"]), tuple(entries["conjugate"]))
    scatter = config.edge_scatter * _edge_weight(
        layout, axis, probe_edge, conj_edge, probe_defocus, conj_defocus
    )
    return DetectionAssignment(
        arms,
        background=config.background + float(scatter),
        cmrr_imbalance=config.cmrr_imbalance,
        efficiency=config.efficiency,
    )


def evaluate_cell(layout, config, probe_edge, conj_edge, engine="analytic",
                  probe_defocus=None, conj_defocus=None, n_samples=100_000,
                  rng_seed=0) -> NoiseResult:
    assignment = build_assignment(layout, config, probe_edge, conj_edge,
                                  probe_defocus, conj_defocus)
    if engine == "analytic":
        return nrf_covariance(layout, assignment)
    if engine == "paper":
        return nrf_paper_model(layout, assignment)
    if engine == "monte_carlo":
        return monte_carlo_nrf(layout, assignment, n_samples, rng_seed)
    raise ValueError(f"engine must be one of {ENGINES}, got {engine!r}")


# -- vectorized grid path ----------------------------------------------------

class AreaArrays(NamedTuple):
    """Per-area footprints along the cut axis and pair parameters."""

    probe_center: np.ndarray
    probe_sigma: np.ndarray
    conj_center: np.ndarray
    conj_sigma: np.ndarray
    gain: np.ndarray
    seed_flux: np.ndarray


def layout_arrays(layout: BeamLayout, axis: str, probe_defocus: DefocusParams | None = None,
                  conj_defocus: DefocusParams | None = None) -> AreaArrays:
    ax = AXES[axis]
    cols = []
    for area in layout.areas:
        pc, ps = footprint(area, layout, "probe", probe_defocus)
        cc, cs = footprint(area, layout, "conjugate", conj_defocus)
        cols.append((pc[ax], ps, cc[ax], cs, area.pair.gain, area.pair.seed_flux))
    return AreaArrays(*(np.array(c, dtype=float) for c in zip(*cols)))


def _split(center, sigma, edges):
    """``(n_areas, n_edges)`` fractions below and above each edge."""
    u = (edges[None, :] - center[:, None]) / sigma[:, None]
    return ndtr(u), ndtr(-u)


def _edge_weight_arrays(arr: AreaArrays, probe_edges, conj_edges):
    """Flux-weighted ``f (1 - f)`` of both arms at their edges (paired)."""
    mean_p = arr.gain * arr.seed_flux
    mean_c = (arr.gain - 1) * arr.seed_flux
    total = mean_p.sum() + mean_c.sum()
    fp = mean_p @ _split(arr.probe_center, arr.probe_sigma, probe_edges)[0] / mean_p.sum()
    weight = mean_p.sum() / total * fp * (1 - fp)
    if mean_c.sum() > 0:
        fc = mean_c @ _split(arr.conj_center, arr.conj_sigma, conj_edges)[0] / mean_c.sum()
        weight = weight + mean_c.sum() / total * fc * (1 - fc)
    return weight


def _edge_weight(layout, axis, probe_edge, conj_edge, probe_defocus=None, conj_defocus=None):
    arr = layout_arrays(layout, axis, probe_defocus, conj_defocus)
    w = _edge_weight_arrays(arr, np.atleast_1d(np.asarray(probe_edge, float)),
                            np.atleast_1d(np.asarray(conj_edge, float)))
    return w if np.ndim(probe_edge) or np.ndim(conj_edge) else float(w[0])


def grid_core(arr: AreaArrays, config: ChannelConfig, probe_edges: np.ndarray,
              conj_edges: np.ndarray, engine: str = "analytic", paired: bool = False):
    """:func:`grid_noise` on precomputed footprint arrays."""
    ta, tb = _split(arr.probe_center, arr.probe_sigma, probe_edges)
    tc, td = _split(arr.conj_center, arr.conj_sigma, conj_edges)
    if not paired:
        ta, tb = ta[:, :, None], tb[:, :, None]
        tc, td = tc[:, None, :], td[:, None, :]
    eta = config.efficiency
    sgn = config.signs
    shape_k = (-1,) + (1,) * (ta.ndim - 1)
    gain = arr.gain.reshape(shape_k)
    n0 = arr.seed_flux.reshape(shape_k)
    mean_p, mean_c = gain * n0, (gain - 1) * n0

    snl = eta * ((abs(sgn["A"]) * ta + abs(sgn["B"]) * tb) * mean_p
                 + (abs(sgn["C"]) * tc + abs(sgn["D"]) * td) * mean_c).sum(axis=0)
    if np.any(snl <= 0):
        raise NoiseDomainError("SNL = 0: no detected flux reaches a signed region")

    extra = config.background
    if config.edge_scatter:
        if paired:
            w = _edge_weight_arrays(arr, probe_edges, conj_edges)
        else:
            wp = _edge_weight_arrays(arr, probe_edges, np.full_like(probe_edges, np.inf))
            wc = _edge_weight_arrays(arr, np.full_like(conj_edges, np.inf), conj_edges)
            w = wp[:, None] + wc[None, :]
        extra = extra + config.edge_scatter * w

    if engine == "analytic":
        coef = {m: config.coefficient(m) for m in MODES}
        g2 = 2 * gain - 1
        vp, vc, cpc = gain * g2 * n0, (gain - 1) * g2 * n0, 2 * gain * (gain - 1) * n0
        up = eta * (coef["A"] * ta + coef["B"] * tb)
        wp = eta * (coef["A"] ** 2 * ta + coef["B"] ** 2 * tb)
        uc = eta * (coef["C"] * tc + coef["D"] * td)
        wc = eta * (coef["C"] ** 2 * tc + coef["D"] ** 2 * td)
        var = (up**2 * vp + mean_p * (wp - up**2)
               + uc**2 * vc + mean_c * (wc - uc**2)
               + 2 * up * uc * cpc).sum(axis=0)
        nrf = var / snl + extra
    elif engine == "paper":
        fpp = sum(t for m, t in (("A", ta), ("B", tb)) if sgn[m] > 0)
        fpn = sum(t for m, t in (("A", ta), ("B", tb)) if sgn[m] < 0)
        fcp = sum(t for m, t in (("C", tc), ("D", td)) if sgn[m] > 0)
        fcn = sum(t for m, t in (("C", tc), ("D", td)) if sgn[m] < 0)
        g = 2 * gain - 1
        power = g * n0
        bracket = np.broadcast_to((power * eta * (fpp * fcn + fpn * fcp) * g).sum(axis=0),
                                  snl.shape)
        if np.any(bracket <= 0):
            raise NoiseDomainError("no correlated detected power: reciprocal noise bracket is zero")
        nrf = power.sum() / bracket + extra
    else:
        raise ValueError(f"grid engine must be 'analytic' or 'paper', got {engine!r}")
    nrf = np.broadcast_to(nrf, snl.shape)
    return nrf * snl, snl, np.array(nrf)


def grid_noise(layout: BeamLayout, config: ChannelConfig, probe_edges, conj_edges,
               engine: str = "analytic", probe_defocus: DefocusParams | None = None,
               conj_defocus: DefocusParams | None = None, paired: bool = False):
    """Closed-form ``(variance, snl, nrf)`` arrays for many edge positions.

    With ``paired=False`` the result is the outer grid (probe x conjugate);
    with ``paired=True`` the i-th probe edge goes with the i-th conjugate
    edge.  ``engine`` is ``"analytic"`` or ``"paper"``.
    """
    probe_edges = np.atleast_1d(np.asarray(probe_edges, dtype=float))
    conj_edges = np.atleast_1d(np.asarray(conj_edges, dtype=float))
    if paired and probe_edges.shape != conj_edges.shape:
        raise ValueError("paired edges must have equal length")
    arr = layout_arrays(layout, config.sweep_axis, probe_defocus, conj_defocus)
    return grid_core(arr, config, probe_edges, conj_edges, engine, paired)


# -- protocols ---------------------------------------------------------------

def _monte_carlo_cells(layout, config, cells, plan_like, workers):
    probe_defocus, conj_defocus, n_samples, seed = plan_like

    def one(cell):
        index, pe, ce = cell
        seq = np.random.SeedSequence([int(seed), *index])
        return evaluate_cell(layout, config, pe, ce, "monte_carlo", probe_defocus,
                             conj_defocus, n_samples, seq)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, cells))
    return [one(c) for c in cells]


def run_raster(layout: BeamLayout, plan: ScanPlan, config: ChannelConfig = SPLIT,
               workers: int = 1) -> NoiseMap:
    """Evaluate the noise for every (probe edge, conjugate edge) combination."""
    meta = _meta(layout, plan.probe_defocus, plan.conj_defocus)
    if plan.engine == "monte_carlo":
        cells = [((i, j), pe, ce) for i, pe in enumerate(plan.probe_positions)
                 for j, ce in enumerate(plan.conj_positions)]
        res = _monte_carlo_cells(layout, config, cells,
                                 (plan.probe_defocus, plan.conj_defocus, plan.n_samples, plan.seed),
                                 workers)
        arrays = {k: np.array([getattr(r, k) for r in res]).reshape(plan.shape)
                  for k in ("variance", "snl", "nrf", "stderr_nrf")}
        return NoiseMap(plan.probe_positions, plan.conj_positions, config=config,
                        fingerprint=layout.fingerprint(), engine=plan.engine,
                        seed=plan.seed, meta=meta, **arrays)
    var, snl, nrf = grid_noise(layout, config, plan.probe_positions, plan.conj_positions,
                               plan.engine, plan.probe_defocus, plan.conj_defocus)
    return NoiseMap(plan.probe_positions, plan.conj_positions, var, snl, nrf,
                    np.zeros_like(nrf), config, layout.fingerprint(), "raster",
                    plan.engine, None, meta)


def _meta(layout, probe_defocus=None, conj_defocus=None):
    return {
        "pump_center": layout.pump_center,
        "conj_scale": layout.conj_scale,
        "probe_defocus_cm": (probe_defocus or DefocusParams()).z_offset,
        "conj_defocus_cm": (conj_defocus or DefocusParams()).z_offset,
    }


@dataclass(frozen=True, eq=False)
class Profile:
    """Best noise along one raster axis and where along the other it occurs."""

    coords: np.ndarray
    nrf_db: np.ndarray
    argmin_coords: np.ndarray
    axis: str


def optimal_profile(noise_map: NoiseMap, axis: str = "probe") -> Profile:
    """Minimum ``nrf_db`` over the other raster axis for each step of ``axis``."""
    if noise_map.kind != "raster":
        raise ValueError("optimal_profile needs a raster map")
    db = noise_map.nrf_db
    if db.size == 0:
        raise ValueError("empty noise map")
    if axis == "probe":
        idx = np.argmin(db, axis=1)
        return Profile(noise_map.probe_coords, db[np.arange(db.shape[0]), idx],
                       noise_map.conj_coords[idx], axis)
    if axis in ("conj", "conjugate"):
        idx = np.argmin(db, axis=0)
        return Profile(noise_map.conj_coords, db[idx, np.arange(db.shape[1])],
                       noise_map.probe_coords[idx], "conjugate")
    raise ValueError(f"axis must be 'probe' or 'conjugate', got {axis!r}")


@dataclass(frozen=True, eq=False)
class AxialSweep:
    z: np.ndarray
    results: tuple[NoiseResult, ...]
    arm: str

    @property
    def nrf(self) -> np.ndarray:
        return np.array([r.nrf for r in self.results])

    @property
    def argmin_z(self) -> float:
        """Defocus of lowest noise; near-ties go to the smallest ``|z|``."""
        nrf = self.nrf
        best = nrf.min()
        ties = np.nonzero(nrf <= best + 1e-12 * abs(best))[0]
        return float(self.z[ties[np.argmin(np.abs(self.z[ties]))]])


def axial_sweep(layout: BeamLayout, z_values: Sequence[float], arm: str = "probe",
                config: ChannelConfig = AD_ONLY, edges: tuple[float, float] | None = None,
                engine: str = "analytic", rayleigh_range: float | None = None) -> AxialSweep:
    """Noise versus axial offset of one arm's D-mirror from its image plane.

    Edges default to the pump center on both arms, which half-blocks a
    layout symmetric about the pump.
    """
    if arm not in ("probe", "conjugate"):
        raise ValueError(f"arm must be 'probe' or 'conjugate', got {arm!r}")
    c = layout.pump_center[AXES[config.sweep_axis]]
    pe, ce = edges if edges is not None else (c, c)
    results = []
    for z in z_values:
        d = DefocusParams(float(z), rayleigh_range)
        pd, cd = (d, None) if arm == "probe" else (None, d)
        var, snl, nrf = grid_noise(layout, config, [pe], [ce], engine, pd, cd, paired=True)
        results.append(NoiseResult.from_variance(float(var[0]), float(snl[0])))
    return AxialSweep(np.asarray(z_values, dtype=float), tuple(results), arm)


def sweep_1d(layout: BeamLayout, axis: str, positions: Sequence[float],
             config: ChannelConfig = SPLIT, engine: str = "analytic",
             n_samples: int = 100_000, seed: int = 0) -> NoiseMap:
    """Move both edges together as mirror images through the pump center."""
    config = replace(config, sweep_axis=axis)
    c = layout.pump_center[AXES[axis]]
    probe = np.asarray(positions, dtype=float)
    conj = 2.0 * c - probe
    meta = _meta(layout)
    if engine == "monte_carlo":
        cells = [((i,), pe, ce) for i, (pe, ce) in enumerate(zip(probe, conj))]
        res = _monte_carlo_cells(layout, config, cells, (None, None, n_samples, seed), 1)
        arrays = {k: np.array([getattr(r, k) for r in res])
                  for k in ("variance", "snl", "nrf", "stderr_nrf")}
        return NoiseMap(probe, conj, config=config, fingerprint=layout.fingerprint(),
                        kind="sweep", engine=engine, seed=seed, meta=meta, **arrays)
    var, snl, nrf = grid_noise(layout, config, probe, conj, engine, paired=True)
    return NoiseMap(probe, conj, var, snl, nrf, np.zeros_like(nrf), config,
                    layout.fingerprint(), "sweep", engine, None, meta)
