"""Recover coherence-area layouts from noise maps, and count supported modes.

The forward model is the closed-form covariance engine evaluated on each
map's own edge grid and channel configuration.  Fits minimize the squared
``nrf_db`` residual with bounded Nelder-Mead from a stratified multistart,
then polish the best local optimum.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .geometry import AXES, BeamLayout, CoherenceArea, effective_sigma, rayleigh_range_cm
from .noise import NoiseDomainError, TwoModeSqueezedPair
from .scan import AreaArrays, NoiseMap, grid_core

_BAD = 1e12


@dataclass(frozen=True)
class FitModel:
    """Parameterized layout hypothesis with ``n_pairs`` coherence areas.

    Per pair the free parameters are the center along the cut axis, the
    width, the gain and (for all but the first pair) the seed weight
    relative to the first pair.  ``pump_center`` and ``conj_scale`` are
    shared and held fixed unless ``fit_pump`` / ``fit_conj_scale`` is set.
    With ``symmetric`` the conjugate centers are the inversion images of the
    probe centers; otherwise each pair gets a free conjugate center.
    """

    n_pairs: int
    center_bounds: tuple[float, float]
    scale: float = 1.0
    sigma_bounds: tuple[float, float] | None = None
    gain_bounds: tuple[float, float] = (1.0, 30.0)
    weight_bounds: tuple[float, float] = (1e-6, 20.0)
    pump_center: tuple[float, float] = (0.0, 0.0)
    conj_scale: float = 0.5
    conj_scale_bounds: tuple[float, float] = (0.1, 3.0)
    fit_pump: bool = False
    fit_conj_scale: bool = False
    symmetric: bool = True
    axis: str = "x"
    wavelength_nm: float = 795.0

    def __post_init__(self):
        if self.n_pairs < 1:
            raise ValueError("n_pairs must be >= 1")
        lo, hi = self.center_bounds
        if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
            raise ValueError(f"center_bounds must be finite with lo < hi, got {self.center_bounds}")
        if self.sigma_bounds is None:
            object.__setattr__(self, "sigma_bounds", (0.01 * self.scale, 1.0 * self.scale))

    # Scaled parameter vector: centers and widths by ``scale``, gains by 10.
    def names(self) -> list[str]:
        out = []
        for k in range(self.n_pairs):
            out += [f"center_{k}", f"sigma_{k}", f"gain_{k}"]
            if k > 0:
                out.append(f"weight_{k}")
            if not self.symmetric:
                out.append(f"conj_center_{k}")
        if self.fit_pump:
            out.append("pump")
        if self.fit_conj_scale:
            out.append("conj_scale")
        return out

    @property
    def n_params(self) -> int:
        return len(self.names())

    def _factor(self, name: str) -> float:
        if name.startswith(("center", "sigma", "conj_center", "pump")):
            return self.scale
        if name.startswith("gain"):
            return 10.0
        return 1.0

    def bounds(self) -> list[tuple[float, float]]:
        out = []
        for name in self.names():
            if name.startswith(("center", "conj_center", "pump")):
                lo, hi = self.center_bounds
            elif name.startswith("sigma"):
                lo, hi = self.sigma_bounds
            elif name.startswith("gain"):
                lo, hi = self.gain_bounds
            elif name.startswith("weight"):
                lo, hi = self.weight_bounds
            else:
                lo, hi = self.conj_scale_bounds
            f = self._factor(name)
            out.append((lo / f, hi / f))
        return out

    def pack(self, values: dict) -> np.ndarray:
        return np.array([values[n] / self._factor(n) for n in self.names()])

    def unpack(self, x: Sequence[float]) -> dict:
        return {n: float(v) * self._factor(n) for n, v in zip(self.names(), x)}

    def layout(self, x: Sequence[float]) -> BeamLayout:
        p = self.unpack(x)
        ax = AXES[self.axis]
        pump = list(self.pump_center)
        if self.fit_pump:
            pump[ax] = p["pump"]
        conj_scale = p.get("conj_scale", self.conj_scale)
        areas = []
        for k in range(self.n_pairs):
            center = list(pump)
            center[ax] = p[f"center_{k}"]
            conj = None
            if not self.symmetric:
                conj = list(pump)
                conj[ax] = p[f"conj_center_{k}"]
            pair = TwoModeSqueezedPair(p[f"gain_{k}"], p.get(f"weight_{k}", 1.0), f"area{k}")
            areas.append(CoherenceArea(tuple(center), p[f"sigma_{k}"], pair,
                                       tuple(conj) if conj else None))
        return BeamLayout(tuple(pump), tuple(areas), conj_scale,
                          wavelength_nm=self.wavelength_nm)


@dataclass(frozen=True, eq=False)
class FitResult:
    """Best local optimum of a layout fit.

    ``pairs`` is sorted by center so that round trips compare pair by pair;
    weights are normalized to sum to one.  ``residual`` is the RMS of the
    ``nrf_db`` mismatch and ``rss`` its sum of squares.
    """

    model: FitModel
    x: np.ndarray
    layout: BeamLayout
    pairs: tuple[dict, ...]
    residual: float
    rss: float
    n_cells: int
    iterations: int
    converged: bool
    score: float
    history: tuple[float, ...] = ()
    starts: int = 0

    @property
    def n_pairs(self) -> int:
        return self.model.n_pairs


def _arrays(model: FitModel, x, probe_z: float = 0.0, conj_z: float = 0.0) -> AreaArrays:
    """Footprint arrays straight from a parameter vector (no layout objects)."""
    p = model.unpack(x)
    k = range(model.n_pairs)
    ax = AXES[model.axis]
    pump = p.get("pump", model.pump_center[ax])
    conj_scale = p.get("conj_scale", model.conj_scale)
    centers = np.array([p[f"center_{i}"] for i in k])
    sigma = np.array([p[f"sigma_{i}"] for i in k])
    if model.symmetric:
        conj_centers = 2 * pump - centers
    else:
        conj_centers = np.array([p[f"conj_center_{i}"] for i in k])
    conj_sigma = sigma * conj_scale
    if probe_z:
        sigma = effective_sigma(sigma, probe_z, rayleigh_range_cm(sigma, model.wavelength_nm))
    if conj_z:
        conj_sigma = effective_sigma(conj_sigma, conj_z,
                                     rayleigh_range_cm(conj_sigma, model.wavelength_nm))
    gain = np.array([p[f"gain_{i}"] for i in k])
    weight = np.array([p.get(f"weight_{i}", 1.0) for i in k])
    return AreaArrays(centers, sigma, conj_centers, conj_sigma, gain, weight)


def _forward_db(model: FitModel, x, noise_map: NoiseMap) -> np.ndarray:
    meta = noise_map.meta
    arr = _arrays(model, x, meta.get("probe_defocus_cm", 0.0), meta.get("conj_defocus_cm", 0.0))
    _, _, nrf = grid_core(arr, noise_map.config, noise_map.probe_coords,
                          noise_map.conj_coords, "analytic", noise_map.kind == "sweep")
    with np.errstate(divide="ignore", invalid="ignore"):
        return 10.0 * np.log10(nrf)


def _objective(model: FitModel, maps: Sequence[NoiseMap]):
    targets = [m.nrf_db for m in maps]

    def fun(x):
        try:
            rss = 0.0
            for m, target in zip(maps, targets):
                r = (_forward_db(model, x, m) - target).ravel()
                rss += float(r @ r)
        except NoiseDomainError:
            return _BAD
        return rss if math.isfinite(rss) else _BAD

    return fun


def bic(rss: float, n: int, p: int, rss_floor: float = 0.0) -> float:
    """``n ln(RSS/n) + p ln(n)`` with RSS floored at ``rss_floor``."""
    rss = max(rss, rss_floor, 1e-300)
    return n * math.log(rss / n) + p * math.log(n)


def _simplex(x0, bounds, step=0.1):
    pts = [np.array(x0, dtype=float)]
    for i in range(len(x0)):
        v = np.array(x0, dtype=float)
        lo, hi = bounds[i]
        d = min(step, 0.25 * (hi - lo))
        v[i] = v[i] + d if v[i] + d <= hi else v[i] - d
        pts.append(v)
    return np.array(pts)


def _local(fun, x0, bounds, maxiter, xatol):
    trace = []

    def cb(intermediate_result):
        trace.append(float(intermediate_result.fun))

    res = minimize(
        fun, x0, method="Nelder-Mead", bounds=bounds, callback=cb,
        options={"xatol": xatol, "fatol": np.inf, "maxiter": maxiter,
                 "initial_simplex": _simplex(x0, bounds), "adaptive": len(x0) > 4},
    )
    return res, trace


def _starts(model: FitModel, maps, n_starts: int, seed: int) -> list[np.ndarray]:
    lo, hi = model.center_bounds
    inner_lo, inner_hi = lo + 0.1 * (hi - lo), hi - 0.1 * (hi - lo)
    k = model.n_pairs
    best_db = min(float(np.nanmin(m.nrf_db)) for m in maps)
    nrf_min = min(10 ** (best_db / 10), 0.999)
    g0 = float(np.clip((1 / nrf_min + 1) / 2, model.gain_bounds[0] + 1e-3, model.gain_bounds[1]))
    s0 = float(np.clip((inner_hi - inner_lo) / (3 * k), *model.sigma_bounds))
    rng = np.random.default_rng(seed)
    out = []
    for s in range(n_starts):
        u = np.full(k, 0.5) if s == 0 else rng.uniform(size=k)
        centers = inner_lo + (inner_hi - inner_lo) * (np.arange(k) + u) / k
        values = {}
        ax = AXES[model.axis]
        for i, c in enumerate(centers):
            values[f"center_{i}"] = c
            values[f"sigma_{i}"] = s0
            values[f"gain_{i}"] = g0
            values[f"weight_{i}"] = 1.0
            values[f"conj_center_{i}"] = 2 * model.pump_center[ax] - c
        values["pump"] = model.pump_center[ax]
        values["conj_scale"] = model.conj_scale
        out.append(model.pack(values))
    return out


def _canonical(model: FitModel, x: np.ndarray) -> tuple[dict, ...]:
    p = model.unpack(x)
    weights = np.array([p.get(f"weight_{k}", 1.0) for k in range(model.n_pairs)])
    weights = weights / weights.sum()
    pairs = []
    for k in range(model.n_pairs):
        d = {
            "center": p[f"center_{k}"],
            "sigma": p[f"sigma_{k}"],
            "gain": p[f"gain_{k}"],
            "weight": float(weights[k]),
        }
        if not model.symmetric:
            d["conj_center"] = p[f"conj_center_{k}"]
        pairs.append(d)
    pairs.sort(key=lambda d: (d["center"], d["sigma"], d["gain"]))
    return tuple(pairs)


def fit_layout(maps: NoiseMap | Sequence[NoiseMap], model: FitModel, n_starts: int | None = None,
               maxiter: int = 2000, xatol: float = 1e-6, polish: int = 4, seed: int = 0,
               rss_floor_db: float = 1e-4, workers: int = 1) -> FitResult:
    """Least-squares reconstruction of ``model`` from one or more noise maps.

    ``n_starts`` defaults to five per pair.  ``converged`` reports whether the
    final polishing run met the simplex-size tolerance; a fit that exhausted
    its iteration budget is returned with ``converged=False``.  Starts are
    independent and may run on ``workers`` threads; results are collected in
    start order, so the outcome does not depend on scheduling.
    """
    maps = [maps] if isinstance(maps, NoiseMap) else list(maps)
    if not maps or any(m.nrf.size == 0 for m in maps):
        raise ValueError("fit_layout needs at least one nonempty map")
    n_cells = sum(m.nrf.size for m in maps)
    if model.n_params > n_cells:
        raise ValueError(f"{model.n_params} parameters exceed {n_cells} map cells")
    fun = _objective(model, maps)
    bounds = model.bounds()
    n_starts = n_starts or 5 * model.n_pairs

    starts = _starts(model, maps, n_starts, seed)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(lambda x0: _local(fun, x0, bounds, maxiter, xatol), starts))
    else:
        runs = [_local(fun, x0, bounds, maxiter, xatol) for x0 in starts]
    candidates = []
    iterations = 0
    for res, trace in runs:
        iterations += res.nit
        candidates.append((float(res.fun), tuple(np.round(res.x, 12)), res, trace))
    candidates.sort(key=lambda c: (c[0], c[1]))
    _, _, best, history = candidates[0]
    history = list(history)

    x, fx, converged = best.x, float(best.fun), bool(best.success)
    for _ in range(polish):
        res, trace = _local(fun, x, bounds, maxiter, xatol)
        iterations += res.nit
        gain = fx - float(res.fun)
        if gain > 0:
            x, fx = res.x, float(res.fun)
            history += trace
        converged = bool(res.success)
        if converged and gain <= 1e-12 * max(fx, 1e-300):
            break

    rss = float(fun(x))
    residual = math.sqrt(rss / n_cells)
    score = bic(rss, n_cells, model.n_params, n_cells * rss_floor_db**2)
    return FitResult(model, np.asarray(x), model.layout(x), _canonical(model, x), residual, rss,
                     n_cells, iterations, converged and math.isfinite(residual), score,
                     tuple(history), n_starts)


@dataclass(frozen=True, eq=False)
class ModelSelection:
    best_k: int
    scores: dict
    fits: dict

    @property
    def best(self) -> FitResult:
        return self.fits[self.best_k]


def select_model(maps, k_range: Sequence[int], model_factory=None, **fit_options) -> ModelSelection:
    """Fit every ``K`` in ``k_range`` and keep the lowest BIC.

    ``model_factory(K)`` builds the :class:`FitModel`; by default it is
    derived from the first map with :func:`model_for_maps`.  Ties go to the
    smaller ``K``.
    """
    k_range = sorted(set(int(k) for k in k_range))
    if not k_range:
        raise ValueError("k_range must be nonempty")
    maps = [maps] if isinstance(maps, NoiseMap) else list(maps)
    factory = model_factory or (lambda k: model_for_maps(maps, k))
    fits, scores = {}, {}
    for k in k_range:
        fits[k] = fit_layout(maps, factory(k), **fit_options)
        scores[k] = fits[k].score
    best = min(k_range, key=lambda k: (scores[k], k))
    return ModelSelection(best, scores, fits)


def model_for_maps(maps, n_pairs: int, **overrides) -> FitModel:
    """Default :class:`FitModel` whose bounds follow the maps' edge ranges."""
    maps = [maps] if isinstance(maps, NoiseMap) else list(maps)
    coords = np.concatenate([np.concatenate([m.probe_coords, m.conj_coords]) for m in maps])
    lo, hi = float(coords.min()), float(coords.max())
    meta = maps[0].meta
    opts = dict(
        center_bounds=(lo, hi),
        scale=hi - lo,
        pump_center=tuple(meta.get("pump_center", (0.0, 0.0))),
        conj_scale=float(meta.get("conj_scale", 0.5)),
        axis=maps[0].config.sweep_axis,
    )
    opts.update(overrides)
    return FitModel(n_pairs, **opts)


def estimate_mode_count(pump_waist_mm: float, wavelength_nm: float,
                        acceptance_half_angle_mrad: float) -> float:
    """Order-of-magnitude count of spatial modes inside the gain acceptance cone.

    ``N = (theta_acc / theta_d)^2`` with the pump diffraction half-angle
    ``theta_d = lambda / (pi w)``.
    """
    if min(pump_waist_mm, wavelength_nm, acceptance_half_angle_mrad) <= 0:
        raise ValueError("pump waist, wavelength and acceptance angle must be > 0")
    theta_d = wavelength_nm * 1e-9 / (math.pi * pump_waist_mm * 1e-3)
    return (acceptance_half_angle_mrad * 1e-3 / theta_d) ** 2
