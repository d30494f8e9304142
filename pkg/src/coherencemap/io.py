"""Scene files, noise-map CSV files and fit reports.

Scenes are YAML documents.  Validation walks the composed node tree so
every diagnostic carries the line and column of the offending entry.  Noise
maps are CSV with ``#`` comment lines for provenance; floats are written
with ``repr`` so that reading and rewriting a file reproduces it byte for
byte.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .fit import FitResult, ModelSelection
from .geometry import AXES, BeamLayout, CoherenceArea, DefocusParams
from .noise import TwoModeSqueezedPair
from .scan import (
    ENGINES,
    PRESETS,
    ChannelConfig,
    NoiseMap,
    ScanPlan,
    default_plan,
    run_raster,
    sweep_1d,
)
from .scenarios import gain_from_db

SCHEMA_VERSION = 1
COLUMNS = ("probe_mm", "conj_mm", "variance", "snl", "nrf", "nrf_db", "stderr_nrf")
REQUIRED_COLUMNS = ("probe_mm", "conj_mm")
_BUNDLED = Path(__file__).parent / "scenes"


class SceneError(ValueError):
    """Schema violation in a scene file, with its location."""

    def __init__(self, message: str, mark=None, source: str = "<scene>"):
        self.line = mark.line + 1 if mark is not None else None
        self.column = mark.column + 1 if mark is not None else None
        where = f"{source}:{self.line}:{self.column}" if mark is not None else source
        super().__init__(f"{where}: {message}")


class MapFormatError(ValueError):
    """Malformed noise-map file."""


# -- scene schema ------------------------------------------------------------

_SCHEMA = {
    "layout": {
        "pump_center": "point", "conj_scale": "positive", "probe_image_z": "number",
        "conj_image_z": "number", "wavelength_nm": "positive", "areas": "areas",
    },
    "area": {
        "id": "str", "center": "point", "sigma": "positive", "gain": "number",
        "standalone_db": "number", "weight": "positive",
    },
    "config": {
        "preset": "str", "signs": "signs", "sweep_axis": "str", "efficiency": "number",
        "background": "number", "edge_scatter": "number", "cmrr_imbalance": "number",
    },
    "scan": {
        "kind": "str", "probe": "range", "conj": "range", "span_sigma": "positive",
        "probe_defocus_cm": "number", "conj_defocus_cm": "number",
    },
    "range": {"start": "number", "stop": "number", "steps": "count"},
    "engine": {"kind": "str", "samples": "count"},
    "top": {"layout": "layout", "config": "config", "scan": "scan", "engine": "engine",
            "seed": "count"},
}


@dataclass(frozen=True)
class Scene:
    """A validated scene: everything needed to simulate one noise map."""

    layout: BeamLayout
    config: ChannelConfig
    kind: str = "raster"
    probe: dict = field(default_factory=lambda: {"steps": 40})
    conj: dict = field(default_factory=lambda: {"steps": 15})
    span_sigma: float = 2.5
    probe_defocus_cm: float = 0.0
    conj_defocus_cm: float = 0.0
    engine: str = "analytic"
    samples: int = 100_000
    seed: int = 0


class _Walker:
    """Converts a composed YAML node tree while checking it against the schema."""

    def __init__(self, source: str):
        self.source = source
        self.constructor = yaml.SafeLoader("")

    def fail(self, message, node):
        raise SceneError(message, node.start_mark if node is not None else None, self.source)

    def scalar(self, node):
        if not isinstance(node, yaml.ScalarNode):
            self.fail("expected a scalar value", node)
        return self.constructor.construct_object(node, deep=True)

    def number(self, node, what):
        v = self.scalar(node)
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            self.fail(f"{what} must be a finite number, got {v!r}", node)
        return float(v)

    def mapping(self, node, schema_name, what):
        if not isinstance(node, yaml.MappingNode):
            self.fail(f"{what} must be a mapping", node)
        allowed = _SCHEMA[schema_name]
        out, nodes = {}, {}
        for key_node, value_node in node.value:
            key = self.scalar(key_node)
            if key not in allowed:
                self.fail(f"unknown key {key!r} in {what} (allowed: {', '.join(allowed)})",
                          key_node)
            if key in out:
                self.fail(f"duplicate key {key!r} in {what}", key_node)
            out[key] = self.value(value_node, allowed[key], f"{what}.{key}")
            nodes[key] = value_node
        return out, nodes

    def value(self, node, kind, what):
        if kind == "number":
            return self.number(node, what)
        if kind == "positive":
            v = self.number(node, what)
            if v <= 0:
                self.fail(f"{what} must be > 0, got {v}", node)
            return v
        if kind == "count":
            v = self.scalar(node)
            if isinstance(v, bool) or not isinstance(v, int) or v < 0:
                self.fail(f"{what} must be a non-negative integer, got {v!r}", node)
            return v
        if kind == "str":
            v = self.scalar(node)
            if not isinstance(v, str):
                self.fail(f"{what} must be a string, got {v!r}", node)
            return v
        if kind == "point":
            if isinstance(node, yaml.ScalarNode):
                return (self.number(node, what), 0.0)
            if not isinstance(node, yaml.SequenceNode) or len(node.value) != 2:
                self.fail(f"{what} must be a number or a two-element list", node)
            return tuple(self.number(n, what) for n in node.value)
        if kind == "signs":
            if not isinstance(node, yaml.MappingNode):
                self.fail(f"{what} must map modes A-D to -1, 0 or +1", node)
            out = {}
            for key_node, value_node in node.value:
                key = self.scalar(key_node)
                if key not in ("A", "B", "C", "D"):
                    self.fail(f"unknown mode {key!r} in {what} (allowed: A, B, C, D)", key_node)
                v = self.scalar(value_node)
                if isinstance(v, bool) or v not in (-1, 0, 1):
                    self.fail(f"{what}.{key} must be -1, 0 or +1, got {v!r}", value_node)
                out[key] = int(v)
            return out
        if kind == "areas":
            if not isinstance(node, yaml.SequenceNode) or not node.value:
                self.fail(f"{what} must be a nonempty list", node)
            return [self.area(n, f"{what}[{i}]", f"area{i}") for i, n in enumerate(node.value)]
        # nested section
        return self.mapping(node, kind, what)

    def area(self, node, what, default_id):
        d, nodes = self.mapping(node, "area", what)
        for key in ("center", "sigma"):
            if key not in d:
                self.fail(f"{what} is missing {key!r}", node)
        if ("gain" in d) == ("standalone_db" in d):
            self.fail(f"{what} needs exactly one of 'gain' or 'standalone_db'", node)
        if "gain" in d:
            gain = d["gain"]
            if gain < 1:
                self.fail(f"{what}.gain must be >= 1, got {gain}", nodes["gain"])
        else:
            if d["standalone_db"] > 0:
                self.fail(f"{what}.standalone_db must be <= 0", nodes["standalone_db"])
            gain = gain_from_db(d["standalone_db"])
        pair = TwoModeSqueezedPair(gain, d.get("weight", 1.0), d.get("id", default_id))
        return node, CoherenceArea(d["center"], d["sigma"], pair)


def parse_scene(text: str, source: str = "<scene>") -> Scene:
    """Validate a YAML scene document and build a :class:`Scene`."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.MarkedYAMLError as exc:
        raise SceneError(f"YAML syntax error: {exc.problem}", exc.problem_mark, source) from None
    if root is None:
        raise SceneError("empty scene", None, source)
    w = _Walker(source)
    top, nodes = w.mapping(root, "top", "scene")
    if "layout" not in top:
        w.fail("scene is missing 'layout'", root)

    layout_d, layout_nodes = top["layout"]
    if "areas" not in layout_d:
        w.fail("layout is missing 'areas'", nodes["layout"])
    area_nodes, areas = zip(*layout_d.pop("areas"))
    ids = [a.id for a in areas]
    for i, a in enumerate(areas):
        if ids.index(a.id) != i:
            w.fail(f"duplicate area id {a.id!r}", area_nodes[i])
    layout = BeamLayout(areas=areas, **layout_d)

    config_d, config_nodes = top.get("config", ({}, {}))
    name = config_d.pop("preset", None)
    if name is not None and "signs" in config_d:
        w.fail("config takes either 'preset' or 'signs', not both", nodes["config"])
    if name is not None:
        if name not in PRESETS:
            w.fail(f"unknown preset {name!r} (allowed: {', '.join(PRESETS)})",
                   config_nodes["preset"])
        config_d = {**asdict(PRESETS[name]), **config_d}
    elif "signs" not in config_d:
        config_d = {**asdict(PRESETS["SPLIT"]), **config_d}
    if config_d.get("sweep_axis", "x") not in AXES:
        w.fail("sweep_axis must be 'x' or 'y'", config_nodes["sweep_axis"])
    eff = config_d.get("efficiency", 1.0)
    if not 0 < eff <= 1:
        w.fail(f"efficiency must lie in (0, 1], got {eff}", config_nodes["efficiency"])
    for key in ("background", "edge_scatter", "cmrr_imbalance"):
        if config_d.get(key, 0.0) < 0:
            w.fail(f"{key} must be >= 0", config_nodes[key])
    # An all-blocked configuration is a physics-domain error, raised here
    # as NoiseDomainError rather than as a schema error.
    config = ChannelConfig(**config_d)

    scan_d, scan_nodes = top.get("scan", ({}, {}))
    kind = scan_d.get("kind", "raster")
    if kind not in ("raster", "sweep"):
        w.fail(f"scan.kind must be 'raster' or 'sweep', got {kind!r}", scan_nodes["kind"])
    ranges = {}
    for arm, steps in (("probe", 40), ("conj", 15)):
        if arm not in scan_d:
            ranges[arm] = {"steps": steps}
            continue
        r, r_nodes = scan_d[arm]
        if ("start" in r) != ("stop" in r):
            w.fail(f"scan.{arm} needs both 'start' and 'stop' or neither", scan_nodes[arm])
        if r.get("steps", steps) < 1:
            w.fail(f"scan.{arm}.steps must be >= 1", r_nodes["steps"])
        if "start" in r and r["start"] == r["stop"] and r.get("steps", steps) > 1:
            w.fail(f"scan.{arm} start and stop coincide", scan_nodes[arm])
        ranges[arm] = {"steps": steps, **r}
    if kind == "sweep" and "conj" in scan_d:
        w.fail("a sweep moves both edges together; remove scan.conj", scan_nodes["conj"])

    engine_d, engine_nodes = top.get("engine", ({}, {}))
    engine = engine_d.get("kind", "analytic")
    if engine not in ENGINES:
        w.fail(f"engine.kind must be one of {', '.join(ENGINES)}, got {engine!r}",
               engine_nodes["kind"])
    samples = engine_d.get("samples", 100_000)
    if engine == "monte_carlo" and samples < 10_000:
        w.fail("engine.samples must be >= 10000", engine_nodes["samples"])

    return Scene(
        layout, config, kind, ranges["probe"], ranges["conj"],
        scan_d.get("span_sigma", 2.5), scan_d.get("probe_defocus_cm", 0.0),
        scan_d.get("conj_defocus_cm", 0.0), engine, samples, top.get("seed", 0),
    )


def bundled_scene(name: str) -> Path | None:
    """Path of a scene shipped with the package (``fig3`` or ``fig3.scene``)."""
    stem = name[:-6] if name.endswith(".scene") else name
    path = _BUNDLED / f"{stem}.scene"
    return path if path.is_file() else None


def load_scene(path: str | Path) -> Scene:
    """Read a scene from disk, falling back to the bundled scenes by name."""
    p = Path(path)
    if not p.is_file():
        bundled = bundled_scene(p.name) if p.parent == Path(".") else None
        if bundled is None:
            raise SceneError("no such scene file", None, str(path))
        p = bundled
    return parse_scene(p.read_text(), str(path))


def _positions(spec: dict, default: np.ndarray) -> np.ndarray:
    if "start" in spec:
        return np.linspace(spec["start"], spec["stop"], spec["steps"])
    if spec["steps"] == len(default):
        return default
    return np.linspace(default[0], default[-1], spec["steps"])


def simulate_scene(scene: Scene, seed: int | None = None, workers: int = 1) -> NoiseMap:
    """Simulate a scene; ``seed`` overrides the scene's own seed."""
    seed = scene.seed if seed is None else seed
    axis = scene.config.sweep_axis
    auto = default_plan(scene.layout, axis, scene.probe["steps"], scene.conj["steps"],
                        scene.span_sigma)
    probe = _positions(scene.probe, np.asarray(auto.probe_positions))
    if scene.kind == "sweep":
        return sweep_1d(scene.layout, axis, probe, scene.config, scene.engine,
                        scene.samples, seed)
    conj = _positions(scene.conj, np.asarray(auto.conj_positions))
    plan = ScanPlan(
        tuple(probe), tuple(conj),
        DefocusParams(scene.probe_defocus_cm), DefocusParams(scene.conj_defocus_cm),
        scene.engine, scene.samples, seed,
    )
    return run_raster(scene.layout, plan, scene.config, workers)


# -- noise-map CSV -----------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def _json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def format_map(noise_map: NoiseMap) -> str:
    """Serialize a noise map to CSV text."""
    cfg = asdict(noise_map.config)
    meta = {k: list(v) if isinstance(v, tuple) else v for k, v in noise_map.meta.items()}
    lines = [
        f"# schema_version: {SCHEMA_VERSION}",
        f"# engine: {noise_map.engine}",
        f"# seed: {'none' if noise_map.seed is None else int(noise_map.seed)}",
        f"# layout_hash: {noise_map.fingerprint or 'none'}",
        f"# kind: {noise_map.kind}",
        f"# config: {_json(cfg)}",
        f"# meta: {_json(meta)}",
        ",".join(COLUMNS),
    ]
    db = noise_map.nrf_db
    for p, c, idx in noise_map.cells():
        row = (p, c, noise_map.variance[idx], noise_map.snl[idx], noise_map.nrf[idx],
               db[idx], noise_map.stderr_nrf[idx])
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def write_map(noise_map: NoiseMap, path: str | Path) -> None:
    Path(path).write_text(format_map(noise_map))


def _grid_order(probe: np.ndarray, conj: np.ndarray):
    """Unique coordinates if the rows form a row-major raster, else ``None``."""
    p_unique = list(dict.fromkeys(probe.tolist()))
    c_unique = list(dict.fromkeys(conj.tolist()))
    n_p, n_c = len(p_unique), len(c_unique)
    if n_p * n_c != probe.size:
        return None
    expect_p = np.repeat(p_unique, n_c)
    expect_c = np.tile(c_unique, n_p)
    if np.array_equal(expect_p, probe) and np.array_equal(expect_c, conj):
        return np.array(p_unique), np.array(c_unique)
    return None


def parse_map(text: str, config: ChannelConfig | None = None) -> NoiseMap:
    """Parse noise-map CSV text.

    Files without comment lines are treated as measured data: ``nrf`` may be
    given instead of ``nrf_db`` (or vice versa), ``variance``, ``snl`` and
    ``stderr_nrf`` are optional (missing uncertainties read as 0), and the
    channel configuration defaults to SPLIT unless ``config`` is passed.
    """
    header: dict[str, str] = {}
    body = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, sep, value = line[1:].partition(":")
            if sep:
                header[key.strip()] = value.strip()
            continue
        body.append(line)
    if not body:
        raise MapFormatError("map file has no header row")
    names = [n.strip() for n in body[0].split(",")]
    for n in names:
        if n not in COLUMNS:
            raise MapFormatError(f"unknown column header {n!r} (expected: {', '.join(COLUMNS)})")
    if len(set(names)) != len(names):
        raise MapFormatError(f"duplicate column header in {body[0]!r}")
    for n in REQUIRED_COLUMNS:
        if n not in names:
            raise MapFormatError(f"missing required column header {n!r}")
    if "nrf" not in names and "nrf_db" not in names:
        raise MapFormatError("map needs an 'nrf' or 'nrf_db' column")
    if len(body) < 2:
        raise MapFormatError("map file has no data rows")
    try:
        data = np.array([[float(v) for v in row.split(",")] for row in body[1:]])
    except ValueError as exc:
        raise MapFormatError(f"non-numeric value: {exc}") from None
    if data.ndim != 2 or data.shape[1] != len(names):
        raise MapFormatError(f"every row needs {len(names)} values")
    cols = {n: data[:, i] for i, n in enumerate(names)}

    if "nrf" in cols:
        nrf = cols["nrf"]
    else:
        nrf = 10.0 ** (cols["nrf_db"] / 10.0)
    snl = cols.get("snl", np.full_like(nrf, np.nan))
    variance = cols.get("variance", nrf * snl)
    stderr = cols.get("stderr_nrf", np.zeros_like(nrf))

    if "config" in header:
        try:
            config = ChannelConfig(**json.loads(header["config"]))
        except (TypeError, json.JSONDecodeError) as exc:
            raise MapFormatError(f"bad config comment: {exc}") from None
    elif config is None:
        config = PRESETS["SPLIT"]
    meta = json.loads(header["meta"]) if "meta" in header else {}
    kind = header.get("kind")
    probe, conj = cols["probe_mm"], cols["conj_mm"]
    grid = _grid_order(probe, conj) if kind != "sweep" else None
    if kind == "raster" and grid is None:
        raise MapFormatError("raster rows are not a row-major probe x conjugate grid")
    seed = header.get("seed", "none")
    common = dict(
        config=config,
        fingerprint="" if header.get("layout_hash", "none") == "none" else header["layout_hash"],
        engine=header.get("engine", "measured"),
        seed=None if seed == "none" else int(seed),
        meta=meta,
    )
    if grid is not None and (kind == "raster" or probe.size > 1 and len(grid[1]) > 1):
        return NoiseMap(grid[0], grid[1], variance, snl, nrf, stderr, kind="raster", **common)
    return NoiseMap(probe, conj, variance, snl, nrf, stderr, kind="sweep", **common)


def read_map(path: str | Path, config: ChannelConfig | None = None) -> NoiseMap:
    return parse_map(Path(path).read_text(), config)


# -- fit report --------------------------------------------------------------

def fit_summary(fit: FitResult) -> dict[str, Any]:
    return {
        "n_pairs": fit.n_pairs,
        "pairs": [dict(p) for p in fit.pairs],
        "residual_db": fit.residual,
        "rss": fit.rss,
        "n_cells": fit.n_cells,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "score": fit.score,
    }


def fit_report(selection: ModelSelection, complete: bool = True) -> str:
    """JSON report of a model selection run."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "complete": complete,
        "best_k": selection.best_k,
        "converged": selection.best.converged,
        "scores": {str(k): v for k, v in selection.scores.items()},
        "fits": {str(k): fit_summary(f) for k, f in selection.fits.items()},
    }
    buf = io.StringIO()
    json.dump(doc, buf, indent=2, sort_keys=True)
    return buf.getvalue() + "\n"
