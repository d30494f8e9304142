"""Command-line entry point: ``coherencemap simulate|fit|plot|modecount``.

Exit codes: 0 success, 2 bad input or schema, 3 physics-domain error
(for example every detected mode blocked), 4 fit did not converge (the
report is still written).  Randomness comes only from ``--seed``; when the
flag is absent the scene's ``seed`` entry is used, and that defaults to 0.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .fit import estimate_mode_count, model_for_maps, select_model
from .io import (
    MapFormatError,
    SceneError,
    fit_report,
    load_scene,
    read_map,
    simulate_scene,
    write_map,
)
from .noise import NoiseDomainError
from .plot import write_svg
from .scan import preset

EXIT_OK, EXIT_INPUT, EXIT_DOMAIN, EXIT_NOCONVERGE = 0, 2, 3, 4


def _error(message: str) -> None:
    print(f"coherencemap: error: {message}", file=sys.stderr)


def _int_list(text: str) -> list[int]:
    try:
        out = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not out or min(out) < 1:
        raise argparse.ArgumentTypeError("pair counts must be >= 1")
    return out


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def cmd_simulate(args) -> int:
    scene = load_scene(args.scene)
    noise_map = simulate_scene(scene, args.seed, args.threads)
    write_map(noise_map, args.out)
    print(f"wrote {noise_map.nrf.size} cells to {args.out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    config = None
    if args.preset:
        config = preset(args.preset, sweep_axis=args.axis or "x")
    maps = [read_map(p, config) for p in args.maps]
    selection = select_model(
        maps, args.k, model_factory=lambda k: model_for_maps(maps, k),
        n_starts=args.starts, maxiter=args.maxiter, xatol=args.xatol, seed=args.seed or 0,
        workers=args.threads,
    )
    converged = selection.best.converged
    Path(args.out).write_text(fit_report(selection, complete=converged))
    best = selection.best
    print(f"best K = {selection.best_k}, residual = {best.residual:.3g} dB, "
          f"converged = {converged}")
    if not converged:
        _error(f"fit with K={selection.best_k} did not converge; partial report in {args.out}")
        return EXIT_NOCONVERGE
    return EXIT_OK


def cmd_plot(args) -> int:
    noise_map = read_map(args.map)
    write_svg(noise_map, args.out, args.title or Path(args.map).stem)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_modecount(args) -> int:
    print(f"{estimate_mode_count(args.waist, args.wavelength, args.angle):.6g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coherencemap",
        description="Simulate, fit and plot spatially resolved twin-beam noise maps.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="random seed (default: the scene's seed, else 0)")
    common.add_argument("--threads", type=_positive_int, default=1,
                        help="worker threads; results do not depend on this (default 1)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate a scene into a map CSV")
    p.add_argument("scene", help="scene file, or the name of a bundled scene such as fig3.scene")
    p.add_argument("-o", "--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", parents=[common], help="reconstruct coherence areas from maps")
    p.add_argument("maps", nargs="+", help="noise-map CSV files")
    p.add_argument("-o", "--out", required=True, help="output JSON report path")
    p.add_argument("--k", type=_int_list, default=[1, 2, 3],
                   help="candidate pair counts, comma separated (default 1,2,3)")
    p.add_argument("--starts", type=_positive_int, default=None,
                   help="multistart count per K (default 5 per pair)")
    p.add_argument("--maxiter", type=_positive_int, default=2000)
    p.add_argument("--xatol", type=float, default=1e-6,
                   help="simplex size tolerance in scaled parameters (default 1e-6)")
    p.add_argument("--preset", choices=["SPLIT", "AD_ONLY", "ALL_DIFF"],
                   help="channel configuration for maps without a config comment")
    p.add_argument("--axis", choices=["x", "y"], help="cut axis used with --preset")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("plot", help="render a map CSV as SVG")
    p.add_argument("map", help="noise-map CSV file")
    p.add_argument("-o", "--out", required=True, help="output SVG path")
    p.add_argument("--title", default=None)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("modecount", help="estimate the number of supported spatial modes")
    p.add_argument("--waist", type=float, required=True, help="pump waist (mm)")
    p.add_argument("--wavelength", type=float, required=True, help="wavelength (nm)")
    p.add_argument("--angle", type=float, required=True,
                   help="gain acceptance half-angle (mrad)")
    p.set_defaults(func=cmd_modecount)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.func(args)
    except NoiseDomainError as exc:
        _error(str(exc))
        return EXIT_DOMAIN
    except (SceneError, MapFormatError, OSError, ValueError) as exc:
        _error(str(exc))
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
