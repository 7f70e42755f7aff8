"""Command-line entry point.

Exit codes: 0 ok, 2 validation, 3 numerical-hypothesis violation, 4 I/O.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .errors import EnfluxError, StageError
from .pipeline import ExperimentConfig, run, run_stage
from .reports import render
from .spectral import FFT_WORKERS_ENV

EXIT_OK = 0
EXIT_IO = 4


def _resolution(values):
    if values is None:
        return None
    if len(values) == 1:
        return values[0]
    if len(values) == 3:
        return values
    raise argparse.ArgumentTypeError("--n takes one or three integers")


def _params(args, names) -> dict:
    out = {}
    for name in names:
        value = getattr(args, name, None)
        if value is not None:
            out[name] = value
    return out


def cmd_gen(args):
    params = _params(args, ["kind", "lengths", "domain", "alpha", "seed", "band", "k_max", "amplitude", "A", "B", "C"])
    if args.n is not None:
        params["n"] = _resolution(args.n)
    return run_stage("gen", params, [], Path(args.out), seed=args.seed or 0)


def cmd_evolve(args):
    return run_stage("evolve", _params(args, ["T", "dt", "stride"]), [args.input], Path(args.out))


def cmd_mollify(args):
    return run_stage("mollify", _params(args, ["eps", "eps_cells"]), [args.input], Path(args.out))


def cmd_extend(args):
    return run_stage("extend", {}, [args.input], Path(args.out))


def cmd_restrict(args):
    return run_stage("restrict", _params(args, ["side"]), [args.input], Path(args.out))


def cmd_flux(args):
    params = _params(args, ["eps_list", "eps_cells", "majorant"])
    params["direct"] = not args.no_direct
    return run_stage("flux", params, args.input, Path(args.report))


def cmd_structfn(args):
    return run_stage("structfn", _params(args, ["shifts", "directions"]), [args.input], Path(args.report))


def cmd_criterion(args):
    params = _params(args, ["mode", "shifts", "alpha", "delta", "r_max", "n_theta", "directions"])
    return run_stage("criterion", params, args.input, Path(args.report))


def cmd_modulus(args):
    return run_stage("modulus", _params(args, ["radii", "n_directions"]), [args.input], Path(args.report))


def cmd_run(args):
    config = ExperimentConfig.load(args.config)
    manifest = run(config)
    print(f"run complete: {len(manifest.stages)} stage(s), manifest in {config.output_dir}")
    for rec in manifest.stages:
        if rec.status != "ok":
            print(f"stage {rec.id}: {rec.status}: {rec.message}", file=sys.stderr)
    return manifest.exit_code


def cmd_render(args):
    summary, csv = render(args.reports)
    if args.summary:
        Path(args.summary).write_text(summary + "\n", encoding="utf-8")
    else:
        print(summary)
    if args.csv:
        Path(args.csv).write_text(csv, encoding="utf-8")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="enflux",
        description="Energy-flux and regularity-criterion diagnostics for incompressible Euler fields.",
        epilog=f"Set {FFT_WORKERS_ENV} to choose the number of FFT threads.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a velocity field")
    p.add_argument("--kind", required=True, choices=["taylor-green", "abc", "rough", "smooth", "half"])
    p.add_argument("--n", type=int, nargs="+", help="resolution: one value or three")
    p.add_argument("--lengths", type=float, nargs=3)
    p.add_argument("--domain", choices=["periodic3", "hybrid_slab"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--band", type=int, nargs=2)
    p.add_argument("--k-max", dest="k_max", type=int)
    p.add_argument("--amplitude", type=float)
    p.add_argument("--A", type=float)
    p.add_argument("--B", type=float)
    p.add_argument("--C", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("evolve", help="integrate the Euler equations on the periodic box")
    p.add_argument("--in", "--init", dest="input", required=True)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--dt", type=float, required=True)
    p.add_argument("--stride", type=int)
    p.add_argument("--out", "--out-dir", dest="out", required=True, help="snapshot directory")
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("mollify", help="convolve with the even bump mollifier")
    p.add_argument("--in", dest="input", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--eps", type=float)
    g.add_argument("--eps-cells", dest="eps_cells", type=float, help="eps in units of the largest spacing")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mollify)

    p = sub.add_parser("extend", help="extend a half-slab field to the doubled slab")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extend)

    p = sub.add_parser("restrict", help="restrict a doubled-slab field to one half")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--side", type=int, choices=[1, -1])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_restrict)

    p = sub.add_parser("flux", help="J_eps by both routes and the dissipation estimate")
    p.add_argument("--in", dest="input", required=True, nargs="+", help="field files or one snapshot directory")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--eps-list", dest="eps_list", type=float, nargs="+")
    g.add_argument("--eps-cells", dest="eps_cells", type=float, nargs="+")
    p.add_argument("--no-direct", dest="no_direct", action="store_true", help="skip the quadrature route")
    p.add_argument("--majorant", action="store_true", default=None)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_flux)

    p = sub.add_parser("structfn", help="third-order structure function table")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--shifts", type=float, nargs="+", required=True)
    p.add_argument("--directions", type=int, choices=[3, 9, 13])
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_structfn)

    p = sub.add_parser("criterion", help="regularity criterion report")
    p.add_argument("--mode", required=True, choices=["s", "besov", "half"])
    p.add_argument("--in", dest="input", required=True, nargs="+", help="field files or one snapshot directory")
    p.add_argument("--shifts", type=float, nargs="+", required=True, help="shift magnitudes (core cutoffs for besov)")
    p.add_argument("--alpha", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--r-max", dest="r_max", type=float)
    p.add_argument("--n-theta", dest="n_theta", type=int)
    p.add_argument("--directions", type=int, choices=[9, 13])
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_criterion)

    p = sub.add_parser("modulus", help="boundary continuity modulus")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--radii", type=float, nargs="+", required=True)
    p.add_argument("--n-directions", dest="n_directions", type=int)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_modulus)

    p = sub.add_parser("run", help="execute an experiment config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("render", help="summarize reports and write a plot CSV")
    p.add_argument("--reports", required=True, nargs="+")
    p.add_argument("--summary")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except EnfluxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    if isinstance(result, int):
        return result
    if result.status != "ok":
        print(f"{result.status}: {result.message}", file=sys.stderr)
        return 3
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
