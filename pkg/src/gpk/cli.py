"""Command line interface.

Subcommands: run (full pipeline), scattering, evolve, kernels, fock, report.
Exit codes: 0 success, 2 configuration/domain error, 3 numerical-budget
error, 4 invariant violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bench import (
    dump_solution_json,
    load_config,
    load_solution_json,
    potential_from_spec,
    run_pipeline,
    write_kernel_bounds_csv,
    write_scattering_csv,
)
from .errors import GpkError
from .fieldio import read_field
from .scattering import RadialPotential, solve_zero_energy


def _parse_potential_arg(spec: str) -> RadialPotential:
    """`square-well:height=8,radius=1`, `gaussian:amplitude=1e-3`, or a path."""
    if ":" in spec or spec in ("square-well", "gaussian", "zero"):
        name, _, params = spec.partition(":")
        kwargs = {}
        if params:
            for item in params.split(","):
                key, _, val = item.partition("=")
                kwargs[key.strip()] = float(val)
        return potential_from_spec(name, **kwargs)
    path = Path(spec)
    table = np.loadtxt(path)
    return RadialPotential.from_table(table[:, 0], table[:, 1])


def _cmd_scattering(args) -> int:
    V = _parse_potential_arg(args.potential)
    r_max = args.rmax if args.rmax is not None else max(5.0, 5 * V.r_support)
    sol = solve_zero_energy(V, r_max, args.points)
    out = Path(args.out)
    write_scattering_csv(sol, out)
    summary_path = out.with_suffix(".json")
    payload = dump_solution_json(sol, V, summary_path)
    print(json.dumps(
        {k: payload[k] for k in
         ("a0_tail", "a0_integral", "ode_residual", "tail_fit_error")},
        sort_keys=True,
    ))
    return 0


def _cmd_evolve(args) -> int:
    cfg = load_config(args.config)
    bundle = run_pipeline(cfg, outdir=args.out)
    print(json.dumps(bundle.summary.get("evolve", {}), sort_keys=True))
    return 0


def _cmd_kernels(args) -> int:
    sol, V = load_solution_json(args.scattering)
    phi, _ = read_field(args.phi)
    n_list = [int(tok) for tok in args.N.replace(",", " ").split()]
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / "kernel_bounds.csv"
    write_kernel_bounds_csv(path, phi, sol, V, n_list)
    if args.dump_kernels:
        from .fieldio import write_kernel
        from .kernels import build_kt

        for N in n_list:
            write_kernel(outdir / f"kernel_N{N}.bin", build_kt(phi, sol, N), N)
    print(str(path))
    return 0


def _cmd_fock(args) -> int:
    cfg = load_config(args.scenario)
    bundle = run_pipeline(cfg, outdir=args.out)
    print(json.dumps(bundle.summary.get("fock", {}), sort_keys=True))
    return 0


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    bundle = run_pipeline(cfg)
    print(json.dumps({"outdir": str(bundle.outdir), "flags": bundle.flags},
                     sort_keys=True))
    return 0


def _cmd_report(args) -> int:
    report = Path(args.dir) / "report.json"
    if not report.exists():
        print(f"no report.json under {args.dir}", file=sys.stderr)
        return 2
    with open(report) as fh:
        payload = json.load(fh)
    print(json.dumps(payload, indent=1, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gpk")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scattering", help="solve the zero-energy radial problem")
    p.add_argument("--potential", required=True,
                   help="family spec like square-well:height=8,radius=1 or a "
                        "two-column table file")
    p.add_argument("--rmax", type=float, default=None)
    p.add_argument("--points", type=int, default=4000)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=_cmd_scattering)

    p = sub.add_parser("evolve", help="run the configured field evolution")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_evolve)

    p = sub.add_parser("kernels", help="kernel norm scaling report")
    p.add_argument("--phi", required=True, help="binary field dump")
    p.add_argument("--scattering", required=True, help="scattering JSON artifact")
    p.add_argument("--N", required=True, help="comma separated N values")
    p.add_argument("--out", required=True)
    p.add_argument("--dump-kernels", action="store_true",
                   help="also write dense kernel dumps (desk-sized grids only)")
    p.set_defaults(func=_cmd_kernels)

    p = sub.add_parser("fock", help="toy Fock-space scenario")
    p.add_argument("--scenario", required=True, help="config with a [fock] section")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_fock)

    p = sub.add_parser("run", help="full pipeline from a config file")
    p.add_argument("config")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("report", help="print the report bundle of a run")
    p.add_argument("dir")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except GpkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
