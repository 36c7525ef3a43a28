"""Command-line entry point.

One binary, seven subcommands, one configuration story: every flag edits a
scenario document, the effective document is written next to the results
(scenario.json), and feeding that file back through --scenario reproduces
the run byte for byte. Exit codes: 0 success, 1 numerical failure, 2
configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .errors import ConfigError, NumericalError
from .scenarios import load_scenario, run_scenario


def _base_document(args, kind: str) -> dict:
    if getattr(args, "scenario", None):
        sc = load_scenario(args.scenario)
        if sc.kind != kind:
            raise ConfigError(f"scenario kind {sc.kind!r} does not match subcommand ({kind})")
        doc = sc.document()
    else:
        doc = {"kind": kind, "name": kind, "seed": 0, "params": {}}
    if getattr(args, "seed", None) is not None:
        doc["seed"] = args.seed
    if getattr(args, "name", None):
        doc["name"] = args.name
    return doc


def _set_params(doc: dict, args, names: dict) -> None:
    """Copy set flags into the params block (flag dest -> param key)."""
    params = doc.setdefault("params", {})
    for dest, key in names.items():
        value = getattr(args, dest, None)
        if value is not None:
            params[key] = value


def _set_grid(doc: dict, args) -> None:
    grid = dict(doc.get("grid") or {})
    if getattr(args, "cells", None) is not None:
        grid = {"n": args.cells, "lo": grid.get("lo", 0.0), "hi": grid.get("hi", 1.0)}
    if getattr(args, "nx", None) is not None or getattr(args, "ny", None) is not None:
        nx = args.nx if args.nx is not None else grid.get("nx")
        ny = args.ny if args.ny is not None else grid.get("ny", nx)
        grid.update({"nx": nx, "ny": ny})
        grid.pop("n", None)
    if getattr(args, "n_dirs", None) is not None:
        grid["n_dirs"] = args.n_dirs
    if grid:
        doc["grid"] = grid


def _set_json_block(doc: dict, args, attr: str, key: str) -> None:
    text = getattr(args, attr, None)
    if text is None:
        return
    try:
        doc[key] = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"--{attr.replace('_', '-')} is not valid JSON: {exc}") from exc


def _load_net_flag(doc: dict, args) -> None:
    path = getattr(args, "net", None)
    if path is None:
        return
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"network file {path!r} does not exist")
    doc["net"] = json.loads(p.read_text())


def _finish(doc: dict, args):
    sc = load_scenario(doc)
    out = Path(args.out) if args.out else Path("runs") / sc.name
    report = run_scenario(sc, out, render_figures=not args.no_figures)
    print(f"wrote {len(report.outputs)} artifacts to {report.outdir}")
    for key, val in report.summary.items():
        print(f"  {key}: {val}")
    return report


def _add_common(sp, with_scenario: bool = True) -> None:
    if with_scenario:
        sp.add_argument("--scenario", help="scenario file or bundled scenario name")
    sp.add_argument("--out", help="output directory (default runs/<name>)")
    sp.add_argument("--seed", type=int, help="override the scenario seed")
    sp.add_argument("--name", help="override the scenario name")
    sp.add_argument("--no-figures", action="store_true", help="skip figure rendering")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="netmorph",
        description="transport network formation: simulation, optimization, minimizing movements",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate-discrete", help="run the edge-conductivity adaptation flow")
    _add_common(sp)
    sp.add_argument("--net", help="network JSON file")
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--nu", type=float)
    sp.add_argument("--dt", type=float)
    sp.add_argument("--t-end", type=float, dest="t_end")
    sp.add_argument("--steady-tol", type=float, dest="steady_tol")
    sp.add_argument("--method", choices=["euler", "rk4"])
    sp.add_argument("--init-c", type=float, dest="init_c", help="uniform initial conductivity")

    sp = sub.add_parser("minimize-flux", help="minimize the relaxed flux energy")
    _add_common(sp)
    sp.add_argument("--net", help="network JSON file")
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--nu", type=float)
    sp.add_argument("--mode", choices=["gilbert", "quadratic"], help="edge cost model")
    sp.add_argument(
        "--opt-method",
        dest="opt_method",
        choices=["auto", "tree_enum", "cycle_descent", "multistart"],
    )

    sp = sub.add_parser("simulate-meso", help="mesoscopic field model (transient or stationary)")
    _add_common(sp)
    sp.add_argument("--stationary", action="store_true", help="solve the gamma>1 stationary problem")
    sp.add_argument("--cells", type=int, help="1D cell count")
    sp.add_argument("--nx", type=int)
    sp.add_argument("--ny", type=int)
    sp.add_argument("--n-dirs", type=int, dest="n_dirs")
    sp.add_argument("--source", help="source block as inline JSON")
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--c0", type=float)
    sp.add_argument("--r", type=float)
    sp.add_argument("--dt", type=float)
    sp.add_argument("--t-end", type=float, dest="t_end")
    sp.add_argument("--tol", type=float)

    sp = sub.add_parser("simulate-particles", help="particle ensemble on a background grid")
    _add_common(sp)
    sp.add_argument("--nx", type=int)
    sp.add_argument("--ny", type=int)
    sp.add_argument("--source", help="source block as inline JSON")
    sp.add_argument("--segment", help='particle segment as inline JSON {"a","b","n"}')
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--c0", type=float)
    sp.add_argument("--r", type=float)
    sp.add_argument("--dt", type=float)
    sp.add_argument("--t-end", type=float, dest="t_end")

    sp = sub.add_parser("mms", help="Fisher-Rao minimizing movements")
    _add_common(sp)
    sp.add_argument("--cells", type=int, help="1D cell count")
    sp.add_argument("--nx", type=int)
    sp.add_argument("--ny", type=int)
    sp.add_argument("--n-dirs", type=int, dest="n_dirs")
    sp.add_argument("--source", help="source block as inline JSON")
    sp.add_argument("--tau", type=float)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--c0", type=float)

    sp = sub.add_parser("beckmann-check", help="directional vs Beckmann cross-validation")
    _add_common(sp)
    sp.add_argument("--nx", type=int)
    sp.add_argument("--ny", type=int)
    sp.add_argument("--n-dirs", type=int, dest="n_dirs")
    sp.add_argument("--source", help="source block as inline JSON")
    sp.add_argument("--tau", type=float)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--c0", type=float)

    sp = sub.add_parser("reproduce-all", help="run the full acceptance suite")
    sp.add_argument("--out", help="directory for the summary table")
    sp.add_argument(
        "--workers",
        type=int,
        help="max concurrent criteria (default NETMORPH_THREADS or 1)",
    )
    return parser


def _cmd_simple(args, kind: str, param_map: dict) -> int:
    doc = _base_document(args, kind)
    _load_net_flag(doc, args)
    _set_grid(doc, args)
    _set_json_block(doc, args, "source", "source")
    _set_params(doc, args, param_map)
    _finish(doc, args)
    return 0


def _cmd_reproduce_all(args) -> int:
    from . import acceptance

    workers = args.workers
    if workers is None:
        workers = int(os.environ.get("NETMORPH_THREADS", "1"))
    results = acceptance.run_all(max_workers=workers)
    table = acceptance.format_table(results)
    print(table)
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        acceptance.write_results(results, outdir / "criteria.csv")
        (outdir / "criteria.txt").write_text(table + "\n")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "simulate-discrete":
            doc = _base_document(args, "discrete")
            _load_net_flag(doc, args)
            _set_params(
                doc,
                args,
                {
                    "gamma": "gamma",
                    "nu": "nu",
                    "dt": "dt",
                    "t_end": "t_end",
                    "steady_tol": "steady_tol",
                    "method": "method",
                    "init_c": "C0",
                },
            )
            _finish(doc, args)
            return 0
        if args.command == "minimize-flux":
            doc = _base_document(args, "flux_min")
            _load_net_flag(doc, args)
            _set_params(
                doc,
                args,
                {"gamma": "gamma", "nu": "nu", "mode": "flux_energy_mode", "opt_method": "method"},
            )
            report = _finish(doc, args)
            print((report.outdir / "result.json").read_text(), end="")
            return 0
        if args.command == "simulate-meso":
            kind = "meso2d" if args.stationary else "meso1d"
            return _cmd_simple(
                args,
                kind,
                {
                    "gamma": "gamma",
                    "c0": "c0",
                    "r": "r",
                    "dt": "dt",
                    "t_end": "t_end",
                    "tol": "tol",
                },
            )
        if args.command == "simulate-particles":
            doc = _base_document(args, "particles")
            _set_grid(doc, args)
            _set_json_block(doc, args, "source", "source")
            if args.segment is not None:
                try:
                    doc.setdefault("params", {})["segment"] = json.loads(args.segment)
                except json.JSONDecodeError as exc:
                    raise ConfigError(f"--segment is not valid JSON: {exc}") from exc
            _set_params(
                doc,
                args,
                {"gamma": "gamma", "c0": "c0", "r": "r", "dt": "dt", "t_end": "t_end"},
            )
            _finish(doc, args)
            return 0
        if args.command == "mms":
            return _cmd_simple(
                args,
                "mms",
                {"tau": "tau", "steps": "n_steps", "gamma": "gamma", "c0": "c0"},
            )
        if args.command == "beckmann-check":
            return _cmd_simple(
                args,
                "beckmann",
                {"tau": "tau", "steps": "n_steps", "c0": "c0"},
            )
        if args.command == "reproduce-all":
            return _cmd_reproduce_all(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc.__class__.__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
