"""Command-line front end: ``pricedyn run|analyze|sweep``.

Exit codes: 0 success, 2 unreadable or malformed scenario, 3 invalid
scenario or unsupported request, 4 numeric blow-up (partial outputs are
written and flagged). Errors are reported as one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Optional

import numpy as np

from pricedyn import __version__
from pricedyn.analytic import conservative_modes, rotational_modes
from pricedyn.demand import LinearTwoPriceSpec
from pricedyn.errors import NumericError, UsageError
from pricedyn.output import summary_json, trajectory_csv, write_text
from pricedyn.scenario import (
    ScenarioError,
    ScenarioParseError,
    build_model,
    build_params,
    execute,
    load_scenario,
    scenario_from_dict,
    set_path,
)

log = logging.getLogger("pricedyn")

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_INVALID = 3
EXIT_NUMERIC = 4

SWEEP_COLUMNS = (
    "index",
    "value",
    "status",
    "energy_initial",
    "energy_final",
    "energy_max_residual",
    "terminal_ratio",
    "angular_momentum_max_residual",
    "loops",
    "error",
)


def _fail(code: int, kind: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": {"code": code, "kind": kind, "message": message}}, sort_keys=True) + "\n")
    return code


def cmd_run(args) -> int:
    sc = load_scenario(args.scenario)
    log.info("running %s (%s)", sc.name, sc.mode)
    csv_path = sc.output_path("trajectory_csv")
    json_path = sc.output_path("summary_json")
    # a blown-up run is flagged below; overflow in its diagnostics is expected
    with np.errstate(over="ignore", invalid="ignore"):
        result = execute(sc)
        if csv_path is not None:
            write_text(csv_path, trajectory_csv(result.trajectory, result.model))
    summary = summary_json(result.summary)
    if json_path is not None:
        write_text(json_path, summary)
    else:
        sys.stdout.write(summary)
    if result.failed:
        return _fail(EXIT_NUMERIC, "numeric_error", result.trajectory.error)
    log.info("done: %d samples", len(result.trajectory))
    return EXIT_OK


def cmd_analyze(args) -> int:
    sc = load_scenario(args.scenario)
    model = build_model(sc)
    if not isinstance(model, LinearTwoPriceSpec):
        raise ScenarioError("analyze needs a two-price model (alpha, beta, delta)")
    params = build_params(sc) if not sc.is_discrete else None
    if params is None:
        raise ScenarioError("analyze needs continuous dynamics (kappa, gamma)")
    if model.delta == 0:
        modes = conservative_modes(model, params)
    elif model.beta == 0:
        modes = rotational_modes(model, params)
    else:
        raise ScenarioError("closed-form modes need delta = 0 or beta = 0")
    report = modes.as_dict()
    report["name"] = sc.name
    report["params"] = {"alpha": model.alpha, "beta": model.beta, "delta": model.delta, **params.as_dict()}
    sys.stdout.write(json.dumps(report, sort_keys=True, indent=2) + "\n")
    return EXIT_OK


def _sweep_point(raw: dict, base_dir, param: str, index: int, value: float) -> dict:
    row = {c: "" for c in SWEEP_COLUMNS}
    row.update(index=index, value=value)
    try:
        sc = scenario_from_dict(set_path(raw, param, value), base_dir)
        with np.errstate(over="ignore", invalid="ignore"):
            result = execute(sc)
    except (UsageError, NumericError) as exc:
        row.update(status="error", error=str(exc))
        return row
    s = result.summary
    row["status"] = s["status"]
    row["error"] = s["error"] or ""
    if s["energy"] is not None:
        row.update(
            energy_initial=s["energy"]["initial"],
            energy_final=s["energy"]["final"],
            energy_max_residual=s["energy"]["max_residual"],
        )
    if s["angular_momentum"] is not None:
        row.update(
            terminal_ratio=s["angular_momentum"]["terminal_ratio"],
            angular_momentum_max_residual=s["angular_momentum"]["max_residual"],
        )
    row["loops"] = len(s["loops"])
    return row


def _cell(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def cmd_sweep(args) -> int:
    sc = load_scenario(args.scenario)
    try:
        grid = [float(v) for v in args.grid.split(",") if v.strip()]
    except ValueError as exc:
        raise ScenarioError(f"bad grid: {exc}") from exc
    if not grid:
        raise ScenarioError("grid is empty")
    set_path(sc.raw, args.param, grid[0])  # rejects unknown paths up front
    jobs = [(sc.raw, sc.base_dir, args.param, i, v) for i, v in enumerate(grid)]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_point, *zip(*jobs)))
    else:
        rows = []
        for job in jobs:
            log.info("sweep point %d/%d: %s = %r", job[3] + 1, len(jobs), args.param, job[4])
            rows.append(_sweep_point(*job))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["param", *SWEEP_COLUMNS])
    for row in sorted(rows, key=lambda r: r["index"]):
        writer.writerow([args.param, *(_cell(row[c]) for c in SWEEP_COLUMNS)])
    if args.out:
        write_text(args.out, buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pricedyn", description="Second-order price dynamics simulator.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--quiet", action="store_true", help="suppress progress messages on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate a scenario and write its artifacts")
    p_run.add_argument("scenario")
    p_run.set_defaults(func=cmd_run)

    p_an = sub.add_parser("analyze", help="print closed-form modes of a two-price scenario")
    p_an.add_argument("scenario")
    p_an.set_defaults(func=cmd_analyze)

    p_sw = sub.add_parser("sweep", help="rerun a scenario over a grid of one parameter")
    p_sw.add_argument("scenario")
    p_sw.add_argument("--param", required=True, help="dotted path, e.g. dynamics.gamma")
    p_sw.add_argument("--grid", required=True, help="comma-separated values; use --grid=-1,0,1 when the first value is negative")
    p_sw.add_argument("--out", help="write the table here instead of stdout")
    p_sw.add_argument("--jobs", type=int, default=1, help="worker processes")
    p_sw.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    quiet = args.quiet
    logging.basicConfig(
        level=logging.WARNING if quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    try:
        return args.func(args)
    except ScenarioParseError as exc:
        return _fail(EXIT_PARSE, "parse_error", str(exc))
    except UsageError as exc:
        return _fail(EXIT_INVALID, "validation_error", str(exc))
    except NumericError as exc:
        return _fail(EXIT_NUMERIC, "numeric_error", str(exc))


if __name__ == "__main__":
    sys.exit(main())
