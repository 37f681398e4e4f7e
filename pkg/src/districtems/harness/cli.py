"""Command line: ``districtems run|sweep|serve|report``.

Exit codes: 0 success, 2 usage, 3 scenario or signal error, 4 solver or
model failure, 5 link timeout or link failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..core import ScenarioError
from ..lpsolve import LpError
from ..mpc import MpcError
from ..twin import SignalError, energy_balance_check
from .link import LinkError, LinkTimeout, serve_link
from .runner import RunConfig, RunError, controller_engine, prepare, read_trace, report_for, run_scenario
from .sweep import frontier_csv, parse_weights, pareto_sweep

EXIT_OK, EXIT_OTHER, EXIT_SCENARIO, EXIT_SOLVER, EXIT_LINK = 0, 1, 3, 4, 5


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, RunError):
        exc = exc.cause
    if isinstance(exc, (LinkTimeout, LinkError)):
        return EXIT_LINK
    if isinstance(exc, (ScenarioError, SignalError)):
        return EXIT_SCENARIO
    if isinstance(exc, (MpcError, LpError)):
        return EXIT_SOLVER
    return EXIT_OTHER


def _run_config(a: argparse.Namespace) -> RunConfig:
    return RunConfig(scenario=a.scenario, days=a.days, coordinate=a.coordinate, p_lim=a.p_lim, seed=a.seed,
                     out=a.out, forecast_mode=a.forecasts, delay_enabled=a.delay, method=a.solver,
                     link=getattr(a, "link", None), link_timeout=getattr(a, "timeout", 10.0))


def _add_run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", required=True, help="scenario JSON file")
    p.add_argument("--days", type=float, default=14.0, help="simulated span in days (default 14)")
    p.add_argument("--coordinate", action=argparse.BooleanOptionalAction, default=True,
                   help="enable the coordination layer")
    p.add_argument("--p-lim", type=float, default=None, help="override the shared resource limit, kW")
    p.add_argument("--seed", type=int, default=None, help="override twin, fleet and forecast seeds")
    p.add_argument("--forecasts", choices=("ml", "perfect"), default=None, help="forecast mode override")
    p.add_argument("--delay", action=argparse.BooleanOptionalAction, default=None,
                   help="enable or disable EV delay (default: scenario setting)")
    p.add_argument("--solver", choices=("auto", "simplex", "highs"), default="auto")
    p.add_argument("--out", default=None, help="output directory for traces and the summary")


def cmd_run(a) -> int:
    def progress(k, n):
        if a.verbose and (k % 96 == 0 or k == n):
            print(f"  {k}/{n} steps", file=sys.stderr)

    res = run_scenario(_run_config(a), progress)
    sys.stdout.write(res.report.summary())
    print(f"runtime             {res.runtime_s:.1f} s")
    for name, path in sorted(res.paths.items()):
        print(f"wrote {name:<13} {path}")
    return EXIT_OK


def cmd_sweep(a) -> int:
    weights = parse_weights(a.weights)
    points = pareto_sweep(_run_config(a), weights)
    text = frontier_csv(points, Path(a.out) / "frontier.csv" if a.out else None)
    sys.stdout.write(text)
    return EXIT_OK if all(not p.error for p in points) else EXIT_OTHER


def cmd_serve(a) -> int:
    ses = prepare(_run_config(a))
    srv = serve_link(controller_engine(ses.controller), a.port, a.host, background=True)
    print(f"serving {ses.district.name or a.scenario} on {a.host}:{srv.port}", flush=True)
    try:
        srv._thread.join()
    except KeyboardInterrupt:
        srv.stop()
    return EXIT_OK


def cmd_report(a) -> int:
    trace_dir = Path(a.trace)
    path = trace_dir / "trace.csv" if trace_dir.is_dir() else trace_dir
    rows = read_trace(path)
    if a.scenario:
        ses = prepare(RunConfig(scenario=a.scenario, days=1.0 / 96), controller=False)
        sys.stdout.write(report_for(ses.district, ses.plant, rows).summary())
    else:
        print(f"steps {len(rows)}")
        print(json.dumps(energy_balance_check(rows), indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="districtems", description="District multi-vector MPC co-simulation")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one closed-loop scenario")
    _add_run_args(p)
    p.add_argument("--link", default=None, help="host:port of a served engine (default: in-process)")
    p.add_argument("--timeout", type=float, default=10.0, help="link timeout in seconds")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="weight sweep producing a cost/CO2 frontier")
    _add_run_args(p)
    p.add_argument("--weights", required=True, help='pairs "w_cost,w_co2;..." e.g. "1,0;0.5,0.5;0,1"')
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("serve", help="serve the engine over the set-point link")
    _add_run_args(p)
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("report", help="summarise a written trace")
    p.add_argument("--trace", required=True, help="run output directory or trace.csv")
    p.add_argument("--scenario", default=None, help="scenario used for the run (enables cost/CO2 metrics)")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    a = ap.parse_args(argv)
    try:
        return a.func(a)
    except Exception as exc:  # noqa: BLE001 - mapped to a diagnostic category
        code = exit_code(exc)
        kind = {EXIT_SCENARIO: "scenario", EXIT_SOLVER: "solver", EXIT_LINK: "link"}.get(code, "error")
        print(f"districtems: {kind} error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
