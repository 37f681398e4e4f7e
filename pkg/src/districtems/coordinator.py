"""District coordination: sum subsystem resource use and cap subsystems in priority order.

The first subsystem in the district list is the most open to restriction.
Each round tightens one subsystem's resource caps at the steps where the
district total exceeds its limit, re-solves it, and recomputes the totals.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .core import INF, DistrictSpec, SubsystemSpec, series_array
from .mpc import Forecasts, InfeasibleSubproblem, OptimalPlan, solve_subproblem

TOL_COORD = 1e-6


@dataclass
class RoundRecord:
    round: int
    subsystem: str
    resource: str
    steps: list[int]
    pex_before: float
    pex_after: float
    outcome: str  # "resolved", "infeasible" or "unaffected"


@dataclass
class CoordinationResult:
    plans: list[OptimalPlan]
    ptot: dict[str, np.ndarray]
    pex: dict[str, np.ndarray]
    rounds: int
    residual_violation: dict[str, np.ndarray]
    status: str  # "Clean", "Resolved" or "BestEffort"
    trace: list[RoundRecord] = field(default_factory=list)
    infeasible: list[str] = field(default_factory=list)
    initial_pex: dict[str, np.ndarray] = field(default_factory=dict)

    def plan(self, sid: str) -> OptimalPlan:
        for p in self.plans:
            if p.subsystem == sid:
                return p
        raise KeyError(sid)


def compute_totals(plans: list[OptimalPlan], p_lim: dict) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """District totals per resource and the excess above each limit (zero where within)."""
    if not plans:
        return {}, {}
    g0 = plans[0].grid
    for pl in plans[1:]:
        if (pl.grid.start, pl.grid.dt, pl.grid.N) != (g0.start, g0.dt, g0.N):
            raise ValueError(f"grid mismatch between {plans[0].subsystem!r} and {pl.subsystem!r}")
    N = g0.N
    ptot: dict[str, np.ndarray] = {}
    for pl in plans:
        for p, v in pl.psub.items():
            ptot[p] = ptot.get(p, np.zeros(N)) + v
    pex = {}
    for p, tot in ptot.items():
        lim = series_array(p_lim[p], N, f"p_lim[{p}]") if p in p_lim else np.full(N, INF)
        pex[p] = np.maximum(0.0, tot - lim)
    return ptot, pex


def _any_excess(pex, tol) -> bool:
    return any(np.any(v > tol) for v in pex.values())


def coordinate(district: DistrictSpec, forecasts: dict[str, Forecasts] | None = None,
               init_states: dict[str, tuple[dict, dict]] | None = None, *, specs: list[SubsystemSpec] | None = None,
               p_lim: dict | None = None, method: str = "auto", tol: float = TOL_COORD) -> CoordinationResult:
    """Solve every subsystem, then tighten caps in priority order until totals fit.

    ``specs`` may replace the district's subsystems (e.g. with a rolled grid);
    ``p_lim`` likewise replaces the district limit for this horizon.
    """
    specs = list(specs if specs is not None else district.subsystems)
    forecasts = forecasts or {}
    init_states = init_states or {}
    p_lim = district.p_lim if p_lim is None else p_lim
    fcs = {s.id: forecasts.get(s.id) or Forecasts() for s in specs}
    inits = {s.id: init_states.get(s.id, ({}, {})) for s in specs}

    plans = [solve_subproblem(s, fcs[s.id], *inits[s.id], method=method) for s in specs]
    ptot, pex = compute_totals(plans, p_lim)
    initial = {p: v.copy() for p, v in pex.items()}
    trace: list[RoundRecord] = []
    infeasible: list[str] = []
    rounds = 0
    violated = _any_excess(pex, tol)

    ell = 0
    while _any_excess(pex, tol) and ell < len(specs):
        spec, plan = specs[ell], plans[ell]
        caps, touched = {}, {}
        for p, ex in pex.items():
            mask = ex > tol
            if p not in plan.psub or not mask.any():
                continue
            cap = plan.p_max[p].copy()
            cap[mask] = np.maximum(plan.p_min[p][mask], plan.psub[p][mask] - ex[mask])
            caps[p] = cap
            touched[p] = [int(i) for i in np.flatnonzero(mask)]
        before = {p: float(v.sum()) for p, v in pex.items()}
        if not caps:
            for p in pex:
                trace.append(RoundRecord(ell + 1, spec.id, p, [], before[p], before[p], "unaffected"))
            ell += 1
            continue
        fc = fcs[spec.id].with_p_max(caps)
        try:
            plans[ell] = solve_subproblem(spec, fc, *inits[spec.id], method=method)
            fcs[spec.id] = fc
            outcome = "resolved"
        except InfeasibleSubproblem:
            infeasible.append(spec.id)
            outcome = "infeasible"
        rounds += 1
        ptot, pex = compute_totals(plans, p_lim)
        for p in touched:
            trace.append(RoundRecord(ell + 1, spec.id, p, touched[p], before[p], float(pex[p].sum()), outcome))
        ell += 1

    if not violated:
        status = "Clean"
    elif _any_excess(pex, tol):
        status = "BestEffort"
    else:
        status = "Resolved"
    return CoordinationResult(plans, ptot, pex, rounds, {p: v.copy() for p, v in pex.items()}, status, trace,
                              infeasible, initial)


def trace_to_csv(records: list[RoundRecord], path=None, t: str | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = (["t"] if t is not None else []) + ["round", "subsystem", "resource", "steps", "pex_before",
                                               "pex_after", "outcome"]
    w.writerow(head)
    for r in records:
        row = [r.round, r.subsystem, r.resource, ";".join(map(str, r.steps)), f"{r.pex_before:.10g}",
               f"{r.pex_after:.10g}", r.outcome]
        w.writerow(([t] if t is not None else []) + row)
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
