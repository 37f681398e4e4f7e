"""Subsystem MPC: assemble the horizon LP, solve it, and read back an OptimalPlan.

Column families (all indexed by step ``i`` in ``0..N-1`` unless noted):

* ``v_sup[s,p,q]`` resource drawn by a supply, ``u_sup[s,q]`` energy it delivers
* ``v_sto[st]`` charge, ``u_sto[st]`` discharge, ``soc[st]`` level (``0..N``)
* ``x[m]`` model states (``0..N``), ``y[m]`` outputs, ``eps[m]`` band slack
* ``pwl[m]`` segment columns of the piecewise-linear slack penalty

Powers are kW; the SoC recursion turns them into kWh through ``dt``.  The
objective sums kW-weighted terms per step, so ``J`` is independent of ``dt``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Any

import numpy as np

from .core import (
    INF,
    StateSpaceDemand,
    SubsystemSpec,
    TimeGrid,
    TimeSeriesDemand,
    series_array,
)
from .lpsolve import (
    EQ,
    GE,
    LE,
    LinearProgram,
    LpBuilder,
    PwlQuadratic,
    Status,
    expand_quadratic_slack,
    solve_lp,
)

DEFAULT_EPS_MAX = 5.0
AUTO_SIMPLEX_LIMIT = 600  # n + m below which "auto" uses the built-in simplex


class MpcError(ValueError):
    pass


class MissingForecastError(MpcError):
    pass


@dataclass
class InfeasibilityReport:
    subsystem: str
    kind: str  # "balance", "resource" or "bounds"
    step: int | None = None
    channel: str | None = None
    detail: str = ""

    def __str__(self) -> str:
        where = f" at step {self.step}" if self.step is not None else ""
        chan = f" [{self.channel}]" if self.channel else ""
        return f"{self.subsystem}: infeasible {self.kind}{chan}{where}: {self.detail}"


class InfeasibleSubproblem(MpcError):
    def __init__(self, report: InfeasibilityReport):
        super().__init__(str(report))
        self.report = report


@dataclass
class Forecasts:
    """Horizon data that overrides or supplements the static spec.

    All series have length ``N``.  Store ``soc_min``/``soc_max`` overrides
    bound the level at the end of each step (``soc[1..N]``).
    """

    demand: dict[str, dict[str, Any]] = field(default_factory=dict)
    disturbance: dict[str, dict[str, Any]] = field(default_factory=dict)
    alpha: dict[str, dict[str, Any]] = field(default_factory=dict)
    p_max: dict[str, Any] = field(default_factory=dict)
    p_min: dict[str, Any] = field(default_factory=dict)
    eta: dict[str, dict[str, dict[str, Any]]] = field(default_factory=dict)
    tech_min: dict[str, dict[str, dict[str, Any]]] = field(default_factory=dict)
    tech_max: dict[str, dict[str, dict[str, Any]]] = field(default_factory=dict)
    store: dict[str, dict[str, Any]] = field(default_factory=dict)
    setpoints: dict[str, dict[str, Any]] = field(default_factory=dict)

    def with_p_max(self, p_max: dict[str, np.ndarray]) -> "Forecasts":
        out = Forecasts(**{k: getattr(self, k) for k in self.__dataclass_fields__})
        out.p_max = {**self.p_max, **p_max}
        return out


# ---------------------------------------------------------------------------
# Parameter resolution
# ---------------------------------------------------------------------------


@dataclass
class _StoreData:
    u_min: np.ndarray
    u_max: np.ndarray
    v_min: np.ndarray
    v_max: np.ndarray
    soc_lo: np.ndarray  # N+1
    soc_hi: np.ndarray
    beta: np.ndarray
    sign: float


@dataclass
class _ModelData:
    x0: np.ndarray
    dist: np.ndarray  # (N, nx) summed disturbance term E d
    sp_lo: np.ndarray  # (N, ny)
    sp_up: np.ndarray
    eps_max: float


@dataclass
class Resolved:
    N: int
    dt_h: float
    eta: dict[tuple[str, str, str], np.ndarray]
    tmin: dict[tuple[str, str, str], np.ndarray]
    tmax: dict[tuple[str, str, str], np.ndarray]
    p_max: dict[str, np.ndarray]
    p_min: dict[str, np.ndarray | None]
    alpha: dict[str, dict[str, np.ndarray]]
    stores: dict[str, _StoreData]
    dem: dict[str, np.ndarray]
    models: dict[str, _ModelData]
    static_types: list[str]


def _pick(override: Any, default: Any, n: int, name: str) -> np.ndarray:
    return _check_len(default if override is None else override, n, name)


def _check_len(arr, n: int, name: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise MpcError(f"{name}: expected {n} values, got shape {arr.shape}")
    return arr


def resolve(spec: SubsystemSpec, forecasts: Forecasts | None = None, soc_init: dict | None = None,
            x_init: dict | None = None) -> Resolved:
    fc = forecasts or Forecasts()
    N = spec.grid.N
    soc_init = soc_init or {}
    x_init = x_init or {}

    eta, tmin, tmax = {}, {}, {}
    for s in spec.supplies:
        for p, q in s.pairs():
            key = (s.id, p, q)
            eta[key] = _pick(fc.eta.get(s.id, {}).get(p, {}).get(q), s.eta[p][q], N, f"eta{key}")
            tmin[key] = _pick(fc.tech_min.get(s.id, {}).get(p, {}).get(q), s.tech_min.get(p, {}).get(q, 0.0), N,
                              f"tech_min{key}")
            tmax[key] = _pick(fc.tech_max.get(s.id, {}).get(p, {}).get(q), s.tech_max.get(p, {}).get(q, INF), N,
                              f"tech_max{key}")

    res = spec.resources()
    p_max = {p: _pick(fc.p_max.get(p), spec.limits.p_max.get(p, INF), N, f"p_max[{p}]") for p in res}
    p_min = {}
    for p in res:
        val = fc.p_min.get(p, spec.limits.p_min.get(p))
        p_min[p] = None if val is None else _pick(val, 0.0, N, f"p_min[{p}]")

    alpha: dict[str, dict[str, np.ndarray]] = {}
    for w in sorted(set(spec.limits.alpha) | set(fc.alpha)):
        alpha[w] = {}
        for p in res:
            alpha[w][p] = _pick(fc.alpha.get(w, {}).get(p), spec.limits.alpha.get(w, {}).get(p, 0.0), N,
                                f"alpha[{w}][{p}]")

    stores = {}
    for st in spec.stores:
        o = fc.store.get(st.id, {})
        lo = np.empty(N + 1)
        hi = np.empty(N + 1)
        s0 = float(soc_init.get(st.id, st.soc_init))
        # Absorb measurement round-off at the bounds.
        if st.soc_min - 1e-6 <= s0 < st.soc_min:
            s0 = st.soc_min
        if st.soc_max < s0 <= st.soc_max + 1e-6:
            s0 = st.soc_max
        lo[0] = hi[0] = s0
        lo[1:] = _pick(o.get("soc_min"), st.soc_min, N, f"{st.id}.soc_min")
        hi[1:] = _pick(o.get("soc_max"), st.soc_max, N, f"{st.id}.soc_max")
        if st.terminal:
            lo[N] = max(lo[N], s0)
        stores[st.id] = _StoreData(
            u_min=_pick(o.get("u_min"), st.u_min, N, f"{st.id}.u_min"),
            u_max=_pick(o.get("u_max"), st.u_max, N, f"{st.id}.u_max"),
            v_min=_pick(o.get("v_min"), st.v_min, N, f"{st.id}.v_min"),
            v_max=_pick(o.get("v_max"), st.v_max, N, f"{st.id}.v_max"),
            soc_lo=lo, soc_hi=hi,
            beta=_pick(o.get("beta"), st.beta, N, f"{st.id}.beta"),
            sign=st.penalty_sign,
        )

    dem: dict[str, np.ndarray] = {}
    models = {}
    ss_types: set[str] = set()
    for d in spec.demands:
        if isinstance(d, TimeSeriesDemand):
            for q, val in d.dem.items():
                arr = _pick(fc.demand.get(d.id, {}).get(q), val, N, f"dem[{d.id}][{q}]")
                dem[q] = dem.get(q, np.zeros(N)) + arr
            for q, val in fc.demand.get(d.id, {}).items():
                if q not in d.dem:
                    dem[q] = dem.get(q, np.zeros(N)) + _check_len(val, N, f"dem[{d.id}][{q}]")
            continue
        m = d.model
        ss_types |= set(m.B)
        dist = np.zeros((N, m.n_states))
        for ex, col in m.e_cols.items():
            chan = fc.disturbance.get(d.id, {}).get(ex)
            if chan is None:
                raise MissingForecastError(f"{spec.id}: no forecast for disturbance {ex!r} of demand {d.id!r}")
            arr = np.asarray(chan, dtype=float)
            if arr.ndim == 2:
                arr = arr.sum(axis=1)
            dist += _check_len(arr, N, f"d[{d.id}][{ex}]")[:, None] * col[None, :]
        sp = fc.setpoints.get(d.id, {})
        r = m.n_outputs
        sp_lo = np.column_stack([series_array(d.sp_lo[o], N) for o in range(r)])
        sp_up = np.column_stack([series_array(d.sp_up[o], N) for o in range(r)])
        if "sp_lo" in sp:
            sp_lo = np.asarray(sp["sp_lo"], dtype=float).reshape(N, r)
        if "sp_up" in sp:
            sp_up = np.asarray(sp["sp_up"], dtype=float).reshape(N, r)
        x0 = np.asarray(x_init.get(d.id, d.x_init), dtype=float)
        if x0.shape != (m.n_states,):
            raise MpcError(f"{spec.id}: x_init for {d.id!r} has shape {x0.shape}, expected ({m.n_states},)")
        models[d.id] = _ModelData(x0=x0, dist=dist, sp_lo=sp_lo, sp_up=sp_up,
                                  eps_max=d.eps_max if d.eps_max is not None else DEFAULT_EPS_MAX)

    static_types = [q for q in spec.energy_types() if q not in ss_types]
    for q in static_types:
        dem.setdefault(q, np.zeros(N))
    return Resolved(N, spec.grid.dt_h, eta, tmin, tmax, p_max, p_min, alpha, stores, dem, models, static_types)


# ---------------------------------------------------------------------------
# Variable index
# ---------------------------------------------------------------------------


class VariableIndex:
    """Named blocks of LP columns; ``index[key]`` returns the column array of a block."""

    def __init__(self):
        self._blocks: dict[tuple, np.ndarray] = {}
        self.resolved: Resolved | None = None
        self.subsystem = ""

    def add(self, key: tuple, cols: np.ndarray) -> np.ndarray:
        if key in self._blocks:
            raise KeyError(f"duplicate variable block {key}")
        self._blocks[key] = cols
        return cols

    def __getitem__(self, key: tuple) -> np.ndarray:
        return self._blocks[key]

    def __contains__(self, key) -> bool:
        return key in self._blocks

    def keys(self, family: str | None = None) -> list[tuple]:
        return [k for k in self._blocks if family is None or k[0] == family]

    def __len__(self) -> int:
        return sum(b.size for b in self._blocks.values())

    def is_bijective(self, n: int) -> bool:
        if not self._blocks:
            return n == 0
        cols = np.sort(np.concatenate([b.ravel() for b in self._blocks.values()]))
        return cols.size == n and np.array_equal(cols, np.arange(n))

    def names(self) -> list[str]:
        out: dict[int, str] = {}
        for key, cols in self._blocks.items():
            label = f"{key[0]}[{','.join(map(str, key[1:]))}]"
            for pos in np.ndindex(cols.shape):
                out[int(cols[pos])] = f"{label}({','.join(map(str, pos))})"
        return [out[j] for j in range(len(out))]


# ---------------------------------------------------------------------------
# Build
# ---------------------------------------------------------------------------


def _step_rows(B: LpBuilder, N: int, terms, sense: str, rhs, mask=None) -> np.ndarray:
    """One row per step; ``terms`` are ``(cols[N], coeff)`` pairs added at matching steps."""
    steps = np.arange(N) if mask is None else np.flatnonzero(mask)
    if steps.size == 0 or not terms:
        return np.zeros(0, dtype=int)
    cols = np.concatenate([np.asarray(c)[steps] for c, _ in terms])
    vals = np.concatenate([np.broadcast_to(np.asarray(v, dtype=float), (N,))[steps] for _, v in terms])
    local = np.tile(np.arange(steps.size), len(terms))
    rhs = np.broadcast_to(np.asarray(rhs, dtype=float), (N,))[steps]
    return B.add_rows(local, cols, vals, sense, rhs)


def _precheck(spec: SubsystemSpec, r: Resolved) -> None:
    """Necessary condition for the static balance: upper supply bound versus demand."""
    for q in r.static_types:
        cap = np.zeros(r.N)
        for s in spec.supplies:
            for p, qq in s.pairs():
                if qq == q:
                    cap = cap + r.eta[(s.id, p, q)] * np.minimum(r.tmax[(s.id, p, q)], r.p_max[p])
        for st in spec.stores:
            if st.energy == q:
                cap = cap + r.stores[st.id].u_max - r.stores[st.id].v_min
        short = np.flatnonzero(cap < r.dem[q] - 1e-9)
        if short.size:
            i = int(short[0])
            raise InfeasibleSubproblem(InfeasibilityReport(
                spec.id, "balance", i, q,
                f"demand {r.dem[q][i]:.6g} kW exceeds the largest deliverable supply {cap[i]:.6g} kW"))


def build_subproblem(spec: SubsystemSpec, forecasts: Forecasts | None = None, soc_init: dict | None = None,
                     x_init: dict | None = None, *, elastic: bool = False, names: bool = False):
    """Assemble the horizon LP; returns ``(LinearProgram, VariableIndex)``.

    ``elastic`` adds penalised violation columns to balance and resource rows
    and drops the real objective; it is used to locate infeasibilities.
    """
    r = resolve(spec, forecasts, soc_init, x_init)
    if not elastic:
        _precheck(spec, r)
    N, dt_h = r.N, r.dt_h
    B = LpBuilder()
    idx = VariableIndex()
    idx.resolved = r
    idx.subsystem = spec.id

    u_sup: dict[str, list[tuple[str, np.ndarray]]] = {}
    for s in spec.supplies:
        for p, q in s.pairs():
            key = (s.id, p, q)
            idx.add(("v_sup",) + key, B.add_vars(N, r.tmin[key], r.tmax[key]))
        for q in s.outputs():
            cols = idx.add(("u_sup", s.id, q), B.add_vars(N, -INF, INF))
            u_sup.setdefault(q, []).append((s.id, cols))
            terms = [(cols, 1.0)] + [(idx[("v_sup", s.id, p, q)], -r.eta[(s.id, p, q)])
                                     for p, qq in s.pairs() if qq == q]
            _step_rows(B, N, terms, EQ, 0.0)

    for st in spec.stores:
        sd = r.stores[st.id]
        v = idx.add(("v_sto", st.id), B.add_vars(N, sd.v_min, sd.v_max))
        u = idx.add(("u_sto", st.id), B.add_vars(N, sd.u_min, sd.u_max))
        soc = idx.add(("soc", st.id), B.add_vars(N + 1, sd.soc_lo, sd.soc_hi))
        terms = [(soc[1:], 1.0), (soc[:-1], -st.eta_stl), (u, dt_h / st.eta_stu), (v, -dt_h * st.eta_stv)]
        _step_rows(B, N, terms, EQ, 0.0)

    def elastic_cols(tag):
        return idx.add(tag, B.add_vars(N, 0.0, INF, 1.0))

    for p in spec.resources():
        terms = [(idx[("v_sup", s.id, pp, q)], 1.0) for s in spec.supplies for pp, q in s.pairs() if pp == p]
        cap = r.p_max[p]
        mask = cap < INF
        if elastic:
            mask = np.ones(N, bool)
            terms_hi = terms + [(elastic_cols(("elastic", "resource_max", p)), -1.0)]
        else:
            terms_hi = terms
        _step_rows(B, N, terms_hi, LE, np.minimum(cap, INF), mask)
        if r.p_min[p] is not None:
            floor = r.p_min[p]
            implied = sum((r.tmin[(s.id, pp, q)] for s in spec.supplies for pp, q in s.pairs() if pp == p),
                          np.zeros(N))
            mask = floor > implied + 1e-12
            if elastic:
                mask = np.ones(N, bool)
                terms_lo = terms + [(elastic_cols(("elastic", "resource_min", p)), 1.0)]
            else:
                terms_lo = terms
            _step_rows(B, N, terms_lo, GE, floor, mask)

    def u_in_terms(q):
        out = [(cols, 1.0) for _, cols in u_sup.get(q, [])]
        for st in spec.stores:
            if st.energy == q:
                out += [(idx[("u_sto", st.id)], 1.0), (idx[("v_sto", st.id)], -1.0)]
        return out

    for q in sorted({st.energy for st in spec.stores}):
        terms = [(idx[("v_sto", st.id)], 1.0) for st in spec.stores if st.energy == q]
        terms += [(idx[("u_sup", s.id, q)], -1.0) for s in spec.supplies if s.store_connected and q in s.outputs()]
        _step_rows(B, N, terms, LE, 0.0)

    slack_cols, slack_w, slack_emax = [], [], []
    for d in spec.demands:
        if not isinstance(d, StateSpaceDemand):
            continue
        md = r.models[d.id]
        m = d.model
        nx, ny = m.n_states, m.n_outputs
        lb = np.full((N + 1, nx), -INF)
        ub = np.full((N + 1, nx), INF)
        lb[0] = ub[0] = md.x0
        x = idx.add(("x", d.id), B.add_vars((N + 1) * nx, lb.ravel(), ub.ravel()).reshape(N + 1, nx))
        y = idx.add(("y", d.id), B.add_vars(N * ny, -INF, INF).reshape(N, ny))
        eps = idx.add(("eps", d.id), B.add_vars(N * ny, 0.0, INF).reshape(N, ny))
        A = m.a_mat
        C = m.c_mat
        for j in range(nx):
            terms = [(x[1:, j], 1.0)] + [(x[:-1, k], -A[j, k]) for k in range(nx) if A[j, k] != 0.0]
            for q, col in m.b_cols.items():
                if col[j] != 0.0:
                    terms += [(c, -col[j] * sign) for c, sign in u_in_terms(q)]
            _step_rows(B, N, terms, EQ, md.dist[:, j])
        for o in range(ny):
            terms = [(y[:, o], 1.0)] + [(x[:-1, j], -C[o, j]) for j in range(nx) if C[o, j] != 0.0]
            _step_rows(B, N, terms, EQ, 0.0)
            side = d.side(o)
            if side in ("both", "upper"):
                _step_rows(B, N, [(eps[:, o], 1.0), (y[:, o], -1.0)], GE, -md.sp_up[:, o])
            if side in ("both", "lower"):
                _step_rows(B, N, [(eps[:, o], 1.0), (y[:, o], 1.0)], GE, md.sp_lo[:, o])
        w = spec.phi_slack * d.gamma
        if w > 0 and not elastic:
            slack_cols.append(eps.ravel())
            slack_w.append(np.full(eps.size, w))
            slack_emax.append(np.full(eps.size, md.eps_max))

    for q in r.static_types:
        terms = u_in_terms(q)
        if not terms:
            continue
        if elastic:
            terms = terms + [(elastic_cols(("elastic", "balance_up", q)), 1.0),
                             (elastic_cols(("elastic", "balance_down", q)), -1.0)]
        _step_rows(B, N, terms, EQ, r.dem[q])

    if not elastic:
        for s in spec.supplies:
            for p, q in s.pairs():
                weight = sum((r.alpha[w][p] for w in r.alpha), np.zeros(N))
                if spec.phi_nrg and np.any(weight):
                    B.add_cost(idx[("v_sup", s.id, p, q)], spec.phi_nrg * weight)
        for st in spec.stores:
            sd = r.stores[st.id]
            if spec.phi_pen and np.any(sd.beta):
                B.add_cost(idx[("soc", st.id)][:-1], spec.phi_pen * sd.sign * sd.beta)

    lp = B.build()
    if slack_cols:
        cols = np.concatenate(slack_cols)
        cfg = PwlQuadratic(segments=spec.pwl_segments, eps_max=DEFAULT_EPS_MAX)
        n0 = lp.n
        lp = expand_quadratic_slack(lp, cols, np.concatenate(slack_w), cfg, np.concatenate(slack_emax))
        per = lp.n - n0
        per_slack = per // cols.size
        start = n0
        for d in spec.demands:
            if isinstance(d, StateSpaceDemand) and spec.phi_slack * d.gamma > 0:
                shape = idx[("eps", d.id)].shape + (per_slack,)
                size = int(np.prod(shape))
                idx.add(("pwl", d.id), np.arange(start, start + size).reshape(shape))
                start += size
    if names:
        lp.names = idx.names()
    return lp, idx


# ---------------------------------------------------------------------------
# Solve and extract
# ---------------------------------------------------------------------------


@dataclass
class OptimalPlan:
    subsystem: str
    grid: TimeGrid
    status: str
    v_sup: dict[tuple[str, str, str], np.ndarray]
    u_sup: dict[tuple[str, str], np.ndarray]
    v_sto: dict[str, np.ndarray]
    u_sto: dict[str, np.ndarray]
    soc: dict[str, np.ndarray]
    x: dict[str, np.ndarray]
    y: dict[str, np.ndarray]
    eps: dict[str, np.ndarray]
    u_in: dict[str, np.ndarray]
    psub: dict[str, np.ndarray]
    objective: float
    j_nrg: np.ndarray
    j_pen: np.ndarray
    j_slack: np.ndarray
    j_slack_pwl: np.ndarray
    phi: tuple[float, float, float]
    p_max: dict[str, np.ndarray]
    p_min: dict[str, np.ndarray]
    iterations: int = 0
    method: str = ""
    slack_gap_bound: float = 0.0

    @property
    def optimal(self) -> bool:
        return self.status == Status.OPTIMAL.value

    @property
    def true_objective(self) -> float:
        pn, pp, ps = self.phi
        return float(pn * self.j_nrg.sum() + pp * self.j_pen.sum() + ps * self.j_slack.sum())

    @property
    def N(self) -> int:
        return self.grid.N


def pick_method(lp: LinearProgram, method: str) -> str:
    if method == "auto":
        return "simplex" if lp.n + lp.m <= AUTO_SIMPLEX_LIMIT else "highs"
    return method


def _diagnose(spec, forecasts, soc_init, x_init, method) -> InfeasibilityReport:
    """Find the first step ``k`` such that steps ``0..k`` cannot all be met.

    Elastic columns on steps before ``k`` are pinned to zero; feasibility of
    that restriction is monotone in ``k``, so a binary search finds the step.
    """
    lp, idx = build_subproblem(spec, forecasts, soc_init, x_init, elastic=True)
    keys = idx.keys("elastic")
    ub0 = lp.ub.copy()

    def attempt(k):
        lp.ub = ub0.copy()
        for key in keys:
            lp.ub[idx[key][:k]] = 0.0
        return solve_lp(lp, method=pick_method(lp, method))

    sol = attempt(0)
    if not sol.optimal:
        return InfeasibilityReport(spec.id, "bounds", None, None,
                                   "store levels, state bounds or supply ranges admit no solution")
    lo, hi = 0, idx.resolved.N  # attempt(lo) feasible; attempt(hi + 1) would mean fully feasible
    best = sol
    while lo < hi:
        mid = (lo + hi + 1) // 2
        trial = attempt(mid)
        if trial.optimal:
            lo, best = mid, trial
        else:
            hi = mid - 1
    k = lo
    for key in keys:
        amount = float(best.x[idx[key]][k]) if k < idx.resolved.N else 0.0
        if amount > 1e-7:
            kind = "balance" if key[1].startswith("balance") else "resource"
            return InfeasibilityReport(spec.id, kind, k, key[2], f"{key[1]} short by {amount:.6g} kW")
    return InfeasibilityReport(spec.id, "bounds", k, None, "no balance or resource row needs relaxing")


def solve_subproblem(spec: SubsystemSpec, forecasts: Forecasts | None = None, soc_init: dict | None = None,
                     x_init: dict | None = None, *, method: str = "auto") -> OptimalPlan:
    lp, idx = build_subproblem(spec, forecasts, soc_init, x_init)
    sol = solve_lp(lp, method=pick_method(lp, method))
    if sol.status == Status.INFEASIBLE:
        raise InfeasibleSubproblem(_diagnose(spec, forecasts, soc_init, x_init, method))
    if sol.status == Status.UNBOUNDED:
        raise MpcError(f"{spec.id}: horizon problem is unbounded (check negative costs on unbounded columns)")
    return extract_plan(spec, idx, sol.x, sol.objective, sol.iterations, sol.method)


def extract_plan(spec: SubsystemSpec, idx: VariableIndex, x: np.ndarray, objective: float,
                 iterations: int = 0, method: str = "") -> OptimalPlan:
    r = idx.resolved
    N = r.N
    v_sup = {k[1:]: x[idx[k]].copy() for k in idx.keys("v_sup")}
    u_sup = {k[1:]: x[idx[k]].copy() for k in idx.keys("u_sup")}
    v_sto = {k[1]: x[idx[k]].copy() for k in idx.keys("v_sto")}
    u_sto = {k[1]: x[idx[k]].copy() for k in idx.keys("u_sto")}
    soc = {k[1]: x[idx[k]].copy() for k in idx.keys("soc")}
    xs = {k[1]: x[idx[k]].copy() for k in idx.keys("x")}
    ys = {k[1]: x[idx[k]].copy() for k in idx.keys("y")}
    eps = {k[1]: np.maximum(x[idx[k]], 0.0) for k in idx.keys("eps")}

    u_in: dict[str, np.ndarray] = {}
    for (sid, q), val in u_sup.items():
        u_in[q] = u_in.get(q, np.zeros(N)) + val
    for st in spec.stores:
        u_in[st.energy] = u_in.get(st.energy, np.zeros(N)) + u_sto[st.id] - v_sto[st.id]

    psub = {p: np.zeros(N) for p in spec.resources()}
    for (sid, p, q), val in v_sup.items():
        psub[p] += val

    j_nrg = np.zeros(N)
    for (sid, p, q), val in v_sup.items():
        for w in r.alpha:
            j_nrg += r.alpha[w][p] * val
    j_pen = np.zeros(N)
    for st in spec.stores:
        sd = r.stores[st.id]
        j_pen += sd.sign * sd.beta * soc[st.id][:-1]
    j_slack = np.zeros(N)
    j_pwl = np.zeros(N)
    gap = 0.0
    cfg = PwlQuadratic(segments=spec.pwl_segments, eps_max=DEFAULT_EPS_MAX)
    for d in spec.demands:
        if isinstance(d, StateSpaceDemand):
            e = eps[d.id]
            j_slack += d.gamma * (e ** 2).sum(axis=1)
            if d.gamma > 0:
                em = r.models[d.id].eps_max
                j_pwl += cfg.value(e, d.gamma, em).sum(axis=1)
                gap += float(cfg.gap_bound(d.gamma, em)) * e.size
    return OptimalPlan(
        subsystem=spec.id, grid=spec.grid, status=Status.OPTIMAL.value,
        v_sup=v_sup, u_sup=u_sup, v_sto=v_sto, u_sto=u_sto, soc=soc, x=xs, y=ys, eps=eps, u_in=u_in,
        psub=psub, objective=float(objective), j_nrg=j_nrg, j_pen=j_pen, j_slack=j_slack, j_slack_pwl=j_pwl,
        phi=(spec.phi_nrg, spec.phi_pen, spec.phi_slack),
        p_max={p: a.copy() for p, a in r.p_max.items()},
        p_min={p: (np.zeros(N) if a is None else a.copy()) for p, a in r.p_min.items()},
        iterations=iterations, method=method, slack_gap_bound=spec.phi_slack * gap,
    )


# ---------------------------------------------------------------------------
# Receding-horizon step
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SetpointCommand:
    subsystem: str
    t: datetime
    values: dict[str, float]

    def get(self, name: str, default: float = 0.0) -> float:
        return self.values.get(name, default)


def apply_first_step(plan: OptimalPlan) -> SetpointCommand:
    if not plan.optimal:
        raise MpcError(f"{plan.subsystem}: cannot apply a plan with status {plan.status}")
    vals: dict[str, float] = {}
    for (s, p, q), v in plan.v_sup.items():
        vals[f"v_sup[{s},{p},{q}]"] = float(v[0])
    for (s, q), v in plan.u_sup.items():
        vals[f"u_sup[{s},{q}]"] = float(v[0])
    for st, v in plan.v_sto.items():
        vals[f"v_sto[{st}]"] = float(v[0])
    for st, v in plan.u_sto.items():
        vals[f"u_sto[{st}]"] = float(v[0])
    return SetpointCommand(plan.subsystem, plan.grid.start, vals)


# ---------------------------------------------------------------------------
# Audit (plain loops, independent of the vectorised assembly)
# ---------------------------------------------------------------------------


def audit_plan(spec: SubsystemSpec, plan: OptimalPlan, forecasts: Forecasts | None = None,
               soc_init: dict | None = None, x_init: dict | None = None) -> dict[str, float]:
    """Largest residual per constraint family, plus objective checks."""
    r = resolve(spec, forecasts, soc_init, x_init)
    N, dt = r.N, r.dt_h
    res = {k: 0.0 for k in ("conversion", "supply_bounds", "resource_bounds", "soc_init", "soc_recursion",
                            "soc_bounds", "store_bounds", "charge_cap", "state_init", "dynamics", "output",
                            "slack", "balance", "psub")}

    def bump(key, val):
        res[key] = max(res[key], float(val))

    for s in spec.supplies:
        for q in s.outputs():
            for i in range(N):
                total = sum(r.eta[(s.id, p, qq)][i] * plan.v_sup[(s.id, p, qq)][i] for p, qq in s.pairs() if qq == q)
                bump("conversion", abs(plan.u_sup[(s.id, q)][i] - total))
        for p, q in s.pairs():
            for i in range(N):
                v = plan.v_sup[(s.id, p, q)][i]
                bump("supply_bounds", max(r.tmin[(s.id, p, q)][i] - v, v - r.tmax[(s.id, p, q)][i], 0.0))
    for p in spec.resources():
        for i in range(N):
            total = 0.0
            for s in spec.supplies:
                for pp, q in s.pairs():
                    if pp == p:
                        total += plan.v_sup[(s.id, p, q)][i]
            lo = r.p_min[p][i] if r.p_min[p] is not None else -INF
            bump("resource_bounds", max(lo - total, total - r.p_max[p][i], 0.0))
            bump("psub", abs(plan.psub[p][i] - total))
    for st in spec.stores:
        sd = r.stores[st.id]
        soc, u, v = plan.soc[st.id], plan.u_sto[st.id], plan.v_sto[st.id]
        bump("soc_init", abs(soc[0] - sd.soc_lo[0]))
        for i in range(N):
            nxt = st.eta_stl * soc[i] - dt * u[i] / st.eta_stu + dt * st.eta_stv * v[i]
            bump("soc_recursion", abs(soc[i + 1] - nxt))
            bump("soc_bounds", max(sd.soc_lo[i + 1] - soc[i + 1], soc[i + 1] - sd.soc_hi[i + 1], 0.0))
            bump("store_bounds", max(sd.u_min[i] - u[i], u[i] - sd.u_max[i], sd.v_min[i] - v[i], v[i] - sd.v_max[i],
                                     0.0))
    for q in {st.energy for st in spec.stores}:
        for i in range(N):
            charge = sum(plan.v_sto[st.id][i] for st in spec.stores if st.energy == q)
            gen = sum(plan.u_sup[(s.id, q)][i] for s in spec.supplies if s.store_connected and q in s.outputs())
            bump("charge_cap", max(charge - gen, 0.0))

    def u_in(q, i):
        total = sum(plan.u_sup[(s.id, q)][i] for s in spec.supplies if q in s.outputs())
        total += sum(plan.u_sto[st.id][i] - plan.v_sto[st.id][i] for st in spec.stores if st.energy == q)
        return total

    for d in spec.demands:
        if isinstance(d, TimeSeriesDemand):
            continue
        m, md = d.model, r.models[d.id]
        X, Y, E = plan.x[d.id], plan.y[d.id], plan.eps[d.id]
        bump("state_init", np.max(np.abs(X[0] - md.x0)))
        for i in range(N):
            pred = m.a_mat @ X[i] + md.dist[i]
            for q, col in m.b_cols.items():
                pred = pred + col * u_in(q, i)
            bump("dynamics", np.max(np.abs(X[i + 1] - pred)))
            bump("output", np.max(np.abs(Y[i] - m.c_mat @ X[i])))
            for o in range(m.n_outputs):
                side = d.side(o)
                need = 0.0
                if side in ("both", "upper"):
                    need = max(need, Y[i, o] - md.sp_up[i, o])
                if side in ("both", "lower"):
                    need = max(need, md.sp_lo[i, o] - Y[i, o])
                bump("slack", max(need - E[i, o], -E[i, o], 0.0))
    for q in r.static_types:
        for i in range(N):
            bump("balance", abs(u_in(q, i) - r.dem[q][i]))

    # Objective: LP value against the plan's PWL cost, and against the true quadratic cost.
    pn, pp, ps = spec.phi_nrg, spec.phi_pen, spec.phi_slack
    j_nrg = j_pen = j_sq = j_pwl = 0.0
    bound = 0.0
    cfg = PwlQuadratic(segments=spec.pwl_segments, eps_max=DEFAULT_EPS_MAX)
    for i in range(N):
        for (s, p, q), v in plan.v_sup.items():
            j_nrg += sum(r.alpha[w][p][i] for w in r.alpha) * v[i]
        for st in spec.stores:
            sd = r.stores[st.id]
            j_pen += sd.sign * sd.beta[i] * plan.soc[st.id][i]
        for d in spec.demands:
            if isinstance(d, StateSpaceDemand) and d.gamma > 0:
                em = r.models[d.id].eps_max
                for o in range(d.model.n_outputs):
                    e = plan.eps[d.id][i, o]
                    j_sq += d.gamma * e * e
                    j_pwl += float(cfg.value(e, d.gamma, em))
                    bound += d.gamma * (em / spec.pwl_segments) ** 2 / 4.0
    res["objective"] = abs(plan.objective - (pn * j_nrg + pp * j_pen + ps * j_pwl))
    truth = pn * j_nrg + pp * j_pen + ps * j_sq
    res["objective_true_gap"] = abs(plan.objective - truth)
    res["objective_bound"] = ps * bound
    return res


def audit_passes(report: dict[str, float], tol: float = 1e-6) -> bool:
    for key, val in report.items():
        if key == "objective_bound":
            continue
        limit = tol + (report["objective_bound"] if key == "objective_true_gap" else 0.0)
        if not val <= limit:
            return False
    return True


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return f"{v:.10g}"


def plan_columns(plan: OptimalPlan) -> dict[str, np.ndarray]:
    N = plan.N
    cols: dict[str, np.ndarray] = {}
    for (s, p, q), v in sorted(plan.v_sup.items()):
        cols[f"v_sup[{s},{p},{q}]"] = v
    for (s, q), v in sorted(plan.u_sup.items()):
        cols[f"u_sup[{s},{q}]"] = v
    for st in sorted(plan.v_sto):
        cols[f"v_sto[{st}]"] = plan.v_sto[st]
        cols[f"u_sto[{st}]"] = plan.u_sto[st]
        cols[f"soc[{st}]"] = plan.soc[st][:N]
    for m in sorted(plan.x):
        for j in range(plan.x[m].shape[1]):
            cols[f"x[{m},{j}]"] = plan.x[m][:N, j]
        for o in range(plan.y[m].shape[1]):
            cols[f"y[{m},{o}]"] = plan.y[m][:, o]
            cols[f"eps[{m},{o}]"] = plan.eps[m][:, o]
    for p in sorted(plan.psub):
        cols[f"psub[{p}]"] = plan.psub[p]
    cols["j_nrg"] = plan.j_nrg
    cols["j_pen"] = plan.j_pen
    cols["j_slack"] = plan.j_slack
    return cols


def plan_to_csv(plan: OptimalPlan, path=None) -> str:
    cols = plan_columns(plan)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["i", "timestamp"] + list(cols))
    step = timedelta(minutes=plan.grid.dt)
    for i in range(plan.N):
        ts = (plan.grid.start + i * step).strftime("%Y-%m-%dT%H:%M:%SZ")
        w.writerow([i, ts] + [_fmt(float(c[i])) for c in cols.values()])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
