"""Bounded-variable linear programming.

Every MPC subproblem in the package is brought into one canonical form::

    minimise    c @ x
    subject to  A[r] @ x  (<=, =, >=)  rhs[r]     for every row r
                lb <= x <= ub

The default solver is a revised primal simplex that handles variable bounds
directly (non-basic variables sit at a bound, or at zero when free) and uses
Bland's smallest-index rule for both the entering and the leaving variable,
which makes it deterministic and cycle-free.  ``method="highs"`` hands the
same problem to the HiGHS solver bundled with scipy for large horizons.

Infinite bounds may be passed as ``±numpy.inf``; they are stored as the
sentinel ``±INF`` (1e30) and any magnitude at or above it is treated as
unbounded.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg
from scipy import sparse

INF = 1e30

LE, EQ, GE = "<=", "=", ">="
_SENSES = (LE, EQ, GE)


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"


class LpError(RuntimeError):
    """Raised for malformed problems or solver breakdowns."""


class IterationLimitError(LpError):
    pass


class NotPositiveDefiniteError(ValueError):
    pass


@dataclass(frozen=True)
class Row:
    coeffs: dict[int, float]
    sense: str
    rhs: float


def _clip_inf(values) -> np.ndarray:
    arr = np.asarray(values, dtype=float).copy()
    arr[arr >= INF] = INF
    arr[arr <= -INF] = -INF
    return arr


@dataclass
class LinearProgram:
    """Bounded-variable LP with rows stored as a sparse matrix."""

    c: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    A: sparse.csr_matrix
    sense: np.ndarray
    rhs: np.ndarray
    names: list[str] | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.lb = _clip_inf(self.lb)
        self.ub = _clip_inf(self.ub)
        self.A = sparse.csr_matrix(self.A, dtype=float)
        self.sense = np.asarray(self.sense, dtype=object)
        self.rhs = np.asarray(self.rhs, dtype=float)

    @property
    def n(self) -> int:
        return self.c.shape[0]

    @property
    def m(self) -> int:
        return self.rhs.shape[0]

    @property
    def rows(self) -> list[Row]:
        out = []
        A = self.A
        for r in range(self.m):
            lo, hi = A.indptr[r], A.indptr[r + 1]
            coeffs = {int(j): float(v) for j, v in zip(A.indices[lo:hi], A.data[lo:hi])}
            out.append(Row(coeffs, str(self.sense[r]), float(self.rhs[r])))
        return out

    @classmethod
    def from_rows(cls, c, lb, ub, rows: Iterable, names=None) -> "LinearProgram":
        """Build from ``(coeffs, sense, rhs)`` triples; coeffs map index -> value."""
        c = np.asarray(c, dtype=float)
        ri, ci, vals, senses, rhs = [], [], [], [], []
        for r, row in enumerate(rows):
            coeffs, sense, b = (row.coeffs, row.sense, row.rhs) if isinstance(row, Row) else row
            for j, v in coeffs.items():
                ri.append(r)
                ci.append(j)
                vals.append(v)
            senses.append(sense)
            rhs.append(b)
        m = len(senses)
        if ci and (min(ci) < 0 or max(ci) >= c.shape[0]):
            raise LpError("row references a variable index outside [0, n)")
        A = sparse.csr_matrix((vals, (ri, ci)), shape=(m, c.shape[0]))
        return cls(c, lb, ub, A, np.array(senses, dtype=object), np.array(rhs, dtype=float), names)

    def check(self) -> None:
        if self.lb.shape != self.c.shape or self.ub.shape != self.c.shape:
            raise LpError("bounds and cost vector differ in length")
        if not np.all(np.isfinite(self.c)):
            raise LpError("cost vector contains non-finite entries")
        bad = np.flatnonzero(self.lb > self.ub)
        if bad.size:
            raise LpError(f"lb > ub for variable {int(bad[0])}")
        if self.A.shape != (self.m, self.n):
            raise LpError("constraint matrix shape does not match (m, n)")
        for s in self.sense:
            if s not in _SENSES:
                raise LpError(f"unknown row sense {s!r}")

    def activity(self, x) -> np.ndarray:
        return self.A @ np.asarray(x, dtype=float)

    def max_violation(self, x) -> float:
        """Largest bound or row violation at ``x`` (0 when feasible)."""
        x = np.asarray(x, dtype=float)
        viol = [0.0]
        lb_fin = self.lb > -INF
        ub_fin = self.ub < INF
        if lb_fin.any():
            viol.append(float(np.max(self.lb[lb_fin] - x[lb_fin], initial=0.0)))
        if ub_fin.any():
            viol.append(float(np.max(x[ub_fin] - self.ub[ub_fin], initial=0.0)))
        if self.m:
            act = self.activity(x)
            le = self.sense == LE
            ge = self.sense == GE
            eq = self.sense == EQ
            viol.append(float(np.max(act[le] - self.rhs[le], initial=0.0)))
            viol.append(float(np.max(self.rhs[ge] - act[ge], initial=0.0)))
            viol.append(float(np.max(np.abs(act[eq] - self.rhs[eq]), initial=0.0)))
        return max(viol)


class LpBuilder:
    """Incremental assembly of a :class:`LinearProgram` from blocks of columns and rows."""

    def __init__(self):
        self._c: list[np.ndarray] = []
        self._lb: list[np.ndarray] = []
        self._ub: list[np.ndarray] = []
        self._names: list[str] = []
        self._n = 0
        self._ri: list[np.ndarray] = []
        self._ci: list[np.ndarray] = []
        self._v: list[np.ndarray] = []
        self._sense: list[np.ndarray] = []
        self._rhs: list[np.ndarray] = []
        self._m = 0
        self._extra: list[tuple[np.ndarray, np.ndarray]] = []
        self._unnamed = False

    @property
    def n(self) -> int:
        return self._n

    @property
    def m(self) -> int:
        return self._m

    def add_vars(self, count: int, lb=0.0, ub=INF, cost=0.0, names: Sequence[str] | None = None) -> np.ndarray:
        idx = np.arange(self._n, self._n + count)
        self._lb.append(np.broadcast_to(np.asarray(lb, dtype=float), (count,)).copy())
        self._ub.append(np.broadcast_to(np.asarray(ub, dtype=float), (count,)).copy())
        self._c.append(np.broadcast_to(np.asarray(cost, dtype=float), (count,)).copy())
        if names is None:
            self._unnamed = True
        else:
            self._names.extend(names)
        self._n += count
        return idx

    def add_cost(self, cols, values) -> None:
        """Accumulate extra linear cost on existing columns (applied at build)."""
        self._extra.append((np.asarray(cols, dtype=int), np.asarray(values, dtype=float)))

    def add_rows(self, row_local, cols, vals, sense, rhs) -> np.ndarray:
        """Append a block of rows.

        ``row_local[k]`` is the row (counted from 0 within this block) that the
        coefficient ``vals[k]`` on column ``cols[k]`` belongs to.
        """
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        count = rhs.shape[0]
        row_local = np.asarray(row_local, dtype=int)
        self._ri.append(row_local + self._m)
        self._ci.append(np.asarray(cols, dtype=int))
        self._v.append(np.asarray(vals, dtype=float))
        sense_arr = np.empty(count, dtype=object)
        sense_arr[:] = sense
        self._sense.append(sense_arr)
        self._rhs.append(rhs)
        idx = np.arange(self._m, self._m + count)
        self._m += count
        return idx

    def add_row(self, coeffs: dict[int, float], sense: str, rhs: float) -> int:
        cols = list(coeffs)
        return int(self.add_rows(np.zeros(len(cols), dtype=int), cols, [coeffs[j] for j in cols], sense, [rhs])[0])

    def build(self) -> LinearProgram:
        n = self._n
        c = np.concatenate(self._c) if self._c else np.zeros(0)
        for cols, vals in self._extra:
            np.add.at(c, cols, vals)
        lb = np.concatenate(self._lb) if self._lb else np.zeros(0)
        ub = np.concatenate(self._ub) if self._ub else np.zeros(0)
        if self._ri:
            ri = np.concatenate(self._ri)
            ci = np.concatenate(self._ci)
            vv = np.concatenate(self._v)
        else:
            ri = ci = np.zeros(0, dtype=int)
            vv = np.zeros(0)
        if ci.size and (ci.min() < 0 or ci.max() >= n):
            raise LpError("row references a variable index outside [0, n)")
        A = sparse.csr_matrix((vv, (ri, ci)), shape=(self._m, n))
        A.sum_duplicates()
        sense = np.concatenate(self._sense) if self._sense else np.zeros(0, dtype=object)
        rhs = np.concatenate(self._rhs) if self._rhs else np.zeros(0)
        names = None if self._unnamed else list(self._names)
        return LinearProgram(c, lb, ub, A, sense, rhs, names)


@dataclass
class LpSolution:
    status: Status
    x: np.ndarray
    objective: float
    iterations: int = 0
    method: str = "simplex"

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


# ---------------------------------------------------------------------------
# Bounded primal simplex
# ---------------------------------------------------------------------------

_BASIC, _AT_LB, _AT_UB, _FREE = 0, 1, 2, 3


class _BoundedSimplex:
    refactor_every = 64

    def __init__(self, lp: LinearProgram, pricing: str, max_iter: int, tol_dual: float, tol_piv: float):
        self.lp = lp
        self.pricing = pricing
        self.max_iter = max_iter
        self.tol_dual = tol_dual
        self.tol_piv = tol_piv
        self.iterations = 0

        m, n = lp.m, lp.n
        self.m, self.n = m, n
        A = lp.A.tocsc()

        x0 = np.where(lp.lb > -INF, lp.lb, np.where(lp.ub < INF, lp.ub, 0.0))
        resid = lp.rhs - A @ x0 if m else np.zeros(0)

        s_lo = np.where(lp.sense == GE, -INF, 0.0).astype(float)
        s_hi = np.where(lp.sense == LE, INF, 0.0).astype(float)
        slack_ok = (resid >= s_lo - 1e-12) & (resid <= s_hi + 1e-12)
        art_rows = np.flatnonzero(~slack_ok)
        s_val = np.clip(resid, s_lo, s_hi)
        art_sign = np.sign(resid[art_rows] - s_val[art_rows])
        art_sign[art_sign == 0] = 1.0

        n_art = art_rows.shape[0]
        art_cols = sparse.csc_matrix((art_sign, (art_rows, np.arange(n_art))), shape=(m, n_art))
        self.A = sparse.hstack([A, sparse.identity(m, format="csc"), art_cols], format="csc")
        self.ntot = n + m + n_art
        self.art_start = n + m

        self.lo = np.concatenate([lp.lb, s_lo, np.zeros(n_art)])
        self.hi = np.concatenate([lp.ub, s_hi, np.full(n_art, INF)])
        self.x = np.concatenate([x0, s_val, np.abs(resid[art_rows] - s_val[art_rows])])

        status = np.where(lp.lb > -INF, _AT_LB, np.where(lp.ub < INF, _AT_UB, _FREE))
        self.status = np.concatenate([status, np.full(m, _AT_LB), np.full(n_art, _BASIC)])
        # slacks resting on their upper bound (>= rows at 0 from below)
        slack_status = np.where(s_val >= s_hi, _AT_UB, _AT_LB)
        self.status[n:n + m] = slack_status

        basis = np.empty(m, dtype=int)
        basis[slack_ok] = n + np.flatnonzero(slack_ok)
        basis[art_rows] = self.art_start + np.arange(n_art)
        self.basis = basis
        self.status[basis] = _BASIC
        diag = np.ones(m)
        diag[art_rows] = art_sign
        self.Binv = np.diag(1.0 / diag) if m else np.zeros((0, 0))
        self.pivots_since_refactor = 0

    # -- linear algebra ----------------------------------------------------
    def _column(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        A = self.A
        lo, hi = A.indptr[j], A.indptr[j + 1]
        return A.indices[lo:hi], A.data[lo:hi]

    def _refactor(self) -> None:
        if self.m == 0:
            return
        B = self.A[:, self.basis].toarray()
        try:
            self.Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError as exc:
            raise LpError("basis matrix became singular") from exc
        nonbasic = np.ones(self.ntot, dtype=bool)
        nonbasic[self.basis] = False
        xn = np.where(nonbasic, self.x, 0.0)
        self.x[self.basis] = self.Binv @ (self.lp.rhs - self.A @ xn)
        self.pivots_since_refactor = 0

    # -- one phase -----------------------------------------------------------
    def _run(self, cost: np.ndarray, phase: int) -> Status:
        m = self.m
        A_T = self.A.T.tocsr()
        movable = self.hi - self.lo > 0
        while True:
            if self.iterations >= self.max_iter:
                raise IterationLimitError(
                    f"simplex exceeded {self.max_iter} iterations (phase {phase})"
                )
            y = self.Binv.T @ cost[self.basis] if m else np.zeros(0)
            d = cost - A_T @ y if m else cost.copy()
            st = self.status
            inc = ((st == _AT_LB) | (st == _FREE)) & (d < -self.tol_dual) & movable
            dec = ((st == _AT_UB) | (st == _FREE)) & (d > self.tol_dual) & movable
            cand = inc | dec
            if not cand.any():
                return Status.OPTIMAL
            if self.pricing == "bland":
                j = int(np.argmax(cand))
            else:
                score = np.where(cand, np.abs(d), -1.0)
                j = int(np.argmax(score))
            direction = 1.0 if inc[j] else -1.0
            self.iterations += 1

            rows, vals = self._column(j)
            w = self.Binv[:, rows] @ vals if m else np.zeros(0)
            alpha = direction * w
            xb = self.x[self.basis]
            lob = self.lo[self.basis]
            hib = self.hi[self.basis]
            limits = np.full(m, np.inf)
            dn = (alpha > self.tol_piv) & (lob > -INF)
            up = (alpha < -self.tol_piv) & (hib < INF)
            limits[dn] = (xb[dn] - lob[dn]) / alpha[dn]
            limits[up] = (hib[up] - xb[up]) / (-alpha[up])
            np.maximum(limits, 0.0, out=limits)

            theta_flip = self.hi[j] - self.lo[j] if (self.hi[j] < INF and self.lo[j] > -INF) else np.inf
            theta_basic = limits.min() if m else np.inf
            if not np.isfinite(theta_basic) and not np.isfinite(theta_flip):
                return Status.UNBOUNDED

            if theta_flip <= theta_basic:
                theta = theta_flip
                self.x[self.basis] = xb - theta * alpha
                self.x[j] = self.hi[j] if direction > 0 else self.lo[j]
                self.status[j] = _AT_UB if direction > 0 else _AT_LB
                continue

            theta = theta_basic
            ties = np.flatnonzero(limits <= theta + 1e-12)
            r = int(ties[np.argmin(self.basis[ties])])
            leaving = int(self.basis[r])
            self.x[self.basis] = xb - theta * alpha
            self.x[j] = self.x[j] + direction * theta
            if alpha[r] > 0:
                self.x[leaving] = self.lo[leaving]
                self.status[leaving] = _AT_LB
            else:
                self.x[leaving] = self.hi[leaving]
                self.status[leaving] = _AT_UB
            self.basis[r] = j
            self.status[j] = _BASIC

            piv_row = self.Binv[r, :] / w[r]
            self.Binv -= np.outer(w, piv_row)
            self.Binv[r, :] = piv_row
            self.pivots_since_refactor += 1
            if self.pivots_since_refactor >= self.refactor_every:
                self._refactor()

    def solve(self) -> LpSolution:
        lp = self.lp
        n_art = self.ntot - self.art_start
        if n_art:
            cost1 = np.zeros(self.ntot)
            cost1[self.art_start:] = 1.0
            self._run(cost1, phase=1)
            self._refactor()
            infeas = float(np.sum(self.x[self.art_start:]))
            scale = max(1.0, float(np.max(np.abs(lp.rhs), initial=0.0)))
            if infeas > 1e-9 * scale:
                return LpSolution(Status.INFEASIBLE, self.x[: self.n].copy(), math.nan, self.iterations)
            self.hi[self.art_start:] = 0.0
            self.x[self.art_start:] = np.clip(self.x[self.art_start:], 0.0, 0.0)
        cost2 = np.concatenate([lp.c, np.zeros(self.ntot - self.n)])
        status = self._run(cost2, phase=2)
        if status is Status.UNBOUNDED:
            return LpSolution(Status.UNBOUNDED, self.x[: self.n].copy(), -math.inf, self.iterations)
        self._refactor()
        x = np.clip(self.x[: self.n], lp.lb, lp.ub)
        return LpSolution(Status.OPTIMAL, x, float(lp.c @ x), self.iterations)


def _solve_highs(lp: LinearProgram, max_iter: int | None) -> LpSolution:
    from scipy.optimize import linprog

    A = lp.A.tocsr()
    le = np.flatnonzero(lp.sense == LE)
    ge = np.flatnonzero(lp.sense == GE)
    eq = np.flatnonzero(lp.sense == EQ)
    ub_rows = sparse.vstack([A[le], -A[ge]], format="csr") if (le.size + ge.size) else None
    ub_rhs = np.concatenate([lp.rhs[le], -lp.rhs[ge]]) if ub_rows is not None else None
    bounds = np.column_stack([
        np.where(lp.lb <= -INF, -np.inf, lp.lb),
        np.where(lp.ub >= INF, np.inf, lp.ub),
    ])
    options = {"presolve": True}
    if max_iter is not None:
        options["maxiter"] = max_iter
    res = linprog(
        lp.c,
        A_ub=ub_rows,
        b_ub=ub_rhs,
        A_eq=A[eq] if eq.size else None,
        b_eq=lp.rhs[eq] if eq.size else None,
        bounds=bounds,
        method="highs",
        options=options,
    )
    iters = int(getattr(res, "nit", 0) or 0)
    if res.status == 0:
        x = np.clip(res.x, lp.lb, lp.ub)
        return LpSolution(Status.OPTIMAL, x, float(lp.c @ x), iters, "highs")
    if res.status == 2:
        return LpSolution(Status.INFEASIBLE, np.full(lp.n, np.nan), math.nan, iters, "highs")
    if res.status == 3:
        return LpSolution(Status.UNBOUNDED, np.full(lp.n, np.nan), -math.inf, iters, "highs")
    if res.status == 1:
        raise IterationLimitError(res.message)
    raise LpError(f"HiGHS failed: {res.message}")


def solve_lp(
    lp: LinearProgram,
    method: str = "simplex",
    pricing: str = "bland",
    max_iter: int | None = None,
    tol_feas: float = 1e-7,
) -> LpSolution:
    """Solve ``lp`` and return an :class:`LpSolution`.

    Infeasible and unbounded problems are reported through ``status``; only
    exhausting the iteration budget (default ``50 * (n + rows)``) raises.
    ``pricing="dantzig"`` picks the most negative reduced cost instead of the
    lowest index; it is faster on large problems but loses the anti-cycling
    guarantee.
    """
    lp.check()
    if max_iter is None:
        max_iter = 50 * (lp.n + lp.m) + 50
    if method == "highs":
        return _solve_highs(lp, max_iter)
    if method != "simplex":
        raise ValueError(f"unknown LP method {method!r}")
    if pricing not in ("bland", "dantzig"):
        raise ValueError(f"unknown pricing rule {pricing!r}")
    sol = _BoundedSimplex(lp, pricing, max_iter, tol_dual=1e-9, tol_piv=1e-9).solve()
    if sol.optimal and lp.max_violation(sol.x) > tol_feas * max(1.0, float(np.max(np.abs(lp.rhs), initial=0.0))):
        raise LpError(f"simplex returned a point violating constraints by {lp.max_violation(sol.x):.3e}")
    return sol


# ---------------------------------------------------------------------------
# Vertex-enumeration reference (test oracle)
# ---------------------------------------------------------------------------


def _null_space(E: np.ndarray, tol=1e-10) -> tuple[np.ndarray, int]:
    if E.shape[0] == 0:
        return np.eye(E.shape[1]), 0
    _, s, vt = np.linalg.svd(E)
    rank = int(np.sum(s > tol * max(1.0, s[0])))
    return vt[rank:].T, rank


def _vertices(E, f, G, h, tol=1e-7) -> np.ndarray:
    """All vertices of {x : E x = f, G x <= h}; empty array when there are none."""
    n = G.shape[1] if G.size else E.shape[1]
    if E.shape[0]:
        x0, *_ = np.linalg.lstsq(E, f, rcond=None)
        if np.max(np.abs(E @ x0 - f)) > tol:
            return np.zeros((0, n))
        Nmat, _ = _null_space(E)
    else:
        x0 = np.zeros(n)
        Nmat = np.eye(n)
    k = Nmat.shape[1]
    if k == 0:
        return x0[None, :] if np.all(G @ x0 <= h + tol) else np.zeros((0, n))
    Gz = G @ Nmat
    hz = h - G @ x0
    if Gz.shape[0] < k:
        return np.zeros((0, n))
    combos = np.array(list(itertools.combinations(range(Gz.shape[0]), k)), dtype=int)
    K = Gz[combos]
    rhs = hz[combos]
    det = np.linalg.det(K)
    ok = np.abs(det) > 1e-9
    if not ok.any():
        return np.zeros((0, n))
    z = np.linalg.solve(K[ok], rhs[ok][..., None])[..., 0]
    feasible = np.all(z @ Gz.T <= hz + tol * np.maximum(1.0, np.abs(hz)), axis=1)
    z = z[feasible]
    return x0 + z @ Nmat.T


def vertex_oracle(lp: LinearProgram, box: float = 1e6) -> LpSolution:
    """Exact optimum of a small LP by enumerating every basic solution.

    Infinite bounds are replaced by ``±box`` for the vertex search; unboundedness
    is decided separately by minimising the cost over the recession cone
    intersected with the unit box.
    """
    n, m = lp.n, lp.m
    if n > 10 or m > 12:
        raise ValueError(f"vertex_oracle limited to n <= 10 and rows <= 12 (got n={n}, rows={m})")
    lp.check()
    A = lp.A.toarray()
    eq = lp.sense == EQ
    le = lp.sense == LE
    ge = lp.sense == GE
    E, f = A[eq], lp.rhs[eq]
    rows_G = [A[le], -A[ge]]
    rows_h = [lp.rhs[le], -lp.rhs[ge]]
    I = np.eye(n)
    lbf = lp.lb > -INF
    ubf = lp.ub < INF
    G_rows = np.vstack(rows_G + [-I, I])
    h = np.concatenate(rows_h + [-np.where(lbf, lp.lb, -box), np.where(ubf, lp.ub, box)])
    verts = _vertices(E, f, G_rows, h)
    if verts.shape[0] == 0:
        return LpSolution(Status.INFEASIBLE, np.full(n, np.nan), math.nan, 0, "oracle")

    # recession cone (with unit box) to detect unboundedness
    Gr = np.vstack(rows_G + [-I[lbf], I[ubf], -I, I])
    hr = np.concatenate([np.zeros(sum(r.shape[0] for r in rows_G)), np.zeros(int(lbf.sum())),
                         np.zeros(int(ubf.sum())), np.ones(n), np.ones(n)])
    rays = _vertices(E, np.zeros(E.shape[0]), Gr, hr)
    if rays.shape[0] and float(np.min(rays @ lp.c)) < -1e-9:
        return LpSolution(Status.UNBOUNDED, np.full(n, np.nan), -math.inf, 0, "oracle")
    vals = verts @ lp.c
    best = int(np.argmin(vals))
    return LpSolution(Status.OPTIMAL, verts[best], float(vals[best]), 0, "oracle")


# ---------------------------------------------------------------------------
# Quadratic slack penalties as convex piecewise-linear costs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PwlQuadratic:
    """Chord approximation of ``w * eps**2`` on ``[0, eps_max]``.

    ``segments`` equal-width chords meet the parabola at every breakpoint; the
    largest gap on a chord of width ``h`` is ``w * h**2 / 4``.  With ``tail``
    set, a further unbounded segment continues with the tangent slope at
    ``eps_max`` so the expanded LP stays feasible for any deviation.
    """

    segments: int = 8
    eps_max: float = 5.0
    tail: bool = True

    def __post_init__(self):
        if self.segments < 2:
            raise ValueError("PwlQuadratic needs at least 2 segments")
        if not math.isfinite(self.eps_max) or self.eps_max <= 0:
            raise ValueError(f"eps_max must be finite and positive, got {self.eps_max}")

    def value(self, eps, weight, eps_max=None) -> np.ndarray:
        """PWL cost at ``eps`` (what the expanded LP charges at its optimum)."""
        e_max = self.eps_max if eps_max is None else eps_max
        eps = np.asarray(eps, dtype=float)
        w = np.asarray(weight, dtype=float)
        e_max = np.asarray(e_max, dtype=float)
        hseg = e_max / self.segments
        inside = np.minimum(eps, e_max)
        k = np.minimum(np.floor(inside / hseg), self.segments - 1)
        chord = w * (k * hseg) ** 2 + w * hseg * (2 * k + 1) * (inside - k * hseg)
        beyond = np.maximum(eps - e_max, 0.0)
        tail_slope = 2 * w * e_max if self.tail else np.inf
        with np.errstate(invalid="ignore"):
            extra = np.where(beyond > 0, tail_slope * beyond, 0.0)
        return chord + extra

    def gap_bound(self, weight, eps_max=None) -> np.ndarray:
        e_max = self.eps_max if eps_max is None else eps_max
        return np.asarray(weight, dtype=float) * (np.asarray(e_max, dtype=float) / self.segments) ** 2 / 4


def expand_quadratic_slack(
    lp: LinearProgram,
    slack_vars: Sequence[int],
    weights: Sequence[float],
    cfg: PwlQuadratic = PwlQuadratic(),
    eps_max: Sequence[float] | float | None = None,
) -> LinearProgram:
    """Replace ``sum_j w_j * x[slack_j]**2`` by a convex piecewise-linear cost.

    Each weighted slack ``eps`` gets ``cfg.segments`` segment columns of width
    ``eps_max / K`` with increasing chord slopes (and an optional tail column),
    tied together by ``eps - sum(segments) = 0``.  Original columns keep their
    indices and bounds; their own linear cost is zeroed.
    """
    slack_vars = np.asarray(slack_vars, dtype=int)
    weights = np.broadcast_to(np.asarray(weights, dtype=float), slack_vars.shape)
    e_max = np.broadcast_to(np.asarray(cfg.eps_max if eps_max is None else eps_max, dtype=float), slack_vars.shape)
    if not np.all(np.isfinite(e_max)) or np.any(e_max <= 0):
        raise ValueError("eps_max must be finite and positive for every slack")
    if slack_vars.size and np.any(lp.lb[slack_vars] != 0.0):
        raise ValueError("slack variables must have lower bound 0")
    if np.any(weights < 0):
        raise ValueError("slack weights must be non-negative")

    c = lp.c.copy()
    c[slack_vars] = 0.0
    active = weights > 0
    sv, w, em = slack_vars[active], weights[active], e_max[active]
    K = cfg.segments
    per = K + (1 if cfg.tail else 0)
    s = sv.shape[0]
    if s == 0:
        return LinearProgram(c, lp.lb.copy(), lp.ub.copy(), lp.A.copy(), lp.sense.copy(), lp.rhs.copy(),
                             None if lp.names is None else list(lp.names))
    hseg = em / K
    k = np.arange(K)
    seg_cost = (w * hseg)[:, None] * (2 * k + 1)[None, :]
    seg_ub = np.repeat(hseg[:, None], K, axis=1)
    if cfg.tail:
        seg_cost = np.hstack([seg_cost, (2 * w * em)[:, None]])
        seg_ub = np.hstack([seg_ub, np.full((s, 1), INF)])
    new_c = np.concatenate([c, seg_cost.ravel()])
    new_lb = np.concatenate([lp.lb, np.zeros(s * per)])
    new_ub = np.concatenate([lp.ub, seg_ub.ravel()])

    n0 = lp.n
    seg_cols = n0 + np.arange(s * per).reshape(s, per)
    rows = np.repeat(np.arange(s), per + 1)
    cols = np.hstack([sv[:, None], seg_cols]).ravel()
    vals = np.hstack([np.ones((s, 1)), -np.ones((s, per))]).ravel()
    link = sparse.csr_matrix((vals, (rows, cols)), shape=(s, n0 + s * per))
    A = sparse.vstack([sparse.hstack([lp.A, sparse.csr_matrix((lp.m, s * per))]), link], format="csr")
    sense = np.concatenate([lp.sense, np.array([EQ] * s, dtype=object)])
    rhs = np.concatenate([lp.rhs, np.zeros(s)])
    names = None
    if lp.names is not None:
        names = list(lp.names)
        for j, col in enumerate(sv):
            base = lp.names[col]
            names.extend(f"{base}#pwl{q}" for q in range(per))
    return LinearProgram(new_c, new_lb, new_ub, A, sense, rhs, names)


# ---------------------------------------------------------------------------
# Dense SPD solve (ridge regression normal equations)
# ---------------------------------------------------------------------------


def cholesky_solve(M, b) -> np.ndarray:
    """Solve ``M x = b`` for symmetric positive-definite ``M``."""
    M = np.asarray(M, dtype=float)
    b = np.asarray(b, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("M must be square")
    scale = max(1.0, float(np.max(np.abs(M), initial=0.0)))
    if np.max(np.abs(M - M.T), initial=0.0) > 1e-10 * scale:
        raise NotPositiveDefiniteError("matrix is not symmetric")
    try:
        factor = scipy.linalg.cho_factor(M, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"non-positive pivot in Cholesky factorisation: {exc}") from exc
    return scipy.linalg.cho_solve(factor, b)


# ---------------------------------------------------------------------------
# Text dump for regression fixtures
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    if v >= INF:
        return "inf"
    if v <= -INF:
        return "-inf"
    return repr(float(v))


def dump_lp(lp: LinearProgram) -> str:
    """Fixed-layout text rendering: one VAR line per column, one ROW line per row."""
    lines = [f"LP {lp.n} {lp.m}"]
    for j in range(lp.n):
        name = lp.names[j] if lp.names else f"x{j}"
        lines.append(f"VAR {j} {name} {_fmt(lp.c[j])} {_fmt(lp.lb[j])} {_fmt(lp.ub[j])}")
    for r, row in enumerate(lp.rows):
        terms = " ".join(f"{j}:{_fmt(v)}" for j, v in sorted(row.coeffs.items()))
        lines.append(f"ROW {r} {row.sense} {_fmt(row.rhs)} | {terms}".rstrip())
    return "\n".join(lines) + "\n"


def parse_lp_dump(text: str) -> LinearProgram:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    head = lines[0].split()
    if head[0] != "LP":
        raise LpError("not an LP dump")
    n, m = int(head[1]), int(head[2])
    c, lb, ub, names = np.zeros(n), np.zeros(n), np.zeros(n), [""] * n
    rows = []
    for ln in lines[1:]:
        parts = ln.split()
        if parts[0] == "VAR":
            j = int(parts[1])
            names[j] = parts[2]
            c[j], lb[j], ub[j] = (float(p) for p in parts[3:6])
        elif parts[0] == "ROW":
            left, _, right = ln.partition("|")
            lp_ = left.split()
            coeffs = {}
            for term in right.split():
                j, v = term.split(":")
                coeffs[int(j)] = float(v)
            rows.append((coeffs, lp_[2], float(lp_[3])))
    if len(rows) != m:
        raise LpError(f"dump declares {m} rows but contains {len(rows)}")
    return LinearProgram.from_rows(c, np.where(np.isinf(lb), np.sign(lb) * INF, lb),
                                   np.where(np.isinf(ub), np.sign(ub) * INF, ub), rows, names)
