"""Discrete-time linear state-space demand models.

A model advances as::

    x[k+1] = A x[k] + sum_q B[q] u_in[q][k] + sum_ex E[ex] d[ex][k]
    y[k]   = C x[k]

Identification fits an ARX regression by ridge regression and realises it in
observer-canonical (companion) form, so the state vector is built from lagged
measured outputs and inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np
from pydantic import BaseModel, ConfigDict

from .lpsolve import NotPositiveDefiniteError, cholesky_solve


class ArxInfo(BaseModel):
    """Regression coefficients behind an identified model, kept for state reconstruction."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    a: tuple[float, ...]
    b: dict[str, tuple[float, ...]] = {}
    e: dict[str, tuple[float, ...]] = {}
    lam: float = 0.0
    holdout_rmse: float = float("nan")


class StateSpaceModel(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    A: tuple[tuple[float, ...], ...]
    B: dict[str, tuple[float, ...]] = {}
    E: dict[str, tuple[float, ...]] = {}
    C: tuple[tuple[float, ...], ...]
    state_names: tuple[str, ...] = ()
    output_names: tuple[str, ...] = ()
    dt: float = 15.0
    arx: ArxInfo | None = None

    @cached_property
    def a_mat(self) -> np.ndarray:
        return np.array(self.A, dtype=float).reshape(len(self.A), -1)

    @cached_property
    def c_mat(self) -> np.ndarray:
        return np.array(self.C, dtype=float).reshape(len(self.C), -1)

    @cached_property
    def b_cols(self) -> dict[str, np.ndarray]:
        return {q: np.array(v, dtype=float) for q, v in self.B.items()}

    @cached_property
    def e_cols(self) -> dict[str, np.ndarray]:
        return {ex: np.array(v, dtype=float) for ex, v in self.E.items()}

    @property
    def n_states(self) -> int:
        return len(self.A)

    @property
    def n_outputs(self) -> int:
        return len(self.C)

    def dimension_errors(self) -> list[str]:
        n = self.n_states
        errs = []
        if any(len(row) != n for row in self.A):
            errs.append("A must be square")
        for q, col in self.B.items():
            if len(col) != n:
                errs.append(f"B[{q}] has length {len(col)}, expected {n}")
        for ex, col in self.E.items():
            if len(col) != n:
                errs.append(f"E[{ex}] has length {len(col)}, expected {n}")
        if any(len(row) != n for row in self.C):
            errs.append(f"C rows must have length {n}")
        if self.state_names and len(self.state_names) != n:
            errs.append("state_names length differs from state count")
        if self.output_names and len(self.output_names) != self.n_outputs:
            errs.append("output_names length differs from output count")
        return errs


def _disturbance_total(value) -> float | np.ndarray:
    """Sum a disturbance over its sources (last axis) when several are given."""
    arr = np.asarray(value, dtype=float)
    return arr.sum(axis=-1) if arr.ndim >= 1 else arr


def simulate_step(model: StateSpaceModel, x, u_in: Mapping[str, float], d: Mapping[str, float] | None = None):
    """One step of the model; returns ``(x_next, y)`` with ``y = C x`` at the current state."""
    x = np.asarray(x, dtype=float)
    if x.shape != (model.n_states,):
        raise ValueError(f"state has shape {x.shape}, model expects ({model.n_states},)")
    x_next = model.a_mat @ x
    for q, val in u_in.items():
        if q not in model.b_cols:
            raise ValueError(f"model has no input channel {q!r}")
        x_next = x_next + model.b_cols[q] * float(val)
    for ex, val in (d or {}).items():
        if ex not in model.e_cols:
            raise ValueError(f"model has no disturbance channel {ex!r}")
        x_next = x_next + model.e_cols[ex] * float(_disturbance_total(val))
    return x_next, model.c_mat @ x


def simulate_horizon(model: StateSpaceModel, x0, U: Mapping[str, np.ndarray], D: Mapping[str, np.ndarray] | None = None,
                     steps: int | None = None):
    """Roll the model forward; returns states ``X`` (N+1, n) and outputs ``Y`` (N, r)."""
    D = D or {}
    lengths = {len(np.asarray(v)) for v in U.values()} | {len(np.asarray(v)) for v in D.values()}
    if steps is not None:
        lengths.add(steps)
    if len(lengths) != 1:
        raise ValueError(f"input and disturbance sequences disagree in length: {sorted(lengths)}")
    N = lengths.pop()
    X = np.zeros((N + 1, model.n_states))
    Y = np.zeros((N, model.n_outputs))
    X[0] = np.asarray(x0, dtype=float)
    U_arr = {q: np.asarray(v, dtype=float) for q, v in U.items()}
    D_arr = {ex: _disturbance_total(v) if np.ndim(v) > 1 else np.asarray(v, dtype=float) for ex, v in D.items()}
    for k in range(N):
        X[k + 1], Y[k] = simulate_step(model, X[k], {q: v[k] for q, v in U_arr.items()},
                                       {ex: v[k] for ex, v in D_arr.items()})
    return X, Y


# ---------------------------------------------------------------------------
# Identification
# ---------------------------------------------------------------------------


@dataclass
class IoHistory:
    """Aligned measurement history: output ``y``, inputs ``u[q]``, disturbances ``d[ex]``."""

    y: np.ndarray
    u: dict[str, np.ndarray] = field(default_factory=dict)
    d: dict[str, np.ndarray] = field(default_factory=dict)
    dt: float = 15.0
    output_name: str = "y"

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.u = {q: np.asarray(v, dtype=float) for q, v in self.u.items()}
        self.d = {ex: np.asarray(v, dtype=float) for ex, v in self.d.items()}
        self.d = {ex: (v.sum(axis=1) if v.ndim > 1 else v) for ex, v in self.d.items()}
        T = self.y.shape[0]
        for name, v in list(self.u.items()) + list(self.d.items()):
            if v.shape[0] != T:
                raise ValueError(f"channel {name!r} has {v.shape[0]} samples, output has {T}")


def _regressors(hist: IoHistory, order: int, input_lags: int):
    """Design matrix rows for predicting y[k+1] from lags ending at k."""
    y = hist.y
    T = y.shape[0]
    start = max(order, input_lags) - 1
    ks = np.arange(start, T - 1)
    cols = [y[ks - j] for j in range(order)]
    for q in sorted(hist.u):
        cols += [hist.u[q][ks - j] for j in range(input_lags)]
    for ex in sorted(hist.d):
        cols += [hist.d[ex][ks - j] for j in range(input_lags)]
    X = np.column_stack(cols) if cols else np.zeros((ks.size, 0))
    return X, y[ks + 1]


def identify_ridge(hist: IoHistory, order: int = 2, lam: float = 1e-6, input_lags: int | None = None,
                   holdout: float = 0.2) -> StateSpaceModel:
    """Fit ``y[k+1] = sum a_j y[k-j] + sum b u + sum e d`` by ridge regression.

    The first ``1 - holdout`` of the rows (chronological, no shuffling) solve
    ``(X'X + lam I) theta = X'y``; the remaining tail gives the one-step-ahead
    RMSE stored in ``model.arx.holdout_rmse``.
    """
    if lam < 0:
        raise ValueError("lam must be non-negative")
    if order < 1:
        raise ValueError("order must be at least 1")
    input_lags = order if input_lags is None else input_lags
    if not 1 <= input_lags <= order:
        raise ValueError("input_lags must lie in [1, order]")
    X, target = _regressors(hist, order, input_lags)
    n_rows, n_par = X.shape
    n_fit = int(round(n_rows * (1.0 - holdout)))
    if n_fit <= n_par:
        raise ValueError(f"history too short: {n_fit} fitting rows for {n_par} parameters")
    Xf, yf = X[:n_fit], target[:n_fit]
    gram = Xf.T @ Xf + lam * np.eye(n_par)
    if lam == 0 and np.linalg.matrix_rank(Xf) < n_par:
        raise ValueError("regressor matrix is rank-deficient; use lam > 0")
    try:
        theta = cholesky_solve(gram, Xf.T @ yf)
    except NotPositiveDefiniteError as exc:
        raise ValueError("normal equations are singular; use lam > 0") from exc

    Xh, yh = X[n_fit:], target[n_fit:]
    rmse = float(np.sqrt(np.mean((Xh @ theta - yh) ** 2))) if yh.size else float("nan")

    a = theta[:order]
    pos = order
    b, e = {}, {}
    for q in sorted(hist.u):
        b[q] = np.concatenate([theta[pos:pos + input_lags], np.zeros(order - input_lags)])
        pos += input_lags
    for ex in sorted(hist.d):
        e[ex] = np.concatenate([theta[pos:pos + input_lags], np.zeros(order - input_lags)])
        pos += input_lags

    A = np.zeros((order, order))
    A[:, 0] = a
    A[np.arange(order - 1), np.arange(1, order)] = 1.0
    C = np.zeros((1, order))
    C[0, 0] = 1.0
    return StateSpaceModel(
        A=tuple(map(tuple, A)),
        B={q: tuple(v) for q, v in b.items()},
        E={ex: tuple(v) for ex, v in e.items()},
        C=tuple(map(tuple, C)),
        state_names=tuple(f"{hist.output_name}_s{j}" for j in range(order)),
        output_names=(hist.output_name,),
        dt=hist.dt,
        arx=ArxInfo(a=tuple(a), b={q: tuple(v) for q, v in b.items()}, e={ex: tuple(v) for ex, v in e.items()},
                    lam=lam, holdout_rmse=rmse),
    )


def arx_state(model: StateSpaceModel, y_hist, u_hist: Mapping[str, np.ndarray] | None = None,
              d_hist: Mapping[str, np.ndarray] | None = None) -> np.ndarray:
    """Reconstruct the companion-form state at the newest sample of the histories.

    ``y_hist[-1]`` is the current output; input and disturbance histories end
    at the previous sample (the current one has not been applied yet).  Needs
    ``order`` outputs and ``order - 1`` past inputs.
    """
    if model.arx is None:
        raise ValueError("model carries no ARX coefficients")
    n = model.n_states
    a = np.asarray(model.arx.a)
    y = np.asarray(y_hist, dtype=float)
    if y.shape[0] < n:
        raise ValueError(f"need {n} past outputs, got {y.shape[0]}")
    u_hist = {q: np.asarray(v, dtype=float) for q, v in (u_hist or {}).items()}
    d_hist = {ex: np.asarray(v, dtype=float) for ex, v in (d_hist or {}).items()}
    x = np.zeros(n)
    x[0] = y[-1]
    for j in range(1, n):
        total = 0.0
        for i in range(j, n):
            lag = i - j + 1  # samples back from the current one
            total += a[i] * y[-1 - lag]
            for q, coeff in model.arx.b.items():
                if coeff[i] != 0.0:
                    total += coeff[i] * u_hist[q][-lag]
            for ex, coeff in model.arx.e.items():
                if coeff[i] != 0.0:
                    total += coeff[i] * d_hist[ex][-lag]
        x[j] = total
    return x
