"""Run metrics: cost, emissions, supply mix, PV shares, limit violations, calibration statistics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping

import numpy as np


def _pair(pred, meas) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=float).ravel()
    m = np.asarray(meas, dtype=float).ravel()
    if p.size == 0:
        raise ValueError("empty series")
    if p.shape != m.shape:
        raise ValueError(f"series not aligned: {p.size} vs {m.size} samples")
    return p, m


def nmbe(pred, meas) -> float:
    """Normalised mean bias error in percent; positive when ``pred`` over-predicts."""
    p, m = _pair(pred, meas)
    mean = m.mean()
    if mean == 0:
        raise ValueError("NMBE undefined for a zero-mean reference series")
    return float(100.0 * (p - m).sum() / (p.size * mean))


def cv_rmse(pred, meas) -> float:
    """Coefficient of variation of the RMSE in percent."""
    p, m = _pair(pred, meas)
    mean = m.mean()
    if mean == 0:
        raise ValueError("CV(RMSE) undefined for a zero-mean reference series")
    return float(100.0 * np.sqrt(((p - m) ** 2).mean()) / mean)


def mae(pred, meas) -> float:
    p, m = _pair(pred, meas)
    return float(np.abs(p - m).mean())


@dataclass
class MetricsReport:
    steps: int
    hours: float
    cost: float
    co2: float
    cost_by_subsystem: dict[str, float]
    co2_by_subsystem: dict[str, float]
    resource_use: dict[str, float]  # kWh per resource
    supply_mix: dict[str, float]  # kWh of heat generated per source
    heat_generated: float
    store_charged: float
    store_discharged: float
    ev_requested: float
    ev_served: float
    pv_generated: float
    pv_used: float
    pv_utilisation: float
    pv_contribution: float
    violation: list[float] = field(default_factory=list)  # kW above the limit per step
    violation_total: float = 0.0  # kWh
    violation_steps: int = 0
    band_violation_max: float = 0.0
    band_violation_mean: float = 0.0
    forecast_mae: dict[str, float] = field(default_factory=dict)
    coordination: dict[str, int] = field(default_factory=dict)
    balance_residual: dict[str, float] = field(default_factory=dict)

    def to_dict(self, with_series: bool = False) -> dict:
        d = asdict(self)
        if not with_series:
            d.pop("violation")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def summary(self) -> str:
        lines = [
            f"steps               {self.steps} ({self.hours:g} h)",
            f"total cost          {self.cost:.4f}",
            f"total CO2 (kg)      {self.co2:.4f}",
        ]
        for sid in sorted(self.cost_by_subsystem):
            lines.append(f"  {sid:<17} cost {self.cost_by_subsystem[sid]:.4f}, CO2 {self.co2_by_subsystem[sid]:.4f}")
        if self.supply_mix:
            lines.append("heat supply mix (kWh)")
            for k in sorted(self.supply_mix):
                share = 100.0 * self.supply_mix[k] / self.heat_generated if self.heat_generated > 0 else 0.0
                lines.append(f"  {k:<17} {self.supply_mix[k]:.2f} ({share:.1f}%)")
            lines.append(f"  store in/out      {self.store_charged:.2f} / {self.store_discharged:.2f}")
        if self.pv_generated > 0 or self.ev_served > 0:
            lines.append(f"PV utilisation      {self.pv_utilisation:.2f}%")
            lines.append(f"PV contribution     {self.pv_contribution:.2f}%")
        lines.append(f"limit violation     {self.violation_total:.4f} kWh over {self.violation_steps} steps")
        if self.band_violation_max > 0:
            lines.append(f"band violation      max {self.band_violation_max:.3f}, mean {self.band_violation_mean:.4f}")
        for k in sorted(self.forecast_mae):
            lines.append(f"forecast MAE {k:<7}{self.forecast_mae[k]:.3f}")
        for k in sorted(self.coordination):
            lines.append(f"coordination {k:<7}{self.coordination[k]}")
        return "\n".join(lines) + "\n"


HEAT_SOURCES = {"heat_pump": "q_hp", "boiler": "q_boiler"}


def _col(rows: list[Mapping], name: str) -> np.ndarray:
    return np.array([float(r.get(name, 0.0) or 0.0) for r in rows])


def metrics(rows: Iterable[Mapping], *, dt: float, factors: Mapping[str, Mapping[str, str | float]],
            usage: Mapping[str, Mapping[str, str]], p_lim: np.ndarray | float | None = None,
            total_column: str = "elec_total", band: tuple[str, float, float] | None = None,
            forecast_pairs: Mapping[str, tuple[str, str]] | None = None,
            balance: Mapping[str, float] | None = None,
            heat_sources: Mapping[str, str] | None = None) -> MetricsReport:
    """Aggregate a twin trace.

    ``factors[p]`` maps ``"cost"``/``"co2"`` to a trace column or constant;
    ``usage[sid][p]`` names the trace column (kW) holding subsystem ``sid``'s
    use of resource ``p``.  ``band`` is ``(column, lo, hi)`` for comfort
    statistics; ``forecast_pairs[name] = (forecast_col, actual_col)``;
    ``heat_sources`` maps supply-mix labels to heat columns (empty: no mix).
    """
    rows = list(rows)
    if not rows:
        raise ValueError("empty trace")
    dt_h = dt / 60.0
    n = len(rows)

    def factor(p: str, kind: str) -> np.ndarray:
        src = factors.get(p, {}).get(kind, 0.0)
        return _col(rows, src) if isinstance(src, str) else np.full(n, float(src))

    cost_sub, co2_sub, use = {}, {}, {}
    for sid, res in usage.items():
        c = e = 0.0
        for p, column in res.items():
            kwh = dt_h * _col(rows, column)
            use[p] = use.get(p, 0.0) + float(kwh.sum())
            c += float((kwh * factor(p, "cost")).sum())
            e += float((kwh * factor(p, "co2")).sum())
        cost_sub[sid] = c
        co2_sub[sid] = e

    if heat_sources is None:
        heat_sources = HEAT_SOURCES
    mix = {name: float(dt_h * _col(rows, column).sum()) for name, column in heat_sources.items()}
    generated = sum(mix.values())
    store_in = float(dt_h * _col(rows, "q_charge").sum())
    store_out = float(dt_h * _col(rows, "q_discharge").sum())

    pv_gen = float(dt_h * _col(rows, "pv_avail").sum())
    pv_used = float(dt_h * _col(rows, "pv_used").sum())
    served = float(dt_h * _col(rows, "ev_served").sum())
    requested = float(dt_h * _col(rows, "ev_request").sum())

    total = _col(rows, total_column)
    if p_lim is None:
        viol = np.zeros(n)
    else:
        viol = np.maximum(0.0, total - np.broadcast_to(np.asarray(p_lim, dtype=float), (n,)))

    bmax = bmean = 0.0
    if band is not None:
        col, lo, hi = band
        y = _col(rows, col)
        dev = np.maximum(0.0, lo - y) + np.maximum(0.0, y - hi)
        bmax, bmean = float(dev.max()), float(dev.mean())

    fmae = {}
    for name, (fcol, acol) in (forecast_pairs or {}).items():
        fmae[name] = mae(_col(rows, fcol), _col(rows, acol))

    status = {}
    for r in rows:
        s = r.get("coord_status")
        if s:
            status[s] = status.get(s, 0) + 1

    return MetricsReport(
        steps=n, hours=n * dt_h, cost=sum(cost_sub.values()), co2=sum(co2_sub.values()),
        cost_by_subsystem=cost_sub, co2_by_subsystem=co2_sub, resource_use=use, supply_mix=mix,
        heat_generated=generated, store_charged=store_in, store_discharged=store_out, ev_requested=requested, ev_served=served,
        pv_generated=pv_gen, pv_used=pv_used,
        pv_utilisation=100.0 * pv_used / pv_gen if pv_gen > 0 else 0.0,
        pv_contribution=100.0 * pv_used / served if served > 0 else 0.0,
        violation=[float(v) for v in viol], violation_total=float(dt_h * viol.sum()),
        violation_steps=int((viol > 1e-9).sum()), band_violation_max=bmax, band_violation_mean=bmean,
        forecast_mae=fmae, coordination=status, balance_residual=dict(balance or {}),
    )
