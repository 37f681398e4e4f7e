"""Weight sweeps over (cost, CO2) factor weights; one closed-loop run per pair."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from pathlib import Path

from .runner import RunConfig, run_scenario


@dataclass
class FrontierPoint:
    w_cost: float
    w_co2: float
    cost: float | None
    co2: float | None
    error: str = ""


def parse_weights(text: str) -> list[tuple[float, float]]:
    """``"1,0;0.5,0.5"`` -> ``[(1.0, 0.0), (0.5, 0.5)]``."""
    out = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        bits = part.split(",")
        if len(bits) != 2:
            raise ValueError(f"weight pair {part!r} must be 'w_cost,w_co2'")
        out.append((float(bits[0]), float(bits[1])))
    if not out:
        raise ValueError("no weight pairs given")
    return out


def pareto_sweep(cfg: RunConfig, weights: list[tuple[float, float]]) -> list[FrontierPoint]:
    """Run ``cfg`` once per weight pair; failures are recorded and the sweep continues.

    The table comes back sorted by the CO2 weight (ties keep input order).
    """
    if not weights:
        raise ValueError("pareto_sweep needs at least one weight pair")
    points = []
    for k, (wc, we) in enumerate(weights):
        out = None if cfg.out is None else Path(cfg.out) / f"w{k}_{wc:g}_{we:g}"
        try:
            res = run_scenario(replace(cfg, weights=(wc, we), out=out))
            points.append(FrontierPoint(wc, we, res.report.cost, res.report.co2))
        except Exception as exc:  # noqa: BLE001 - one bad point must not stop the sweep
            points.append(FrontierPoint(wc, we, None, None, f"{type(exc).__name__}: {exc}"))
    return sorted(points, key=lambda p: p.w_co2)


def frontier_csv(points: list[FrontierPoint], path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["w_cost", "w_co2", "cost", "co2", "error"])
    for p in points:
        w.writerow([f"{p.w_cost:g}", f"{p.w_co2:g}", "" if p.cost is None else f"{p.cost:.10g}",
                    "" if p.co2 is None else f"{p.co2:.10g}", p.error])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text
