"""Domain data model, scenario configuration and validation.

Units are fixed across the package: power kW, energy kWh, temperature degC,
money GBP, emissions kg CO2.  The sample interval ``dt`` (minutes) converts
between kW and kWh.  Objective weights are dimensionless and pre-normalised
to [0, 1].

Series-valued fields accept either a scalar (held constant over the horizon)
or a sequence of exactly ``N`` values.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .ssm import StateSpaceModel

SCHEMA_VERSION = 1
ETA_CAP = 10.0
PHI_TOL = 1e-9
INF = 1e30

Series = Union[float, tuple[float, ...]]


class ScenarioError(ValueError):
    """Scenario file could not be parsed, failed the schema, or failed validation."""


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


def series_array(value: Series, n: int, name: str = "series") -> np.ndarray:
    """Broadcast a scalar or length-``n`` sequence to a float array of length ``n``."""
    if isinstance(value, (int, float)):
        return np.full(n, float(value))
    arr = np.asarray(value, dtype=float)
    if arr.shape != (n,):
        raise ValueError(f"{name}: expected scalar or {n} values, got shape {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# Subsystem model
# ---------------------------------------------------------------------------


class TimeGrid(_Frozen):
    start: datetime = datetime(2018, 11, 1, tzinfo=timezone.utc)
    dt: float = 15.0
    N: int = 96

    @field_validator("start")
    @classmethod
    def _utc(cls, v: datetime) -> datetime:
        if v.tzinfo is None:
            return v.replace(tzinfo=timezone.utc)
        return v.astimezone(timezone.utc)

    @property
    def dt_h(self) -> float:
        return self.dt / 60.0

    @property
    def duration_min(self) -> float:
        return self.N * self.dt


class SupplyTech(_Frozen):
    id: str
    eta: dict[str, dict[str, Series]]
    tech_min: dict[str, dict[str, Series]] = {}
    tech_max: dict[str, dict[str, Series]] = {}
    store_connected: bool = False
    eta_cap: float = ETA_CAP

    def pairs(self) -> list[tuple[str, str]]:
        return [(p, q) for p in self.eta for q in self.eta[p]]

    def outputs(self) -> list[str]:
        return sorted({q for _, q in self.pairs()})


class StorageTech(_Frozen):
    """A store of one energy type.  ``soc_max <= 0`` marks a delay store (negative capacity)."""

    id: str
    energy: str
    eta_stl: float = 1.0
    eta_stv: float = 1.0
    eta_stu: float = 1.0
    soc_init: float = 0.0
    soc_min: float = 0.0
    soc_max: float
    u_min: float = 0.0
    u_max: float
    v_min: float = 0.0
    v_max: float
    beta: Series = 0.0
    terminal: bool = False

    @property
    def penalty_sign(self) -> float:
        # A delay store sits below zero; penalise the size of the backlog, not the level.
        return -1.0 if self.soc_max <= 0.0 and self.soc_min < 0.0 else 1.0


class StateSpaceDemand(_Frozen):
    kind: Literal["state_space"] = "state_space"
    id: str
    model: StateSpaceModel
    x_init: tuple[float, ...]
    sp_lo: tuple[Series, ...]
    sp_up: tuple[Series, ...]
    one_sided: tuple[Literal["both", "lower", "upper"], ...] = ()
    gamma: float = 1.0
    eps_max: float | None = None

    def side(self, o: int) -> str:
        return self.one_sided[o] if self.one_sided else "both"


class TimeSeriesDemand(_Frozen):
    kind: Literal["time_series"] = "time_series"
    id: str
    dem: dict[str, Series]


DemandSpec = Annotated[Union[StateSpaceDemand, TimeSeriesDemand], Field(discriminator="kind")]


class ResourceLimits(_Frozen):
    p_min: dict[str, Series] = {}
    p_max: dict[str, Series] = {}
    alpha: dict[str, dict[str, Series]] = {}


class SubsystemSpec(_Frozen):
    id: str
    grid: TimeGrid = TimeGrid()
    supplies: tuple[SupplyTech, ...] = ()
    stores: tuple[StorageTech, ...] = ()
    demands: tuple[DemandSpec, ...] = ()
    limits: ResourceLimits = ResourceLimits()
    phi_nrg: float = 1.0
    phi_pen: float = 0.0
    phi_slack: float = 0.0
    pwl_segments: int = 8
    # Per-factor weights the harness uses to turn raw signals into alpha series.
    factor_weights: dict[str, float] = {}

    def resources(self) -> list[str]:
        return sorted({p for s in self.supplies for p, _ in s.pairs()})

    def energy_types(self) -> list[str]:
        qs = {q for s in self.supplies for _, q in s.pairs()} | {st.energy for st in self.stores}
        for d in self.demands:
            if isinstance(d, TimeSeriesDemand):
                qs |= set(d.dem)
            else:
                qs |= set(d.model.B)
        return sorted(qs)


# ---------------------------------------------------------------------------
# Twin, signal and forecast configuration
# ---------------------------------------------------------------------------


class NetworkConfig(_Frozen):
    C_net: float = 20.0
    UA_net: float = 0.4
    T_net0: float = 55.0


class StoreConfig(_Frozen):
    C_sto: float = 30.0
    UA_sto: float = 0.05
    T_sto0: float = 40.0
    T_max: float = 60.0
    T_min: float = 20.0
    T_ref: float = 15.0
    eta_charge: float = 0.98
    eta_discharge: float = 0.98
    charge_max: float = 300.0
    discharge_max: float = 300.0


class BoilerConfig(_Frozen):
    eta: float = 0.9
    cap: float = 500.0


class HeatPumpConfig(_Frozen):
    carnot_fraction: float = 0.45
    cap: float = 200.0
    sink_temp: float = 55.0
    source_offset: float = 5.0


class BuildingConfig(_Frozen):
    R_ia: float = 0.01
    R_ae: float = 0.03
    C_i: float = 200.0
    C_e: float = 2000.0
    T_in0: float = 20.0
    T_env0: float = 14.0
    q_max: float = 600.0
    setpoint_day: float = 21.0
    setpoint_night: float = 17.0
    day_start_h: float = 6.0
    day_end_h: float = 22.0
    solar_gain: float = 0.05  # kW per W/m2 of global irradiance


class HeatTwinConfig(_Frozen):
    subsystem: str = "heat"
    network: NetworkConfig = NetworkConfig()
    store: StoreConfig = StoreConfig()
    boiler: BoilerConfig = BoilerConfig()
    heat_pump: HeatPumpConfig = HeatPumpConfig()
    building: BuildingConfig = BuildingConfig()
    hp_id: str = "hp"
    boiler_id: str = "boiler"
    store_id: str = "tes"
    network_id: str = "net"


class PvConfig(_Frozen):
    capacity: float = 270.0
    efficiency: float = 0.18
    tilt: float = 30.0
    azimuth: float = 180.0
    latitude: float = 51.48
    longitude: float = 0.0

    @property
    def area(self) -> float:
        # Area giving rated output at 1 kW/m2.
        return self.capacity / self.efficiency


class FleetConfig(_Frozen):
    n_vehicles: int = 300
    profile: str | None = None
    sigma: float = 0.1
    delayable_fraction: float = 0.5
    seed: int = 7


class EvTwinConfig(_Frozen):
    subsystem: str = "ev"
    pv: PvConfig = PvConfig()
    fleet: FleetConfig = FleetConfig()
    delay_enabled: bool = True
    grid_id: str = "grid"
    pv_id: str = "pv"
    delay_id: str = "delay"
    demand_id: str = "ev"


class TwinConfig(_Frozen):
    heat: HeatTwinConfig | None = None
    ev: EvTwinConfig | None = None
    warmup_days: int = 21
    excitation: float = 0.3
    seed: int = 1


class ForecastConfig(_Frozen):
    mode: Literal["ml", "perfect"] = "ml"
    k: int = 4
    n_trees: int = 25
    max_depth: int = 4
    min_leaf: int = 2
    feature_fraction: float = 0.7
    mlp_hidden: tuple[int, ...] = (8,)
    mlp_epochs: int = 150
    mlp_lr: float = 0.01
    mlp_batch: int = 32
    identify: bool = True
    model_order: int = 2
    ridge_lambda: float = 1e-6
    seed: int = 0


class SignalsConfig(_Frozen):
    path: str = "signals.csv"
    resources: dict[str, dict[str, Union[str, float]]] = {}
    scales: dict[str, float] = {}


class DistrictSpec(_Frozen):
    schema_version: int = SCHEMA_VERSION
    name: str = ""
    grid: TimeGrid = TimeGrid()
    subsystems: tuple[SubsystemSpec, ...]
    p_lim: dict[str, Series] = {}
    signals: SignalsConfig = SignalsConfig()
    twin: TwinConfig = TwinConfig()
    forecast: ForecastConfig = ForecastConfig()
    holidays: tuple[date, ...] = ()

    def subsystem(self, sid: str) -> SubsystemSpec:
        for s in self.subsystems:
            if s.id == sid:
                return s
        raise KeyError(sid)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    field: str
    rule: str

    def __str__(self) -> str:
        return f"{self.field}: {self.rule}"


def _series_ok(value: Series, n: int) -> bool:
    return isinstance(value, (int, float)) or len(value) == n


def _arr(value: Series, n: int) -> np.ndarray:
    return np.full(n, float(value)) if isinstance(value, (int, float)) else np.asarray(value, dtype=float)


def _check_series(out: list, name: str, value: Series, n: int, lo=None, hi=None, rule=""):
    if not _series_ok(value, n):
        out.append(Violation(name, f"series length must be 1 or N={n}"))
        return
    arr = _arr(value, n)
    if not np.all(np.isfinite(arr) | (np.abs(arr) >= INF)):
        out.append(Violation(name, "values must be finite"))
    if lo is not None and np.any(arr < lo):
        out.append(Violation(name, rule or f"values must be >= {lo}"))
    if hi is not None and np.any(arr > hi):
        out.append(Violation(name, rule or f"values must be <= {hi}"))


def validate_grid(grid: TimeGrid, where: str = "grid") -> list[Violation]:
    out = []
    if not grid.dt > 0:
        out.append(Violation(f"{where}.dt", "dt must be > 0"))
    if grid.N < 1:
        out.append(Violation(f"{where}.N", "N must be >= 1"))
    return out


def validate_spec(spec: SubsystemSpec) -> list[Violation]:
    """Return every broken invariant of a subsystem; empty when it is well-formed."""
    out = validate_grid(spec.grid, f"{spec.id}.grid")
    n = max(spec.grid.N, 1)
    ids = [s.id for s in spec.supplies] + [s.id for s in spec.stores] + [d.id for d in spec.demands]
    for dup in sorted({i for i in ids if ids.count(i) > 1}):
        out.append(Violation(f"{spec.id}.{dup}", "ids must be unique within a subsystem"))

    for s in spec.supplies:
        base = f"{spec.id}.supplies[{s.id}]"
        if not s.eta:
            out.append(Violation(f"{base}.eta", "a supply needs at least one (resource, energy) pair"))
        for p, q in s.pairs():
            _check_series(out, f"{base}.eta[{p}][{q}]", s.eta[p][q], n, 0.0, s.eta_cap,
                          f"0 <= eta <= {s.eta_cap}")
        for table, label in ((s.tech_min, "tech_min"), (s.tech_max, "tech_max")):
            for p, row in table.items():
                for q, val in row.items():
                    if (p, q) not in s.pairs():
                        out.append(Violation(f"{base}.{label}[{p}][{q}]", "bound given for a pair without eta"))
                    else:
                        _check_series(out, f"{base}.{label}[{p}][{q}]", val, n)
        for p, q in s.pairs():
            lo = s.tech_min.get(p, {}).get(q, 0.0)
            hi = s.tech_max.get(p, {}).get(q, INF)
            if _series_ok(lo, n) and _series_ok(hi, n) and np.any(_arr(lo, n) > _arr(hi, n)):
                out.append(Violation(f"{base}.tech_min[{p}][{q}]", "tech_min <= tech_max elementwise"))

    for st in spec.stores:
        base = f"{spec.id}.stores[{st.id}]"
        if not 0 < st.eta_stl <= 1:
            out.append(Violation(f"{base}.eta_stl", "0 < eta_stl <= 1"))
        for nm in ("eta_stv", "eta_stu"):
            if not 0 < getattr(st, nm) <= 1:
                out.append(Violation(f"{base}.{nm}", f"0 < {nm} <= 1"))
        if not st.soc_min <= st.soc_init <= st.soc_max:
            out.append(Violation(f"{base}.soc_init", "soc_min <= soc_init <= soc_max"))
        if st.u_min > st.u_max:
            out.append(Violation(f"{base}.u_min", "u_min <= u_max"))
        if st.v_min > st.v_max:
            out.append(Violation(f"{base}.v_min", "v_min <= v_max"))
        _check_series(out, f"{base}.beta", st.beta, n, 0.0, 1.0, "beta in [0, 1]")

    for d in spec.demands:
        base = f"{spec.id}.demands[{d.id}]"
        if isinstance(d, TimeSeriesDemand):
            for q, val in d.dem.items():
                _check_series(out, f"{base}.dem[{q}]", val, n, 0.0, None, "time-series demand must be >= 0")
            continue
        m = d.model
        for e in m.dimension_errors():
            out.append(Violation(f"{base}.model", e))
        if len(d.x_init) != m.n_states:
            out.append(Violation(f"{base}.x_init", f"length must equal state count {m.n_states}"))
        r = m.n_outputs
        if len(d.sp_lo) != r or len(d.sp_up) != r:
            out.append(Violation(f"{base}.sp_lo", f"one set-point series per output ({r})"))
        else:
            for o in range(r):
                _check_series(out, f"{base}.sp_lo[{o}]", d.sp_lo[o], n)
                _check_series(out, f"{base}.sp_up[{o}]", d.sp_up[o], n)
                if _series_ok(d.sp_lo[o], n) and _series_ok(d.sp_up[o], n):
                    if np.any(_arr(d.sp_lo[o], n) > _arr(d.sp_up[o], n)):
                        out.append(Violation(f"{base}.sp_lo[{o}]", "sp_lo <= sp_up elementwise"))
        if d.one_sided and len(d.one_sided) != r:
            out.append(Violation(f"{base}.one_sided", f"one flag per output ({r})"))
        if not 0 <= d.gamma <= 1:
            out.append(Violation(f"{base}.gamma", "gamma in [0, 1]"))
        if d.eps_max is not None and not (d.eps_max > 0 and math.isfinite(d.eps_max)):
            out.append(Violation(f"{base}.eps_max", "eps_max must be finite and > 0"))

    lim = spec.limits
    for p, val in lim.p_min.items():
        _check_series(out, f"{spec.id}.limits.p_min[{p}]", val, n)
    for p, val in lim.p_max.items():
        _check_series(out, f"{spec.id}.limits.p_max[{p}]", val, n)
    for p in set(lim.p_min) & set(lim.p_max):
        lo, hi = lim.p_min[p], lim.p_max[p]
        if _series_ok(lo, n) and _series_ok(hi, n) and np.any(_arr(lo, n) > _arr(hi, n)):
            out.append(Violation(f"{spec.id}.limits.p_min[{p}]", "p_min <= p_max elementwise"))
    for w, row in lim.alpha.items():
        for p, val in row.items():
            _check_series(out, f"{spec.id}.limits.alpha[{w}][{p}]", val, n, 0.0, 1.0, "alpha in [0, 1]")

    for w, val in spec.factor_weights.items():
        if not (math.isfinite(val) and val >= 0):
            out.append(Violation(f"{spec.id}.factor_weights[{w}]", "factor weights must be finite and >= 0"))

    phis = (spec.phi_nrg, spec.phi_pen, spec.phi_slack)
    for nm, v in zip(("phi_nrg", "phi_pen", "phi_slack"), phis):
        if not 0 <= v <= 1:
            out.append(Violation(f"{spec.id}.{nm}", f"{nm} in [0, 1]"))
    if abs(sum(phis) - 1.0) > PHI_TOL:
        out.append(Violation(f"{spec.id}.phi", f"phi_nrg + phi_pen + phi_slack = 1 (got {sum(phis):.12g})"))
    if spec.pwl_segments < 2:
        out.append(Violation(f"{spec.id}.pwl_segments", "at least 2 segments"))
    return out


def validate_district(district: DistrictSpec) -> list[Violation]:
    out = validate_grid(district.grid)
    if not district.subsystems:
        out.append(Violation("subsystems", "at least one subsystem"))
    ids = [s.id for s in district.subsystems]
    for dup in sorted({i for i in ids if ids.count(i) > 1}):
        out.append(Violation(f"subsystems[{dup}]", "subsystem ids must be unique"))
    for s in district.subsystems:
        out.extend(validate_spec(s))
    n = max(district.grid.N, 1)
    for p, val in district.p_lim.items():
        _check_series(out, f"p_lim[{p}]", val, n, 0.0, None, "p_lim must be >= 0")
    return out


# ---------------------------------------------------------------------------
# Scenario IO
# ---------------------------------------------------------------------------


def _locus(loc: tuple) -> str:
    return ".".join(str(part) for part in loc) or "<root>"


def district_from_dict(data: dict, source: str = "<scenario>") -> DistrictSpec:
    if not isinstance(data, dict):
        raise ScenarioError(f"{source}: top level must be an object")
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"{source}: schema_version {version!r} is not supported (expected {SCHEMA_VERSION})")
    grid = data.get("grid", {})
    subs = data.get("subsystems")
    if isinstance(subs, list):
        data = dict(data)
        data["subsystems"] = [dict(s, grid=s.get("grid", grid)) if isinstance(s, dict) else s for s in subs]
    try:
        district = DistrictSpec.model_validate(data)
    except ValidationError as exc:
        msgs = [f"{_locus(e['loc'])}: {e['msg']}" for e in exc.errors()]
        raise ScenarioError(f"{source}: schema error\n  " + "\n  ".join(msgs)) from None
    found = validate_district(district)
    if found:
        raise ScenarioError(f"{source}: validation failed\n  " + "\n  ".join(map(str, found)))
    return district


def load_scenario(path) -> DistrictSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return district_from_dict(data, str(path))


def district_to_dict(district: DistrictSpec) -> dict:
    data = district.model_dump(mode="json")
    top = data["grid"]
    for sub in data["subsystems"]:
        if sub["grid"] == top:
            del sub["grid"]
    return data


def dumps_scenario(district: DistrictSpec) -> str:
    return json.dumps(district_to_dict(district), indent=2) + "\n"


def save_scenario(district: DistrictSpec, path) -> None:
    Path(path).write_text(dumps_scenario(district))


# ---------------------------------------------------------------------------
# Nomenclature audit
# ---------------------------------------------------------------------------

# Each symbol of the formulation maps to exactly one home in the code base.
NOMENCLATURE: dict[str, str] = {
    "P": "core.SubsystemSpec.resources",
    "S": "core.SubsystemSpec.supplies",
    "Q": "core.SubsystemSpec.energy_types",
    "St": "core.SubsystemSpec.stores",
    "M": "core.StateSpaceDemand",
    "D": "core.SubsystemSpec.demands",
    "W": "core.ResourceLimits.alpha",
    "Ex": "ssm.StateSpaceModel.E",
    "Ext": "mpc.Forecasts.disturbance",
    "u_sup": "mpc.OptimalPlan.u_sup",
    "v_sup": "mpc.OptimalPlan.v_sup",
    "eta": "core.SupplyTech.eta",
    "tech_max": "core.SupplyTech.tech_max",
    "tech_min": "core.SupplyTech.tech_min",
    "Pmax": "core.ResourceLimits.p_max",
    "Pmin": "core.ResourceLimits.p_min",
    "SoC": "mpc.OptimalPlan.soc",
    "SoC_init": "core.StorageTech.soc_init",
    "SoC_max": "core.StorageTech.soc_max",
    "SoC_min": "core.StorageTech.soc_min",
    "v_sto": "mpc.OptimalPlan.v_sto",
    "u_sto": "mpc.OptimalPlan.u_sto",
    "u_sto_MIN": "core.StorageTech.u_min",
    "u_sto_MAX": "core.StorageTech.u_max",
    "v_sto_MIN": "core.StorageTech.v_min",
    "v_sto_MAX": "core.StorageTech.v_max",
    "eta_stl": "core.StorageTech.eta_stl",
    "eta_stv": "core.StorageTech.eta_stv",
    "eta_stu": "core.StorageTech.eta_stu",
    "S_st": "core.SupplyTech.store_connected",
    "u_in": "mpc.OptimalPlan.u_in",
    "x": "mpc.OptimalPlan.x",
    "y": "mpc.OptimalPlan.y",
    "x_init": "core.StateSpaceDemand.x_init",
    "A": "ssm.StateSpaceModel.A",
    "B": "ssm.StateSpaceModel.B",
    "C": "ssm.StateSpaceModel.C",
    "E": "ssm.StateSpaceModel.E",
    "d": "mpc.Forecasts.disturbance",
    "epsilon": "mpc.OptimalPlan.eps",
    "sp_up": "core.StateSpaceDemand.sp_up",
    "sp_lo": "core.StateSpaceDemand.sp_lo",
    "dem": "core.TimeSeriesDemand.dem",
    "J_nrg": "mpc.OptimalPlan.j_nrg",
    "J_pen": "mpc.OptimalPlan.j_pen",
    "J_slack": "mpc.OptimalPlan.j_slack",
    "alpha": "core.ResourceLimits.alpha",
    "beta": "core.StorageTech.beta",
    "gamma": "core.StateSpaceDemand.gamma",
    "phi": "core.SubsystemSpec.phi_nrg",
    "J": "mpc.OptimalPlan.objective",
    "Psub": "mpc.OptimalPlan.psub",
    "Ptot": "coordinator.CoordinationResult.ptot",
    "Pex": "coordinator.CoordinationResult.pex",
    "Plim": "core.DistrictSpec.p_lim",
    "L": "core.DistrictSpec.subsystems",
    "N": "core.TimeGrid.N",
}


def nomenclature_audit() -> list[tuple[str, str, bool]]:
    """Resolve every mapped symbol; returns ``(symbol, target, found)`` rows."""
    import dataclasses
    import importlib

    rows = []
    for sym, target in NOMENCLATURE.items():
        mod_name, cls_name, *attr = target.split(".")
        mod = importlib.import_module(f"districtems.{mod_name}")
        cls = getattr(mod, cls_name, None)
        ok = cls is not None
        if ok and attr:
            name = attr[0]
            fields = set(getattr(cls, "model_fields", {}) or {})
            if dataclasses.is_dataclass(cls):
                fields |= {f.name for f in dataclasses.fields(cls)}
            ok = name in fields or hasattr(cls, name)
        rows.append((sym, target, ok))
    return rows
