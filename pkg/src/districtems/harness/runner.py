"""Receding-horizon co-simulation: warm-up, training, the per-sample control loop and trace output."""

from __future__ import annotations

import csv
import hashlib
import io
import time
from dataclasses import dataclass, field
from datetime import date, datetime, time as dtime, timedelta, timezone
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from ..coordinator import coordinate, trace_to_csv
from ..core import (
    DistrictSpec,
    ScenarioError,
    StateSpaceDemand,
    SubsystemSpec,
    TimeGrid,
    load_scenario,
    series_array,
    validate_district,
)
from ..forecast import (
    MlpConfig,
    RandomForestConfig,
    chunk_daily,
    day_features,
    fit_profile_forecaster,
    mlp_fit,
    mlp_predict,
)
from ..mpc import Forecasts, apply_first_step, solve_subproblem
from ..ssm import IoHistory, arx_state, identify_ridge
from ..twin import (
    LEDGER_COLUMNS,
    DigitalTwin,
    ExogenousSignals,
    Plant,
    energy_balance_check,
    fmt_ts,
    pv_power,
    read_signals_csv,
    step_twin,
)
from .link import LinkClient, LinkError
from .metrics import MetricsReport, metrics

EXTRA_COLUMNS = ("fc_heat_draw", "fc_ev_request", "fc_pv", "p_lim", "violation", "coord_status", "coord_rounds",
                 "objective")


class RunError(RuntimeError):
    """A module error raised inside the loop, stamped with the failing sample."""

    def __init__(self, step: int, t, cause: BaseException):
        super().__init__(f"step {step} ({fmt_ts(t)}): {type(cause).__name__}: {cause}")
        self.step = step
        self.t = t
        self.cause = cause


@dataclass
class RunConfig:
    scenario: str | Path | DistrictSpec
    days: float = 14.0
    coordinate: bool = True
    p_lim: float | None = None  # replaces every limit in the scenario
    weights: tuple[float, float] | None = None  # (cost, co2) factor weights for all subsystems
    seed: int | None = None
    out: str | Path | None = None
    forecast_mode: str | None = None
    delay_enabled: bool | None = None
    method: str = "auto"
    signals: ExogenousSignals | None = None
    base_dir: str | Path | None = None  # resolves a relative signals path for in-memory scenarios
    link: str | None = None  # "host:port" of a remote engine; None runs the engine in-process
    link_timeout: float = 10.0


@dataclass
class RunResult:
    report: MetricsReport
    rows: list[dict]
    coord_rows: list[str]
    warmup_rows: list[dict]
    district: DistrictSpec
    runtime_s: float
    paths: dict[str, Path] = field(default_factory=dict)

    def trace_csv(self) -> str:
        return rows_to_csv(self.rows)


# ---------------------------------------------------------------------------
# Scenario preparation
# ---------------------------------------------------------------------------


def _apply_overrides(district: DistrictSpec, cfg: RunConfig) -> DistrictSpec:
    upd: dict = {}
    twin = district.twin
    if cfg.seed is not None:
        tw = {"seed": cfg.seed}
        if twin.ev is not None:
            tw["ev"] = twin.ev.model_copy(update={"fleet": twin.ev.fleet.model_copy(update={"seed": cfg.seed})})
        twin = twin.model_copy(update=tw)
        upd["forecast"] = district.forecast.model_copy(update={"seed": cfg.seed})
    if cfg.delay_enabled is not None and twin.ev is not None:
        twin = twin.model_copy(update={"ev": twin.ev.model_copy(update={"delay_enabled": cfg.delay_enabled})})
    upd["twin"] = twin
    if cfg.forecast_mode is not None:
        upd["forecast"] = upd.get("forecast", district.forecast).model_copy(update={"mode": cfg.forecast_mode})
    if cfg.p_lim is not None:
        upd["p_lim"] = {p: float(cfg.p_lim) for p in (district.p_lim or {"elec": 0})}
    if cfg.weights is not None:
        fw = {"cost": float(cfg.weights[0]), "co2": float(cfg.weights[1])}
        upd["subsystems"] = tuple(s.model_copy(update={"factor_weights": fw}) for s in district.subsystems)
    return district.model_copy(update=upd)


def _load(cfg: RunConfig) -> tuple[DistrictSpec, ExogenousSignals]:
    if isinstance(cfg.scenario, DistrictSpec):
        district = cfg.scenario
        base = Path(cfg.base_dir) if cfg.base_dir else Path.cwd()
    else:
        district = load_scenario(cfg.scenario)
        base = Path(cfg.scenario).parent
    district = _apply_overrides(district, cfg)
    found = validate_district(district)
    if found:
        raise ScenarioError("run overrides broke the scenario\n  " + "\n  ".join(map(str, found)))
    if cfg.signals is not None:
        sig = cfg.signals
    else:
        path = Path(district.signals.path)
        sig = read_signals_csv(path if path.is_absolute() else base / path, district.grid.dt)
    return district, sig


def _baseline_setpoints(plant: Plant, meas: Mapping[str, float], prbs: float) -> dict[str, float]:
    """Warm-up controller: hold the network near 55 C, perturbed by a binary excitation signal."""
    sp: dict[str, float] = {}
    heat = plant.config.heat
    if heat is not None:
        nc = heat.network
        need = meas["heat_draw"] + nc.UA_net * (meas["T_net"] - meas["t_amb"]) \
            + 0.5 * nc.C_net * (55.0 - meas["T_net"]) / plant.dt_h
        need = max(0.0, need * (1.0 + plant.config.excitation * prbs))
        hp = min(need, heat.heat_pump.cap)
        sp[f"u_sup[{heat.hp_id},heat]"] = hp
        sp[f"u_sup[{heat.boiler_id},heat]"] = min(need - hp, heat.boiler.cap)
    return sp


def warm_up(plant: Plant, days: int, seed: int) -> tuple[list[dict], object]:
    """Run the baseline controller over ``days`` before the scenario start; returns ledger rows and end state."""
    start = plant.signals.start
    twin = DigitalTwin(plant, plant.initial_state(start))
    rng = np.random.default_rng(seed)
    level, hold = 1.0, 0
    for _ in range(int(days * plant.per_day)):
        if hold <= 0:
            level = -level if rng.random() < 0.5 else level
            hold = int(rng.integers(2, 9))
        hold -= 1
        twin.step(_baseline_setpoints(plant, twin.measure(), level))
    return twin.trace, twin.state


def _u_in(row: Mapping[str, float]) -> float:
    return row["q_hp"] + row["q_boiler"] - row["q_charge"] + row["q_discharge"]


# ---------------------------------------------------------------------------
# Controller
# ---------------------------------------------------------------------------


def _single_input(spec: SubsystemSpec, sid: str) -> tuple[str, str]:
    s = next((x for x in spec.supplies if x.id == sid), None)
    if s is None:
        raise ScenarioError(f"subsystem {spec.id!r} has no supply {sid!r}")
    pairs = s.pairs()
    if len(pairs) != 1:
        raise ScenarioError(f"supply {sid!r} must map one resource to one energy type")
    return pairs[0]


class DistrictController:
    """Energy-management engine: turns measurements into set-points once per sample."""

    def __init__(self, district: DistrictSpec, signals: ExogenousSignals, plant: Plant, history: list[dict],
                 *, coordinate: bool = True, method: str = "auto", truth: dict[str, np.ndarray] | None = None):
        self.district = district
        self.signals = signals
        self.plant = plant
        self.coordinate = coordinate
        self.method = method
        self.truth = truth or {}
        self.fcfg = district.forecast
        self.N = district.grid.N
        self.dt = district.grid.dt
        self.specs = {s.id: s for s in district.subsystems}
        self.heat = plant.config.heat
        self.ev = plant.config.ev
        if self.heat is not None and self.heat.subsystem not in self.specs:
            raise ScenarioError(f"twin heat subsystem {self.heat.subsystem!r} is not in the scenario")
        if self.ev is not None and self.ev.subsystem not in self.specs:
            raise ScenarioError(f"twin EV subsystem {self.ev.subsystem!r} is not in the scenario")
        self._scales = self._factor_scales()
        self.model_info: dict[str, float] = {}
        self._y: list[float] = []
        self._u: list[float] = []
        self._d: dict[str, list[float]] = {"load": [], "amb": []}
        if self.heat is not None:
            self._init_heat(history)
        self._day_fc: dict[tuple[str, date], np.ndarray] = {}
        self._forecasters: dict[str, object] = {}
        self._pv_fc: np.ndarray | None = None
        if self.fcfg.mode == "ml":
            self._train(history)
        self._last: tuple | None = None

    # -- setup ---------------------------------------------------------------
    def _factor_scales(self) -> dict[str, float]:
        sc = dict(self.district.signals.scales)
        for p, facs in self.district.signals.resources.items():
            for w, src in facs.items():
                raw = self.signals.column(src) if isinstance(src, str) else np.array([float(src)])
                top = float(np.max(np.abs(raw))) if raw.size else 0.0
                if w not in self.district.signals.scales:
                    sc[w] = max(sc.get(w, 0.0), top)
        return {w: (v if v > 0 else 1.0) for w, v in sc.items()}

    def _init_heat(self, history: list[dict]) -> None:
        spec = self.specs[self.heat.subsystem]
        dem = next((d for d in spec.demands if isinstance(d, StateSpaceDemand) and d.id == self.heat.network_id),
                   None)
        if dem is None:
            raise ScenarioError(f"subsystem {spec.id!r} needs a state-space demand {self.heat.network_id!r}")
        self._y = [r["T_net"] for r in history]
        self._u = [_u_in(r) for r in history]
        self._d = {"load": [r["q_draw"] for r in history], "amb": [r["t_amb"] for r in history]}
        if self.fcfg.identify:
            if not history:
                raise ScenarioError("identification needs a warm-up history (twin.warmup_days > 0)")
            hist = IoHistory(np.array(self._y), {"heat": np.array(self._u)},
                             {"load": np.array(self._d["load"]), "amb": np.array(self._d["amb"])},
                             dt=self.dt, output_name=dem.model.output_names[0])
            model = identify_ridge(hist, self.fcfg.model_order, self.fcfg.ridge_lambda)
            self.model_info = {"holdout_rmse": model.arx.holdout_rmse}
            x0 = tuple(float(v) for v in np.full(model.n_states, history[-1]["T_net"]))
            dem2 = dem.model_copy(update={"model": model, "x_init": x0})
            demands = tuple(dem2 if d.id == dem.id else d for d in spec.demands)
            self.specs[spec.id] = spec.model_copy(update={"demands": demands})
        self._hp = _single_input(self.specs[spec.id], self.heat.hp_id)
        self._boiler = _single_input(self.specs[spec.id], self.heat.boiler_id)

    def _train(self, history: list[dict]) -> None:
        if not history:
            raise ScenarioError("ml forecasts need a warm-up history (twin.warmup_days > 0)")
        grid0 = TimeGrid(start=self.plant.signals.start, dt=self.dt, N=self.N)
        t_amb = [r["t_amb"] for r in history]
        rf = RandomForestConfig(self.fcfg.n_trees, self.fcfg.max_depth, self.fcfg.min_leaf,
                                self.fcfg.feature_fraction, seed=self.fcfg.seed)
        channels = []
        if self.heat is not None:
            channels.append(("heat_draw", "q_draw"))
        if self.ev is not None:
            channels.append(("ev_request", "ev_request"))
        for name, col in channels:
            data = chunk_daily([r[col] for r in history], grid0, t_amb, self.district.holidays)
            self._forecasters[name] = fit_profile_forecaster(data, self.fcfg.k, self.fcfg.seed, rf_cfg=rf)
        if self.ev is not None:
            X = self._pv_features(np.arange(len(history)))
            y = np.array([r["pv_avail"] for r in history])
            cfg = MlpConfig(hidden=self.fcfg.mlp_hidden, lr=self.fcfg.mlp_lr, epochs=self.fcfg.mlp_epochs,
                            batch_size=self.fcfg.mlp_batch, seed=self.fcfg.seed)
            mlp = mlp_fit(X, y, cfg)
            allX = self._pv_features(np.arange(len(self.signals)))
            pred = np.clip(mlp_predict(mlp, allX), 0.0, self.ev.pv.capacity)
            dark = (self.signals.dir_irr + self.signals.dif_irr) <= 0
            pred[dark] = 0.0
            self._pv_fc = pred
            self.model_info["pv_mlp_loss"] = mlp.loss_history[-1]

    def _pv_features(self, idx: np.ndarray) -> np.ndarray:
        s = self.signals
        hours = np.array([(s.time(int(k)).hour + s.time(int(k)).minute / 60.0) for k in idx])
        ang = 2 * np.pi * hours / 24.0
        return np.column_stack([s.dir_irr[idx] / 1000.0, s.dif_irr[idx] / 1000.0, np.sin(ang), np.cos(ang)])

    # -- forecasts -----------------------------------------------------------
    def _day_profile(self, name: str, d: date) -> np.ndarray:
        key = (name, d)
        if key not in self._day_fc:
            per_day = self.plant.per_day
            k0 = self.signals.index(datetime.combine(d, dtime(0), tzinfo=timezone.utc))
            temp = float(self.signals.t_amb[k0:k0 + per_day].mean())
            feats = day_features(d, temp, self.district.holidays)
            self._day_fc[key] = self._forecasters[name].forecast(feats)
        return self._day_fc[key]

    def horizon_forecast(self, name: str, k: int) -> np.ndarray:
        """Day-ahead series for channel ``name`` over the horizon starting at signal index ``k``."""
        N = self.N
        if self.fcfg.mode == "perfect":
            arr = self.truth[name][k:k + N]
            if arr.size < N:
                raise ScenarioError(f"perfect forecast for {name} runs out at {fmt_ts(self.signals.time(k))}")
            return arr.copy()
        if name == "pv_avail":
            return self._pv_fc[k:k + N].copy()
        out = np.empty(N)
        for i in range(N):
            t = self.signals.time(k + i)
            out[i] = self._day_profile(name, t.date())[(t.hour * 60 + t.minute) // int(self.dt)]
        return out

    def _alpha(self, spec: SubsystemSpec, idx: slice) -> dict[str, dict[str, np.ndarray]]:
        out: dict[str, dict[str, np.ndarray]] = {}
        n = idx.stop - idx.start
        resources = spec.resources()
        for w, weight in spec.factor_weights.items():
            out[w] = {}
            for p in resources:
                src = self.district.signals.resources.get(p, {}).get(w, 0.0)
                raw = self.signals.column(src)[idx] if isinstance(src, str) else np.full(n, float(src))
                out[w][p] = float(weight) * raw / self._scales.get(w, 1.0)
        return out

    def _p_lim(self, k: int) -> dict[str, np.ndarray]:
        out = {}
        for p, val in self.district.p_lim.items():
            if isinstance(val, (int, float)):
                out[p] = np.full(self.N, float(val))
            else:
                prof = np.asarray(val, dtype=float)
                slots = [((self.signals.time(k + i).hour * 60 + self.signals.time(k + i).minute) // int(self.dt))
                         % prof.size for i in range(self.N)]
                out[p] = prof[slots]
        return out

    def build_forecasts(self, t, meas: Mapping[str, float]):
        """Per-subsystem ``Forecasts``, initial states, rolled specs and step-0 forecast values."""
        k = self.signals.index(t)
        N = self.N
        rng = slice(k, k + N)
        if k + N > len(self.signals):
            raise ScenarioError(f"signals end at {fmt_ts(self.signals.end)}; horizon from {fmt_ts(t)} needs "
                                f"{N} samples")
        grid = TimeGrid(start=t, dt=self.dt, N=N)
        fcs, inits, specs, seen = {}, {}, [], {}
        for spec in self.district.subsystems:
            spec = self.specs[spec.id].model_copy(update={"grid": grid})
            alpha = self._alpha(spec, rng)
            fc = Forecasts(alpha=alpha)
            init = ({}, {})
            if self.heat is not None and spec.id == self.heat.subsystem:
                h = self.heat
                tamb = self.signals.t_amb[rng]
                cop = np.array([self.plant.cop_at(v) for v in tamb])
                draw = self.horizon_forecast("heat_draw", k)
                seen["fc_heat_draw"] = draw[0]
                draw[0] = meas["heat_draw"]
                p_hp, q_hp = self._hp
                p_bo, q_bo = self._boiler
                fc.eta = {h.hp_id: {p_hp: {q_hp: cop}}}
                fc.tech_max = {h.hp_id: {p_hp: {q_hp: h.heat_pump.cap / cop}},
                               h.boiler_id: {p_bo: {q_bo: np.full(N, h.boiler.cap / h.boiler.eta)}}}
                fc.disturbance = {h.network_id: {"load": draw, "amb": tamb}}
                dem = next(d for d in spec.demands if isinstance(d, StateSpaceDemand) and d.id == h.network_id)
                n = dem.model.n_states
                y_hist = np.array(self._y + [meas["T_net"]])[-n:]
                if dem.model.arx is not None and len(y_hist) >= n:
                    x0 = arx_state(dem.model, y_hist, {"heat": np.array(self._u)},
                                   {k_: np.array(v) for k_, v in self._d.items()})
                else:
                    x0 = np.full(n, meas["T_net"])
                init = ({h.store_id: meas["soc_tes"]}, {h.network_id: x0})
            if self.ev is not None and spec.id == self.ev.subsystem:
                e = self.ev
                req = self.horizon_forecast("ev_request", k)
                pv = self.horizon_forecast("pv_avail", k)
                seen["fc_ev_request"], seen["fc_pv"] = req[0], pv[0]
                req[0], pv[0] = meas["ev_request"], meas["pv_avail"]
                p_pv, _ = _single_input(spec, e.pv_id)
                fc.demand = {e.demand_id: {q: req for q in spec.energy_types()}}
                fc.p_max = {p_pv: pv}
                last = np.array([self.plant.is_last_of_day(self.signals.time(k + i)) for i in range(N)])
                st = next(s for s in spec.stores if s.id == e.delay_id)
                u_max = np.where(last, 0.0, e.fleet.delayable_fraction * req) if e.delay_enabled else np.zeros(N)
                soc_min = np.where(last, 0.0, st.soc_min)
                fc.store = {e.delay_id: {"u_max": u_max, "soc_min": soc_min}}
                init = ({e.delay_id: -meas["backlog"]}, {})
            fcs[spec.id] = fc
            inits[spec.id] = init
            specs.append(spec)
        return fcs, inits, specs, seen

    # -- control step ---------------------------------------------------------
    def step(self, t, meas: Mapping[str, float]) -> tuple[dict[str, float], dict]:
        fcs, inits, specs, seen = self.build_forecasts(t, meas)
        info: dict = dict(seen)
        p_lim = self._p_lim(self.signals.index(t))
        if self.coordinate and p_lim:
            res = coordinate(self.district, fcs, inits, specs=specs, p_lim=p_lim, method=self.method)
            plans = res.plans
            info.update(coord_status=res.status, coord_rounds=res.rounds, coord_trace=res.trace)
        else:
            plans = [solve_subproblem(s, fcs[s.id], *inits[s.id], method=self.method) for s in specs]
            info.update(coord_status="Off" if p_lim else "", coord_rounds=0, coord_trace=[])
        sp: dict[str, float] = {}
        for plan in plans:
            sp.update(apply_first_step(plan).values)
        info["objective"] = sum(p.objective for p in plans)
        info["plans"] = plans
        info["p_lim"] = {p: float(v[0]) for p, v in p_lim.items()}
        if self.heat is not None:
            h = self.heat
            self._y.append(meas["T_net"])
            self._u.append(sp.get(f"u_sup[{h.hp_id},heat]", 0.0) + sp.get(f"u_sup[{h.boiler_id},heat]", 0.0)
                           - sp.get(f"v_sto[{h.store_id}]", 0.0) + sp.get(f"u_sto[{h.store_id}]", 0.0))
            self._d["load"].append(meas["heat_draw"])
            self._d["amb"].append(meas["t_amb"])
            keep = 8
            if len(self._y) > 4 * keep:
                self._y, self._u = self._y[-keep:], self._u[-keep:]
                self._d = {k_: v[-keep:] for k_, v in self._d.items()}
        return sp, info


# ---------------------------------------------------------------------------
# Loop and outputs
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return f"{float(v):.10g}"


def rows_to_csv(rows: list[dict], columns: tuple[str, ...] | None = None) -> str:
    cols = columns or (LEDGER_COLUMNS + EXTRA_COLUMNS)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) if r.get(c, "") != "" else "" for c in cols])
    return buf.getvalue()


def truth_series(plant: Plant, state, steps: int) -> dict[str, np.ndarray]:
    """Future demand requests under zero set-points (they do not depend on the controls)."""
    out = {"heat_draw": [], "ev_request": [], "pv_avail": []}
    st = state
    for _ in range(steps):
        k = plant.signals.index(st.t)
        sig = plant.signals.row(k)
        out["heat_draw"].append(plant.heat_draw(st, sig) if plant.config.heat is not None else 0.0)
        out["ev_request"].append(plant.ev_request(st.t))
        out["pv_avail"].append(pv_power(plant.config.ev.pv, st.t, sig["dir_irr"], sig["dif_irr"])
                               if plant.config.ev is not None else 0.0)
        st, _ = step_twin(plant, st, {})
    k0 = plant.signals.index(state.t)
    # Index by signal position so the controller can slice with absolute indices.
    return {name: np.concatenate([np.zeros(k0), np.array(v)]) for name, v in out.items()}


@dataclass
class Session:
    district: DistrictSpec
    signals: ExogenousSignals
    plant: Plant
    twin: DigitalTwin
    controller: DistrictController | None
    warmup_rows: list[dict]
    steps: int


def prepare(cfg: RunConfig, controller: bool = True) -> Session:
    district, sig = _load(cfg)
    per_day = int(round(24 * 60 / district.grid.dt))
    steps = cfg.days * per_day
    if abs(steps - round(steps)) > 1e-9 or steps <= 0:
        raise ScenarioError(f"span of {cfg.days} days is not a positive multiple of dt={district.grid.dt} min")
    steps = int(round(steps))
    start = district.grid.start
    if (start.hour, start.minute, start.second) != (0, 0, 0):
        raise ScenarioError(f"grid.start {fmt_ts(start)} must be at midnight UTC (daily forecast alignment)")
    warm = district.twin.warmup_days
    if sig.dt != district.grid.dt:
        raise ScenarioError(f"signal sampling {sig.dt} min differs from grid dt {district.grid.dt} min")
    need_start = start - timedelta(days=warm)
    if sig.start > need_start:
        raise ScenarioError(f"signals start at {fmt_ts(sig.start)} but the warm-up begins at {fmt_ts(need_start)}")
    sig_run = sig.window(need_start, len(sig) - sig.index(need_start))
    plant = Plant(district.twin, sig_run, district.grid.dt, tuple(district.holidays))
    rows, state = warm_up(plant, warm, district.twin.seed)
    truth = None
    if district.forecast.mode == "perfect":
        truth = truth_series(plant, state, steps + district.grid.N)
    ctrl = None
    if controller:
        ctrl = DistrictController(district, sig_run, plant, rows, coordinate=cfg.coordinate, method=cfg.method,
                                  truth=truth)
    return Session(district, sig_run, plant, DigitalTwin(plant, state), ctrl, rows, steps)


def usage_columns(district: DistrictSpec, plant: Plant) -> dict[str, dict[str, str]]:
    out: dict[str, dict[str, str]] = {}
    cfg = plant.config
    specs = {s.id: s for s in district.subsystems}
    if cfg.heat is not None:
        spec = specs[cfg.heat.subsystem]
        out[spec.id] = {_single_input(spec, cfg.heat.hp_id)[0]: "hp_elec",
                        _single_input(spec, cfg.heat.boiler_id)[0]: "boiler_gas"}
    if cfg.ev is not None:
        spec = specs[cfg.ev.subsystem]
        out[spec.id] = {_single_input(spec, cfg.ev.grid_id)[0]: "ev_grid",
                        _single_input(spec, cfg.ev.pv_id)[0]: "pv_used"}
    return out


def report_for(district: DistrictSpec, plant: Plant, rows: list[dict]) -> MetricsReport:
    p_lim = None
    if district.p_lim:
        p_lim = np.array([float(r["p_lim"]) if r.get("p_lim", "") != "" else np.inf for r in rows])
    band = None
    heat = plant.config.heat
    if heat is not None:
        spec = district.subsystem(heat.subsystem)
        dem = next(d for d in spec.demands if isinstance(d, StateSpaceDemand) and d.id == heat.network_id)
        band = ("T_net", float(np.min(series_array(dem.sp_lo[0], spec.grid.N))),
                float(np.max(series_array(dem.sp_up[0], spec.grid.N))))
    pairs = {}
    if heat is not None:
        pairs["heat"] = ("fc_heat_draw", "q_draw")
    if plant.config.ev is not None:
        pairs["ev"] = ("fc_ev_request", "ev_request")
        pairs["pv"] = ("fc_pv", "pv_avail")
    return metrics(rows, dt=district.grid.dt, factors=district.signals.resources,
                   usage=usage_columns(district, plant), p_lim=p_lim, band=band, forecast_pairs=pairs,
                   balance=energy_balance_check(rows, district.grid.dt), heat_sources=None if heat else {})


def run_scenario(cfg: RunConfig, progress: Callable[[int, int], None] | None = None) -> RunResult:
    """Warm up, train, then run the receding-horizon loop over ``cfg.days``."""
    t0 = time.perf_counter()
    ses = prepare(cfg, controller=cfg.link is None)
    ctrl, twin = ses.controller, ses.twin
    client = None
    if cfg.link is not None:
        host, _, port = cfg.link.rpartition(":")
        client = LinkClient(host or "127.0.0.1", int(port), cfg.link_timeout)
    coord_rows: list[str] = []
    try:
        for step in range(ses.steps):
            t = twin.state.t
            meas = twin.measure()
            try:
                if client is None:
                    sp, info = ctrl.step(t, meas)
                else:
                    sp = client.exchange(t, meas)
                    info = _remote_info(ses.district, t)
            except LinkError:
                raise
            except Exception as exc:  # noqa: BLE001 - re-raised with the sample stamp
                raise RunError(step, t, exc) from exc
            _record(twin.step(sp), info, coord_rows, t)
            if progress is not None:
                progress(step + 1, ses.steps)
    finally:
        if client is not None:
            client.close()
    rows = twin.trace
    report = report_for(ses.district, ses.plant, rows)
    res = RunResult(report, rows, coord_rows, ses.warmup_rows, ses.district, time.perf_counter() - t0)
    if cfg.out is not None:
        res.paths = write_outputs(res, cfg.out)
    return res


def _remote_info(district: DistrictSpec, t) -> dict:
    lim = {}
    for p, val in district.p_lim.items():
        if isinstance(val, (int, float)):
            lim[p] = float(val)
        else:
            slot = (t.hour * 60 + t.minute) // int(district.grid.dt)
            lim[p] = float(val[slot % len(val)])
    return {"p_lim": lim, "coord_status": "", "coord_rounds": 0, "objective": "", "coord_trace": []}


def _record(row: dict, info: dict, coord_rows: list[str], t) -> None:
    tot = row["elec_total"]
    lim = info["p_lim"].get("elec")
    row.update({c: info.get(c, "") for c in ("fc_heat_draw", "fc_ev_request", "fc_pv")})
    row["p_lim"] = lim if lim is not None else ""
    row["violation"] = max(0.0, tot - lim) if lim is not None else 0.0
    row["coord_status"] = info["coord_status"]
    row["coord_rounds"] = info["coord_rounds"]
    row["objective"] = info["objective"]
    if info["coord_trace"]:
        coord_rows.extend(trace_to_csv(info["coord_trace"], t=fmt_ts(t)).splitlines()[1:])


def controller_engine(ctrl: DistrictController):
    """Adapter exposing a controller as a link engine ``(t, measurements) -> set-points``."""

    def engine(t, values):
        return ctrl.step(t, values)[0]

    return engine


COORD_HEADER = "t,round,subsystem,resource,steps,pex_before,pex_after,outcome"


def write_outputs(res: RunResult, out) -> dict[str, Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"trace": out / "trace.csv", "coordination": out / "coordination.csv",
             "summary": out / "summary.txt", "metrics": out / "metrics.json"}
    paths["trace"].write_text(res.trace_csv())
    paths["coordination"].write_text("\n".join([COORD_HEADER] + res.coord_rows) + "\n")
    paths["summary"].write_text(res.report.summary())
    paths["metrics"].write_text(res.report.to_json())
    return paths


def trace_digest(res: RunResult) -> str:
    return hashlib.sha256(res.trace_csv().encode()).hexdigest()


def read_trace(path) -> list[dict]:
    """Load a trace CSV written by :func:`write_outputs` (numeric cells become floats)."""
    out = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            row = {}
            for k, v in r.items():
                try:
                    row[k] = float(v)
                except ValueError:
                    row[k] = v
            out.append(row)
    return out
