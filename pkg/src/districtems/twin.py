"""Digital-twin plant.

Heat side: one lumped network node fed by a heat pump and a boiler, a
sensible-heat store, and a 2R2C building whose ideal thermostat draws heat
from the network.  Electric side: a PV array and an EV fleet whose delayable
share can be deferred within the day.  Exogenous signals are replayed from
CSV.

Every step writes a ledger row; :func:`energy_balance_check` recomputes the
balance of each energy account from those rows.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from datetime import date, datetime, timedelta, timezone
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .core import EvTwinConfig, HeatTwinConfig, PvConfig, TwinConfig

SIGNAL_COLUMNS = ("timestamp", "t_amb", "dir_irr", "dif_irr", "price_elec", "price_gas", "co2_elec")
COP_MIN, COP_MAX = 1.0, 6.0


class SignalError(ValueError):
    pass


def _parse_ts(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def fmt_ts(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


# ---------------------------------------------------------------------------
# Signals
# ---------------------------------------------------------------------------


@dataclass
class ExogenousSignals:
    start: datetime
    dt: float
    t_amb: np.ndarray
    dir_irr: np.ndarray
    dif_irr: np.ndarray
    price_elec: np.ndarray
    price_gas: np.ndarray
    co2_elec: np.ndarray

    def __post_init__(self):
        for name in SIGNAL_COLUMNS[1:]:
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        n = len(self)
        for name in SIGNAL_COLUMNS[1:]:
            if getattr(self, name).shape != (n,):
                raise SignalError(f"signal {name} has {getattr(self, name).shape[0]} rows, expected {n}")
        if np.any(self.dir_irr < 0) or np.any(self.dif_irr < 0):
            raise SignalError("irradiance must be non-negative")

    def __len__(self) -> int:
        return self.t_amb.shape[0]

    def time(self, k: int) -> datetime:
        return self.start + timedelta(minutes=self.dt * k)

    @property
    def end(self) -> datetime:
        return self.time(len(self))

    def index(self, ts: datetime) -> int:
        off = (ts - self.start).total_seconds() / 60.0 / self.dt
        k = int(round(off))
        if abs(off - k) > 1e-9 or not 0 <= k < len(self):
            raise SignalError(f"no signal row for {fmt_ts(ts)}")
        return k

    def column(self, name: str) -> np.ndarray:
        if name not in SIGNAL_COLUMNS[1:]:
            raise KeyError(f"unknown signal column {name!r}")
        return getattr(self, name)

    def window(self, ts: datetime, n: int) -> "ExogenousSignals":
        k = self.index(ts)
        if k + n > len(self):
            raise SignalError(f"signals end at {fmt_ts(self.end)}, need {n} rows from {fmt_ts(ts)}")
        return ExogenousSignals(ts, self.dt, *(getattr(self, c)[k:k + n] for c in SIGNAL_COLUMNS[1:]))

    def row(self, k: int) -> dict[str, float]:
        return {c: float(getattr(self, c)[k]) for c in SIGNAL_COLUMNS[1:]}


def read_signals_csv(path, dt: float = 15.0) -> ExogenousSignals:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows or tuple(h.strip() for h in rows[0]) != SIGNAL_COLUMNS:
        raise SignalError(f"{path}: header must be {','.join(SIGNAL_COLUMNS)}")
    body = rows[1:]
    if not body:
        raise SignalError(f"{path}: no data rows")
    times = [_parse_ts(r[0]) for r in body]
    step = timedelta(minutes=dt)
    for a, b in zip(times, times[1:]):
        if b - a != step:
            raise SignalError(f"{path}: gap or irregular spacing after {fmt_ts(a)} (next row {fmt_ts(b)})")
    try:
        cols = np.array([[float(v) for v in r[1:]] for r in body])
    except ValueError as exc:
        raise SignalError(f"{path}: {exc}") from None
    if cols.shape[1] != len(SIGNAL_COLUMNS) - 1:
        raise SignalError(f"{path}: expected {len(SIGNAL_COLUMNS) - 1} value columns")
    if not np.all(np.isfinite(cols)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(cols), axis=1))[0])
        raise SignalError(f"{path}: non-finite value at {fmt_ts(times[bad])}")
    return ExogenousSignals(times[0], dt, *cols.T)


def write_signals_csv(sig: ExogenousSignals, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SIGNAL_COLUMNS)
        for k in range(len(sig)):
            w.writerow([fmt_ts(sig.time(k))] + [f"{getattr(sig, c)[k]:.6g}" for c in SIGNAL_COLUMNS[1:]])


def synthetic_signals(start: datetime, days: int, dt: float = 15.0, seed: int = 0, *,
                      t_mean: float = 8.0, t_swing: float = 4.0, price_low: float = 0.06, price_high: float = 0.30,
                      price_mid: float = 0.15, trough: tuple[float, float] = (0.0, 6.0),
                      peak: tuple[float, float] = (16.0, 19.0), price_gas: float = 0.04,
                      co2_low: float = 0.15, co2_high: float = 0.30, latitude: float = 51.48,
                      cloudiness: float = 0.5) -> ExogenousSignals:
    """Lookalike weather, tariff and grid-carbon series (synthetic, not measured data)."""
    rng = np.random.default_rng(seed)
    n = int(round(days * 24 * 60 / dt))
    times = [start + timedelta(minutes=dt * k) for k in range(n)]
    hour = np.array([t.hour + t.minute / 60.0 for t in times])
    doy = np.array([t.timetuple().tm_yday for t in times])

    # Day-to-day weather drift plus a diurnal cycle peaking mid-afternoon.
    per_day = int(round(24 * 60 / dt))
    drift = np.repeat(np.cumsum(rng.normal(0, 1.2, days + 1))[:days], per_day)[:n]
    drift -= drift.mean()
    t_amb = t_mean + drift + t_swing * np.sin(2 * np.pi * (hour - 9.0) / 24.0) + rng.normal(0, 0.2, n)

    decl = np.radians(23.45 * np.sin(np.radians(360.0 * (284 + doy) / 365.0)))
    lat = np.radians(latitude)
    omega = np.radians(15.0 * (hour + dt / 120.0 - 12.0))
    sin_alt = np.sin(lat) * np.sin(decl) + np.cos(lat) * np.cos(decl) * np.cos(omega)
    sin_alt = np.clip(sin_alt, 0.0, None)
    clear_dni = 900.0 * np.exp(-0.14 / np.maximum(sin_alt, 0.05)) * (sin_alt > 0)
    cloud_day = np.repeat(np.clip(rng.beta(2, 2, days + 1)[:days] * 2 * cloudiness, 0, 1), per_day)[:n]
    cloud = np.clip(cloud_day + rng.normal(0, 0.08, n), 0, 1)
    dir_irr = clear_dni * (1 - cloud)
    dif_irr = (60.0 + 250.0 * cloud * (1 - cloud)) * sin_alt * 2

    price = np.full(n, price_mid)
    in_trough = (hour >= trough[0]) & (hour < trough[1]) if trough[0] < trough[1] else (
        (hour >= trough[0]) | (hour < trough[1]))
    price[in_trough] = price_low
    price[(hour >= peak[0]) & (hour < peak[1])] = price_high

    co2 = co2_low + (co2_high - co2_low) * (0.5 + 0.5 * np.sin(2 * np.pi * (hour - 12.0) / 24.0)) \
        + rng.normal(0, 0.005, n)
    co2 = np.clip(co2, 0.01, None)
    return ExogenousSignals(times[0], dt, np.round(t_amb, 3), np.round(dir_irr, 2), np.round(dif_irr, 2),
                            np.round(price, 4), np.full(n, price_gas), np.round(co2, 4))


# ---------------------------------------------------------------------------
# Component physics
# ---------------------------------------------------------------------------


def cop(t_source: float, t_sink: float, carnot_fraction: float) -> float:
    """Heat-pump coefficient of performance, a fraction of the Carnot value clamped to [1, 6]."""
    if not t_sink > t_source:
        raise ValueError(f"sink temperature {t_sink} must exceed source temperature {t_source}")
    raw = carnot_fraction * (t_sink + 273.15) / (t_sink - t_source)
    return float(min(max(raw, COP_MIN), COP_MAX))


def solar_position(ts: datetime, latitude: float, longitude: float) -> tuple[float, float, float]:
    """Declination, hour angle and sine of altitude (radians / unitless) at ``ts``.

    Solar time is UTC shifted by longitude; the equation of time is ignored.
    """
    n = ts.timetuple().tm_yday
    decl = math.radians(23.45 * math.sin(math.radians(360.0 * (284 + n) / 365.0)))
    hours = ts.hour + ts.minute / 60.0 + ts.second / 3600.0 + longitude / 15.0
    omega = math.radians(15.0 * (hours - 12.0))
    lat = math.radians(latitude)
    sin_alt = math.sin(lat) * math.sin(decl) + math.cos(lat) * math.cos(decl) * math.cos(omega)
    return decl, omega, sin_alt


def pv_power(array: PvConfig, ts: datetime, direct: float, diffuse: float) -> float:
    """PV output (kW); ``direct`` is beam-normal and ``diffuse`` horizontal-diffuse irradiance in W/m2."""
    decl, omega, sin_alt = solar_position(ts, array.latitude, array.longitude)
    beta = math.radians(array.tilt)
    if sin_alt <= 0.0:
        return 0.0
    lat = math.radians(array.latitude)
    gam = math.radians(array.azimuth - 180.0)
    cos_theta = (math.sin(decl) * math.sin(lat) * math.cos(beta)
                 - math.sin(decl) * math.cos(lat) * math.sin(beta) * math.cos(gam)
                 + math.cos(decl) * math.cos(lat) * math.cos(beta) * math.cos(omega)
                 + math.cos(decl) * math.sin(lat) * math.sin(beta) * math.cos(gam) * math.cos(omega)
                 + math.cos(decl) * math.sin(beta) * math.sin(gam) * math.sin(omega))
    poa = max(direct, 0.0) * max(cos_theta, 0.0) + max(diffuse, 0.0) * (1.0 + math.cos(beta)) / 2.0
    return float(min(max(array.area * array.efficiency * poa / 1000.0, 0.0), array.capacity))


def load_ev_profile(path: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-vehicle base profiles (weekday, weekend) in kW; default is the packaged synthetic file."""
    if path is None:
        text = resources.files("districtems").joinpath("data/ev_profile.csv").read_text()
    else:
        text = Path(path).read_text()
    rows = [r for r in csv.reader(text.splitlines()) if r and not r[0].startswith("#")]
    body = rows[1:]
    wd = np.array([float(r[1]) for r in body])
    we = np.array([float(r[2]) for r in body])
    return wd, we


def day_type(d: date, holidays: Iterable[date] = ()) -> str:
    if d in set(holidays):
        return "holiday"
    return "weekend" if d.weekday() >= 5 else "weekday"


def ev_noise(seed: int, d: date, n: int, sigma: float) -> np.ndarray:
    """Mean-one lognormal multipliers for one day, determined by ``(seed, date)`` alone."""
    rng = np.random.default_rng([seed, d.toordinal()])
    return rng.lognormal(-0.5 * sigma * sigma, sigma, n) if sigma > 0 else np.ones(n)


# ---------------------------------------------------------------------------
# State, measurements and stepping
# ---------------------------------------------------------------------------


@dataclass
class TwinState:
    t: datetime
    T_net: float = 55.0
    T_sto: float = 40.0
    T_in: float = 20.0
    T_env: float = 14.0
    backlog: float = 0.0  # kWh of deferred EV energy


@dataclass
class Plant:
    """Static description of the twin: configuration, signals and EV base profile."""

    config: TwinConfig
    signals: ExogenousSignals
    dt: float = 15.0
    holidays: tuple[date, ...] = ()
    profile: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self):
        if self.config.ev is not None and self.profile is None:
            self.profile = load_ev_profile(self.config.ev.fleet.profile)
        self._noise: dict[date, np.ndarray] = {}

    @property
    def dt_h(self) -> float:
        return self.dt / 60.0

    @property
    def per_day(self) -> int:
        return int(round(24 * 60 / self.dt))

    def initial_state(self, t: datetime | None = None) -> TwinState:
        cfg = self.config
        st = TwinState(t or self.signals.start)
        if cfg.heat is not None:
            st.T_net = cfg.heat.network.T_net0
            st.T_sto = cfg.heat.store.T_sto0
            st.T_in = cfg.heat.building.T_in0
            st.T_env = cfg.heat.building.T_env0
        return st

    # -- EV -----------------------------------------------------------------
    def ev_request(self, ts: datetime) -> float:
        ev = self.config.ev
        if ev is None:
            return 0.0
        d = ts.date()
        slot = (ts.hour * 60 + ts.minute) // int(self.dt)
        if d not in self._noise:
            self._noise[d] = ev_noise(ev.fleet.seed, d, self.per_day, ev.fleet.sigma)
        wd, we = self.profile
        base = we if day_type(d, self.holidays) != "weekday" else wd
        idx = int(slot * len(base) // self.per_day)
        return float(ev.fleet.n_vehicles * base[idx] * self._noise[d][slot])

    def is_last_of_day(self, ts: datetime) -> bool:
        return (ts + timedelta(minutes=self.dt)).date() != ts.date()

    # -- Heat ---------------------------------------------------------------
    def t_source(self, t_amb: float) -> float:
        return t_amb + self.config.heat.heat_pump.source_offset

    def cop_at(self, t_amb: float) -> float:
        hp = self.config.heat.heat_pump
        return cop(self.t_source(t_amb), hp.sink_temp, hp.carnot_fraction)

    def building_setpoint(self, ts: datetime) -> float:
        b = self.config.heat.building
        h = ts.hour + ts.minute / 60.0
        return b.setpoint_day if b.day_start_h <= h < b.day_end_h else b.setpoint_night

    def heat_draw(self, state: TwinState, sig: dict[str, float]) -> float:
        """Ideal capped thermostat: heat needed to reach the set-point by the end of the step."""
        b = self.config.heat.building
        gains = b.solar_gain * (sig["dir_irr"] + sig["dif_irr"])
        need = (self.building_setpoint(state.t) - state.T_in) * b.C_i / self.dt_h \
            - (state.T_env - state.T_in) / b.R_ia - gains
        return float(min(max(need, 0.0), b.q_max))

    def store_energy(self, T_sto: float) -> float:
        s = self.config.heat.store
        return s.C_sto * (T_sto - s.T_ref)

    def store_loss_factor(self) -> float:
        s = self.config.heat.store
        return 1.0 - self.dt_h * s.UA_sto / s.C_sto


def measure(plant: Plant, state: TwinState) -> dict[str, float]:
    """Sensor readings at the start of a step, including this step's demand requests."""
    k = plant.signals.index(state.t)
    sig = plant.signals.row(k)
    out = {"t_amb": sig["t_amb"]}
    if plant.config.heat is not None:
        out.update(T_net=state.T_net, T_sto=state.T_sto, soc_tes=plant.store_energy(state.T_sto), T_in=state.T_in,
                   T_env=state.T_env, heat_draw=plant.heat_draw(state, sig), cop=plant.cop_at(sig["t_amb"]))
    if plant.config.ev is not None:
        out.update(ev_request=plant.ev_request(state.t), backlog=state.backlog,
                   pv_avail=pv_power(plant.config.ev.pv, state.t, sig["dir_irr"], sig["dif_irr"]))
    return out


LEDGER_COLUMNS = (
    "timestamp", "t_amb", "price_elec", "price_gas", "co2_elec",
    "T_net", "T_sto", "soc_tes", "T_in", "T_env", "cop",
    "q_hp", "q_boiler", "q_charge", "q_discharge", "q_draw", "loss_net", "loss_sto", "loss_conv", "rejected",
    "d_net", "d_sto", "hp_elec", "boiler_gas",
    "gain_sol", "loss_bld", "d_bld",
    "ev_request", "ev_delay", "ev_release", "ev_served", "backlog", "d_backlog", "pv_avail", "pv_used", "ev_grid",
    "elec_total", "clamps",
)


def _clamp(name: str, val: float, lo: float, hi: float, log: list[str]) -> float:
    out = min(max(val, lo), hi)
    if abs(out - val) > 1e-6:
        log.append(f"{name}:{val:.4g}->{out:.4g}")
    return out


def step_twin(plant: Plant, state: TwinState, setpoints: Mapping[str, float]) -> tuple[TwinState, dict]:
    """Advance the plant one sample under ``setpoints``; returns the new state and a ledger row (kW / kWh)."""
    k = plant.signals.index(state.t)
    sig = plant.signals.row(k)
    dt_h = plant.dt_h
    log: list[str] = []
    row: dict = {c: 0.0 for c in LEDGER_COLUMNS}
    row.update(timestamp=fmt_ts(state.t), t_amb=sig["t_amb"], price_elec=sig["price_elec"],
               price_gas=sig["price_gas"], co2_elec=sig["co2_elec"])
    new = replace(state, t=state.t + timedelta(minutes=plant.dt))

    heat: HeatTwinConfig | None = plant.config.heat
    if heat is not None:
        sc, nc, bc = heat.store, heat.network, heat.building
        c = plant.cop_at(sig["t_amb"])
        q_hp = _clamp("q_hp", setpoints.get(f"u_sup[{heat.hp_id},heat]", 0.0), 0.0, heat.heat_pump.cap, log)
        q_bo = _clamp("q_boiler", setpoints.get(f"u_sup[{heat.boiler_id},heat]", 0.0), 0.0, heat.boiler.cap, log)
        q_ch = _clamp("q_charge", setpoints.get(f"v_sto[{heat.store_id}]", 0.0), 0.0,
                      min(sc.charge_max, q_hp + q_bo), log)
        q_dis = _clamp("q_discharge", setpoints.get(f"u_sto[{heat.store_id}]", 0.0), 0.0, sc.discharge_max, log)

        e0 = plant.store_energy(state.T_sto)
        lam = plant.store_loss_factor()
        e_min = sc.C_sto * (sc.T_min - sc.T_ref)
        e_max = sc.C_sto * (sc.T_max - sc.T_ref)
        # Discharge cannot take the store below its minimum temperature.
        room = lam * e0 + dt_h * sc.eta_charge * q_ch - e_min
        q_dis = _clamp("q_discharge_soc", q_dis, 0.0, max(room, 0.0) * sc.eta_discharge / dt_h, log)
        e1 = lam * e0 + dt_h * (sc.eta_charge * q_ch - q_dis / sc.eta_discharge)
        rejected = 0.0
        if e1 > e_max:
            rejected = e1 - e_max
            e1 = e_max
            log.append(f"store_reject:{rejected:.4g}kWh")
        loss_sto = (1.0 - lam) * e0
        loss_conv = dt_h * ((1.0 - sc.eta_charge) * q_ch + (1.0 / sc.eta_discharge - 1.0) * q_dis)

        q_draw = plant.heat_draw(state, sig)
        loss_net = dt_h * nc.UA_net * (state.T_net - sig["t_amb"])
        d_net = dt_h * (q_hp + q_bo - q_ch + q_dis - q_draw) - loss_net
        new.T_net = state.T_net + d_net / nc.C_net
        new.T_sto = sc.T_ref + e1 / sc.C_sto
        # Stored-energy changes recomputed from the temperatures.
        d_net = nc.C_net * (new.T_net - state.T_net)
        d_sto = plant.store_energy(new.T_sto) - e0

        gains = bc.solar_gain * (sig["dir_irr"] + sig["dif_irr"])
        flow_ie = (state.T_env - state.T_in) / bc.R_ia
        flow_ea = (sig["t_amb"] - state.T_env) / bc.R_ae
        new.T_in = state.T_in + dt_h / bc.C_i * (flow_ie + q_draw + gains)
        new.T_env = state.T_env + dt_h / bc.C_e * (-flow_ie + flow_ea)

        row.update(T_net=state.T_net, T_sto=state.T_sto, soc_tes=e0, T_in=state.T_in, T_env=state.T_env, cop=c,
                   q_hp=q_hp, q_boiler=q_bo, q_charge=q_ch, q_discharge=q_dis, q_draw=q_draw,
                   loss_net=loss_net, loss_sto=loss_sto, loss_conv=loss_conv, rejected=rejected,
                   d_net=d_net, d_sto=d_sto, hp_elec=q_hp / c, boiler_gas=q_bo / heat.boiler.eta,
                   gain_sol=dt_h * gains, loss_bld=-dt_h * flow_ea,
                   d_bld=bc.C_i * (new.T_in - state.T_in) + bc.C_e * (new.T_env - state.T_env))

    ev: EvTwinConfig | None = plant.config.ev
    if ev is not None:
        req = plant.ev_request(state.t)
        pv = pv_power(ev.pv, state.t, sig["dir_irr"], sig["dif_irr"])
        last = plant.is_last_of_day(state.t)
        cap_delay = ev.fleet.delayable_fraction * req if (ev.delay_enabled and not last) else 0.0
        delay = _clamp("ev_delay", setpoints.get(f"u_sto[{ev.delay_id}]", 0.0), 0.0, cap_delay, log)
        if last:
            release = state.backlog / dt_h  # day-end flush
        else:
            release = _clamp("ev_release", setpoints.get(f"v_sto[{ev.delay_id}]", 0.0), 0.0,
                             state.backlog / dt_h, log)
        served = req - delay + release
        new.backlog = 0.0 if last else max(state.backlog + dt_h * (delay - release), 0.0)
        d_back = new.backlog - state.backlog
        pv_used = min(pv, served)
        grid = served - pv_used
        row.update(ev_request=req, ev_delay=delay, ev_release=release, ev_served=served, backlog=state.backlog,
                   d_backlog=d_back, pv_avail=pv, pv_used=pv_used, ev_grid=grid)

    row["elec_total"] = row["hp_elec"] + row["ev_grid"]
    row["clamps"] = ";".join(log)
    return new, row


_BALANCE_COLUMNS = ("q_hp", "q_boiler", "q_draw", "loss_net", "loss_sto", "loss_conv", "rejected", "d_net", "d_sto",
                    "gain_sol", "loss_bld", "d_bld", "ev_request", "ev_served", "d_backlog", "pv_used", "ev_grid")


def energy_balance_check(trace: Iterable[Mapping[str, float]], dt: float = 15.0) -> dict[str, float]:
    """Largest per-step residual (kWh) of each energy account: in - out - change in storage."""
    dt_h = dt / 60.0
    worst = {"heat": 0.0, "building": 0.0, "ev": 0.0, "pv": 0.0}
    for r in trace:
        f = {k: float(r.get(k, 0.0) or 0.0) for k in _BALANCE_COLUMNS}
        supplied = dt_h * (f["q_hp"] + f["q_boiler"])
        removed = dt_h * f["q_draw"] + f["loss_net"] + f["loss_sto"] + f["loss_conv"] + f["rejected"]
        heat = supplied - removed - (f["d_net"] + f["d_sto"])
        worst["heat"] = max(worst["heat"], abs(heat))
        bld = dt_h * f["q_draw"] + f["gain_sol"] - f["loss_bld"] - f["d_bld"]
        worst["building"] = max(worst["building"], abs(bld))
        ev = dt_h * f["ev_request"] - dt_h * f["ev_served"] - f["d_backlog"]
        worst["ev"] = max(worst["ev"], abs(ev))
        pv = f["ev_served"] - f["pv_used"] - f["ev_grid"]
        worst["pv"] = max(worst["pv"], abs(pv) * dt_h)
    return worst


class DigitalTwin:
    """Stateful wrapper: holds the current state and the ledger of past steps."""

    def __init__(self, plant: Plant, state: TwinState | None = None):
        self.plant = plant
        self.state = state or plant.initial_state()
        self.trace: list[dict] = []

    def measure(self) -> dict[str, float]:
        return measure(self.plant, self.state)

    def step(self, setpoints: Mapping[str, float]) -> dict:
        self.state, row = step_twin(self.plant, self.state, setpoints)
        self.trace.append(row)
        return row
