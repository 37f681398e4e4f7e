"""Builders for the shipped case-study scenarios and their synthetic signal files."""

from __future__ import annotations

from datetime import datetime, timedelta, timezone
from pathlib import Path

from ..core import (
    DistrictSpec,
    ForecastConfig,
    HeatTwinConfig,
    EvTwinConfig,
    FleetConfig,
    HeatPumpConfig,
    ResourceLimits,
    SignalsConfig,
    StateSpaceDemand,
    StorageTech,
    SubsystemSpec,
    SupplyTech,
    TimeGrid,
    TimeSeriesDemand,
    TwinConfig,
    save_scenario,
)
from ..ssm import StateSpaceModel
from ..twin import synthetic_signals, write_signals_csv

RUN_START = datetime(2018, 11, 1, tzinfo=timezone.utc)
GAS_CO2 = 0.184  # kg/kWh, natural gas combustion

RESOURCES = {
    "elec": {"cost": "price_elec", "co2": "co2_elec"},
    "gas": {"cost": "price_gas", "co2": GAS_CO2},
    "solar": {"cost": 0.0, "co2": 0.0},
}


def network_model(heat: HeatTwinConfig, dt: float = 15.0) -> StateSpaceModel:
    """First-order physics model of the lumped network temperature."""
    nc = heat.network
    h = dt / 60.0
    return StateSpaceModel(
        A=((1.0 - h * nc.UA_net / nc.C_net,),), B={"heat": (h / nc.C_net,)},
        E={"load": (-h / nc.C_net,), "amb": (h * nc.UA_net / nc.C_net,)}, C=((1.0,),),
        state_names=("T_net",), output_names=("T_net",), dt=dt)


def heat_subsystem(heat: HeatTwinConfig, grid: TimeGrid, *, band=(50.0, 60.0), gamma: float = 1.0,
                   weights=None) -> SubsystemSpec:
    sc = heat.store
    h = grid.dt_h
    cop0 = 3.5
    return SubsystemSpec(
        id=heat.subsystem, grid=grid,
        supplies=(
            SupplyTech(id=heat.hp_id, eta={"elec": {"heat": cop0}}, tech_max={"elec": {"heat": heat.heat_pump.cap / cop0}},
                       store_connected=True),
            SupplyTech(id=heat.boiler_id, eta={"gas": {"heat": heat.boiler.eta}},
                       tech_max={"gas": {"heat": heat.boiler.cap / heat.boiler.eta}}, store_connected=True),
        ),
        stores=(StorageTech(id=heat.store_id, energy="heat", eta_stl=1.0 - h * sc.UA_sto / sc.C_sto,
                            eta_stv=sc.eta_charge, eta_stu=sc.eta_discharge,
                            soc_init=sc.C_sto * (sc.T_sto0 - sc.T_ref), soc_min=sc.C_sto * (sc.T_min - sc.T_ref),
                            soc_max=sc.C_sto * (sc.T_max - sc.T_ref), u_max=sc.discharge_max,
                            v_max=sc.charge_max),),
        demands=(StateSpaceDemand(id=heat.network_id, model=network_model(heat, grid.dt),
                                  x_init=(heat.network.T_net0,), sp_lo=(band[0],), sp_up=(band[1],), gamma=gamma),),
        phi_nrg=0.01, phi_slack=0.99,
        factor_weights=weights or {"cost": 1.0, "co2": 0.0},
    )


def ev_subsystem(ev: EvTwinConfig, grid: TimeGrid, *, weights=None) -> SubsystemSpec:
    return SubsystemSpec(
        id=ev.subsystem, grid=grid,
        supplies=(SupplyTech(id=ev.grid_id, eta={"elec": {"ev": 1.0}}, store_connected=True),
                  SupplyTech(id=ev.pv_id, eta={"solar": {"ev": 1.0}}, store_connected=True)),
        stores=(StorageTech(id=ev.delay_id, energy="ev", soc_min=-1000.0, soc_max=0.0, u_max=300.0, v_max=300.0,
                            beta=0.001),),
        demands=(TimeSeriesDemand(id=ev.demand_id, dem={"ev": 0.0}),),
        limits=ResourceLimits(p_max={"solar": ev.pv.capacity}),
        phi_nrg=0.99, phi_pen=0.01,
        factor_weights=weights or {"cost": 1.0, "co2": 0.0},
    )


def district(name: str, *, heat: HeatTwinConfig | None, ev: EvTwinConfig | None, p_lim=None,
             signals: str = "signals.csv", weights=None, forecast: ForecastConfig | None = None,
             warmup_days: int = 21) -> DistrictSpec:
    grid = TimeGrid(start=RUN_START)
    subs = []
    if heat is not None:
        subs.append(heat_subsystem(heat, grid, weights=weights))
    if ev is not None:
        subs.append(ev_subsystem(ev, grid, weights=weights))
    return DistrictSpec(
        name=name, grid=grid, subsystems=tuple(subs), p_lim=p_lim or {},
        signals=SignalsConfig(path=signals, resources=RESOURCES),
        twin=TwinConfig(heat=heat, ev=ev, warmup_days=warmup_days),
        forecast=forecast or ForecastConfig(model_order=1),
    )


# Tariff shapes per case study; the horizon needs one extra day of signals.
SIGNALS = {
    "signals_flat.csv": dict(price_low=0.12, price_mid=0.14, price_high=0.18, price_gas=0.06),
    "signals_tou.csv": dict(price_low=0.06, price_mid=0.15, price_high=0.30, price_gas=0.035),
    "signals_trough.csv": dict(price_low=0.05, price_mid=0.20, price_high=0.20, price_gas=0.08,
                               trough=(0.0, 6.0), peak=(0.0, 0.0), t_swing=0.5),
}


def case_studies() -> dict[str, DistrictSpec]:
    heat = HeatTwinConfig()
    return {
        "coordination": district("coordination", heat=heat, ev=EvTwinConfig(delay_enabled=False),
                                 p_lim={"elec": 70.0}, signals="signals_flat.csv"),
        "pareto": district("pareto", heat=heat, ev=None, signals="signals_tou.csv"),
        "arbitrage": district("arbitrage", heat=heat.model_copy(update={"heat_pump": HeatPumpConfig(cap=500.0)}),
                              ev=None, signals="signals_trough.csv"),
        "ev_delay": district("ev_delay", heat=None, ev=EvTwinConfig(fleet=FleetConfig()),
                             signals="signals_tou.csv"),
    }


def write_case_studies(directory, days: int = 14, warmup_days: int = 21, seed: int = 11) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    start = RUN_START - timedelta(days=warmup_days)
    for k, (fname, kw) in enumerate(sorted(SIGNALS.items())):
        sig = synthetic_signals(start, warmup_days + days + 1, seed=seed + k, **kw)
        write_signals_csv(sig, directory / fname)
        written.append(directory / fname)
    for name, spec in case_studies().items():
        path = directory / f"{name}.json"
        save_scenario(spec, path)
        written.append(path)
    return written
