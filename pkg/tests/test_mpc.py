"""Horizon problem assembly, solution and audit.

Every Optimal plan produced here goes through ``audit_plan``: the audit
recomputes each constraint family with plain loops over the plan and
reports the largest residual, plus the gap between the solver objective
and the exact quadratic objective.
"""

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from districtems.core import (
    ResourceLimits,
    StateSpaceDemand,
    StorageTech,
    SubsystemSpec,
    SupplyTech,
    TimeGrid,
    TimeSeriesDemand,
)
from districtems.mpc import (
    Forecasts,
    InfeasibleSubproblem,
    MissingForecastError,
    MpcError,
    apply_first_step,
    audit_passes,
    audit_plan,
    build_subproblem,
    plan_to_csv,
    solve_subproblem,
)
from districtems.ssm import StateSpaceModel


def checked(spec, fc=None, soc=None, x=None, method="auto"):
    plan = solve_subproblem(spec, fc, soc, x, method=method)
    report = audit_plan(spec, plan, fc, soc, x)
    assert audit_passes(report), report
    return plan


def boiler_spec():
    return SubsystemSpec(id="a", grid=TimeGrid(N=1),
                         supplies=(SupplyTech(id="boiler", eta={"gas": {"heat": 0.9}}),),
                         demands=(TimeSeriesDemand(id="d", dem={"heat": 9.0}),),
                         limits=ResourceLimits(alpha={"cost": {"gas": 1.0}}))


def trough_spec():
    return SubsystemSpec(
        id="c", grid=TimeGrid(N=3, dt=60),
        supplies=(SupplyTech(id="g", eta={"elec": {"heat": 1.0}}, store_connected=True),),
        stores=(StorageTech(id="tes", energy="heat", soc_max=100, u_max=100, v_max=100),),
        demands=(TimeSeriesDemand(id="d", dem={"heat": (0, 0, 5)}),),
        limits=ResourceLimits(alpha={"cost": {"elec": (1, 0.1, 1)}}))


def room_spec(N=24, one_sided=()):
    model = StateSpaceModel(A=((0.9,),), B={"heat": (0.1,)}, E={"amb": (0.05,)}, C=((1.0,),))
    room = StateSpaceDemand(id="room", model=model, x_init=(18.0,), sp_lo=(20.0,), sp_up=(22.0,), gamma=1.0,
                            one_sided=one_sided)
    return SubsystemSpec(id="e", grid=TimeGrid(N=N), supplies=(SupplyTech(id="boiler", eta={"gas": {"heat": 0.9}}),),
                         demands=(room,), phi_nrg=0.01, phi_slack=0.99,
                         limits=ResourceLimits(alpha={"cost": {"gas": 1.0}}))


# --- worked examples -------------------------------------------------------


@pytest.mark.parametrize("method", ["simplex", "highs"])
def test_single_boiler(method):
    plan = checked(boiler_spec(), method=method)
    assert plan.v_sup["boiler", "gas", "heat"][0] == pytest.approx(10.0, abs=1e-9)
    assert plan.objective == pytest.approx(10.0, abs=1e-9)
    assert plan.psub["gas"][0] == pytest.approx(10.0, abs=1e-9)


def test_two_supplies_cheap_first():
    cheap = SupplyTech(id="a", eta={"gas": {"heat": 1.0}}, tech_max={"gas": {"heat": 5.0}})
    dear = SupplyTech(id="b", eta={"oil": {"heat": 0.8}})
    spec = SubsystemSpec(id="b", grid=TimeGrid(N=1), supplies=(cheap, dear),
                         demands=(TimeSeriesDemand(id="d", dem={"heat": 9.0}),),
                         limits=ResourceLimits(alpha={"cost": {"gas": 0.5, "oil": 1.0}}))
    plan = checked(spec)
    assert plan.v_sup["a", "gas", "heat"][0] == pytest.approx(5.0)
    assert plan.v_sup["b", "oil", "heat"][0] == pytest.approx(4.0 / 0.8)
    assert plan.objective == pytest.approx(0.5 * 5 + 1.0 * 5)


def test_zero_demand_gives_zero_plan():
    spec = trough_spec().model_copy(update={"demands": (TimeSeriesDemand(id="d", dem={"heat": 0.0}),)})
    plan = checked(spec)
    assert plan.objective == pytest.approx(0.0, abs=1e-12)
    for v in list(plan.v_sup.values()) + list(plan.v_sto.values()) + list(plan.u_sto.values()):
        assert np.allclose(v, 0.0, atol=1e-12)


@pytest.mark.parametrize("method", ["simplex", "highs"])
def test_price_trough_charges_store(method):
    plan = checked(trough_spec(), method=method)
    assert np.allclose(plan.v_sto["tes"], [0, 5, 0], atol=1e-9)
    assert np.allclose(plan.u_sto["tes"], [0, 0, 5], atol=1e-9)
    assert plan.objective == pytest.approx(0.5, abs=1e-9)
    first = apply_first_step(plan)
    assert first.get("v_sto[tes]") == pytest.approx(0.0)
    assert first.get("v_sup[g,elec,heat]") == pytest.approx(0.0)


def test_co2_weights_pick_heat_pump():
    hp = SupplyTech(id="hp", eta={"elec": {"heat": 3.0}})
    boiler = SupplyTech(id="boiler", eta={"gas": {"heat": 0.9}})
    spec = SubsystemSpec(id="h", grid=TimeGrid(N=4), supplies=(hp, boiler),
                         demands=(TimeSeriesDemand(id="d", dem={"heat": 30.0}),),
                         limits=ResourceLimits(alpha={"co2": {"elec": 0.1, "gas": 0.184}}))
    plan = checked(spec)
    assert np.allclose(plan.v_sup["hp", "elec", "heat"], 10.0)
    assert np.allclose(plan.v_sup["boiler", "gas", "heat"], 0.0)


def test_tight_resource_cap_reports_infeasible_step():
    spec = trough_spec().model_copy(update={"limits": ResourceLimits(p_max={"elec": 1.0},
                                                                     alpha={"cost": {"elec": 1.0}})})
    with pytest.raises(InfeasibleSubproblem) as info:
        solve_subproblem(spec)
    assert info.value.report.step == 2
    assert info.value.report.channel == "elec"


def test_static_balance_precheck():
    spec = boiler_spec().model_copy(update={"supplies": (SupplyTech(id="boiler", eta={"gas": {"heat": 0.9}},
                                                                    tech_max={"gas": {"heat": 5.0}}),)})
    with pytest.raises(InfeasibleSubproblem, match="balance"):
        build_subproblem(spec)


def test_missing_disturbance_forecast():
    with pytest.raises(MissingForecastError):
        build_subproblem(room_spec())


def test_first_step_needs_optimal_plan():
    plan = checked(boiler_spec())
    plan.status = "Infeasible"
    with pytest.raises(MpcError):
        apply_first_step(plan)


# --- state-space demands ---------------------------------------------------


@pytest.mark.parametrize("method", ["simplex", "highs"])
def test_room_band_and_objective(method):
    fc = Forecasts(disturbance={"room": {"amb": np.full(24, 5.0)}})
    plan = checked(room_spec(), fc, method=method)
    assert plan.y["room"][0, 0] == pytest.approx(18.0)
    assert np.all(plan.y["room"][2:, 0] >= 20.0 - 1e-7)
    assert plan.eps["room"][0, 0] > 0
    assert abs(plan.objective - plan.true_objective) <= plan.slack_gap_bound + 1e-6


def test_one_sided_lower_band_ignores_upper():
    fc = Forecasts(disturbance={"room": {"amb": np.full(24, 5.0)}})
    s = room_spec(one_sided=("lower",))
    hot = s.model_copy(update={"demands": (s.demands[0].model_copy(update={"x_init": (30.0,)}),)})
    plan = checked(hot, fc)
    # above the band costs nothing on a lower-only set-point
    assert np.allclose(plan.eps["room"][:4], 0.0, atol=1e-9)


def test_variable_index_is_bijective():
    lp, idx = build_subproblem(trough_spec(), names=True)
    assert idx.is_bijective(lp.n)
    assert len(set(lp.names)) == lp.n


def test_plan_csv_has_row_per_step():
    text = plan_to_csv(checked(trough_spec()))
    lines = text.strip().splitlines()
    assert len(lines) == 1 + 3
    assert "v_sto[tes]" in lines[0]


def test_terminal_soc_constraint():
    st_ = StorageTech(id="tes", energy="heat", soc_init=20.0, soc_max=100, u_max=100, v_max=100)
    spec = trough_spec().model_copy(update={"stores": (st_,)})
    free = checked(spec)
    assert free.soc["tes"][-1] < 20.0
    held = checked(spec.model_copy(update={"stores": (st_.model_copy(update={"terminal": True}),)}))
    assert held.soc["tes"][-1] >= 20.0 - 1e-9
    assert held.objective >= free.objective - 1e-9


# --- properties ------------------------------------------------------------


@st.composite
def store_problems(draw):
    N = draw(st.integers(1, 5))
    prices = draw(st.lists(st.floats(0.0, 1.0), min_size=N, max_size=N))
    demand = draw(st.lists(st.floats(0.0, 20.0), min_size=N, max_size=N))
    eta = draw(st.floats(0.5, 1.0))
    loss = draw(st.floats(0.8, 1.0))
    beta = draw(st.floats(0.0, 0.2))
    soc0 = draw(st.floats(0.0, 30.0))
    store = StorageTech(id="tes", energy="heat", eta_stl=loss, eta_stv=eta, eta_stu=eta, soc_init=soc0,
                        soc_max=30.0, u_max=10.0, v_max=10.0, beta=beta)
    grid_sup = SupplyTech(id="g", eta={"elec": {"heat": 1.0}}, tech_max={"elec": {"heat": 40.0}}, store_connected=True)
    gas = SupplyTech(id="b", eta={"gas": {"heat": 0.9}}, tech_max={"gas": {"heat": 40.0}})
    spec = SubsystemSpec(id="p", grid=TimeGrid(N=N, dt=draw(st.sampled_from([15.0, 60.0]))),
                         supplies=(grid_sup, gas), stores=(store,),
                         demands=(TimeSeriesDemand(id="d", dem={"heat": tuple(demand)}),),
                         limits=ResourceLimits(alpha={"cost": {"elec": tuple(prices), "gas": 0.5}}),
                         phi_nrg=0.9, phi_pen=0.1)
    return spec


@settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(store_problems())
def test_random_plans_pass_audit(spec):
    checked(spec, method="simplex")


@settings(max_examples=25, deadline=None)
@given(store_problems(), st.floats(0.0, 40.0))
def test_relaxing_pmax_never_increases_cost(spec, cap):
    loose = checked(spec)
    fc = Forecasts(p_max={"elec": np.full(spec.grid.N, cap)})
    try:
        tight = checked(spec, fc)
    except InfeasibleSubproblem:
        return
    assert loose.objective <= tight.objective + 1e-7


@settings(max_examples=20, deadline=None)
@given(store_problems(), st.floats(0.1, 1.0))
def test_alpha_scaling_sandwich(spec, lam):
    base = checked(spec)
    fc = Forecasts(alpha={"cost": {p: lam * np.asarray(v, dtype=float) * np.ones(spec.grid.N)
                                   for p, v in spec.limits.alpha["cost"].items()}})
    scaled = checked(spec, fc)
    pn, pp, _ = base.phi
    # the old plan stays feasible, and J_lam >= lam * J for lam <= 1
    assert scaled.objective <= pn * lam * base.j_nrg.sum() + pp * base.j_pen.sum() + 1e-7
    assert scaled.objective >= lam * base.objective - 1e-7
