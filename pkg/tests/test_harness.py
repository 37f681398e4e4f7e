"""Runner, metrics, sweeps, link protocol and CLI."""

import json
import socket
import time
import warnings
from datetime import datetime, timezone

import numpy as np
import pytest

from districtems.core import ScenarioError
from districtems.harness import RunConfig, cv_rmse, mae, metrics, nmbe, read_trace, run_scenario
from districtems.harness.cli import exit_code, main
from districtems.harness.link import LinkClient, LinkError, LinkTimeout, serve_link
from districtems.harness.runner import RunError
from districtems.harness.sweep import frontier_csv, parse_weights, pareto_sweep
from districtems.lpsolve import LpError
from districtems.mpc import MpcError
from districtems.twin import energy_balance_check

QUARTER_DAY = 0.25


def quiet_run(cfg):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return run_scenario(cfg)


# --- metrics ---------------------------------------------------------------


def test_calibration_statistics():
    m = np.full(20, 10.0) + np.sin(np.arange(20))
    m -= m.mean() - 10.0
    assert nmbe(m, m) == 0.0 and cv_rmse(m, m) == 0.0
    assert nmbe(m + 1.0, m) == pytest.approx(10.0)
    assert cv_rmse(m + 1.0, m) == pytest.approx(10.0)
    assert mae(m + 1.0, m) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        nmbe([], [])
    with pytest.raises(ValueError):
        cv_rmse([1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        nmbe([1.0, -1.0], [1.0, -1.0])


def random_trace(n=50, seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(n):
        hp, bo, ev = rng.uniform(0, 50), rng.uniform(0, 80), rng.uniform(0, 40)
        pv = rng.uniform(0, 30)
        used = min(pv, ev)
        rows.append(dict(price_elec=rng.uniform(0.05, 0.3), price_gas=0.04, co2_elec=rng.uniform(0.1, 0.3),
                         q_hp=3 * hp, q_boiler=0.9 * bo, hp_elec=hp, boiler_gas=bo, ev_request=ev, ev_served=ev,
                         pv_avail=pv, pv_used=used, ev_grid=ev - used, elec_total=hp + ev - used,
                         T_net=rng.uniform(48, 62), fc=rng.normal(), act=rng.normal()))
    return rows


def test_metrics_match_naive_recomputation():
    rows = random_trace()
    factors = {"elec": {"cost": "price_elec", "co2": "co2_elec"}, "gas": {"cost": "price_gas", "co2": 0.184},
               "solar": {"cost": 0.0, "co2": 0.0}}
    usage = {"heat": {"elec": "hp_elec", "gas": "boiler_gas"}, "ev": {"elec": "ev_grid", "solar": "pv_used"}}
    rep = metrics(rows, dt=15.0, factors=factors, usage=usage, p_lim=60.0, band=("T_net", 50.0, 60.0),
                  forecast_pairs={"x": ("fc", "act")})
    cost = co2 = viol = pv_used = pv_gen = served = 0.0
    band = []
    for r in rows:
        cost += 0.25 * (r["hp_elec"] * r["price_elec"] + r["boiler_gas"] * 0.04 + r["ev_grid"] * r["price_elec"])
        co2 += 0.25 * (r["hp_elec"] * r["co2_elec"] + r["boiler_gas"] * 0.184 + r["ev_grid"] * r["co2_elec"])
        if r["elec_total"] > 60.0:
            viol += 0.25 * (r["elec_total"] - 60.0)
        pv_used += 0.25 * r["pv_used"]
        pv_gen += 0.25 * r["pv_avail"]
        served += 0.25 * r["ev_served"]
        band.append(max(0.0, 50.0 - r["T_net"], r["T_net"] - 60.0))
    assert rep.cost == pytest.approx(cost, abs=1e-9)
    assert rep.co2 == pytest.approx(co2, abs=1e-9)
    assert rep.violation_total == pytest.approx(viol, abs=1e-9)
    assert rep.pv_utilisation == pytest.approx(100 * pv_used / pv_gen, abs=1e-9)
    assert rep.pv_contribution == pytest.approx(100 * pv_used / served, abs=1e-9)
    assert rep.band_violation_max == pytest.approx(max(band), abs=1e-12)
    assert rep.forecast_mae["x"] == pytest.approx(np.mean([abs(r["fc"] - r["act"]) for r in rows]), abs=1e-12)
    # breakdowns add up
    assert sum(rep.cost_by_subsystem.values()) == pytest.approx(rep.cost, abs=1e-6)
    assert sum(rep.co2_by_subsystem.values()) == pytest.approx(rep.co2, abs=1e-6)
    assert sum(rep.supply_mix.values()) == pytest.approx(rep.heat_generated, abs=1e-6)
    assert 0.0 <= rep.pv_utilisation <= 100.0 and 0.0 <= rep.pv_contribution <= 100.0


def test_metrics_reject_empty_trace():
    with pytest.raises(ValueError):
        metrics([], dt=15.0, factors={}, usage={})


# --- runner ----------------------------------------------------------------


def test_zero_demand_day(small_scenarios):
    res = quiet_run(RunConfig(str(small_scenarios["zero"]), days=1))
    assert res.report.steps == 96
    assert res.report.cost == 0.0 and res.report.co2 == 0.0
    assert res.report.violation_total == 0.0 and res.report.ev_served == 0.0


def test_short_coordinated_run_is_balanced_and_repeatable(small_scenarios, tmp_path):
    cfg = RunConfig(str(small_scenarios["both"]), days=QUARTER_DAY, out=str(tmp_path / "a"))
    a = quiet_run(cfg)
    b = quiet_run(RunConfig(str(small_scenarios["both"]), days=QUARTER_DAY, out=str(tmp_path / "b")))
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()
    assert max(energy_balance_check(a.rows).values()) <= 1e-6
    assert max(energy_balance_check(read_trace(tmp_path / "a" / "trace.csv")).values()) <= 1e-6
    assert set(a.paths) >= {"trace", "summary", "metrics"}
    data = json.loads((tmp_path / "a" / "metrics.json").read_text())
    assert data["cost"] == pytest.approx(a.report.cost)
    assert a.report.co2 == b.report.co2


def test_unknown_scenario_file():
    with pytest.raises(ScenarioError):
        run_scenario(RunConfig("/nonexistent/scenario.json", days=1))


def test_run_span_must_be_whole_steps(small_scenarios):
    with pytest.raises(ValueError):
        run_scenario(RunConfig(str(small_scenarios["zero"]), days=0.001))


# --- sweep -----------------------------------------------------------------


def test_parse_weights():
    assert parse_weights("1,0; 0.5,0.5;") == [(1.0, 0.0), (0.5, 0.5)]
    with pytest.raises(ValueError):
        parse_weights("1;2")
    with pytest.raises(ValueError):
        parse_weights(" ; ")


def test_sweep_single_identical_and_extreme_pairs(small_scenarios, tmp_path):
    cfg = RunConfig(str(small_scenarios["heat"]), days=QUARTER_DAY)
    one = pareto_sweep(cfg, [(1.0, 0.0)])
    assert len(one) == 1 and not one[0].error
    same = pareto_sweep(cfg, [(0.5, 0.5), (0.5, 0.5)])
    assert same[0].cost == same[1].cost and same[0].co2 == same[1].co2
    ends = pareto_sweep(cfg, [(0.0, 1.0), (1.0, 0.0)])
    assert [p.w_co2 for p in ends] == [0.0, 1.0]
    assert ends[0].cost <= ends[1].cost + 1e-6 and ends[1].co2 <= ends[0].co2 + 1e-6
    text = frontier_csv(ends, tmp_path / "f.csv")
    assert (tmp_path / "f.csv").read_text() == text and text.count("\n") == 3


def test_sweep_records_failures_and_continues(small_scenarios):
    cfg = RunConfig(str(small_scenarios["heat"]), days=QUARTER_DAY)
    pts = pareto_sweep(cfg, [(-1.0, 0.0), (1.0, 0.0)])
    assert "ScenarioError" in pts[0].error and pts[0].cost is None
    assert not pts[1].error


# --- link ------------------------------------------------------------------


def echo_engine(calls):
    def engine(t, values):
        calls.append(t)
        return {"u": 2.0 * values.get("x", 0.0)}
    return engine


@pytest.fixture
def server():
    calls = []
    srv = serve_link(echo_engine(calls), port=0)
    yield srv, calls
    srv.stop()


def test_link_echoes_clock(server):
    srv, calls = server
    with LinkClient("127.0.0.1", srv.port) as c:
        assert c.exchange("2018-11-01T00:00:00Z", {"x": 1.5}) == {"u": 3.0}
        reply = c.send_raw(b'{"type":"measurements","t":"2018-11-01T00:15:00Z","values":{"x":1}}')
        assert reply["type"] == "setpoints" and reply["t"] == "2018-11-01T00:15:00Z"


def test_link_resend_is_idempotent(server):
    srv, calls = server
    with LinkClient("127.0.0.1", srv.port) as c:
        a = c.exchange("2018-11-01T00:00:00Z", {"x": 1.0})
        b = c.exchange("2018-11-01T00:00:00Z", {"x": 1.0})
    assert a == b and len(calls) == 1


def test_link_malformed_then_recovers(server):
    srv, _ = server
    with LinkClient("127.0.0.1", srv.port) as c:
        for bad in (b"not json", b"[1,2]", b'{"type":"hello","t":"x"}', b'{"type":"measurements","t":5}',
                    b'{"type":"measurements","t":"2018-11-01T00:00:00Z","values":{"x":"a"}}'):
            reply = c.send_raw(bad)
            assert reply["type"] == "error" and reply["reason"]
        assert c.exchange("2018-11-01T00:30:00Z", {"x": 2.0}) == {"u": 4.0}


def test_link_engine_error_reported(server):
    srv, _ = server
    srv.engine = lambda t, v: 1 / 0
    with LinkClient("127.0.0.1", srv.port) as c:
        with pytest.raises(LinkError, match="ZeroDivisionError"):
            c.exchange("2018-11-01T00:00:00Z", {})


def test_link_timeout():
    lsock = socket.socket()
    lsock.bind(("127.0.0.1", 0))
    lsock.listen(1)
    port = lsock.getsockname()[1]
    try:
        c = LinkClient("127.0.0.1", port, timeout=0.2)
        t0 = time.perf_counter()
        with pytest.raises(LinkTimeout):
            c.exchange("2018-11-01T00:00:00Z", {})
        assert time.perf_counter() - t0 < 2.0
        c.close()
    finally:
        lsock.close()


def test_link_refused():
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    with pytest.raises(LinkError):
        LinkClient("127.0.0.1", port, timeout=0.5)


def test_run_over_link_matches_in_process(small_scenarios):
    from districtems.harness.runner import controller_engine, prepare

    cfg = RunConfig(str(small_scenarios["heat"]), days=QUARTER_DAY)
    local = quiet_run(cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        ses = prepare(cfg)
    srv = serve_link(controller_engine(ses.controller), port=0)
    try:
        remote = quiet_run(RunConfig(cfg.scenario, days=QUARTER_DAY, link=f"127.0.0.1:{srv.port}"))
    finally:
        srv.stop()
    from districtems.twin import LEDGER_COLUMNS
    from districtems.harness.runner import rows_to_csv

    assert rows_to_csv(remote.rows, LEDGER_COLUMNS) == rows_to_csv(local.rows, LEDGER_COLUMNS)


# --- CLI -------------------------------------------------------------------


def test_exit_code_categories():
    assert exit_code(ScenarioError("x")) == 3
    assert exit_code(MpcError("x")) == 4
    assert exit_code(LpError("x")) == 4
    assert exit_code(RunError(3, datetime(2018, 11, 1, tzinfo=timezone.utc), MpcError("x"))) == 4
    assert exit_code(LinkTimeout("x")) == 5
    assert exit_code(KeyError("x")) == 1


def test_cli_run_and_report(small_scenarios, tmp_path, capsys):
    out = tmp_path / "run"
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        code = main(["run", "--scenario", str(small_scenarios["heat"]), "--days", "0.25", "--out", str(out)])
    assert code == 0
    assert "total cost" in capsys.readouterr().out
    assert main(["report", "--trace", str(out)]) == 0
    assert '"heat"' in capsys.readouterr().out


def test_cli_failures(tmp_path, small_scenarios, capsys):
    assert main(["run", "--scenario", str(tmp_path / "missing.json")]) == 3
    assert "scenario error" in capsys.readouterr().err
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        code = main(["run", "--scenario", str(small_scenarios["heat"]), "--days", "0.25", "--link",
                     f"127.0.0.1:{port}", "--timeout", "0.5"])
    assert code == 5
    assert "link error" in capsys.readouterr().err

