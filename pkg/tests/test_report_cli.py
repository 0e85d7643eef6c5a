import json

import pytest

from packrl.cli import main
from packrl.config import Config
from packrl.report import comparison_table, recount_from_events, relative_delta, report_from_metrics
from packrl.runner import resolve_scenario, run_episode
from packrl.scenario import step_scenario


def _report(**over):
    from packrl.report import RunReport

    base = dict(
        controller="x",
        scenario="s",
        products_supplied=1000,
        products_packed=998,
        products_lost=2,
        boxes_supplied=100,
        boxes_packed=100,
        boxes_lost_empty=0,
        boxes_lost_partly=0,
        mean_abs_dv=0.001,
        mean_abs_dv_actuated=0.001,
        max_abs_dv=0.01,
        max_abs_accel=0.05,
        accel_limit=0.05,
        control_tick=1.0,
        ticks=600,
    )
    base.update(over)
    return RunReport(**base)


def test_flags_follow_counters():
    r = _report()
    assert r.performance == pytest.approx(99.8) and r.quality == 100.0
    assert all(r.flags.values())
    bad = _report(products_packed=990, products_lost=10, boxes_packed=99, boxes_lost_partly=1, max_abs_dv=0.2)
    flags = bad.flags
    assert not flags["performance"] and not flags["partly_filled_boxes"] and not flags["commanded_acceleration"]
    assert flags["empty_boxes"] and flags["acceleration"]


def test_relative_delta():
    assert relative_delta(1.28, 19.0) == pytest.approx(-93.263, abs=1e-3)
    assert relative_delta(0.0, 0.0) == 0.0


def test_report_recomputable_from_event_log():
    cfg = Config().replace(scenario={"episode_length": 300.0})
    tt = step_scenario([(0.0, 135.0), (160.0, 110.0)], 300.0, jitter=0.2, seed=3)
    run = run_episode(cfg, tt, "baseline", label="dip")
    audit = recount_from_events(run.events, cfg.machine.products_per_box)
    for key, value in audit.items():
        assert getattr(run.report, key) == value
    assert run.report.products_lost > 0


def test_comparison_table_has_every_controller():
    a, b = [_report(controller="rl")], [_report(controller="baseline", products_lost=4, products_packed=996)]
    text = comparison_table({"rl": a, "baseline": b}, "baseline")
    assert "rl vs baseline" in text and "-50.00%" in text


def test_run_is_byte_identical(tmp_path, capsys):
    args = ["run", "--controller", "baseline", "--seed", "7"]
    assert main([*args, "--out-dir", str(tmp_path / "a")]) == 0
    assert main([*args, "--out-dir", str(tmp_path / "b")]) == 0
    for name in ("report.json", "report.txt", "baseline.trace.csv", "baseline.events.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    trace = (tmp_path / "a" / "baseline.trace.csv").read_text().splitlines()
    assert trace[0] == "t,v_command,v_actuated,inflow_lane1,inflow_lane2,cumulative_lost"
    assert len(trace) == 601


def test_constant_matched_run_passes_all_flags(tmp_path, monkeypatch):
    speed = Config().machine.matched_speed(240)
    scenario = tmp_path / "const.csv"
    from packrl.scenario import constant_scenario, export_csv

    export_csv(constant_scenario(120, 600.0), scenario)
    monkeypatch.setenv("PACKRL_SCENARIO_WARMUP_SPEED", repr(speed))
    out = tmp_path / "out"
    rc = main(["replay", str(scenario), "--controller", "constant", "--speed", repr(speed), "--out-dir", str(out)])
    assert rc == 0
    rep = json.loads((out / "report.json").read_text())["constant"]["episodes"][0]
    assert rep["performance"] == 100.0 and rep["quality"] == 100.0 and all(rep["flags"].values())


def test_eval_shares_scenarios_and_handles_untrained_policy(tmp_path):
    rc = main(["eval", "--untrained", "--episodes", "2", "--seed", "40", "--out-dir", str(tmp_path)])
    assert rc == 0
    data = json.loads((tmp_path / "report.json").read_text())
    assert set(data) == {"constant", "baseline", "rl"}
    supplied = {c: [e["products_supplied"] for e in data[c]["episodes"]] for c in data}
    assert supplied["rl"] == supplied["baseline"] == supplied["constant"]
    text = (tmp_path / "report.txt").read_text()
    assert "Mean (Std.)" in text and "rl vs baseline" in text
    assert (tmp_path / "timing.json").exists()


@pytest.mark.parametrize(
    "argv",
    [
        ["eval", "--controller", "rl", "--episodes", "1"],
        ["run", "--scenario", "csv:/nonexistent.csv"],
        ["run", "--scenario", "weird"],
        ["run", "--config", "/nonexistent.yaml"],
    ],
)
def test_errors_give_nonzero_exit(argv, tmp_path, capsys):
    assert main([*argv, "--out-dir", str(tmp_path)]) != 0
    assert "error:" in capsys.readouterr().err


def test_bad_csv_line_reported(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("time_s,lane,kind\n5.0,3,product\n")
    assert main(["replay", str(bad), "--out-dir", str(tmp_path)]) != 0
    assert "lane out of range, line 2" in capsys.readouterr().err


def test_env_override_reaches_config(monkeypatch):
    monkeypatch.setenv("PACKRL_REWARD_ZETA", "0.25")
    from packrl.config import load_config

    assert load_config().reward.zeta == 0.25


def test_scenario_sources(tmp_path):
    cfg = Config()
    label, tt = resolve_scenario("random:5", cfg)
    assert label == "random:5" and tt.products
    with pytest.raises(Exception):
        resolve_scenario("random:x", cfg)


def test_export_scenario(tmp_path):
    assert main(["export-scenario", "--seed", "3", "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "scenario_3.csv").read_text().startswith("# warmup=")
