import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from packrl.config import Config
from packrl.machine import BoxUnit
from packrl.scenario import constant_scenario, generate_scenario
from packrl.sim import MetricError, MetricsAccumulator, Simulation, oee_index, oee_report

from conftest import manual_timetable


@pytest.mark.parametrize("speed", [0.02, 0.16, 0.30])
def test_empty_machine_loses_nothing(config, speed):
    sim = Simulation(config, manual_timetable(episode_length=20.0), initial_speed=speed)
    while not sim.done:
        out = sim.step(speed)
        assert (out.products_lost, out.boxes_lost_empty, out.boxes_lost_partly) == (0, 0, 0)


def test_full_box_crossing_checkout_is_packed(config):
    sim = Simulation(config, manual_timetable(episode_length=5.0), initial_speed=0.3)
    sim.boxes.append(BoxUnit(99, 0.01, 0.0, fill=[5, 5]))
    sim.metrics.boxes_supplied += 1
    out = sim.step(0.3)
    assert out.boxes_packed == 1 and sim.metrics.boxes_packed == 1
    assert (out.products_lost, out.boxes_lost_empty, out.boxes_lost_partly) == (0, 0, 0)


def test_clock(config):
    sim = Simulation(config, manual_timetable(episode_length=3.0, warmup=2.0))
    assert sim.k == 0 and sim.time == 0.0
    sim.step()
    assert sim.k == 1 and sim.time == pytest.approx(1.0)
    sim.step()
    sim.step()
    assert sim.done


def test_steady_inflow_matched_speed_no_losses(config):
    speed = config.machine.matched_speed(240)
    tt = constant_scenario(120, 300.0)
    sim = Simulation(config, tt, initial_speed=speed)
    while not sim.done:
        sim.step(speed)
    acc = sim.metrics
    assert acc.products_lost == 0 and acc.boxes_lost_empty == 0 and acc.boxes_lost_partly == 0
    rep = oee_report(acc)
    assert rep.performance == 100.0 and rep.quality == 100.0


def test_oee_examples():
    assert oee_index(998, 1000) == pytest.approx(99.8)
    assert oee_index(9931, 10000) == pytest.approx(99.31)
    assert oee_index(100, 100) == 100.0
    acc = MetricsAccumulator(products_supplied=1000, products_packed=998, boxes_supplied=100, boxes_packed=100)
    acc.lost_products = [2]
    rep = oee_report(acc)
    assert rep.performance == pytest.approx(99.8) and rep.quality == 100.0 and rep.oee == pytest.approx(99.8)
    assert rep.availability == 100.0


def test_oee_undefined_without_entities():
    with pytest.raises(MetricError):
        oee_report(MetricsAccumulator())


@given(
    packed=st.integers(0, 200),
    empty=st.integers(0, 5),
    partly=st.integers(0, 5),
)
def test_quality_is_100_iff_no_box_losses(packed, empty, partly):
    acc = MetricsAccumulator(products_packed=1, boxes_packed=packed)
    acc.lost_empty, acc.lost_partly = [empty], [partly]
    if packed + empty + partly == 0:
        return
    q = oee_report(acc).quality
    assert (q == 100.0) == (empty + partly == 0)


def _run(config, seed, speed, **kw):
    sim = Simulation(config, generate_scenario(config.scenario, seed), **kw)
    while not sim.done:
        sim.step(speed)
    return sim


def test_determinism(config):
    cfg = config.replace(scenario={"episode_length": 120.0})
    a = _run(cfg, 5, 0.18, record_events=True)
    b = _run(cfg, 5, 0.18, record_events=True)
    assert a.events == b.events
    assert a.metrics.lost_products == b.metrics.lost_products
    assert a.metrics.substep_speeds == b.metrics.substep_speeds


def test_clone_is_independent(config):
    cfg = config.replace(scenario={"episode_length": 60.0})
    sim = Simulation(cfg, generate_scenario(cfg.scenario, 1))
    for _ in range(5):
        sim.step(0.2)
    twin = sim.clone()
    for _ in range(10):
        twin.step(0.05)
    assert sim.k == 5 and twin.k == 15
    for _ in range(10):
        sim.step(0.05)
    assert (sim.observation() == twin.observation()).all()


@settings(max_examples=8)
@given(seed=st.integers(0, 100_000), speeds=st.lists(st.floats(0.02, 0.30), min_size=1, max_size=8))
def test_conservation_every_tick(seed, speeds):
    cfg = Config().replace(scenario={"episode_length": 90.0})
    sim = Simulation(cfg, generate_scenario(cfg.scenario, seed), check_conservation=True)
    while not sim.done:
        sim.step(speeds[sim.k % len(speeds)])
    assert sim.metrics.products_in_flight == sim.in_flight()[0]
