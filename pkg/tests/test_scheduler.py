import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from packrl.machine import BoxUnit, ProductStatus, ProductUnit
from packrl.scenario import constant_scenario, generate_scenario
from packrl.sim import Simulation

from conftest import manual_timetable


def _empty_sim(config, speed=None):
    return Simulation(config, manual_timetable(episode_length=30.0), initial_speed=speed)


def test_first_box_goes_to_first_pair(config):
    sim = Simulation(config, manual_timetable(boxes=[0.0]))
    sim.step()
    assert [b.assigned_pair for b in sim.boxes] == [0]


def test_second_box_goes_to_second_pair(config):
    sim = Simulation(config, manual_timetable(boxes=[0.0, 0.5]))
    sim.step()
    assert [b.assigned_pair for b in sim.boxes] == [0, 1]


def test_schedule_window_arithmetic(config):
    sim = _empty_sim(config)
    sim.step()
    box = BoxUnit(100, 3.5, sim.time, assigned_pair=0)
    product = ProductUnit(100, 1, 3.6, sim.time)
    sim.boxes.append(box)
    sim.products.append(product)
    robot = sim.robots[0]
    sched = sim.scheduler._commit(box, robot, [product])
    # C1: product reaches R1's workspace start 3.0 m; C3: it leaves R4's end at 0.6 m
    assert sched.c1 == pytest.approx(sched.created_at + 2.0)
    assert sched.c3 == pytest.approx(sched.created_at + (3.6 - 0.6) / 0.3)
    assert sched.c2 >= sched.c1
    assert sched.c4 == robot.end
    assert product.status is ProductStatus.ASSIGNED and box.committed


def test_place_deadline_moves_with_speed_only(config):
    sim = _empty_sim(config)
    sim.step()
    box = BoxUnit(100, 2.5, sim.time, assigned_pair=0)
    product = ProductUnit(100, 1, 3.6, sim.time)
    sim.boxes.append(box)
    sim.products.append(product)
    sched = sim.scheduler._commit(box, sim.robots[1], [product])
    windows = (sched.c1, sched.c2, sched.c3)
    slow = sched.place_deadline(box.position, 0.1, sim.time)
    fast = sched.place_deadline(box.position, 0.2, sim.time)
    assert slow - sim.time == pytest.approx((2.5 - 1.8) / 0.1)
    assert fast - sim.time == pytest.approx((2.5 - 1.8) / 0.2)
    assert (sched.c1, sched.c2, sched.c3) == windows


def _hold(sim, robot_index, product_pos, box_pos):
    robot = sim.robots[robot_index]
    box = BoxUnit(100, box_pos, sim.time, assigned_pair=robot.pair, committed=True)
    product = ProductUnit(100, 1, product_pos, sim.time)
    sim.boxes.append(box)
    sim.products.append(product)
    sched = sim.scheduler._commit(box, robot, [product])
    robot.queue.clear()
    product.position = robot.start - 0.01
    sim.pick_product(robot, product, box, sched)
    return robot, product, box


def test_idle_robot_picks_product_in_window(config):
    sim = Simulation(config, constant_scenario(120, 60.0, warmup=0.0), record_events=True)
    while not sim.done:
        sim.step()
    picks = [e for e in sim.events if e[1] == "pick"]
    assert picks
    windows = {s.id: s for s in sim.schedules}
    by_product = {pid: s for s in sim.schedules for pid in s.product_ids}
    for t, _, pid, rid, _ in picks:
        s = by_product[pid]
        assert s.robot_id == rid and s.c1 - 1e-9 <= t <= s.c3 + 1e-9
    assert windows


def test_robot_holds_until_box_arrives(config):
    sim = _empty_sim(config, speed=0.02)
    sim.step()
    robot, product, box = _hold(sim, 0, 3.2, 3.3)
    events_before = len(sim.events)
    sim.step(0.02)
    assert robot.held_product is product and box.fill == [0, 0]
    assert not [e for e in sim.events[events_before:] if e[1] == "place"]


def test_box_escaping_busy_robot_loses_product(config):
    sim = _empty_sim(config, speed=0.3)
    sim.step()
    robot, product, box = _hold(sim, 1, 2.3, 1.85)
    robot.busy_until = sim.substep + 100  # still mid-cycle when the box passes
    sim.step(0.3)
    assert product.status is ProductStatus.LOST
    assert any(e[1] == "drop" and e[2] == product.id for e in sim.events)


class _AuditedSim(Simulation):
    """Checks pick and place geometry as they happen."""

    def pick_product(self, robot, p, box, sched):
        assert robot.covers(p.position), (robot.id, p.position)
        assert sched.c1 - 1e-9 <= self.time <= sched.c3 + 1e-9
        super().pick_product(robot, p, box, sched)

    def place_product(self, robot):
        box = robot.held_box
        assert robot.end < box.position <= robot.start and box.position >= 0
        super().place_product(robot)


@settings(max_examples=6)
@given(seed=st.integers(0, 10_000), speed=st.floats(0.12, 0.26))
def test_picks_and_places_respect_geometry(seed, speed):
    from packrl.config import Config

    cfg = Config().replace(scenario={"episode_length": 120.0})
    sim = _AuditedSim(cfg, generate_scenario(cfg.scenario, seed), record_events=True)
    while not sim.done:
        sim.step(speed)
    counts = [0, 0]
    for e in sim.events:
        if e[1] == "box_assigned":
            counts[e[4]] += 1
            assert abs(counts[0] - counts[1]) <= 1
    for b in list(sim.boxes):
        assert 0 <= b.fill[0] <= 5 and 0 <= b.fill[1] <= 5
