import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from packrl.config import ConfigError, MachineConfig
from packrl.machine import (
    BoxStatus,
    BoxUnit,
    Checkout,
    ProductStatus,
    ProductUnit,
    SpeedCommandError,
    advance_positions,
    build_robots,
    classify_at_checkout,
)


def test_product_moves_by_product_speed_times_dt():
    p = ProductUnit(0, 1, 2.0, 0.0)
    advance_positions([p], [], 0.3, 0.1, 0.05)
    assert p.position == pytest.approx(1.985, abs=1e-12)


def test_box_at_zero_speed_stays_put():
    b = BoxUnit(0, 1.0, 0.0)
    advance_positions([], [b], 0.3, 0.0, 0.05)
    assert b.position == 1.0


def test_repeated_integration_matches_closed_form():
    b = BoxUnit(0, 0.5, 0.0)
    for _ in range(20):
        advance_positions([], [b], 0.3, 0.1, 0.05)
    assert b.position == pytest.approx(0.5 - 0.1 * 1.0, abs=1e-12)


def test_out_of_range_speed_rejected():
    with pytest.raises(SpeedCommandError):
        advance_positions([], [BoxUnit(0, 1.0, 0.0)], 0.3, 0.5, 0.05, bounds=(0.02, 0.3))


def test_only_belt_entities_move():
    held = ProductUnit(0, 1, 2.0, 0.0)
    held.set_status(ProductStatus.ASSIGNED)
    held.set_status(ProductStatus.HELD)
    packed_box = BoxUnit(1, 1.0, 0.0, status=BoxStatus.PACKED)
    advance_positions([held], [packed_box], 0.3, 0.1, 0.05)
    assert held.position == 2.0 and packed_box.position == 1.0


@pytest.mark.parametrize(
    "fill, expected",
    [((5, 5), Checkout.PACKED), ((0, 0), Checkout.LOST_EMPTY), ((5, 2), Checkout.LOST_PARTLY)],
)
def test_box_classification(fill, expected):
    assert classify_at_checkout(BoxUnit(0, -0.01, 0.0, fill=list(fill)), 5) is expected


def test_product_past_checkout_is_lost_and_inside_is_none():
    assert classify_at_checkout(ProductUnit(0, 1, -0.01, 0.0)) is Checkout.LOST
    assert classify_at_checkout(ProductUnit(0, 1, 0.2, 0.0)) is Checkout.NONE


def test_illegal_status_transition():
    p = ProductUnit(0, 1, 1.0, 0.0)
    with pytest.raises(ValueError):
        p.set_status(ProductStatus.PACKED)
    p.set_status(ProductStatus.LOST)
    with pytest.raises(ValueError):
        p.set_status(ProductStatus.ON_BELT)


def test_robot_layout():
    robots = build_robots(MachineConfig())
    assert [r.id for r in robots] == [1, 2, 3, 4]
    assert [(r.pair, r.layer_role) for r in robots] == [(0, "bottom"), (0, "top"), (1, "bottom"), (1, "top")]


@pytest.mark.parametrize(
    "kwargs",
    [
        {"box_speed_min": 0.3, "box_speed_max": 0.2},
        {"box_accel_max": 0.0},
        {"physics_subtick": 0.3},
        {"workspaces": ((3.0, 2.4), (2.5, 1.8), (1.8, 1.2), (1.2, 0.6))},
        {"workspaces": ((3.6, 2.4), (2.4, 1.8), (1.8, 1.2), (1.2, 0.6))},
        {"workspaces": ((3.0, 2.4), (2.4, 1.8), (1.8, 1.2), (1.2, 0.0))},
        {"layers_per_box": 3},
    ],
)
def test_config_invariants_rejected(kwargs):
    with pytest.raises(ConfigError):
        MachineConfig(**kwargs)


def test_matched_speed_formula():
    m = MachineConfig()
    # v = (R/60) * pitch / C for R products/min and C products per box
    assert m.matched_speed(240) == pytest.approx(240 / 60 * 0.45 / 10)


@given(
    positions=st.lists(st.floats(0.0, 3.6), min_size=1, max_size=20),
    speeds=st.lists(st.floats(0.02, 0.30), min_size=1, max_size=30),
)
def test_positions_never_increase(positions, speeds):
    products = [ProductUnit(i, 1, x, 0.0) for i, x in enumerate(positions)]
    boxes = [BoxUnit(i, x, 0.0) for i, x in enumerate(positions)]
    for v in speeds:
        before = [e.position for e in products + boxes]
        advance_positions(products, boxes, 0.3, v, 0.05, bounds=(0.02, 0.30))
        after = [e.position for e in products + boxes]
        assert all(a <= b for a, b in zip(after, before))
        assert all(math.isclose(b - a, 0.3 * 0.05, abs_tol=1e-12) for a, b in zip(after[: len(products)], before))
