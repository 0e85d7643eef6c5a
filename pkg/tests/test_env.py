import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from packrl.config import Config, MachineConfig, RewardConfig, ScenarioSpec
from packrl.env import PackagingEnv, VecEnv, rescale_action, reward, smoothness_penalty, unscale_speed
from packrl.features import FEATURE_NAMES, Normalizer, raw_features
from packrl.machine import ProductUnit
from packrl.scenario import (
    InflowFormatError,
    export_csv,
    generate_scenario,
    parse_inflow_csv,
)
from packrl.sim import Simulation

from conftest import manual_timetable

M = MachineConfig()


# -- action and reward -----------------------------------------------------------


@pytest.mark.parametrize("a, v", [(-1.0, 0.02), (1.0, 0.30), (0.0, 0.16)])
def test_rescale_endpoints_and_midpoint(a, v):
    speed, clipped = rescale_action(a, M)
    assert speed == pytest.approx(v) and not clipped


@pytest.mark.parametrize("a, v", [(1.5, 0.30), (-7.0, 0.02), (float("nan"), 0.16)])
def test_rescale_clips_and_flags(a, v):
    speed, clipped = rescale_action(a, M)
    assert speed == pytest.approx(v) and clipped


@given(a=st.floats(-1.0, 1.0))
def test_unscale_inverts_rescale(a):
    assert unscale_speed(rescale_action(a, M)[0], M) == pytest.approx(a, abs=1e-12)


def test_smoothness_penalty_examples():
    assert smoothness_penalty(0.15, 0.15, 0.1) == 0.0
    assert smoothness_penalty(0.2, 0.1, 0.1) == pytest.approx(-0.01)
    assert smoothness_penalty(0.1, 0.2, 0.1) == smoothness_penalty(0.2, 0.1, 0.1)


def test_reward_examples():
    cfg = RewardConfig()
    assert reward(0, 0, 0.2, 0.2, cfg) == 0.0
    assert reward(2, 1, 0.15, 0.10, cfg) == pytest.approx(-12.005)
    assert reward(0, 0, 0.30, 0.02, cfg) == pytest.approx(-0.028)


@given(
    lost=st.integers(0, 20),
    empty=st.integers(0, 3),
    v=st.floats(0.02, 0.30),
    w=st.floats(0.02, 0.30),
)
def test_reward_nonpositive_and_zero_iff_clean(lost, empty, v, w):
    r = reward(lost, empty, v, w, RewardConfig())
    assert r <= 0
    assert (r == 0) == (lost == 0 and empty == 0 and v == w)


# -- features ------------------------------------------------------------------------


def test_empty_machine_features():
    cfg = Config()
    sim = Simulation(cfg, manual_timetable(episode_length=5.0), initial_speed=M.box_speed_min)
    obs = sim.observation().reshape(7, -1)[:, 0]
    assert list(obs) == [-1.0, -1.0, -1.0, -1.0, 1.0, 1.0, 1.0]


def test_single_product_midway():
    cfg = Config()
    sim = Simulation(cfg, manual_timetable(episode_length=5.0))
    sim.products.append(ProductUnit(0, 1, 1.8, 0.0))
    unit = sim.normalizer.normalize(np.nan_to_num(raw_features(sim), nan=np.inf))
    assert unit[FEATURE_NAMES.index("x_prod1")] == 0.0
    assert unit[FEATURE_NAMES.index("x_prod2")] == 1.0


def test_history_slots_hold_past_values():
    cfg = Config().replace(scenario={"episode_length": 40.0})
    sim = Simulation(cfg, generate_scenario(cfg.scenario, 4))
    record = []
    for k in range(40):
        sim.step(0.12 + 0.003 * (k % 7))
        record.append(sim.observation().reshape(7, -1)[:, 0].copy())
        hist = sim.observation().reshape(7, -1)
        for h in range(min(k + 1, 31)):
            assert (hist[:, h] == record[k - h]).all()


@given(x=st.lists(st.floats(0.0, 1.0), min_size=7, max_size=7))
def test_normalization_is_bijective_in_range(x):
    norm = Normalizer(M, Config().features)
    lo, hi = norm.bounds[:, 0], norm.bounds[:, 1]
    raw = lo + np.array(x) * (hi - lo)
    back = norm.denormalize(norm.normalize(raw))
    assert np.allclose(back, raw, rtol=0, atol=4 * np.spacing(np.maximum(np.abs(raw), hi)))


def test_observation_shape_and_range():
    env = PackagingEnv(Config())
    obs = env.reset(3)
    assert obs.shape == (217,) and env.observation_size == 217
    assert np.all(np.abs(obs) <= 1.0)


# -- scenarios -----------------------------------------------------------------------


def _segment_rates(tt: ..., lane: int):
    out = []
    for seg in tt.segments[lane - 1]:
        end = min(seg.end, tt.horizon)
        dur = end - seg.start
        if dur < 10.0:
            continue
        n = tt.products_in(seg.start, end, lane)
        out.append((n, dur))
    return out


@settings(max_examples=30)
@given(seed=st.integers(0, 2**31))
def test_segment_rates_within_bounds(seed):
    spec = ScenarioSpec()
    tt = generate_scenario(spec, seed)
    for lane in (1, 2):
        for n, dur in _segment_rates(tt, lane):
            # +-2 arrivals at the segment edges from phase and jitter
            assert spec.rate_min * dur / 60 - 2 <= n <= spec.rate_max * dur / 60 + 2


def test_same_seed_same_timetable():
    spec = ScenarioSpec()
    assert generate_scenario(spec, 11) == generate_scenario(spec, 11)
    assert generate_scenario(spec, 11) != generate_scenario(spec, 12)


def test_rate_120_over_60s():
    spec = ScenarioSpec(rate_min=120.0, rate_max=120.0)
    tt = generate_scenario(spec, 2)
    for start in (0.0, 100.0, 300.0):
        assert abs(tt.products_in(start, start + 60.0, lane=1) - 120) <= 2


def test_csv_three_rows():
    tt = parse_inflow_csv("time_s,lane,kind\n0.5,1,product\n0.75,2,product\n1.0,1,box\n")
    assert len(tt.products) + len(tt.boxes) == 3


@pytest.mark.parametrize(
    "body, message",
    [
        ("5.0,3,product", "lane out of range, line 2"),
        ("1.0,1,crate", "unknown kind"),
        ("-1.0,1,product", "negative time, line 2"),
        ("2.0,1,product\n1.0,1,product", "not time-sorted, line 3"),
    ],
)
def test_csv_errors_name_the_line(body, message):
    with pytest.raises(InflowFormatError, match=message):
        parse_inflow_csv("time_s,lane,kind\n" + body + "\n")


def test_csv_round_trip_reproduces_episode():
    cfg = Config().replace(scenario={"episode_length": 120.0})
    tt = generate_scenario(cfg.scenario, 21)
    back = parse_inflow_csv(export_csv(tt))
    assert back == tt

    def run(timetable):
        sim = Simulation(cfg, timetable, record_events=True)
        while not sim.done:
            sim.step(0.17)
        return sim.events, sim.metrics.lost_products

    assert run(tt) == run(back)


# -- environment -----------------------------------------------------------------------


def test_episode_length_and_return_identity():
    cfg = Config().replace(scenario={"episode_length": 100.0})
    env = PackagingEnv(cfg)
    env.reset(5)
    rng = np.random.default_rng(0)
    steps, total, prev = 0, 0.0, env.last_command
    done = False
    lost = empty = 0
    abs_dv = 0.0
    while not done:
        _, r, done, info = env.step(rng.uniform(-0.2, 0.6))
        steps += 1
        total += r
        lost += info.products_lost
        empty += info.boxes_lost_empty
        abs_dv += abs(info.speed_command - prev)
        prev = info.speed_command
    assert steps == 100 - env.delay_ticks
    assert env.sim.metrics.products_lost == lost and env.sim.metrics.boxes_lost_empty == empty
    expected = -(lost + 10 * empty + 0.1 * abs_dv)
    assert math.isclose(total, expected, rel_tol=1e-9, abs_tol=1e-12)
    assert env.episode_return == total


def test_step_after_done_raises():
    cfg = Config().replace(scenario={"episode_length": 12.0})
    env = PackagingEnv(cfg)
    env.reset(0)
    done = False
    while not done:
        _, _, done, _ = env.step(0.0)
    with pytest.raises(RuntimeError):
        env.step(0.0)


def test_vec_env_resets_finished_episodes():
    cfg = Config().replace(scenario={"episode_length": 15.0})
    seeds = iter(range(100, 200))
    vec = VecEnv(cfg, 2, lambda: next(seeds))
    for _ in range(5 * 2):
        obs, r, d, _ = vec.step(np.zeros(2))
        assert obs.shape == (2, 217)
    assert len(vec.finished) == 4
