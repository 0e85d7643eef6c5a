"""Reinforcement-learning interface to the packaging machine.

The agent's command decided at tick ``k`` reaches the belt at ``k + D``. It is
shown the features the machine will have at ``k + D``. Because the machine's
own scheduling never looks at pending commands, the machine state at ``k + D``
is fully determined by commands decided before ``k``. The environment exploits
that: it runs the machine ``D`` ticks ahead of the agent's clock, so the
command chosen at agent tick ``k`` is applied immediately to machine tick
``k + D``. This is the same trajectory a delayed machine with shadow
roll-forward would produce. :func:`packrl.delay.matched_observation` provides
the shadow route and the tests check that both agree.

Rewards are attributed to the machine tick at which the action lands. Losses
of the first ``D`` machine ticks, before any agent command can land, are added
to the first reward, so an episode's return accounts for every loss.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .config import Config, MachineConfig, RewardConfig
from .scenario import Timetable, generate_scenario
from .sim import Simulation, TickOutcome

ScenarioFactory = Callable[[int], Timetable]


def rescale_action(a: float, machine: MachineConfig) -> tuple[float, bool]:
    """Map ``a`` in [-1, 1] linearly onto the box speed range; returns (speed, clipped)."""
    a = float(a)
    clipped = not -1.0 <= a <= 1.0 or a != a
    if a != a:
        a = 0.0
    a = min(1.0, max(-1.0, a))
    lo, hi = machine.box_speed_min, machine.box_speed_max
    return lo + (a + 1.0) * 0.5 * (hi - lo), clipped


def unscale_speed(v: float, machine: MachineConfig) -> float:
    lo, hi = machine.box_speed_min, machine.box_speed_max
    return 2.0 * (v - lo) / (hi - lo) - 1.0


def smoothness_penalty(v_now: float, v_prev: float, zeta: float) -> float:
    return -zeta * abs(v_now - v_prev)


def reward(products_lost: int, boxes_lost_empty: int, v_now: float, v_prev: float, cfg: RewardConfig) -> float:
    """Per-tick reward; partly filled boxes are deliberately not penalized."""
    return -cfg.mu_prod * products_lost - cfg.mu_box * boxes_lost_empty + smoothness_penalty(v_now, v_prev, cfg.zeta)


@dataclass
class StepInfo:
    k: int  # agent tick at which the action was decided
    machine_tick: int  # episode tick at which it took effect
    speed_command: float
    actuated: float
    clipped: bool
    products_lost: int
    boxes_lost_empty: int
    boxes_lost_partly: int


class PackagingEnv:
    """``reset(seed) -> obs``; ``step(action) -> (obs, reward, done, info)``."""

    def __init__(
        self,
        config: Config,
        scenario: ScenarioFactory | None = None,
        *,
        record_events: bool = False,
    ):
        self.config = config
        self.delay_ticks = config.delay.delay_ticks(config.machine)
        self.scenario = scenario or (lambda seed: generate_scenario(config.scenario, seed))
        self.record_events = record_events
        self.sim: Simulation | None = None
        self.k = 0
        self.last_command = 0.0
        self.episode_return = 0.0
        self._carry = (0, 0, 0)
        self.clipped_actions = 0

    @property
    def observation_size(self) -> int:
        return 7 * (self.config.features.history + 1)

    def reset(self, seed: int) -> np.ndarray:
        timetable = self.scenario(seed)
        return self.reset_to(timetable)

    def reset_to(self, timetable: Timetable) -> np.ndarray:
        sim = Simulation(self.config, timetable, delay_ticks=0, record_events=self.record_events)
        lost = empty = partly = 0
        for _ in range(self.delay_ticks):
            if sim.done:
                break
            out = sim.step()
            lost += out.products_lost
            empty += out.boxes_lost_empty
            partly += out.boxes_lost_partly
        self.sim = sim
        self.k = 0
        self.last_command = sim.target
        self.episode_return = 0.0
        self._carry = (lost, empty, partly)
        self.clipped_actions = 0
        return sim.observation()

    @property
    def done(self) -> bool:
        return self.sim is None or self.sim.done

    def step_speed(self, speed: float, clipped: bool = False):
        sim = self.sim
        if sim is None or sim.done:
            raise RuntimeError("step() on a finished episode; call reset()")
        out: TickOutcome = sim.step(speed)
        lost, empty, partly = self._carry
        self._carry = (0, 0, 0)
        lost += out.products_lost
        empty += out.boxes_lost_empty
        partly += out.boxes_lost_partly
        r = reward(lost, empty, speed, self.last_command, self.config.reward)
        self.last_command = speed
        self.episode_return += r
        info = StepInfo(self.k, out.k, speed, out.speed, clipped, lost, empty, partly)
        self.k += 1
        self.clipped_actions += int(clipped)
        return sim.observation(), r, sim.done, info

    def step(self, action):
        speed, clipped = rescale_action(float(np.asarray(action).reshape(-1)[0]), self.config.machine)
        return self.step_speed(speed, clipped)


class VecEnv:
    """``M`` independent environments stepped in lockstep, reset automatically at episode end.

    Each finished episode is replaced by one on the next seed from ``seed_stream``.
    """

    def __init__(self, config: Config, n: int, seed_stream: Callable[[], int], scenario: ScenarioFactory | None = None):
        self.envs = [PackagingEnv(config, scenario) for _ in range(n)]
        self.seed_stream = seed_stream
        self.obs = np.stack([env.reset(seed_stream()) for env in self.envs])
        self.finished: list[tuple[float, int]] = []  # (episode return, products lost) of completed episodes
        self._lost = [0] * n

    def step(self, actions: np.ndarray):
        obs, rewards, dones, infos = [], [], [], []
        for i, (env, a) in enumerate(zip(self.envs, actions)):
            o, r, d, info = env.step(a)
            self._lost[i] += info.products_lost
            if d:
                self.finished.append((env.episode_return, self._lost[i]))
                self._lost[i] = 0
                o = env.reset(self.seed_stream())
            obs.append(o)
            rewards.append(r)
            dones.append(d)
            infos.append(info)
        self.obs = np.stack(obs)
        return self.obs, np.array(rewards), np.array(dones), infos
