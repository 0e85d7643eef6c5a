"""Run controllers on scenarios and collect reports."""

from __future__ import annotations

import time
from dataclasses import dataclass

from .config import Config, ConfigError
from .controllers import make_controller, timed_decision
from .env import PackagingEnv
from .report import RunReport, computation_ms_per_s, report_from_metrics
from .scenario import Timetable, generate_scenario, load_inflow_csv
from .sim import MetricsAccumulator, Simulation

CONTROLLERS = ("constant", "baseline", "rl")


@dataclass
class EpisodeRun:
    report: RunReport
    metrics: MetricsAccumulator
    events: list[tuple] | None
    ms_per_s: float


def resolve_scenario(source: str, config: Config) -> tuple[str, Timetable]:
    """``random:<seed>`` or ``csv:<path>`` to (label, timetable)."""
    kind, sep, arg = source.partition(":")
    if not sep or not arg:
        raise ConfigError(f"scenario must be random:<seed> or csv:<path>, got {source!r}")
    if kind == "random":
        try:
            seed = int(arg)
        except ValueError as exc:
            raise ConfigError(f"bad scenario seed {arg!r}") from exc
        return f"random:{seed}", generate_scenario(config.scenario, seed)
    if kind == "csv":
        return f"csv:{arg}", load_inflow_csv(arg)
    raise ConfigError(f"unknown scenario kind {kind!r}")


def run_episode(
    config: Config,
    timetable: Timetable,
    controller: str = "baseline",
    *,
    label: str = "",
    policy=None,
    speed: float | None = None,
    record_events: bool = True,
) -> EpisodeRun:
    """One full episode. Rule-based controllers act on the live machine; ``rl`` needs ``policy``."""
    if controller == "rl":
        if policy is None:
            raise ConfigError("controller 'rl' needs a policy checkpoint")
        env = PackagingEnv(config, record_events=record_events)
        obs = env.reset_to(timetable)
        sim = env.sim
        done = sim.done
        while not done:
            t0 = time.perf_counter()
            a = policy.act_deterministic(obs)[0]
            sim.metrics.wall_time += time.perf_counter() - t0
            obs, _, done, _ = env.step(a)
    elif controller in CONTROLLERS:
        ctrl = make_controller(controller, config, speed)
        sim = Simulation(config, timetable, delay_ticks=0, record_events=record_events)
        while not sim.done:
            decision = timed_decision(ctrl, sim)
            sim.metrics.wall_time += decision.decision_wall_time / 1e3
            sim.step(decision.speed_command)
    else:
        raise ConfigError(f"unknown controller {controller!r}; choose from {CONTROLLERS}")
    report = report_from_metrics(sim.metrics, config.machine, controller, label)
    return EpisodeRun(report, sim.metrics, sim.events, computation_ms_per_s(sim.metrics))
