"""Action delay pipeline: delayed speed commands, rate-limited actuation and
future-observation matching.

A command decided at tick ``k`` lands at ``k + D`` where
``D = round((control_delay + planned_delay) / control_tick)``. Between landings
the belt drive tracks the most recent landed command, changing speed by at most
``box_accel_max * physics_subtick`` per physics sub-step.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .machine import check_speed

if TYPE_CHECKING:
    from .sim import Simulation


class HorizonError(RuntimeError):
    """A roll-forward would need a command that has not been decided yet."""


@dataclass(frozen=True, slots=True)
class DelayedAction:
    speed_command: float
    decided_at: int
    effective_at: int


class ActionQueue:
    """Pending speed commands ordered by the tick at which they take effect."""

    def __init__(self, delay_ticks: int, bounds: tuple[float, float] | None = None):
        if delay_ticks < 0:
            raise ValueError("delay_ticks must be non-negative")
        self.delay_ticks = int(delay_ticks)
        self.bounds = bounds
        self.pending: list[DelayedAction] = []

    def enqueue(self, speed_command: float, decided_at: int) -> DelayedAction:
        check_speed(speed_command, self.bounds)
        action = DelayedAction(float(speed_command), int(decided_at), int(decided_at) + self.delay_ticks)
        keys = [a.effective_at for a in self.pending]
        self.pending.insert(bisect.bisect_right(keys, action.effective_at), action)
        return action

    def target(self, tick: int, previous: float) -> float:
        """Latest command effective at or before ``tick``; matured commands are consumed."""
        current = previous
        while self.pending and self.pending[0].effective_at <= tick:
            current = self.pending.pop(0).speed_command
        return current

    def peek_target(self, tick: int, previous: float) -> float:
        current = previous
        for action in self.pending:
            if action.effective_at > tick:
                break
            current = action.speed_command
        return current

    def copy(self) -> "ActionQueue":
        clone = ActionQueue(self.delay_ticks, self.bounds)
        clone.pending = list(self.pending)
        return clone


def enqueue_action(queue: ActionQueue, speed_command: float, decided_at: int) -> ActionQueue:
    queue.enqueue(speed_command, decided_at)
    return queue


def ramp(current: float, target: float, max_step: float) -> float:
    """One sub-step of the rate-limited drive."""
    diff = target - current
    if diff > max_step:
        return current + max_step
    if diff < -max_step:
        return current - max_step
    return target


def effective_speed(
    queue: ActionQueue,
    tick: int,
    previous_target: float,
    current_speed: float,
    max_step: float,
    substeps: int,
) -> tuple[float, list[float]]:
    """Target for ``tick`` and the actuated speed at the end of each of its sub-steps."""
    target = queue.target(tick, previous_target)
    speeds = []
    v = current_speed
    for _ in range(substeps):
        v = ramp(v, target, max_step)
        speeds.append(v)
    return target, speeds


def ramp_profile(current_speed: float, targets: Sequence[float], max_step: float, substeps: int) -> np.ndarray:
    """Actuated sub-step speeds for a sequence of per-tick targets."""
    out = np.empty(len(targets) * substeps)
    v = current_speed
    i = 0
    for target in targets:
        for _ in range(substeps):
            v = ramp(v, target, max_step)
            out[i] = v
            i += 1
    return out


def matched_observation(sim: "Simulation", horizon: int | None = None) -> np.ndarray:
    """Features the machine will show ``horizon`` ticks from now (default: the command delay).

    A private copy of ``sim`` is rolled forward with the commands already in its
    queue; ``sim`` itself is not modified.
    """
    delay = sim.queue.delay_ticks
    horizon = delay if horizon is None else int(horizon)
    if horizon > delay:
        raise HorizonError(
            f"rolling {horizon} ticks ahead needs commands beyond the {delay}-tick delay"
        )
    if horizon <= 0:
        return sim.observation()
    shadow = sim.clone()
    for _ in range(horizon):
        shadow.step()
    return shadow.observation()
