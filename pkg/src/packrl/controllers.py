"""Non-learned box belt speed controllers.

Both act on the live machine without the planned delay. The baseline is a
rule-based surrogate for an incumbent controller: it tracks the inflow-matched
speed and only intervenes once a box that is being filled is about to escape
unfilled.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import TYPE_CHECKING, Protocol

from .config import BaselineConfig, ConfigError, MachineConfig
from .machine import BoxStatus, ProductStatus

if TYPE_CHECKING:
    from .sim import Simulation


@dataclass(frozen=True)
class ControllerDecision:
    speed_command: float
    decision_wall_time: float  # ms


class Controller(Protocol):
    name: str

    def reset(self) -> None: ...

    def __call__(self, sim: "Simulation") -> float: ...


def timed_decision(controller: Controller, sim: "Simulation") -> ControllerDecision:
    t0 = time.perf_counter()
    v = controller(sim)
    return ControllerDecision(v, (time.perf_counter() - t0) * 1e3)


class ConstantController:
    name = "constant"

    def __init__(self, speed: float, machine: MachineConfig):
        if not machine.box_speed_min <= speed <= machine.box_speed_max:
            raise ConfigError(
                f"nominal speed {speed} outside [{machine.box_speed_min}, {machine.box_speed_max}]"
            )
        self.speed = float(speed)

    def reset(self) -> None:
        pass

    def __call__(self, sim: "Simulation") -> float:
        return self.speed


@dataclass(frozen=True)
class BaselineDiagnosis:
    """What the baseline saw for the box it watches (``None`` fields when no box qualifies)."""

    box_id: int | None
    time_to_exit: float | None
    fill_time: float | None
    nominal: float
    command: float
    cut: bool


class BaselineController:
    """Reactive surrogate controller.

    Watches the most downstream box that is being filled and not yet full.
    When the projected time to complete it exceeds the time until it leaves
    its top robot's workspace, the speed is cut in proportion to the deficit
    (straight to the minimum when the deficit cannot be recovered). Otherwise
    the command moves toward the speed matched to the measured inflow by at
    most ``ramp_step`` per tick.
    """

    name = "baseline"

    def __init__(self, machine: MachineConfig, params: BaselineConfig):
        self.machine = machine
        self.params = params

    def reset(self) -> None:
        pass

    def __call__(self, sim: "Simulation") -> float:
        return self.diagnose(sim).command

    def diagnose(self, sim: "Simulation") -> BaselineDiagnosis:
        m, prm = self.machine, self.params
        v = sim.speed
        rate = sum(sim.inflow_rates())
        nominal = m.clamp_speed(m.matched_speed(rate))
        current = sim.target
        if nominal > current:
            tracked = min(nominal, current + prm.ramp_step)
        else:
            tracked = max(nominal, current - prm.ramp_step)
        box = self._watched_box(sim)
        if box is None:
            return BaselineDiagnosis(None, None, None, nominal, tracked, False)
        time_to_exit, fill_time = self._margins(sim, box, rate, v)
        if fill_time * prm.fill_margin <= time_to_exit:
            return BaselineDiagnosis(box.id, time_to_exit, fill_time, nominal, tracked, False)
        ratio = time_to_exit / (fill_time * prm.fill_margin) if math.isfinite(fill_time) else 0.0
        if ratio < prm.cut_floor:
            command = m.box_speed_min
        else:
            command = m.clamp_speed(v * ratio)
        return BaselineDiagnosis(box.id, time_to_exit, fill_time, nominal, command, True)

    def _watched_box(self, sim: "Simulation"):
        full = self.machine.products_per_box
        for b in sim.boxes:  # downstream first
            if b.status is not BoxStatus.ON_BELT or not b.committed or b.total_fill >= full:
                continue
            if b.position <= sim.robots[2 * b.assigned_pair + 1].end:
                continue
            return b
        return None

    def _margins(self, sim: "Simulation", box, rate_per_min: float, v: float) -> tuple[float, float]:
        """(time until the box leaves a workspace, time that robot needs to finish), tightest robot first."""
        m = self.machine
        done = sim.scheduler.projected_completion(box)
        worst = (math.inf, 0.0)
        for r in sim.robots[2 * box.assigned_pair: 2 * box.assigned_pair + 2]:
            if box.position <= r.end:
                continue
            exit_in = (box.position - r.end) / v if v > 0 else math.inf
            fill = done[r.id] - sim.time
            missing = m.box_capacity - box.reserved[r.layer]
            if missing > 0:
                fill = max(fill, self._supply_time(sim, r, missing, rate_per_min) + m.robot_cycle_time)
            fill = max(fill, 0.0)
            if fill == 0.0:
                continue
            if exit_in / fill < worst[0] / max(worst[1], 1e-12) or worst[1] == 0.0:
                worst = (exit_in, fill)
        return worst

    def _supply_time(self, sim: "Simulation", robot, missing: int, rate_per_min: float) -> float:
        """Seconds until ``missing`` more free products could have reached the robot's workspace."""
        m = self.machine
        ahead = sorted(
            p.position for p in sim.products if p.status is ProductStatus.ON_BELT and p.position > robot.end
        )
        if len(ahead) >= missing:
            return max(0.0, (ahead[missing - 1] - robot.start) / m.product_speed)
        if rate_per_min <= 0:
            return math.inf
        transit = (m.belt_length - robot.start) / m.product_speed
        return transit + (missing - len(ahead)) * 60.0 / rate_per_min


def make_controller(name: str, config, speed: float | None = None):
    """Construct ``constant`` (default: warm-up speed) or ``baseline``."""
    if name == "constant":
        return ConstantController(config.warmup_speed if speed is None else speed, config.machine)
    if name == "baseline":
        return BaselineController(config.machine, config.baseline)
    raise ConfigError(f"unknown controller {name!r}")
