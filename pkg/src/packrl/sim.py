"""Discrete-time simulation of the packaging machine.

One control tick runs ``control_tick / physics_subtick`` physics sub-steps. Each
sub-step ramps the box belt toward the current target, moves every entity,
admits newly detected boxes and products, lets the robots act, and classifies
whatever crossed the checkout. The scheduler's assignment pass closes the tick.

The machine clock starts at 0 when the machine starts. The first
``timetable.warmup`` seconds are a warm-up that runs inside the constructor:
entities detected then occupy the machine but never enter the counters, so an
episode starts from a running machine. Episode time ``t = k * control_tick``
with ``k = 0`` at the end of warm-up.
"""

from __future__ import annotations

import copy
import time as _time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .config import Config
from .delay import ActionQueue, ramp
from .features import FeatureHistory, Normalizer, featurize
from .machine import (
    BoxStatus,
    BoxUnit,
    Checkout,
    ProductStatus,
    ProductUnit,
    RobotState,
    advance_positions,
    build_robots,
    classify_box,
)
from .scenario import Timetable
from .scheduler import Schedule, Scheduler


class MetricError(ValueError):
    """A metric is undefined for the given counts."""


class ConservationError(AssertionError):
    pass


@dataclass(slots=True)
class TickOutcome:
    k: int
    products_lost: int = 0
    boxes_lost_empty: int = 0
    boxes_lost_partly: int = 0
    products_packed: int = 0
    boxes_packed: int = 0
    target: float = 0.0
    speed: float = 0.0


@dataclass
class MetricsAccumulator:
    """Episode counters; entities detected during warm-up are excluded."""

    products_supplied: int = 0
    products_packed: int = 0
    boxes_supplied: int = 0
    boxes_packed: int = 0
    lost_products: list[int] = field(default_factory=list)
    lost_empty: list[int] = field(default_factory=list)
    lost_partly: list[int] = field(default_factory=list)
    targets: list[float] = field(default_factory=list)  # commanded speed per tick
    speeds: list[float] = field(default_factory=list)  # actuated speed at end of tick
    substep_speeds: list[float] = field(default_factory=list)
    inflow: list[tuple[float, float]] = field(default_factory=list)  # per-lane products/min at end of tick
    initial_target: float = 0.0
    initial_speed: float = 0.0
    wall_time: float = 0.0  # seconds of simulation + controller time

    @property
    def products_lost(self) -> int:
        return sum(self.lost_products)

    @property
    def boxes_lost_empty(self) -> int:
        return sum(self.lost_empty)

    @property
    def boxes_lost_partly(self) -> int:
        return sum(self.lost_partly)

    @property
    def products_resolved(self) -> int:
        return self.products_packed + self.products_lost

    @property
    def boxes_resolved(self) -> int:
        return self.boxes_packed + self.boxes_lost_empty + self.boxes_lost_partly

    @property
    def products_in_flight(self) -> int:
        return self.products_supplied - self.products_resolved

    @property
    def boxes_in_flight(self) -> int:
        return self.boxes_supplied - self.boxes_resolved

    @property
    def simulated_seconds(self) -> float:
        return float(len(self.targets))


@dataclass(frozen=True)
class OEEReport:
    performance: float
    quality: float
    availability: float
    oee: float


def oee_index(packed: int, resolved: int) -> float:
    if resolved <= 0:
        raise MetricError("no resolved entities: metric undefined")
    return packed / resolved * 100.0


def oee_report(acc: MetricsAccumulator) -> OEEReport:
    """Performance, quality, availability (fixed at 100) and their product, in percent.

    Ratios use the products and boxes whose fate was decided during the
    episode; entities still inside the machine at the end are not counted.
    """
    performance = oee_index(acc.products_packed, acc.products_resolved)
    quality = oee_index(acc.boxes_packed, acc.boxes_resolved)
    availability = 100.0
    return OEEReport(performance, quality, availability, performance * quality * availability / 1e4)


class Simulation:
    def __init__(
        self,
        config: Config,
        timetable: Timetable,
        *,
        delay_ticks: int = 0,
        initial_speed: float | None = None,
        record_events: bool = True,
        check_conservation: bool = False,
    ):
        self.config = config
        m = config.machine
        self.timetable = timetable
        self.dt = m.physics_subtick
        self.n_sub = m.substeps_per_tick
        self.bounds = (m.box_speed_min, m.box_speed_max)
        self.queue = ActionQueue(delay_ticks, self.bounds)
        self.warmup_ticks = int(round(timetable.warmup / m.control_tick))
        self.episode_ticks = int(round(timetable.episode_length / m.control_tick))
        self.tick = 0  # machine-clock tick
        self.substep = 0
        self.check_conservation = check_conservation

        v0 = config.warmup_speed if initial_speed is None else initial_speed
        v0 = m.clamp_speed(v0)
        self.speed = v0
        self.prev_speed = v0
        self.target = v0

        self.products: deque[ProductUnit] = deque()
        self.boxes: deque[BoxUnit] = deque()
        self.robots: list[RobotState] = build_robots(m)
        self.scheduler = Scheduler(self)
        self.schedules: list[Schedule] = []
        self.events: list[tuple] | None = [] if record_events else None

        self._next_product = 0
        self._next_box_time = 0
        self._odometer = 0.0
        self._next_box_odo = 0.0
        self._product_ids = 0
        self._box_ids = 0
        self._lane_times = (deque(), deque())

        self.metrics = MetricsAccumulator()
        self._tick_out = TickOutcome(k=self.k)

        self.normalizer = Normalizer(m, config.features)
        self.history = FeatureHistory(config.features.history)
        self.history.push(featurize(self, self.normalizer))

        for _ in range(self.warmup_ticks):
            self.step()
        self.metrics.initial_target = self.target
        self.metrics.initial_speed = self.speed

    # -- clock ----------------------------------------------------------------

    @property
    def k(self) -> int:
        """Episode tick (negative during warm-up)."""
        return self.tick - self.warmup_ticks

    @property
    def time(self) -> float:
        """Episode time in seconds at the end of the current sub-step."""
        return (self.substep - self.warmup_ticks * self.n_sub) * self.dt

    @property
    def machine_time(self) -> float:
        return self.substep * self.dt

    @property
    def done(self) -> bool:
        return self.k >= self.episode_ticks

    @property
    def in_episode(self) -> bool:
        return self.tick >= self.warmup_ticks

    # -- control --------------------------------------------------------------

    def command(self, speed: float):
        """Send a speed command now; it lands after the configured delay."""
        return self.queue.enqueue(speed, self.k)

    def step(self, speed_command: float | None = None) -> TickOutcome:
        t0 = _time.perf_counter()
        if speed_command is not None:
            self.command(speed_command)
        counting = self.in_episode
        out = TickOutcome(k=self.k)
        self._tick_out = out
        self.target = self.queue.target(self.k, self.target)
        max_step = self.config.machine.max_speed_step
        self.prev_speed = self.speed
        for _ in range(self.n_sub):
            v = ramp(self.speed, self.target, max_step)
            self.speed = v
            self._substep(v)
            if counting:
                self.metrics.substep_speeds.append(v)
        self.scheduler.assign()
        self.tick += 1
        out.target = self.target
        out.speed = self.speed
        if counting:
            acc = self.metrics
            acc.lost_products.append(out.products_lost)
            acc.lost_empty.append(out.boxes_lost_empty)
            acc.lost_partly.append(out.boxes_lost_partly)
            acc.targets.append(self.target)
            acc.speeds.append(self.speed)
            acc.inflow.append(self.inflow_rates())
        self.history.push(featurize(self, self.normalizer))
        if self.check_conservation:
            self.assert_conservation()
        if counting:
            self.metrics.wall_time += _time.perf_counter() - t0
        return out

    def observation(self) -> np.ndarray:
        return self.history.vector()

    def clone(self) -> "Simulation":
        """Independent copy sharing only the immutable timetable; events are not recorded."""
        events, self.events = self.events, None
        try:
            twin = copy.deepcopy(self, {id(self.timetable): self.timetable, id(self.config): self.config})
        finally:
            self.events = events
        return twin

    # -- physics --------------------------------------------------------------

    def _substep(self, v: float) -> None:
        m = self.config.machine
        self.substep += 1
        t_machine = self.machine_time
        advance_positions(self.products, self.boxes, m.product_speed, v, self.dt, self.bounds)
        self._spawn_boxes(v, t_machine)
        self._spawn_products(t_machine)
        self.scheduler.execute()
        self._checkout()

    def _spawn_boxes(self, v: float, t_machine: float) -> None:
        m = self.config.machine
        self._odometer += v * self.dt
        if self.timetable.boxes is None:
            while self._odometer >= self._next_box_odo - 1e-12:
                self._add_box(m.belt_length - (self._odometer - self._next_box_odo), t_machine)
                self._next_box_odo += m.box_pitch
        else:
            times = self.timetable.boxes
            while self._next_box_time < len(times) and times[self._next_box_time] <= t_machine + 1e-12:
                t_det = times[self._next_box_time]
                self._add_box(m.belt_length - v * (t_machine - t_det), t_machine)
                self._next_box_time += 1

    def _add_box(self, position: float, t_machine: float) -> None:
        counted = t_machine >= self.timetable.warmup - 1e-12
        box = BoxUnit(self._box_ids, position, self.time, counted=counted)
        self._box_ids += 1
        self.boxes.append(box)
        if counted:
            self.metrics.boxes_supplied += 1
        self.log("box_detected", box.id, None, int(counted))

    def _spawn_products(self, t_machine: float) -> None:
        m = self.config.machine
        arrivals = self.timetable.products
        warm = self.timetable.warmup
        while self._next_product < len(arrivals) and arrivals[self._next_product][0] <= t_machine + 1e-12:
            t_det, lane = arrivals[self._next_product]
            self._next_product += 1
            counted = t_det >= warm
            p = ProductUnit(
                self._product_ids,
                lane,
                m.belt_length - m.product_speed * (t_machine - t_det),
                t_det - warm,
                counted=counted,
            )
            self._product_ids += 1
            self.products.append(p)
            self._lane_times[lane - 1].append(t_det)
            if counted:
                self.metrics.products_supplied += 1
            self.log("product_detected", p.id, lane, int(counted))

    def _checkout(self) -> None:
        products = self.products
        while products and (products[0].position <= 0 or not products[0].on_belt):
            p = products.popleft()
            if p.on_belt:
                self._lose_product(p, "product_lost", None, None)
        boxes = self.boxes
        cap = self.config.machine.box_capacity
        out = self._tick_out
        while boxes and boxes[0].position <= 0:
            b = boxes.popleft()
            verdict = classify_box(b, cap)
            b.status = {
                Checkout.PACKED: BoxStatus.PACKED,
                Checkout.LOST_EMPTY: BoxStatus.LOST_EMPTY,
                Checkout.LOST_PARTLY: BoxStatus.LOST_PARTLY,
            }[verdict]
            if b.counted:
                if verdict is Checkout.PACKED:
                    self.metrics.boxes_packed += 1
                    out.boxes_packed += 1
                elif verdict is Checkout.LOST_EMPTY:
                    out.boxes_lost_empty += 1
                else:
                    out.boxes_lost_partly += 1
            self.log("box_exit", b.id, None, verdict.value)

    # -- robot actions (called by the scheduler) ------------------------------

    def pick_product(self, robot: RobotState, p: ProductUnit, box: BoxUnit, sched: Schedule) -> None:
        p.set_status(ProductStatus.HELD)
        robot.held_product = p
        robot.held_box = box
        robot.busy_until = self.substep + self.config.machine.cycle_substeps
        self.log("pick", p.id, robot.id, box.id)

    def place_product(self, robot: RobotState) -> None:
        p, box = robot.held_product, robot.held_box
        box.fill[robot.layer] += 1
        p.set_status(ProductStatus.PACKED)
        robot.held_product = None
        robot.held_box = None
        if p.counted:
            self.metrics.products_packed += 1
            self._tick_out.products_packed += 1
        self.log("place", p.id, robot.id, box.id)

    def drop_product(self, robot: RobotState) -> None:
        p, box = robot.held_product, robot.held_box
        robot.held_product = None
        robot.held_box = None
        self._lose_product(p, "drop", robot.id, box.id)

    def _lose_product(self, p: ProductUnit, kind: str, robot: int | None, box: int | None) -> None:
        p.set_status(ProductStatus.LOST)
        if p.counted:
            self._tick_out.products_lost += 1
        self.log(kind, p.id, robot, box)

    # -- bookkeeping ----------------------------------------------------------

    def log(self, kind: str, a, b=None, c=None) -> None:
        if self.events is not None:
            self.events.append((self.time, kind, a, b, c))

    def record_schedule(self, sched: Schedule) -> None:
        self.schedules.append(sched)
        self.log("schedule", sched.id, sched.robot_id, sched.box_id)

    def inflow_rates(self) -> tuple[float, float]:
        """Products/min per lane detected over the trailing feature window."""
        window = self.config.features.inflow_window
        now = self.machine_time
        rates = []
        for times in self._lane_times:
            while times and times[0] <= now - window + 1e-9:
                times.popleft()
            rates.append(len(times) * 60.0 / window)
        return rates[0], rates[1]

    def in_flight(self) -> tuple[int, int]:
        """Counted products and boxes still inside the machine, by direct enumeration."""
        products = sum(1 for p in self.products if p.counted and p.on_belt)
        products += sum(1 for r in self.robots if r.held_product is not None and r.held_product.counted)
        boxes = sum(1 for b in self.boxes if b.counted and b.status is BoxStatus.ON_BELT)
        return products, boxes

    def assert_conservation(self) -> None:
        acc = self.metrics
        products, boxes = self.in_flight()
        if acc.products_supplied != acc.products_packed + acc.products_lost + products:
            raise ConservationError(
                f"tick {self.k}: products {acc.products_supplied} != "
                f"{acc.products_packed} + {acc.products_lost} + {products}"
            )
        if acc.boxes_supplied != acc.boxes_packed + acc.boxes_lost_empty + acc.boxes_lost_partly + boxes:
            raise ConservationError(
                f"tick {self.k}: boxes {acc.boxes_supplied} != "
                f"{acc.boxes_packed} + {acc.boxes_lost_empty} + {acc.boxes_lost_partly} + {boxes}"
            )
