"""The machine's own control system: box-to-pair assignment, product-to-robot
schedules with pick/place execution windows, and robot execution.

Assignment is deliberately simple and deterministic. Boxes alternate between
the robot pairs (R1, R2) and (R3, R4); the upstream robot of a pair fills the
bottom layer, the downstream one the top layer. A box is *committed* once a
whole bottom layer can be scheduled for it in one go; its top layer then
takes products ahead of any new box. Shortages therefore leave whole boxes
empty instead of spreading products thinly over many boxes.

Timing projections only use the current belt state (actual speed and current
target); the command queue is never consulted, which keeps scheduling
decisions a function of the present machine state.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

from .delay import ramp
from .machine import BoxStatus, BoxUnit, ProductStatus, ProductUnit, RobotState

if TYPE_CHECKING:
    from .sim import Simulation


@dataclass(frozen=True, slots=True)
class Schedule:
    """One robot's share of a committed box.

    ``c1``..``c3`` are absolute times fixed at creation; ``c4`` is the last box
    position (the robot's workspace end) at which a placement is still possible.
    """

    id: int
    robot_id: int
    product_ids: tuple[int, ...]
    box_id: int
    created_at: float
    c1: float
    c2: float
    c3: float
    c4: float

    def place_deadline(self, box_position: float, box_speed: float, now: float) -> float:
        """Time the box reaches ``c4`` if the belt keeps ``box_speed``; moves with every speed change."""
        if box_speed <= 0:
            return math.inf
        return now + (box_position - self.c4) / box_speed


class _Forecast:
    """Sub-step arithmetic for projected entity motion from the current state."""

    def __init__(self, sim: "Simulation"):
        cfg = sim.config.machine
        self.now = sim.substep
        self.dt = cfg.physics_subtick
        self.product_step = cfg.product_speed * cfg.physics_subtick
        self.nc = cfg.cycle_substeps
        self.target = sim.target
        self.margin = cfg.schedule_speed_margin
        # the drive ramps from the actual speed to the current target, then holds it
        cum = []
        v = sim.speed
        total = 0.0
        for _ in range(10_000):
            if v == self.target:
                break
            v = ramp(v, self.target, cfg.max_speed_step)
            total += v * self.dt
            cum.append(total)
        self.cum = cum
        self.hold_step = self.target * self.dt

    def release(self, pick: int, box_enter: int) -> int:
        """Planned sub-step at which a robot picking at ``pick`` is free again.

        Waiting for a box makes the release depend on the belt speed, so the
        wait is padded by ``schedule_speed_margin`` of the time until the box arrives.
        """
        done = pick + self.nc
        if box_enter <= done:
            return done
        return box_enter + math.ceil(self.margin * (box_enter - self.now))

    def product_steps(self, distance: float) -> int:
        if distance <= 0:
            return 0
        return math.ceil(distance / self.product_step - 1e-9)

    def box_steps(self, distance: float) -> int:
        if distance <= 0:
            return 0
        cum = self.cum
        if cum and distance <= cum[-1]:
            return bisect.bisect_left(cum, distance - 1e-12) + 1
        base = cum[-1] if cum else 0.0
        if self.hold_step <= 0:
            return 10**9
        return len(cum) + math.ceil((distance - base) / self.hold_step - 1e-9)

    def product_window(self, p: ProductUnit, r: RobotState) -> tuple[int, int]:
        return (
            self.now + max(1, self.product_steps(p.position - r.start)),
            self.now + self.product_steps(p.position - r.end),
        )

    def box_window(self, b: BoxUnit, r: RobotState) -> tuple[int, int]:
        return (
            self.now + max(1, self.box_steps(b.position - r.start)),
            self.now + self.box_steps(b.position - r.end),
        )


@dataclass(slots=True)
class _Virtual:
    """An expected, not yet detected product used in feasibility dry runs."""

    position: float
    id: float = math.inf


class Scheduler:
    def __init__(self, sim: "Simulation"):
        self.sim = sim
        self.next_schedule_id = 0
        self.boxes_paired = 0

    # -- assignment -----------------------------------------------------------

    def assign(self) -> list[Schedule]:
        """One assignment pass; returns the schedules created.

        Open top layers (boxes whose bottom layer is committed) are served
        first, downstream box first. Remaining products may then start new
        boxes, which requires a whole bottom layer to be schedulable at once.
        """
        sim = self.sim
        created: list[Schedule] = []
        for box in sim.boxes:
            if box.assigned_pair is None:
                box.assigned_pair = self.boxes_paired % 2
                self.boxes_paired += 1
                sim.log("box_assigned", box.id, None, box.assigned_pair)
        pool = [p for p in sim.products if p.status is ProductStatus.ON_BELT]
        if not pool:
            return created
        fc = _Forecast(sim)
        free = {r.id: self._project_free(r, fc) for r in sim.robots}
        cap = sim.config.machine.box_capacity
        # a robot completes the most downstream open layer before serving the next box
        blocked: set[int] = set()
        for box in sim.boxes:
            if box.status is not BoxStatus.ON_BELT or not box.committed:
                continue
            for layer in (0, 1):
                if box.reserved[layer] < cap:
                    pool = self._fill_open(box, layer, pool, free, fc, created, blocked)
        rate = sum(sim.inflow_rates()) / 60.0
        for box in sim.boxes:
            if len(pool) < cap:
                break
            if box.status is not BoxStatus.ON_BELT or box.committed:
                continue
            bottom = sim.robots[2 * box.assigned_pair]
            taken, f_bottom = self._plan_layer(box, 0, pool, free, fc)
            if len(taken) < cap:
                continue
            ids = {p.id for p in taken}
            rest = [p for p in pool if p.id not in ids]
            # start a box only if its top layer is also likely to be completed
            if not self._top_reachable(box, rest, free, fc, rate):
                continue
            free[bottom.id] = f_bottom
            created.append(self._commit(box, bottom, taken))
            pool = self._fill_open(box, 1, rest, free, fc, created, blocked)
        return created

    def _plan_layer(self, box, layer, pool, free, fc):
        """Products of ``pool`` the layer's robot could handle in order, with its resulting free time."""
        robot = self.sim.robots[2 * box.assigned_pair + layer]
        f = free[robot.id]
        if box.position <= robot.end:
            return [], f
        need = self.sim.config.machine.box_capacity - box.reserved[layer]
        last = robot.last_seq
        taken = []
        for p in pool:
            if p.id <= last:
                continue
            tp = self._try(p, robot, f, box, fc)
            if tp is None:
                continue
            f = tp
            last = p.id
            taken.append(p)
            if len(taken) >= need:
                break
        return taken, f

    def _fill_layer(self, box, layer, pool, free, fc, created):
        taken, f = self._plan_layer(box, layer, pool, free, fc)
        if not taken:
            return pool
        robot = self.sim.robots[2 * box.assigned_pair + layer]
        free[robot.id] = f
        created.append(self._commit(box, robot, taken))
        ids = {p.id for p in taken}
        return [p for p in pool if p.id not in ids]

    def _fill_open(self, box, layer, pool, free, fc, created, blocked):
        robot = self.sim.robots[2 * box.assigned_pair + layer]
        if robot.id in blocked:
            return pool
        if pool:
            pool = self._fill_layer(box, layer, pool, free, fc, created)
        if box.reserved[layer] < self.sim.config.machine.box_capacity and self._supply_window(box, robot, fc) > 0:
            blocked.add(robot.id)
        return pool

    def _supply_window(self, box: BoxUnit, robot: RobotState, fc: _Forecast) -> float:
        """Seconds during which a product detected from now on can still reach ``robot`` in time for ``box``."""
        cfg = self.sim.config.machine
        box_leaves = fc.box_steps(box.position - robot.end) * fc.dt
        transit = (cfg.belt_length - robot.start) / cfg.product_speed
        return max(0.0, box_leaves - cfg.robot_cycle_time - transit)

    def _top_reachable(self, box, rest, free, fc, rate) -> bool:
        """Dry run of the top robot over known products plus arrivals expected at ``rate`` per second.

        Products already owed to open top layers of the same robot are set aside first.
        """
        sim = self.sim
        cfg = sim.config.machine
        cap = cfg.box_capacity
        top = sim.robots[2 * box.assigned_pair + 1]
        owed = sum(
            cap - b.reserved[1]
            for b in sim.boxes
            if b is not box and b.status is BoxStatus.ON_BELT and b.committed and b.assigned_pair == box.assigned_pair
        )
        if rate > 0:
            horizon = fc.box_steps(box.position - top.end) * fc.dt
            n = int(horizon * rate) + 1
            gap = cfg.product_speed / rate
            virtual = [_Virtual(cfg.belt_length + gap * (j + 0.5)) for j in range(n)]
        else:
            virtual = []
        candidates = [p for p in rest if p.id > top.last_seq] + virtual
        candidates = candidates[owed:]
        f = free[top.id]
        got = 0
        for p in candidates:
            tp = self._try(p, top, f, box, fc)
            if tp is None:
                continue
            f = tp
            got += 1
            if got >= cap:
                return True
        return False

    def _project_free(self, r: RobotState, fc: _Forecast) -> int:
        """Sub-step at which the robot has worked off everything it already holds or has queued."""
        f = max(fc.now + 1, r.busy_until)
        if r.held_product is not None:
            be, bl = fc.box_window(r.held_box, r)
            f = max(f, fc.release(f - fc.nc, be)) if be <= bl - 1 else max(f, bl)
        for p, b, _ in r.queue:
            pe, pl = fc.product_window(p, r)
            be, bl = fc.box_window(b, r)
            sp = max(f, pe)
            if sp > pl - 1 or sp > bl - 1:
                continue
            f = fc.release(sp, be) if max(sp + fc.nc, be) <= bl - 1 else max(sp + fc.nc, bl)
        return f

    def projected_completion(self, box: BoxUnit) -> dict[int, float]:
        """Per robot of the box's pair: episode time of its last placement into ``box``.

        Assumes the box stays reachable, so the answer can be compared with the
        time the box leaves each workspace. Products that will leave the
        workspace before the robot gets to them are ignored; slowing the box
        belt cannot save them.
        """
        sim = self.sim
        fc = _Forecast(sim)
        out = {}
        for r in sim.robots[2 * box.assigned_pair: 2 * box.assigned_pair + 2]:
            f = max(fc.now + 1, r.busy_until)
            done = fc.now
            if r.held_product is not None:
                be, _ = fc.box_window(r.held_box, r)
                f = max(f, be)
                if r.held_box is box:
                    done = f
            for p, b, _ in r.queue:
                pe, pl = fc.product_window(p, r)
                sp = max(f, pe)
                if sp > pl - 1:
                    continue
                be, _ = fc.box_window(b, r)
                f = max(sp + fc.nc, be)
                if b is box:
                    done = f
            out[r.id] = sim.time + (done - fc.now) * fc.dt
        return out

    def _try(self, p: ProductUnit, r: RobotState, f: int, box: BoxUnit, fc: _Forecast) -> int | None:
        pe, pl = fc.product_window(p, r)
        be, bl = fc.box_window(box, r)
        sp = max(f, pe)
        # one sub-step of slack absorbs rounding in accumulated positions
        if sp > pl - 2 or sp > bl - 2:
            return None
        if max(sp + fc.nc, be) > bl - 2:
            return None
        return fc.release(sp, be)

    def _commit(self, box: BoxUnit, robot: RobotState, products: list[ProductUnit]) -> Schedule:
        sim = self.sim
        cfg = sim.config.machine
        now = sim.time
        first, last = sim.robots[0], sim.robots[-1]
        lead = min(p.position for p in products)
        tail = max(p.position for p in products)
        sched = Schedule(
            id=self.next_schedule_id,
            robot_id=robot.id,
            product_ids=tuple(p.id for p in products),
            box_id=box.id,
            created_at=now,
            c1=now + (lead - first.start) / cfg.product_speed,
            c2=now + max(0.0, lead - robot.start) / cfg.product_speed + cfg.robot_cycle_time,
            c3=now + (tail - last.end) / cfg.product_speed,
            c4=robot.end,
        )
        self.next_schedule_id += 1
        box.committed = True
        box.reserved[robot.layer] += len(products)
        for p in products:
            p.set_status(ProductStatus.ASSIGNED)
            p.assigned_robot = robot.id
            p.box_id = box.id
            robot.queue.append((p, box, sched))
            robot.last_seq = max(robot.last_seq, p.id)
        sim.record_schedule(sched)
        return sched

    # -- execution ------------------------------------------------------------

    def execute(self) -> None:
        """Robot actions at the end of the current physics sub-step."""
        sim = self.sim
        s = sim.substep
        t = sim.time
        for r in sim.robots:
            if r.held_product is not None:
                box = r.held_box
                if box.status is not BoxStatus.ON_BELT or box.position <= r.end:
                    sim.drop_product(r)
                elif s >= r.busy_until and box.position <= r.start:
                    sim.place_product(r)
                else:
                    continue
            if s < r.busy_until:
                continue
            q = r.queue
            while q:
                p, box, _ = q[0]
                if p.position <= r.end or box.status is not BoxStatus.ON_BELT or box.position <= r.end:
                    q.popleft()
                    # the slot reopens and the product may still be taken further downstream
                    box.reserved[r.layer] -= 1
                    if p.status is ProductStatus.ASSIGNED:
                        p.set_status(ProductStatus.ON_BELT)
                        p.assigned_robot = None
                        p.box_id = None
                    sim.log("miss", p.id, r.id, box.id)
                    continue
                break
            if not q:
                continue
            p, box, sched = q[0]
            if p.position <= r.start and sched.c1 - 1e-9 <= t <= sched.c3 + 1e-9:
                q.popleft()
                sim.pick_product(r, p, box, sched)
