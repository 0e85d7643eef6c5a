"""Physical entities of the dual-belt packaging machine and their kinematics.

Positions are distances upstream of the checkout point on a single axis: the
detection point sits at ``belt_length`` and an entity whose position drops to
zero or below has left the machine. Both belts run in the same direction, so
one axis serves products (both lanes) and boxes.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

from .config import MachineConfig


class SpeedCommandError(ValueError):
    """A box belt speed outside the drive's admissible range."""


class ProductStatus(str, Enum):
    ON_BELT = "on_belt"
    ASSIGNED = "assigned"
    HELD = "held_by_robot"
    PACKED = "packed"
    LOST = "lost"


class BoxStatus(str, Enum):
    ON_BELT = "on_belt"
    PACKED = "packed"
    LOST_EMPTY = "lost_empty"
    LOST_PARTLY = "lost_partly"


class Checkout(str, Enum):
    NONE = "none"
    PACKED = "packed"
    LOST = "lost"
    LOST_EMPTY = "lost_empty"
    LOST_PARTLY = "lost_partly"


_PRODUCT_NEXT = {
    ProductStatus.ON_BELT: {ProductStatus.ASSIGNED, ProductStatus.LOST},
    ProductStatus.ASSIGNED: {ProductStatus.HELD, ProductStatus.LOST, ProductStatus.ON_BELT},
    ProductStatus.HELD: {ProductStatus.PACKED, ProductStatus.LOST},
    ProductStatus.PACKED: set(),
    ProductStatus.LOST: set(),
}


@dataclass(slots=True, eq=False)
class ProductUnit:
    id: int
    lane: int
    position: float
    detection_time: float
    status: ProductStatus = ProductStatus.ON_BELT
    assigned_robot: int | None = None
    box_id: int | None = None
    # products detected during warm-up occupy the machine but are not counted
    counted: bool = True

    def set_status(self, status: ProductStatus) -> None:
        if status not in _PRODUCT_NEXT[self.status]:
            raise ValueError(f"product {self.id}: illegal transition {self.status.value} -> {status.value}")
        self.status = status

    @property
    def on_belt(self) -> bool:
        return self.status is ProductStatus.ON_BELT or self.status is ProductStatus.ASSIGNED


@dataclass(slots=True, eq=False)
class BoxUnit:
    id: int
    position: float
    detection_time: float
    fill: list[int] = field(default_factory=lambda: [0, 0])
    assigned_pair: int | None = None
    status: BoxStatus = BoxStatus.ON_BELT
    # products scheduled per layer; the box is committed once its bottom layer is
    committed: bool = False
    reserved: list[int] = field(default_factory=lambda: [0, 0])
    counted: bool = True

    @property
    def total_fill(self) -> int:
        return self.fill[0] + self.fill[1]


@dataclass(slots=True, eq=False)
class RobotState:
    id: int
    workspace: tuple[float, float]
    pair: int
    layer: int
    busy_until: int = 0  # physics sub-step index
    held_product: ProductUnit | None = None
    held_box: BoxUnit | None = None
    queue: deque = field(default_factory=deque)  # (ProductUnit, BoxUnit, Schedule)
    last_seq: int = -1  # detection sequence of the newest product ever queued

    @property
    def start(self) -> float:
        return self.workspace[0]

    @property
    def end(self) -> float:
        return self.workspace[1]

    def covers(self, position: float) -> bool:
        return self.workspace[1] < position <= self.workspace[0]

    @property
    def layer_role(self) -> str:
        return "bottom" if self.layer == 0 else "top"


def build_robots(config: MachineConfig) -> list[RobotState]:
    """Robots R1..R4; (R1, R2) serve pair 0 and (R3, R4) pair 1, upstream robot fills the bottom layer."""
    return [
        RobotState(id=i + 1, workspace=ws, pair=i // 2, layer=i % 2)
        for i, ws in enumerate(config.workspaces)
    ]


def check_speed(speed: float, bounds: tuple[float, float] | None) -> None:
    if bounds is None:
        return
    lo, hi = bounds
    if not lo - 1e-12 <= speed <= hi + 1e-12:
        raise SpeedCommandError(f"box speed {speed!r} outside [{lo}, {hi}]")


def advance_positions(
    products: Iterable[ProductUnit],
    boxes: Iterable[BoxUnit],
    product_speed: float,
    box_speed: float,
    dt: float,
    bounds: tuple[float, float] | None = None,
) -> None:
    """Move every on-belt product by ``product_speed*dt`` and every on-belt box by ``box_speed*dt``.

    ``bounds`` enables the drive range check; the simulator always passes it.
    """
    check_speed(box_speed, bounds)
    dp = product_speed * dt
    db = box_speed * dt
    for p in products:
        if p.status is ProductStatus.ON_BELT or p.status is ProductStatus.ASSIGNED:
            p.position -= dp
    for b in boxes:
        if b.status is BoxStatus.ON_BELT:
            b.position -= db


def classify_box(box: BoxUnit, capacity_per_layer: int) -> Checkout:
    total = box.total_fill
    if total == 0:
        return Checkout.LOST_EMPTY
    if total >= 2 * capacity_per_layer:
        return Checkout.PACKED
    return Checkout.LOST_PARTLY


def classify_at_checkout(entity: ProductUnit | BoxUnit, capacity_per_layer: int = 5) -> Checkout:
    if entity.position > 0:
        return Checkout.NONE
    if isinstance(entity, BoxUnit):
        return classify_box(entity, capacity_per_layer)
    if entity.status is ProductStatus.PACKED:
        return Checkout.PACKED
    return Checkout.LOST
