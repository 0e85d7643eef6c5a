"""State features for the speed controller, normalized to [-1, 1], with history.

Seven base features per tick:

====  ==================================================  ================
slot  feature                                             raw bounds
====  ==================================================  ================
0     box belt speed at the end of the tick               [v_min, v_max]
1     box belt speed at the end of the previous tick      [v_min, v_max]
2     inflow lane 1, products/min over a trailing window  [0, inflow_max]
3     inflow lane 2                                       [0, inflow_max]
4     distance of nearest uncommitted empty box           [0, belt_length]
5     distance of nearest unassigned product              [0, belt_length]
6     distance of second nearest unassigned product       [0, belt_length]
====  ==================================================  ================

Missing boxes/products map to +1 (the far end of the belt).
"""

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np

from .config import FeatureConfig, MachineConfig
from .machine import BoxStatus, ProductStatus

if TYPE_CHECKING:
    from .sim import Simulation

N_BASE = 7
FEATURE_NAMES = ("v_now", "v_prev", "inflow_lane1", "inflow_lane2", "x_box", "x_prod1", "x_prod2")


def to_unit(x, lo, hi):
    return 2.0 * (x - lo) / (hi - lo) - 1.0


def from_unit(u, lo, hi):
    return lo + (u + 1.0) * 0.5 * (hi - lo)


class Normalizer:
    def __init__(self, machine: MachineConfig, features: FeatureConfig):
        self.bounds = np.array(
            [
                (machine.box_speed_min, machine.box_speed_max),
                (machine.box_speed_min, machine.box_speed_max),
                (0.0, features.inflow_max),
                (0.0, features.inflow_max),
                (0.0, machine.belt_length),
                (0.0, machine.belt_length),
                (0.0, machine.belt_length),
            ]
        )

    def normalize(self, raw: np.ndarray) -> np.ndarray:
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        return np.clip(to_unit(np.asarray(raw, dtype=float), lo, hi), -1.0, 1.0)

    def denormalize(self, unit: np.ndarray) -> np.ndarray:
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        return from_unit(np.asarray(unit, dtype=float), lo, hi)


def raw_features(sim: "Simulation") -> np.ndarray:
    """Un-normalized base features of the current machine state (NaN for a missing entity)."""
    x_box = np.nan
    for b in sim.boxes:
        if b.status is BoxStatus.ON_BELT and not b.committed and b.total_fill == 0 and b.position > 0:
            x_box = b.position
            break
    near = []
    for p in sim.products:
        if p.status is ProductStatus.ON_BELT and p.position > 0:
            near.append(p.position)
            if len(near) == 2:
                break
    near += [np.nan] * (2 - len(near))
    rate1, rate2 = sim.inflow_rates()
    return np.array([sim.speed, sim.prev_speed, rate1, rate2, x_box, near[0], near[1]])


def featurize(sim: "Simulation", normalizer: Normalizer) -> np.ndarray:
    raw = raw_features(sim)
    unit = normalizer.normalize(np.nan_to_num(raw, nan=np.inf))
    return unit


class FeatureHistory:
    """Current value plus ``length`` past values per base feature.

    Slot ``h`` of feature ``f`` holds the value computed ``h`` ticks ago; before
    enough ticks have passed the oldest value is repeated.
    """

    def __init__(self, length: int = 30):
        self.length = length
        self.buf = np.zeros((N_BASE, length + 1))
        self.filled = False

    def push(self, base: np.ndarray) -> None:
        if not self.filled:
            self.buf[:] = base[:, None]
            self.filled = True
            return
        self.buf[:, 1:] = self.buf[:, :-1]
        self.buf[:, 0] = base

    def vector(self) -> np.ndarray:
        return self.buf.ravel().copy()

    @property
    def size(self) -> int:
        return self.buf.size


def observation_size(features: FeatureConfig) -> int:
    return N_BASE * (features.history + 1)
