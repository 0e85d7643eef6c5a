"""Per-episode run reports, aggregation, comparison tables and event-log audits.

Reports hold only raw counters and speed statistics; every percentage and
constraint flag is derived from them on access. Wall-clock timing is kept out
of the structured report so that reports are reproducible byte for byte.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import MachineConfig
from .sim import MetricsAccumulator, oee_index

PERFORMANCE_TARGET = 99.8
_ACCEL_TOL = 1e-9

# (attribute, column header, format) in table order
TABLE_COLUMNS = (
    ("performance", "Performance [%]", "{:.2f}"),
    ("quality", "Quality [%]", "{:.2f}"),
    ("products_lost", "Lost products", "{:.2f}"),
    ("boxes_lost_empty", "Lost empty boxes", "{:.2f}"),
    ("boxes_lost_partly", "Lost partly filled boxes", "{:.2f}"),
    ("mean_abs_accel", "Mean |a_B| [m/s^2]", "{:.5f}"),
    ("mean_abs_accel_actuated", "Mean |a_B| actuated [m/s^2]", "{:.5f}"),
)


@dataclass(frozen=True)
class RunReport:
    controller: str
    scenario: str
    products_supplied: int
    products_packed: int
    products_lost: int
    boxes_supplied: int
    boxes_packed: int
    boxes_lost_empty: int
    boxes_lost_partly: int
    mean_abs_dv: float  # commanded change per tick
    mean_abs_dv_actuated: float  # actuated change per tick
    max_abs_dv: float  # largest commanded change per tick
    max_abs_accel: float  # actuated trace, per physics sub-step
    accel_limit: float
    control_tick: float
    ticks: int

    @property
    def performance(self) -> float:
        return oee_index(self.products_packed, self.products_packed + self.products_lost)

    @property
    def quality(self) -> float:
        return oee_index(self.boxes_packed, self.boxes_packed + self.boxes_lost_empty + self.boxes_lost_partly)

    @property
    def mean_abs_accel(self) -> float:
        """Headline acceleration: mean commanded change per tick over the tick length."""
        return self.mean_abs_dv / self.control_tick

    @property
    def mean_abs_accel_actuated(self) -> float:
        return self.mean_abs_dv_actuated / self.control_tick

    @property
    def flags(self) -> dict[str, bool]:
        return {
            "performance": self.performance >= PERFORMANCE_TARGET,
            "empty_boxes": self.boxes_lost_empty == 0,
            "partly_filled_boxes": self.boxes_lost_partly == 0,
            # the belt itself: holds by construction of the actuator
            "acceleration": self.max_abs_accel <= self.accel_limit + _ACCEL_TOL,
            # the commands: a jump larger than the belt can follow within one tick
            "commanded_acceleration": self.max_abs_dv / self.control_tick <= self.accel_limit + _ACCEL_TOL,
        }

    def to_dict(self) -> dict:
        d = asdict(self)
        d["performance"] = self.performance
        d["quality"] = self.quality
        d["mean_abs_accel"] = self.mean_abs_accel
        d["mean_abs_accel_actuated"] = self.mean_abs_accel_actuated
        d["flags"] = self.flags
        return d


def report_from_metrics(
    acc: MetricsAccumulator, machine: MachineConfig, controller: str, scenario: str
) -> RunReport:
    dt_sub = machine.physics_subtick
    speeds = np.array([acc.initial_speed, *acc.speeds])
    targets = np.array([acc.initial_target, *acc.targets])
    sub = np.array([acc.initial_speed, *acc.substep_speeds])
    dv = np.abs(np.diff(speeds))
    dv_cmd = np.abs(np.diff(targets))
    return RunReport(
        controller=controller,
        scenario=scenario,
        products_supplied=acc.products_supplied,
        products_packed=acc.products_packed,
        products_lost=acc.products_lost,
        boxes_supplied=acc.boxes_supplied,
        boxes_packed=acc.boxes_packed,
        boxes_lost_empty=acc.boxes_lost_empty,
        boxes_lost_partly=acc.boxes_lost_partly,
        mean_abs_dv=float(dv_cmd.mean()) if dv_cmd.size else 0.0,
        mean_abs_dv_actuated=float(dv.mean()) if dv.size else 0.0,
        max_abs_dv=float(dv_cmd.max()) if dv_cmd.size else 0.0,
        max_abs_accel=float(np.abs(np.diff(sub)).max() / dt_sub) if sub.size > 1 else 0.0,
        accel_limit=machine.box_accel_max,
        control_tick=machine.control_tick,
        ticks=len(acc.speeds),
    )


def computation_ms_per_s(acc: MetricsAccumulator) -> float:
    """Wall-clock milliseconds spent per simulated second (simulation plus controller)."""
    secs = acc.simulated_seconds
    return acc.wall_time * 1e3 / secs if secs else 0.0


# -- aggregation -------------------------------------------------------------------


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return math.nan, math.nan
    return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0


def aggregate(reports: Sequence[RunReport]) -> dict[str, dict[str, float]]:
    out = {}
    for attr, _, _ in TABLE_COLUMNS:
        m, s = mean_std([getattr(r, attr) for r in reports])
        out[attr] = {"mean": m, "std": s}
    out["products_lost_total"] = {"mean": float(sum(r.products_lost for r in reports)), "std": 0.0}
    return out


def _cell(fmt: str, mean: float, std: float) -> str:
    return f"{fmt.format(mean)} ({fmt.format(std)})"


def episode_table(reports: Sequence[RunReport]) -> str:
    """One row per episode plus a ``mean (std)`` row."""
    headers = ["Scenario", *[h for _, h, _ in TABLE_COLUMNS]]
    rows = [[r.scenario, *[fmt.format(getattr(r, a)) for a, _, fmt in TABLE_COLUMNS]] for r in reports]
    agg = aggregate(reports)
    rows.append(["Mean (Std.)", *[_cell(fmt, agg[a]["mean"], agg[a]["std"]) for a, _, fmt in TABLE_COLUMNS]])
    return _render(headers, rows)


def relative_delta(value: float, reference: float) -> float:
    """Percent change of ``value`` relative to ``reference``; nan when the reference is zero."""
    if reference == 0:
        return 0.0 if value == 0 else math.nan
    return (value - reference) / abs(reference) * 100.0


def comparison_table(groups: dict[str, Sequence[RunReport]], reference: str | None = None) -> str:
    """Metrics as rows, controllers as ``mean (std)`` columns, plus deltas versus ``reference``."""
    names = list(groups)
    aggs = {n: aggregate(groups[n]) for n in names}
    others = [n for n in names if n != reference] if reference in groups else []
    headers = ["Metric: Mean (Std.)", *names, *[f"{n} vs {reference}" for n in others]]
    rows = []
    for attr, header, fmt in TABLE_COLUMNS:
        row = [header, *[_cell(fmt, aggs[n][attr]["mean"], aggs[n][attr]["std"]) for n in names]]
        for n in others:
            d = relative_delta(aggs[n][attr]["mean"], aggs[reference][attr]["mean"])
            row.append("n/a" if math.isnan(d) else f"{d:+.2f}%")
        rows.append(row)
    return _render(headers, rows)


def _render(headers: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(str(x)) for x in col) for col in zip(headers, *rows)]
    line = lambda cells: " | ".join(str(c).ljust(w) for c, w in zip(cells, widths))  # noqa: E731
    sep = "-+-".join("-" * w for w in widths)
    return "\n".join([line(headers), sep, *[line(r) for r in rows]]) + "\n"


def reports_json(groups: dict[str, Sequence[RunReport]]) -> str:
    payload = {
        name: {"episodes": [r.to_dict() for r in reps], "aggregate": aggregate(reps)}
        for name, reps in groups.items()
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def write_text(path: str | Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


# -- traces and audits ---------------------------------------------------------------

TRACE_FIELDS = ("t", "v_command", "v_actuated", "inflow_lane1", "inflow_lane2", "cumulative_lost")


def trace_csv(acc: MetricsAccumulator, control_tick: float = 1.0) -> str:
    """Speed trace with one row per tick, stamped at the end of the tick."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_FIELDS)
    lost = 0
    for k, (cmd, act, (r1, r2), n) in enumerate(zip(acc.targets, acc.speeds, acc.inflow, acc.lost_products)):
        lost += n
        w.writerow([f"{(k + 1) * control_tick:g}", repr(cmd), repr(act), f"{r1:g}", f"{r2:g}", lost])
    return buf.getvalue()


def recount_from_events(events: Iterable[tuple], capacity: int | None = None) -> dict[str, int]:
    """Recompute the episode counters from an event log alone.

    Only entities whose detection event marks them as counted contribute.
    Box verdicts come from the logged checkout classification and, when
    ``capacity`` (products in a full box) is given, are cross-checked against
    the logged placements.
    """
    counted_products: set[int] = set()
    counted_boxes: set[int] = set()
    placed: dict[int, int] = {}
    c = dict.fromkeys(
        (
            "products_supplied",
            "products_packed",
            "products_lost",
            "boxes_supplied",
            "boxes_packed",
            "boxes_lost_empty",
            "boxes_lost_partly",
        ),
        0,
    )
    for _, kind, a, b, extra in events:
        if kind == "product_detected" and extra:
            counted_products.add(a)
            c["products_supplied"] += 1
        elif kind == "box_detected" and extra:
            counted_boxes.add(a)
            c["boxes_supplied"] += 1
        elif kind == "place":
            placed[extra] = placed.get(extra, 0) + 1
            if a in counted_products:
                c["products_packed"] += 1
        elif kind in ("product_lost", "drop") and a in counted_products:
            c["products_lost"] += 1
        elif kind == "box_exit":
            n = placed.get(a, 0)
            if capacity is not None:
                expected = "packed" if n >= capacity else "lost_empty" if n == 0 else "lost_partly"
                if extra != expected:
                    raise AssertionError(f"box {a} logged as {extra} with {n} placements")
            if a in counted_boxes:
                key = {"packed": "boxes_packed", "lost_empty": "boxes_lost_empty", "lost_partly": "boxes_lost_partly"}
                c[key[extra]] += 1
    return c
