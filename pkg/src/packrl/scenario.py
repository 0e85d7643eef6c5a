"""Product inflow scenarios: seeded synthetic generation and CSV replay.

A :class:`Timetable` lists product detection times (machine clock, seconds from
machine start) per lane, optionally explicit box detection times, and the
warm-up/episode split. Without explicit boxes the box belt carries a
continuous stream at the configured pitch.

CSV format::

    # warmup=60.0
    # episode_length=600.0
    time_s,lane,kind
    0.25,1,product
    0.5,2,product
    1.0,1,box

Comment lines (``#``) before the header carry optional ``key=value`` metadata.
Rows must be time-sorted with non-negative times, lane in {1, 2} and kind in
{product, box}.
"""

from __future__ import annotations

import csv
import io
import random
from dataclasses import dataclass, field
from pathlib import Path

from .config import ScenarioSpec


class InflowFormatError(ValueError):
    """Malformed inflow CSV; the message names the offending line."""


@dataclass(frozen=True)
class Segment:
    start: float
    end: float
    rate: float  # products/min


@dataclass(frozen=True)
class Timetable:
    products: tuple[tuple[float, int], ...]  # (detection time, lane), time-sorted
    episode_length: float
    warmup: float = 0.0
    boxes: tuple[float, ...] | None = None
    segments: tuple[tuple[Segment, ...], ...] = field(default=(), compare=False)

    @property
    def horizon(self) -> float:
        return self.warmup + self.episode_length

    def products_in(self, start: float, end: float, lane: int | None = None) -> int:
        return sum(1 for t, ln in self.products if start <= t < end and (lane is None or ln == lane))


def _lane_rng(seed: int, lane: int) -> random.Random:
    return random.Random(f"packrl-scenario:{int(seed)}:{lane}")


def _segments(rng: random.Random, spec: ScenarioSpec, horizon: float) -> list[Segment]:
    out = []
    t = 0.0
    while t < horizon:
        duration = rng.uniform(spec.segment_min, spec.segment_max)
        rate = rng.uniform(spec.rate_min, spec.rate_max)
        out.append(Segment(t, t + duration, rate))
        t += duration
    return out


def arrivals_for(segments: list[Segment], rng: random.Random, jitter: float, horizon: float) -> list[float]:
    """Quasi-periodic arrivals following the segment rates with bounded jitter."""
    times = []
    if not segments:
        return times
    idx = 0
    tau = rng.uniform(0.0, 60.0 / segments[0].rate)
    while tau < horizon:
        while idx + 1 < len(segments) and tau >= segments[idx].end:
            idx += 1
        interval = 60.0 / segments[idx].rate
        t = tau + jitter * interval * rng.uniform(-1.0, 1.0)
        if 0.0 <= t < horizon:
            times.append(t)
        tau += interval
    return times


def _merge(lanes: list[list[float]]) -> tuple[tuple[float, int], ...]:
    rows = [(t, i + 1) for i, ts in enumerate(lanes) for t in ts]
    rows.sort()
    return tuple(rows)


def generate_scenario(spec: ScenarioSpec, seed: int | None = None) -> Timetable:
    """Seeded piecewise-constant inflow per lane within ``[rate_min, rate_max]``."""
    seed = spec.seed if seed is None else seed
    horizon = spec.warmup + spec.episode_length
    lanes, segs = [], []
    for lane in (1, 2):
        rng = _lane_rng(seed, lane)
        segments = _segments(rng, spec, horizon)
        segs.append(tuple(segments))
        lanes.append(arrivals_for(segments, rng, spec.jitter, horizon))
    return Timetable(_merge(lanes), spec.episode_length, spec.warmup, None, tuple(segs))


def constant_scenario(
    rate_per_lane: float,
    episode_length: float,
    warmup: float = 60.0,
    phase: tuple[float, float] = (0.0, 0.5),
) -> Timetable:
    """Strictly periodic inflow; ``phase`` offsets each lane by a fraction of the interval."""
    horizon = warmup + episode_length
    interval = 60.0 / rate_per_lane
    lanes = []
    segs = []
    for frac in phase:
        n = 0
        ts = []
        while True:
            t = (n + frac) * interval
            if t >= horizon:
                break
            ts.append(t)
            n += 1
        lanes.append(ts)
        segs.append((Segment(0.0, horizon, rate_per_lane),))
    return Timetable(_merge(lanes), episode_length, warmup, None, tuple(segs))


def step_scenario(
    rates: list[tuple[float, float]],
    episode_length: float,
    warmup: float = 60.0,
    jitter: float = 0.0,
    seed: int = 0,
) -> Timetable:
    """Same rate on both lanes, changing at given machine-clock times: ``[(start, rate), ...]``."""
    horizon = warmup + episode_length
    bounds = [s for s, _ in rates[1:]] + [horizon]
    segments = [Segment(s, e, r) for (s, r), e in zip(rates, bounds)]
    lanes = [arrivals_for(segments, _lane_rng(seed, lane), jitter, horizon) for lane in (1, 2)]
    return Timetable(_merge(lanes), episode_length, warmup, None, (tuple(segments), tuple(segments)))


def export_csv(timetable: Timetable, path: str | Path | None = None) -> str:
    rows = [(t, lane, "product") for t, lane in timetable.products]
    if timetable.boxes is not None:
        rows += [(t, 1, "box") for t in timetable.boxes]
    rows.sort(key=lambda r: (r[0], r[2] != "box", r[1]))
    buf = io.StringIO()
    buf.write(f"# warmup={timetable.warmup!r}\n")
    buf.write(f"# episode_length={timetable.episode_length!r}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["time_s", "lane", "kind"])
    for t, lane, kind in rows:
        writer.writerow([repr(float(t)), lane, kind])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def parse_inflow_csv(text: str, warmup: float | None = None, episode_length: float | None = None) -> Timetable:
    meta: dict[str, float] = {}
    lines = text.splitlines()
    body_start = 0
    for i, line in enumerate(lines):
        stripped = line.strip()
        if stripped.startswith("#"):
            key, sep, value = stripped[1:].partition("=")
            if sep:
                try:
                    meta[key.strip()] = float(value)
                except ValueError as exc:
                    raise InflowFormatError(f"bad metadata value, line {i + 1}") from exc
            continue
        if not stripped:
            continue
        body_start = i
        break
    else:
        raise InflowFormatError("missing header 'time_s,lane,kind', line 1")
    header = [h.strip() for h in next(csv.reader([lines[body_start]]))]
    if header != ["time_s", "lane", "kind"]:
        raise InflowFormatError(f"expected header 'time_s,lane,kind', line {body_start + 1}")
    products: list[tuple[float, int]] = []
    boxes: list[float] = []
    last = -1.0
    for offset, row in enumerate(csv.reader(lines[body_start + 1:])):
        lineno = body_start + 2 + offset
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise InflowFormatError(f"expected 3 fields, line {lineno}")
        try:
            t = float(row[0])
        except ValueError as exc:
            raise InflowFormatError(f"bad time {row[0]!r}, line {lineno}") from exc
        try:
            lane = int(row[1])
        except ValueError as exc:
            raise InflowFormatError(f"bad lane {row[1]!r}, line {lineno}") from exc
        kind = row[2].strip()
        if t < 0 or t != t:
            raise InflowFormatError(f"negative time, line {lineno}")
        if lane not in (1, 2):
            raise InflowFormatError(f"lane out of range, line {lineno}")
        if kind not in ("product", "box"):
            raise InflowFormatError(f"unknown kind {kind!r}, line {lineno}")
        if t < last:
            raise InflowFormatError(f"rows not time-sorted, line {lineno}")
        last = t
        if kind == "product":
            products.append((t, lane))
        else:
            boxes.append(t)
    warmup = meta.get("warmup", 0.0) if warmup is None else warmup
    if episode_length is None:
        episode_length = meta.get("episode_length")
    if episode_length is None:
        end = max([t for t, _ in products] + boxes + [0.0])
        episode_length = max(end - warmup, 0.0)
    products.sort()
    return Timetable(tuple(products), float(episode_length), float(warmup), tuple(boxes) if boxes else None)


def load_inflow_csv(path: str | Path, warmup: float | None = None, episode_length: float | None = None) -> Timetable:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InflowFormatError(f"cannot read {path}: {exc}") from exc
    return parse_inflow_csv(text, warmup, episode_length)
