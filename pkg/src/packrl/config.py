"""Configuration records for the packaging machine, control stack and trainer.

All quantities are SI (m, s, m/s, m/s^2) except inflow rates, which follow the
industry convention of products per minute. A whole run is described by one
:class:`Config`, loadable from a YAML document with per-key environment
overrides (``PACKRL_<SECTION>_<KEY>``).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

ENV_PREFIX = "PACKRL_"


class ConfigError(ValueError):
    """Raised for invalid or unparseable configuration."""


@dataclass(frozen=True)
class MachineConfig:
    product_speed: float = 0.30
    box_speed_min: float = 0.02
    box_speed_max: float = 0.30
    box_accel_max: float = 0.05
    belt_length: float = 3.6
    # (start, end) per robot, upstream first; start > end on the distance-to-checkout axis
    workspaces: tuple[tuple[float, float], ...] = (
        (3.0, 2.4),
        (2.4, 1.8),
        (1.8, 1.2),
        (1.2, 0.6),
    )
    lanes: int = 2
    box_capacity: int = 5
    layers_per_box: int = 2
    robot_cycle_time: float = 0.5
    box_pitch: float = 0.45
    control_tick: float = 1.0
    physics_subtick: float = 0.05
    # relative speed uncertainty the machine's scheduler plans for while a robot waits on a box
    schedule_speed_margin: float = 0.05

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "workspaces", tuple((float(a), float(b)) for a, b in self.workspaces)
        )
        if not 0 < self.box_speed_min < self.box_speed_max:
            raise ConfigError("need 0 < box_speed_min < box_speed_max")
        if self.box_accel_max <= 0 or self.product_speed <= 0:
            raise ConfigError("box_accel_max and product_speed must be positive")
        if self.physics_subtick <= 0 or self.control_tick <= 0:
            raise ConfigError("tick lengths must be positive")
        ratio = self.control_tick / self.physics_subtick
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ConfigError("control_tick must be an integer multiple of physics_subtick")
        if len(self.workspaces) != 4:
            raise ConfigError("exactly four robot workspaces are required")
        if self.layers_per_box != 2:
            raise ConfigError("layers_per_box must be 2 (one layer per robot of a pair)")
        if self.lanes != 2:
            raise ConfigError("the product belt has two lanes")
        if not 0 <= self.schedule_speed_margin < 1:
            raise ConfigError("schedule_speed_margin must lie in [0, 1)")
        if self.box_capacity < 1 or self.box_pitch <= 0 or self.robot_cycle_time <= 0:
            raise ConfigError("box_capacity, box_pitch and robot_cycle_time must be positive")
        upper = self.belt_length
        for start, end in self.workspaces:
            if not upper >= start > end > 0:
                raise ConfigError(
                    "workspaces must be disjoint, ordered downstream and lie between "
                    "the detection point and the checkout"
                )
            upper = end
        if self.workspaces[0][0] >= self.belt_length:
            raise ConfigError("first workspace must start strictly after the detection point")

    @property
    def substeps_per_tick(self) -> int:
        return int(round(self.control_tick / self.physics_subtick))

    @property
    def cycle_substeps(self) -> int:
        return max(1, int(math.ceil(self.robot_cycle_time / self.physics_subtick - 1e-9)))

    @property
    def max_speed_step(self) -> float:
        """Largest speed change the box belt drive allows per physics sub-step."""
        return self.box_accel_max * self.physics_subtick

    @property
    def products_per_box(self) -> int:
        return self.box_capacity * self.layers_per_box

    def matched_speed(self, products_per_min: float) -> float:
        """Box speed whose box throughput equals a total product inflow."""
        return (products_per_min / 60.0) * self.box_pitch / self.products_per_box

    def clamp_speed(self, v: float) -> float:
        return min(self.box_speed_max, max(self.box_speed_min, v))


@dataclass(frozen=True)
class DelayConfig:
    control_delay: float = 0.2
    # None: derive from geometry so every pick window closes before a command lands
    planned_delay: float | None = None

    def __post_init__(self) -> None:
        if self.control_delay < 0 or (self.planned_delay is not None and self.planned_delay < 0):
            raise ConfigError("delays must be non-negative")

    def resolved_planned_delay(self, machine: MachineConfig) -> float:
        if self.planned_delay is not None:
            return float(self.planned_delay)
        return default_planned_delay(machine)

    def delay_ticks(self, machine: MachineConfig) -> int:
        total = self.control_delay + self.resolved_planned_delay(machine)
        return int(round(total / machine.control_tick))


def default_planned_delay(machine: MachineConfig) -> float:
    """Longest detection-to-pick-window-close time, rounded up to a whole tick."""
    span = (machine.belt_length - machine.workspaces[-1][1]) / machine.product_speed
    ticks = math.ceil(span / machine.control_tick - 1e-9)
    return ticks * machine.control_tick


@dataclass(frozen=True)
class RewardConfig:
    mu_prod: float = 1.0
    mu_box: float = 10.0
    zeta: float = 0.1

    def __post_init__(self) -> None:
        if min(self.mu_prod, self.mu_box, self.zeta) < 0:
            raise ConfigError("reward weights must be non-negative")


@dataclass(frozen=True)
class ScenarioSpec:
    episode_length: float = 600.0
    rate_min: float = 120.0
    rate_max: float = 135.0
    segment_min: float = 30.0
    segment_max: float = 120.0
    # fraction of the inter-arrival interval; |jitter| < 0.5 keeps arrivals ordered
    jitter: float = 0.2
    warmup: float = 60.0
    # speed the machine runs at during warm-up; None -> matched to the mid-range inflow
    warmup_speed: float | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.rate_min <= self.rate_max:
            raise ConfigError("need 0 < rate_min <= rate_max")
        if not 0 < self.segment_min <= self.segment_max:
            raise ConfigError("need 0 < segment_min <= segment_max")
        if not 0 <= self.jitter < 0.5:
            raise ConfigError("jitter must lie in [0, 0.5)")
        if self.episode_length <= 0 or self.warmup < 0:
            raise ConfigError("episode_length must be positive and warmup non-negative")


@dataclass(frozen=True)
class FeatureConfig:
    inflow_window: float = 10.0
    inflow_max: float = 200.0
    history: int = 30

    def __post_init__(self) -> None:
        if self.inflow_window <= 0 or self.inflow_max <= 0 or self.history < 0:
            raise ConfigError("invalid feature configuration")


@dataclass(frozen=True)
class BaselineConfig:
    # largest commanded change per tick while tracking the inflow-matched speed
    ramp_step: float = 0.01
    # multiplies the projected fill time before comparing it with the time to checkout
    fill_margin: float = 1.0
    # below this fraction of the current speed a cut goes straight to the minimum
    cut_floor: float = 0.5

    def __post_init__(self) -> None:
        if self.ramp_step <= 0 or self.fill_margin <= 0 or not 0 <= self.cut_floor <= 1:
            raise ConfigError("invalid baseline configuration")


@dataclass(frozen=True)
class TrainConfig:
    discount: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    epochs: int = 10
    minibatch: int = 512
    rollout: int = 256
    envs: int = 16
    lr: float = 3e-4
    total_steps: int = 300_000
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    hidden: tuple[int, ...] = (256, 256)
    log_std_init: float = -2.0
    log_std_min: float = -5.0
    log_std_max: float = 1.0
    max_grad_norm: float = 0.5
    reward_scaling: bool = True
    # AR(1) correlation of exploration noise between consecutive ticks
    noise_correlation: float = 0.9
    eval_every: int = 10
    eval_seeds: tuple[int, ...] = tuple(range(10_000, 10_004))
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "eval_seeds", tuple(int(s) for s in self.eval_seeds))
        if not 0 < self.discount <= 1 or not 0 <= self.gae_lambda <= 1:
            raise ConfigError("discount must be in (0, 1] and gae_lambda in [0, 1]")
        if self.clip <= 0 or self.epochs < 1 or self.minibatch < 1:
            raise ConfigError("clip, epochs and minibatch must be positive")
        if self.rollout < 1 or self.envs < 1 or self.total_steps < 1 or self.lr <= 0:
            raise ConfigError("rollout, envs, total_steps and lr must be positive")
        if not 0 <= self.noise_correlation < 1:
            raise ConfigError("noise_correlation must be in [0, 1)")
        if self.log_std_min > self.log_std_max:
            raise ConfigError("log_std_min must not exceed log_std_max")


@dataclass(frozen=True)
class Config:
    machine: MachineConfig = field(default_factory=MachineConfig)
    delay: DelayConfig = field(default_factory=DelayConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> dict[str, Any]:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **sections: Mapping[str, Any]) -> "Config":
        """Copy with some keys of some sections replaced, e.g. ``replace(reward={"zeta": 0})``."""
        data = self.to_dict()
        for name, values in sections.items():
            if name not in data:
                raise ConfigError(f"unknown config section {name!r}")
            data[name].update(values)
        return config_from_dict(data)

    @property
    def warmup_speed(self) -> float:
        if self.scenario.warmup_speed is not None:
            return self.machine.clamp_speed(self.scenario.warmup_speed)
        mid = self.scenario.rate_min + self.scenario.rate_max  # two lanes at the mid rate
        return self.machine.clamp_speed(self.machine.matched_speed(mid))


_SECTIONS = {
    "machine": MachineConfig,
    "delay": DelayConfig,
    "reward": RewardConfig,
    "scenario": ScenarioSpec,
    "features": FeatureConfig,
    "baseline": BaselineConfig,
    "train": TrainConfig,
}


def config_from_dict(data: Mapping[str, Any]) -> Config:
    sections = {}
    for name, values in (data or {}).items():
        if name not in _SECTIONS:
            raise ConfigError(f"unknown config section {name!r}")
        cls = _SECTIONS[name]
        known = {f.name for f in dataclasses.fields(cls)}
        values = dict(values or {})
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
        try:
            sections[name] = cls(**values)
        except TypeError as exc:
            raise ConfigError(f"bad values in [{name}]: {exc}") from exc
    return Config(**sections)


def _coerce(raw: str, current: Any) -> Any:
    if isinstance(current, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if current is None or isinstance(current, (tuple, list)):
        value = yaml.safe_load(raw)
        return value
    return raw


def apply_env_overrides(data: dict[str, Any], environ: Mapping[str, str] | None = None) -> dict[str, Any]:
    """Overlay ``PACKRL_<SECTION>_<KEY>=value`` variables onto a config dict."""
    environ = os.environ if environ is None else environ
    defaults = Config().to_dict()
    for name, raw in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        section, _, key = rest.partition("_")
        if section not in _SECTIONS:
            continue
        if key not in defaults[section]:
            raise ConfigError(f"{name}: unknown key {key!r} in section {section!r}")
        current = data.get(section, {}).get(key, defaults[section][key])
        try:
            data.setdefault(section, {})[key] = _coerce(raw, current)
        except ValueError as exc:
            raise ConfigError(f"{name}: {exc}") from exc
    return data


def load_config(path: str | Path | None = None, environ: Mapping[str, str] | None = None) -> Config:
    """Load a YAML config (``section: {key: value}``) and apply environment overrides."""
    data: dict[str, Any] = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            loaded = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError(f"config {path} must be a mapping of sections")
        data = {k: dict(v or {}) for k, v in (loaded or {}).items()}
    data = apply_env_overrides(data, environ)
    return config_from_dict(data)


def dump_config(config: Config, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=False))
