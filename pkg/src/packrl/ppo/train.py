"""PPO training loop, deterministic evaluation and checkpoint I/O."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from ..config import Config
from ..env import PackagingEnv, ScenarioFactory, VecEnv, unscale_speed
from .algo import (
    AdamState,
    Batch,
    ReturnScaler,
    TrainingDiverged,
    adam_step,
    clip_grad_norm,
    gae,
    lr_schedule,
    normalize_advantages,
    ppo_loss,
)
from .policy import ActorCritic

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "packrl-policy"
CHECKPOINT_VERSION = 1
TRAIN_SEED_BASE = 1_000_000
CURVE_FIELDS = (
    "iteration",
    "env_steps",
    "episodes",
    "train_return",
    "train_lost",
    "eval_return",
    "eval_lost",
    "policy_loss",
    "value_loss",
    "entropy",
    "approx_kl",
    "clip_fraction",
    "grad_norm",
    "lr",
    "log_std",
)


class CheckpointError(ValueError):
    pass


def build_policy(config: Config, obs_size: int) -> ActorCritic:
    """Fresh policy whose mean action starts at the warm-up speed."""
    t = config.train
    a0 = unscale_speed(config.warmup_speed, config.machine)
    a0 = float(np.clip(a0, -0.999, 0.999))
    return ActorCritic(
        obs_size,
        t.hidden,
        np.random.default_rng(t.seed),
        log_std_init=t.log_std_init,
        log_std_bounds=(t.log_std_min, t.log_std_max),
        mean_bias=math.atanh(a0),
    )


# -- checkpoints ---------------------------------------------------------------

_FIXED_DATE = (1980, 1, 1, 0, 0, 0)


def save_checkpoint(path: str | Path, model: ActorCritic, config: Config, extra: dict | None = None) -> Path:
    """Write an ``.npz`` archive; byte-identical for identical inputs."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config_digest": config.digest(),
        "config": config.to_dict(),
        "obs_size": model.obs_size,
        "hidden": list(model.hidden),
        "log_std_bounds": list(model.log_std_bounds),
        **(extra or {}),
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
    arrays.update(zip(model.param_names(), model.params))
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_FIXED_DATE)
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
            zf.writestr(info, buf.getvalue())
    tmp.replace(path)
    return path


def load_checkpoint(path: str | Path, config: Config | None = None) -> tuple[ActorCritic, dict]:
    """Model and metadata; with ``config`` given, its digest must match the stored one."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(bytes(data["meta"]).decode())
            arrays = {k: data[k] for k in data.files if k != "meta"}
    except (OSError, KeyError, ValueError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    if meta.get("format") != CHECKPOINT_FORMAT or meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format {meta.get('format')} v{meta.get('version')}")
    if config is not None and meta["config_digest"] != config.digest():
        raise CheckpointError(
            f"{path}: trained with config {meta['config_digest'][:12]}, current config is {config.digest()[:12]}"
        )
    model = ActorCritic(
        meta["obs_size"], meta["hidden"], np.random.default_rng(0), log_std_bounds=tuple(meta["log_std_bounds"])
    )
    try:
        model.set_params([arrays[name] for name in model.param_names()])
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing parameter {exc}") from exc
    return model, meta


# -- evaluation ------------------------------------------------------------------


@dataclass(frozen=True)
class EpisodeSummary:
    seed: int
    episode_return: float
    products_lost: int
    boxes_lost_empty: int
    boxes_lost_partly: int


def run_policy_episode(model: ActorCritic, env: PackagingEnv, seed: int) -> EpisodeSummary:
    """One episode with the deterministic (mean) action."""
    obs = env.reset(seed)
    lost = empty = partly = 0
    done = False
    while not done:
        obs, _, done, info = env.step(model.act_deterministic(obs)[0])
        lost += info.products_lost
        empty += info.boxes_lost_empty
        partly += info.boxes_lost_partly
    return EpisodeSummary(seed, env.episode_return, lost, empty, partly)


def evaluate(model: ActorCritic, config: Config, seeds: Iterable[int], scenario: ScenarioFactory | None = None):
    env = PackagingEnv(config, scenario)
    return [run_policy_episode(model, env, s) for s in seeds]


# -- training ----------------------------------------------------------------------


@dataclass
class TrainResult:
    model: ActorCritic
    curve: list[dict] = field(default_factory=list)
    final_checkpoint: Path | None = None
    best_checkpoint: Path | None = None
    best_eval_return: float = -math.inf


class _SeedStream:
    def __init__(self, base: int):
        self.next = base

    def __call__(self) -> int:
        s = self.next
        self.next += 1
        return s


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def train(
    config: Config,
    out_dir: str | Path,
    *,
    scenario: ScenarioFactory | None = None,
    progress: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Train from scratch; writes ``curve.csv``, ``final.npz``, ``best.npz`` (by evaluation return).

    On a numerical blow-up the parameters from the start of the failing
    iteration are written to ``last_good.npz`` and the error is re-raised.
    """
    t = config.train
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([t.seed, 1])
    vec = VecEnv(config, t.envs, _SeedStream(TRAIN_SEED_BASE + t.seed * 100_000), scenario)
    vec.noise = rng.standard_normal(t.envs) if t.noise_correlation > 0 else np.zeros(t.envs)
    obs_size = vec.obs.shape[1]
    model = build_policy(config, obs_size)
    adam = AdamState.zeros_like(model.params)
    scaler = ReturnScaler(t.envs, t.discount) if t.reward_scaling else None
    batch_steps = t.envs * t.rollout
    n_iters = max(1, t.total_steps // batch_steps)
    result = TrainResult(model)
    curve_path = out / "curve.csv"
    with curve_path.open("w", newline="") as fh:
        csv.writer(fh).writerow(CURVE_FIELDS)

    for it in range(n_iters):
        snapshot = [p.copy() for p in model.params]
        try:
            row = _iteration(model, adam, vec, rng, it, n_iters, config, scaler)
        except TrainingDiverged:
            good = ActorCritic(obs_size, t.hidden, np.random.default_rng(0), log_std_bounds=model.log_std_bounds)
            good.set_params(snapshot)
            path = save_checkpoint(out / "last_good.npz", good, config, {"iteration": it})
            log.error("training diverged at iteration %d; last good parameters in %s", it, path)
            raise
        row["env_steps"] = (it + 1) * batch_steps
        if (it + 1) % t.eval_every == 0 or it == n_iters - 1 or it == 0:
            ev = evaluate(model, config, t.eval_seeds, scenario)
            row["eval_return"] = float(np.mean([e.episode_return for e in ev]))
            row["eval_lost"] = float(np.mean([e.products_lost for e in ev]))
            if row["eval_return"] > result.best_eval_return:
                result.best_eval_return = row["eval_return"]
                result.best_checkpoint = save_checkpoint(
                    out / "best.npz", model, config, {"iteration": it + 1, "eval_return": row["eval_return"]}
                )
        result.curve.append(row)
        with curve_path.open("a", newline="") as fh:
            csv.writer(fh).writerow([_fmt(row.get(k)) for k in CURVE_FIELDS])
        if progress is not None:
            progress(row)
    result.final_checkpoint = save_checkpoint(out / "final.npz", model, config, {"iteration": n_iters})
    return result


def _iteration(model, adam, vec: VecEnv, rng, it: int, n_iters: int, config: Config, scaler=None) -> dict:
    t = config.train
    T, M = t.rollout, t.envs
    obs_buf = np.zeros((T, M, vec.obs.shape[1]))
    u_buf = np.zeros((T, M))
    logp_buf = np.zeros((T, M))
    val_buf = np.zeros((T, M))
    rew_buf = np.zeros((T, M))
    done_buf = np.zeros((T, M))
    prev_buf = np.zeros((T, M))
    rho = t.noise_correlation
    n_finished = len(vec.finished)
    for step in range(T):
        obs = vec.obs
        if not np.all(np.isfinite(obs)):
            raise TrainingDiverged(f"non-finite observation at rollout step {step}")
        prev_buf[step] = vec.noise
        u, a, logp, v, noise = model.act(obs, rng, vec.noise, rho)
        obs_buf[step], u_buf[step], logp_buf[step], val_buf[step] = obs, u, logp, v
        _, r, d, _ = vec.step(a)
        rew_buf[step], done_buf[step] = (r if scaler is None else scaler(r, d)), d
        # a new episode starts from a fresh draw of the stationary noise
        vec.noise = np.where(d, rng.standard_normal(M), noise)
    last_value = model.value(vec.obs)
    adv, ret = gae(rew_buf, val_buf, done_buf, last_value, t.discount, t.gae_lambda)
    batch = Batch(
        obs_buf.reshape(T * M, -1),
        u_buf.reshape(-1),
        logp_buf.reshape(-1),
        normalize_advantages(adv.reshape(-1)),
        ret.reshape(-1),
        prev_buf.reshape(-1),
    )
    lr = lr_schedule(it, n_iters, t.lr)
    stats = []
    norms = []
    n = len(batch)
    for _ in range(t.epochs):
        order = rng.permutation(n)
        for start in range(0, n, t.minibatch):
            mb = batch.take(order[start:start + t.minibatch])
            _, grads, info = ppo_loss(model, mb, t.clip, t.value_coef, t.entropy_coef, rho)
            norms.append(clip_grad_norm(grads, t.max_grad_norm))
            adam_step(model.params, grads, adam, lr)
            stats.append(info)
    for p in model.params:
        if not np.all(np.isfinite(p)):
            raise TrainingDiverged("non-finite parameters after update")
    finished = vec.finished[n_finished:]
    return {
        "iteration": it + 1,
        "episodes": len(vec.finished),
        "train_return": float(np.mean([f[0] for f in finished])) if finished else None,
        "train_lost": float(np.mean([f[1] for f in finished])) if finished else None,
        "policy_loss": float(np.mean([s.policy_loss for s in stats])),
        "value_loss": float(np.mean([s.value_loss for s in stats])),
        "entropy": float(np.mean([s.entropy for s in stats])),
        "approx_kl": float(np.mean([s.approx_kl for s in stats])),
        "clip_fraction": float(np.mean([s.clip_fraction for s in stats])),
        "grad_norm": float(np.mean(norms)),
        "lr": lr,
        "log_std": float(model.log_std[0]),
    }


def train_cached(config: Config, cache_root: str | Path, **kwargs) -> Path:
    """Path of ``best.npz`` for ``config``, training once per config digest.

    A run counts as complete only once ``final.npz`` exists, so an interrupted
    run is retrained from scratch.
    """
    run_dir = Path(cache_root) / config.digest()[:16]
    best = run_dir / "best.npz"
    if not (run_dir / "final.npz").is_file() or not best.is_file():
        train(config, run_dir, **kwargs)
    return best
