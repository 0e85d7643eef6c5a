"""Held-out comparison of the trained policy with the untrained one and the rule-based controllers.

    python scripts/evaluate.py [--config cfg.yaml] [--checkpoint path] [--out-dir out/evaluation]

Without ``--checkpoint`` the cached run for the current config is used
(trained first if missing). Writes ``learning.csv`` (per-seed returns) and
``comparison.txt`` / ``comparison.json`` (controller tables).
"""

from __future__ import annotations

import argparse
import csv
import math
from pathlib import Path

import numpy as np

from packrl.config import load_config
from packrl.ppo.train import build_policy, evaluate, load_checkpoint, train_cached
from packrl.report import comparison_table, episode_table, reports_json, write_text
from packrl.runner import resolve_scenario, run_episode

REPO = Path(__file__).resolve().parents[1]


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config")
    p.add_argument("--checkpoint")
    p.add_argument("--cache-dir", default=str(REPO / ".cache" / "policies"))
    p.add_argument("--out-dir", default="out/evaluation")
    p.add_argument("--learning-seeds", type=int, nargs=2, default=(20_000, 20))
    p.add_argument("--comparison-seeds", type=int, nargs=2, default=(30_000, 7))
    args = p.parse_args()
    config = load_config(args.config)
    path = args.checkpoint or train_cached(config, args.cache_dir)
    trained, _ = load_checkpoint(path, config)
    untrained = build_policy(config, trained.obs_size)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    start, n = args.learning_seeds
    seeds = range(start, start + n)
    before = evaluate(untrained, config, seeds)
    after = evaluate(trained, config, seeds)
    with (out / "learning.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "untrained_return", "trained_return", "untrained_lost", "trained_lost"])
        for b, a in zip(before, after):
            w.writerow([b.seed, b.episode_return, a.episode_return, b.products_lost, a.products_lost])
    rb, ra = np.array([e.episode_return for e in before]), np.array([e.episode_return for e in after])
    se = math.hypot(rb.std(ddof=1) / math.sqrt(n), ra.std(ddof=1) / math.sqrt(n))
    print(f"return untrained {rb.mean():.2f}  trained {ra.mean():.2f}  gain {ra.mean() - rb.mean():.2f}  SE {se:.2f}")

    start, n = args.comparison_seeds
    groups = {"rl": [], "baseline": [], "constant": []}
    for seed in range(start, start + n):
        label, tt = resolve_scenario(f"random:{seed}", config)
        for name in groups:
            run = run_episode(config, tt, name, label=label, policy=trained, record_events=False)
            groups[name].append(run.report)
    text = "".join(f"[{c}]\n{episode_table(r)}\n" for c, r in groups.items())
    text += comparison_table(groups, "baseline")
    write_text(out / "comparison.txt", text)
    write_text(out / "comparison.json", reports_json(groups))
    print(text, end="")


if __name__ == "__main__":
    main()
