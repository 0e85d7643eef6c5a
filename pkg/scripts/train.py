"""Desk-scale PPO training, cached by config digest.

    python scripts/train.py [--config cfg.yaml] [--cache-dir .cache/policies] [--seed N]

Prints the path of the selected checkpoint. A finished run with the same
configuration is reused instead of retrained.
"""

from __future__ import annotations

import argparse
import logging
import time
from pathlib import Path

from packrl.config import load_config
from packrl.ppo.train import train_cached

REPO = Path(__file__).resolve().parents[1]


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config")
    p.add_argument("--cache-dir", default=str(REPO / ".cache" / "policies"))
    p.add_argument("--seed", type=int)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    config = load_config(args.config)
    if args.seed is not None:
        config = config.replace(train={"seed": args.seed})
    t0 = time.perf_counter()

    def progress(row: dict) -> None:
        ev = row.get("eval_return")
        if ev is not None:
            logging.info(
                "iter %3d  %7d steps  eval return %8.2f  eval lost %6.2f  (%.0f s)",
                row["iteration"], row["env_steps"], ev, row["eval_lost"], time.perf_counter() - t0,
            )

    best = train_cached(config, args.cache_dir, progress=progress)
    print(best)


if __name__ == "__main__":
    main()
