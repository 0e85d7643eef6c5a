"""Command-line interface: ``packrl {run,train,eval,replay,export-scenario}``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from .config import Config, ConfigError, load_config
from .ppo.train import CheckpointError, build_policy, load_checkpoint, train
from .report import comparison_table, episode_table, recount_from_events, reports_json, trace_csv, write_text
from .runner import CONTROLLERS, EpisodeRun, resolve_scenario, run_episode
from .scenario import InflowFormatError, export_csv, generate_scenario
from .sim import MetricError

log = logging.getLogger("packrl")

EXIT_OK = 0
EXIT_ERROR = 2


def _policy(args, config: Config, needed: bool):
    if not needed:
        return None
    if getattr(args, "untrained", False):
        obs_size = 7 * (config.features.history + 1)
        return build_policy(config, obs_size)
    if not args.checkpoint:
        raise CheckpointError("controller 'rl' needs --checkpoint (or --untrained)")
    model, _ = load_checkpoint(args.checkpoint, config)
    return model


def events_csv(events) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time_s", "kind", "a", "b", "c"])
    for t, kind, a, b, c in events:
        w.writerow([repr(t), kind, "" if a is None else a, "" if b is None else b, "" if c is None else c])
    return buf.getvalue()


def _write_episode(out: Path, stem: str, run: EpisodeRun, config: Config) -> None:
    write_text(out / f"{stem}.trace.csv", trace_csv(run.metrics, config.machine.control_tick))
    if run.events is not None:
        write_text(out / f"{stem}.events.csv", events_csv(run.events))
        audit = recount_from_events(run.events, config.machine.products_per_box)
        mismatch = {k: (v, getattr(run.report, k)) for k, v in audit.items() if v != getattr(run.report, k)}
        if mismatch:
            raise MetricError(f"report disagrees with its event log: {mismatch}")


def _write_timing(out: Path, timing: dict) -> None:
    write_text(out / "timing.json", json.dumps(timing, indent=2, sort_keys=True) + "\n")


def cmd_run(args, config: Config) -> int:
    controller = args.controller
    source = args.scenario or f"random:{args.seed}"
    label, timetable = resolve_scenario(source, config)
    policy = _policy(args, config, controller == "rl")
    run = run_episode(config, timetable, controller, label=label, policy=policy, speed=args.speed)
    out = Path(args.out_dir)
    stem = controller
    _write_episode(out, stem, run, config)
    write_text(out / "report.json", reports_json({controller: [run.report]}))
    table = episode_table([run.report])
    write_text(out / "report.txt", table)
    _write_timing(out, {controller: {label: {"computation_ms_per_s": run.ms_per_s}}})
    print(table, end="")
    flags = run.report.flags
    print("constraints: " + ", ".join(f"{k}={'pass' if v else 'FAIL'}" for k, v in flags.items()))
    return EXIT_OK


def cmd_replay(args, config: Config) -> int:
    if not args.scenario or not args.scenario.startswith("csv:"):
        if args.scenario is None and args.csv:
            args.scenario = f"csv:{args.csv}"
        else:
            raise ConfigError("replay needs --scenario csv:<path>")
    return cmd_run(args, config)


def cmd_train(args, config: Config) -> int:
    if args.seed is not None:
        config = config.replace(train={"seed": args.seed})
    out = Path(args.out_dir)

    def progress(row: dict) -> None:
        ev = row.get("eval_return")
        extra = f" eval_return={ev:.2f}" if ev is not None else ""
        log.info("iteration %d steps %d%s", row["iteration"], row["env_steps"], extra)

    result = train(config, out, progress=progress)
    print(f"final checkpoint: {result.final_checkpoint}")
    print(f"best checkpoint:  {result.best_checkpoint} (eval return {result.best_eval_return:.3f})")
    return EXIT_OK


def cmd_eval(args, config: Config) -> int:
    controllers = args.controller_list or list(CONTROLLERS)
    for c in controllers:
        if c not in CONTROLLERS:
            raise ConfigError(f"unknown controller {c!r}")
    policy = _policy(args, config, "rl" in controllers)
    if args.scenario:
        sources = [args.scenario]
    else:
        sources = [f"random:{args.seed + i}" for i in range(args.episodes)]
    scenarios = [resolve_scenario(s, config) for s in sources]
    out = Path(args.out_dir)
    groups: dict[str, list] = {}
    timing: dict[str, dict] = {}
    supplied: dict[str, list[int]] = {}
    for c in controllers:
        groups[c] = []
        timing[c] = {}
        for label, timetable in scenarios:
            run = run_episode(config, timetable, c, label=label, policy=policy, speed=args.speed)
            groups[c].append(run.report)
            timing[c][label] = {"computation_ms_per_s": run.ms_per_s}
            _write_episode(out, f"{c}.{label.replace(':', '_').replace('/', '_')}", run, config)
        supplied[c] = [r.products_supplied for r in groups[c]]
    if len({tuple(v) for v in supplied.values()}) > 1:
        raise MetricError(f"controllers saw different supplied-product counts: {supplied}")
    reference = "baseline" if "baseline" in groups else None
    text = "".join(f"[{c}]\n{episode_table(reps)}\n" for c, reps in groups.items())
    text += comparison_table(groups, reference)
    write_text(out / "report.json", reports_json(groups))
    write_text(out / "report.txt", text)
    _write_timing(out, timing)
    print(text, end="")
    return EXIT_OK


def cmd_export(args, config: Config) -> int:
    timetable = generate_scenario(config.scenario, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"scenario_{args.seed}.csv"
    export_csv(timetable, path)
    print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="packrl", description="Box belt speed control for a packaging machine.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, controller: bool = True):
        sp.add_argument("--config", help="YAML config file; PACKRL_<SECTION>_<KEY> variables override it")
        sp.add_argument("--out-dir", default="out")
        sp.add_argument("--seed", type=int, default=0)
        if controller:
            sp.add_argument("--checkpoint", help="policy checkpoint (.npz) for the rl controller")
            sp.add_argument("--untrained", action="store_true", help="use a freshly initialized policy for rl")
            sp.add_argument("--scenario", help="random:<seed> or csv:<path>")
            sp.add_argument("--speed", type=float, help="speed for the constant controller (default: warm-up speed)")

    sp = sub.add_parser("run", help="simulate one episode with one controller")
    common(sp)
    sp.add_argument("--controller", choices=CONTROLLERS, default="baseline")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("replay", help="run a controller on a recorded inflow CSV")
    common(sp)
    sp.add_argument("--controller", choices=CONTROLLERS, default="baseline")
    sp.add_argument("csv", nargs="?", help="inflow CSV (same as --scenario csv:<path>)")
    sp.set_defaults(func=cmd_replay)

    sp = sub.add_parser("train", help="train a PPO policy")
    common(sp, controller=False)
    sp.set_defaults(func=cmd_train, seed=None)

    sp = sub.add_parser("eval", help="compare controllers on a shared scenario set")
    common(sp)
    sp.add_argument("--controller", dest="controller_list", action="append", choices=CONTROLLERS)
    sp.add_argument("--episodes", type=int, default=7)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("export-scenario", help="write a synthetic scenario as an inflow CSV")
    common(sp, controller=False)
    sp.set_defaults(func=cmd_export)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        config = load_config(args.config)
        return args.func(args, config)
    except (ConfigError, InflowFormatError, CheckpointError, MetricError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
