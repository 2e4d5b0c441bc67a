"""Command line entry point: ``crmgrasp {train,eval,compare,gen-tasks,check}``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from ..crm import ConfigError
from ..env.rewards import REWARD_MODES
from ..tasks import TaskError, save_tasks
from ..taxonomy import generate_tasks
from .config import ExperimentConfig, config_from_dict, load_config

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

log = logging.getLogger("crmgrasp")


def _load(args) -> ExperimentConfig:
    overrides = {"out": getattr(args, "out", None), "mode": getattr(args, "mode", None)}
    if getattr(args, "seed", None) is not None:
        overrides["seeds"] = [args.seed]
    if getattr(args, "task_file", None) is not None:
        overrides["task_file"] = args.task_file
    if args.config is None:
        return config_from_dict({}, overrides)
    return load_config(args.config, overrides)


def _progress(run, row) -> None:
    if row.episode % 100 == 0:
        log.info("%s seed %d: episode %d, step %d, success_100 %.2f, ep_len_100 %.1f",
                 run.mode, run.seed, row.episode, row.timestep, row.success_100, row.ep_len_100)


def cmd_train(args) -> int:
    from .runner import run_train

    cfg = _load(args)
    summaries = run_train(cfg, resume=not args.restart, progress=_progress)
    for s in summaries:
        print(f"{s.label} seed {s.seed}: {s.episodes} episodes, {s.timesteps} steps, "
              f"success_100 {s.final_success_100:.2f}, episodes to 0.90: {s.episodes_to['0.90']}, "
              f"{s.wall_time_s:.1f} s -> {s.run_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .runner import emit_report, run_eval

    cfg = _load(args)
    report = run_eval(args.checkpoint, cfg, args.trials or cfg.harness.eval_trials,
                      cfg.harness.eval_seed if args.seed is None else args.seed)
    text, _ = emit_report([report], [Path(args.checkpoint).stem])
    print(text, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.csv").write_text(report.to_csv())
    return EXIT_OK


def cmd_compare(args) -> int:
    from .runner import emit_report, evaluate_policies, load_suite, ordering_stats, plot_curves, run_train
    from ..agent import BASELINE_LABELS, policies_from_checkpoint
    from ..approx import load_checkpoint

    cfg = _load(args)
    out = Path(cfg.harness.out)
    modes = args.modes or list(REWARD_MODES)
    summaries, reports, curves = {}, [], {}
    tasks = load_suite(cfg)
    for mode in modes:
        summaries[mode] = run_train(cfg, out=out, mode=mode, resume=not args.restart, progress=_progress)
        curves[BASELINE_LABELS[mode]] = [Path(s.run_dir) / "curves.csv" for s in summaries[mode]]
        # pool every seed's final policy into one report per mode
        merged = None
        for s in summaries[mode]:
            nets, vectors, _ = load_checkpoint(Path(s.run_dir) / "final.ckpt")
            policies = policies_from_checkpoint(cfg.machine(), nets, vectors)
            r = evaluate_policies(policies, cfg, tasks, cfg.harness.eval_trials, cfg.harness.eval_seed)
            if merged is None:
                merged = r
            else:
                for a in r.n_trials:
                    merged.successes[a] = merged.successes.get(a, 0) + r.successes[a]
                    merged.total_length[a] = merged.total_length.get(a, 0) + r.total_length[a]
                    merged.n_trials[a] = merged.n_trials.get(a, 0) + r.n_trials[a]
        reports.append(merged)
    labels = [BASELINE_LABELS[m] for m in modes]
    text, table_csv = emit_report(reports, labels)
    stats = ordering_stats(summaries)
    out.mkdir(parents=True, exist_ok=True)
    (out / "comparison.txt").write_text(text)
    (out / "comparison.csv").write_text(table_csv)
    finite = {m: {k: (v if math.isfinite(v) else None) for k, v in st.items()} for m, st in stats.items()}
    (out / "ordering.json").write_text(json.dumps(finite, indent=2, sort_keys=True) + "\n")
    if cfg.harness.figures:
        plot_curves(curves, out / "curves.png")
    print(text, end="")
    for mode in modes:
        st = stats[mode]
        print(f"{BASELINE_LABELS[mode]}: median episodes to 0.80 = {st['median_episodes_to']}, "
              f"mean converged length = {st['mean_converged_length']:.1f}")
    return EXIT_OK


def cmd_gen_tasks(args) -> int:
    cfg = _load(args)
    n = int(cfg.taxonomy.get("n_tasks", args.n))
    seed = args.seed if args.seed is not None else int(cfg.taxonomy.get("seed", 0))
    tasks = generate_tasks(seed, n, cfg.generator_ranges())
    path = Path(args.out or "tasks.json")
    if path.suffix != ".json":
        path = path / "tasks.json"
    save_tasks(path, tasks)
    print(f"wrote {len(tasks)} tasks to {path}")
    return EXIT_OK


def cmd_check(args) -> int:
    from .checks import run_checks

    results = run_checks()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crmgrasp", description="CRM-PPO grasp training harness")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, seed_help="override the seed list with one seed"):
        p.add_argument("--config", type=str, default=None, help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help=seed_help)
        p.add_argument("--out", type=str, default=None, help="output directory")
        p.add_argument("--task-file", type=str, default=None, help="task suite JSON (default: desk suite)")

    p = sub.add_parser("train", help="train one mode over the configured seeds")
    common(p)
    p.add_argument("--mode", choices=REWARD_MODES, default=None)
    p.add_argument("--restart", action="store_true", help="ignore existing snapshots and results")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint with the mean action")
    common(p, "evaluation seed")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--trials", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="train and evaluate every reward mode, then tabulate")
    common(p)
    p.add_argument("--mode", dest="modes", action="append", choices=REWARD_MODES, default=None,
                   help="restrict to these modes (repeatable)")
    p.add_argument("--restart", action="store_true")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gen-tasks", help="write a synthetic task suite")
    common(p, "generator seed")
    p.add_argument("--n", type=int, default=26, help="number of tasks")
    p.set_defaults(func=cmd_gen_tasks)

    p = sub.add_parser("check", help="run the built-in property and oracle checks")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TaskError, ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
