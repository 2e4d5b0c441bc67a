"""Training and evaluation runs: curve CSVs, checkpoints, summaries and reports."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import pickle
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..agent import (
    BASELINE_LABELS, Collector, EpisodeInfo, EpisodeRow, StagePolicies, Trainer, make_baseline,
    policies_from_checkpoint,
)
from ..approx import load_checkpoint, save_checkpoint
from ..crm import StageId
from ..env.core import GraspEnv
from ..tasks import AFFORDANCE_LABEL, AFFORDANCE_ORDER, TaskSpec, load_tasks
from .config import ExperimentConfig
from .suites import desk_suite

CURVE_HEADER = ["episode", "timestep", "success_100", "ep_len_100", "lr", "loss_pi", "loss_v", "stage_entry_counts"]
EVAL_HEADER = ["affordance", "success_rate", "mean_episode_length", "n_trials"]
REPORT_ROWS = [AFFORDANCE_LABEL[a] for a in AFFORDANCE_ORDER] + ["Overall"]
REFERENCE_COLUMN = ("reference CRM-PPO", {"Overall": (0.95, 273.07)})
THRESHOLDS = (0.8, 0.9)


def _fmt(x: float) -> str:
    return "nan" if isinstance(x, float) and math.isnan(x) else repr(float(x))


def _stage_counts(counts: dict[StageId, int]) -> str:
    return ";".join(f"{stage.short}:{counts[stage]}" for stage in sorted(counts))


def curve_line(row: EpisodeRow) -> list[str]:
    return [str(row.episode), str(row.timestep), _fmt(row.success_100), _fmt(row.ep_len_100), _fmt(row.lr),
            _fmt(row.loss_pi), _fmt(row.loss_v), _stage_counts(row.stage_counts)]


def load_suite(cfg: ExperimentConfig) -> list[TaskSpec]:
    if cfg.harness.task_file is None:
        return desk_suite()
    return load_tasks(cfg.harness.task_file)


def config_digest(cfg: ExperimentConfig, mode: str, seed: int) -> str:
    doc = cfg.to_dict()
    doc["harness"] = {"mode": mode, "seed": seed, "task_file": cfg.harness.task_file}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def episodes_to(successes: list[bool], threshold: float, window: int = 100) -> int | None:
    """First episode whose trailing full window reaches ``threshold``, else None."""
    if len(successes) < window:
        return None
    s = np.cumsum(np.asarray(successes, dtype=float))
    rates = (s[window - 1:] - np.concatenate([[0.0], s[:-window]])) / window
    hit = np.nonzero(rates >= threshold - 1e-12)[0]
    return int(hit[0] + window) if hit.size else None


@dataclass
class RunSummary:
    mode: str
    label: str
    seed: int
    episodes: int
    timesteps: int
    early_stopped: bool
    episodes_to: dict[str, int | None]
    final_success_100: float
    final_ep_len_100: float
    best_success_100: float
    wall_time_s: float
    run_dir: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunSummary":
        return cls(**json.loads(text))


class _Run:
    """One seed of one mode: owns the trainer, the curve file and the snapshots."""

    def __init__(self, cfg: ExperimentConfig, mode: str, seed: int, run_dir: Path, resume: bool):
        self.cfg = cfg
        self.mode = mode
        self.seed = seed
        self.dir = run_dir
        self.digest = config_digest(cfg, mode, seed)
        self.curves = run_dir / "curves.csv"
        self.snapshot = run_dir / "resume.pkl"
        self.best = -1.0
        self.elapsed = 0.0
        self.trainer: Trainer | None = None
        if resume and self.snapshot.exists():
            self._restore()
        if self.trainer is None:
            self._fresh()

    def _fresh(self) -> None:
        cfg = self.cfg
        rcfg, _ = make_baseline(self.mode, cfg.reward_config(self.mode))
        tcfg = cfg.train_config(self.seed)
        tasks = load_suite(cfg)
        env_cfg = cfg.env_config()
        envs = [GraspEnv(tasks, env_cfg, rcfg) for _ in range(tcfg.n_envs)]
        self.trainer = Trainer(envs, cfg.machine(), rcfg, tcfg)
        self.dir.mkdir(parents=True, exist_ok=True)
        with open(self.curves, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(CURVE_HEADER)

    def _restore(self) -> None:
        with open(self.snapshot, "rb") as fh:
            snap = pickle.load(fh)
        if snap.get("digest") != self.digest:
            return  # stale snapshot from a different config; start over
        self.trainer = snap["trainer"]
        self.best = snap["best"]
        self.elapsed = snap["elapsed"]
        # drop curve rows written after the snapshot
        keep = self.trainer.episodes + 1
        with open(self.curves, newline="") as fh:
            lines = fh.readlines()[:keep]
        with open(self.curves, "w", newline="") as fh:
            fh.writelines(lines)

    def _save_snapshot(self) -> None:
        tmp = self.snapshot.with_suffix(".tmp")
        with open(tmp, "wb") as fh:
            pickle.dump({"digest": self.digest, "trainer": self.trainer, "best": self.best,
                         "elapsed": self.elapsed}, fh)
        os.replace(tmp, self.snapshot)

    def _meta(self) -> dict:
        t = self.trainer
        return {"mode": self.mode, "seed": self.seed, "episodes": t.episodes, "timesteps": t.timesteps,
                "config_digest": self.digest}

    def _save(self, name: str) -> None:
        p = self.trainer.policies
        save_checkpoint(self.dir / name, p.nets(), p.vectors(), self._meta())

    def run(self, progress=None) -> RunSummary:
        t = self.trainer
        window = t.cfg.early_stop_window
        every = self.cfg.harness.checkpoint_every
        updates = 0
        start = time.perf_counter()
        with open(self.curves, "a", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")

            def on_episode(row: EpisodeRow) -> None:
                writer.writerow(curve_line(row))
                if progress is not None:
                    progress(self, row)

            def on_update(trainer: Trainer, stats) -> None:
                nonlocal updates
                updates += 1
                tail = trainer.successes[-window:]
                rate = sum(tail) / len(tail) if len(tail) >= window else -1.0
                if rate > self.best:
                    self.best = rate
                    self._save("best.ckpt")
                if updates % every == 0:
                    fh.flush()
                    self.elapsed += time.perf_counter() - self._mark
                    self._mark = time.perf_counter()
                    self._save_snapshot()

            self._mark = start
            result = t.run(on_episode=on_episode, on_update=on_update)
        self.elapsed += time.perf_counter() - self._mark
        self._save("final.ckpt")
        if not (self.dir / "best.ckpt").exists():
            self._save("best.ckpt")
        tail_s = result.successes[-window:] or [False]
        tail_l = result.lengths[-window:] or [0]
        summary = RunSummary(
            mode=self.mode, label=BASELINE_LABELS[self.mode], seed=self.seed, episodes=result.episodes,
            timesteps=result.timesteps, early_stopped=result.early_stopped,
            episodes_to={f"{th:.2f}": episodes_to(result.successes, th, window) for th in THRESHOLDS},
            final_success_100=sum(tail_s) / len(tail_s), final_ep_len_100=sum(tail_l) / len(tail_l),
            best_success_100=max(self.best, 0.0), wall_time_s=round(self.elapsed, 3), run_dir=str(self.dir),
        )
        (self.dir / "summary.json").write_text(summary.to_json())
        self.snapshot.unlink(missing_ok=True)
        return summary


def run_dir_for(out, mode: str, seed: int) -> Path:
    return Path(out) / mode / f"seed{seed}"


def train_one(cfg: ExperimentConfig, mode: str, seed: int, out, resume: bool = True, progress=None) -> RunSummary:
    """Train one seed; an existing summary with a matching config is returned as is."""
    run_dir = run_dir_for(out, mode, seed)
    summary_path = run_dir / "summary.json"
    final = run_dir / "final.ckpt"
    if resume and summary_path.exists() and final.exists():
        meta = load_checkpoint(final)[2]
        if meta.get("config_digest") == config_digest(cfg, mode, seed):
            return RunSummary.from_json(summary_path.read_text())
    return _Run(cfg, mode, seed, run_dir, resume).run(progress)


def _train_job(args):
    cfg, mode, seed, out, resume = args
    return train_one(cfg, mode, seed, out, resume)


def run_train(cfg: ExperimentConfig, out=None, seeds=None, mode: str | None = None, resume: bool = True,
              progress=None) -> list[RunSummary]:
    """Train every seed in turn (or in worker processes) and return their summaries."""
    out = Path(out or cfg.harness.out)
    seeds = list(seeds if seeds is not None else cfg.harness.seeds)
    mode = mode or cfg.harness.mode
    jobs = [(cfg, mode, s, out, resume) for s in seeds]
    if cfg.harness.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.harness.workers) as pool:
            return list(pool.map(_train_job, jobs))
    return [train_one(cfg, mode, s, out, resume, progress) for s in seeds]


# ---------------------------------------------------------------------------
# Evaluation


@dataclass
class EvalReport:
    """Per-affordance tallies; rates and means are derived so Overall stays exact."""
    successes: dict[str, int] = field(default_factory=dict)
    total_length: dict[str, int] = field(default_factory=dict)
    n_trials: dict[str, int] = field(default_factory=dict)
    episode_cap: int | None = None

    def add(self, affordance: str, success: bool, length: int) -> None:
        if self.episode_cap is not None and length > self.episode_cap:
            raise ValueError(f"episode length {length} exceeds the cap {self.episode_cap}")
        self.successes[affordance] = self.successes.get(affordance, 0) + int(success)
        self.total_length[affordance] = self.total_length.get(affordance, 0) + int(length)
        self.n_trials[affordance] = self.n_trials.get(affordance, 0) + 1

    @property
    def affordances(self) -> list[str]:
        return [a for a in REPORT_ROWS[:-1] if self.n_trials.get(a, 0) > 0]

    def row(self, name: str) -> tuple[float, float, int]:
        """``(success_rate, mean_episode_length, n_trials)``; ``name`` may be "Overall"."""
        if name == "Overall":
            n = sum(self.n_trials.values())
            s = sum(self.successes.values())
            length = sum(self.total_length.values())
        else:
            n = self.n_trials.get(name, 0)
            s = self.successes.get(name, 0)
            length = self.total_length.get(name, 0)
        if n == 0:
            raise KeyError(f"no trials for {name}")
        return s / n, length / n, n

    def rows(self) -> list[tuple[str, float, float, int]]:
        return [(name, *self.row(name)) for name in self.affordances + ["Overall"]]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(EVAL_HEADER)
        for name, rate, length, n in self.rows():
            w.writerow([name, _fmt(rate), _fmt(length), n])
        return buf.getvalue()


def evaluate_policies(policies: StagePolicies, cfg: ExperimentConfig, tasks: list[TaskSpec], n_trials: int,
                      seed: int) -> EvalReport:
    """Run ``n_trials`` deterministic episodes on uniformly drawn tasks."""
    if n_trials < 1:
        raise ValueError(f"n_trials must be at least 1, got {n_trials}")
    env_cfg = cfg.env_config()
    rcfg = cfg.reward_config("full")
    env = GraspEnv(tasks, env_cfg, rcfg)
    collector = Collector([env], cfg.machine(), rcfg, np.random.default_rng(seed))
    report = EvalReport(episode_cap=env_cfg.episode_cap)
    pending: list[str] = []

    def on_end(info: EpisodeInfo, timestep: int) -> bool:
        report.add(pending[-1], info.success, info.length)
        return sum(report.n_trials.values()) >= n_trials

    # the task of the running episode is read before each step batch
    class _Tracker:
        def __init__(self, inner):
            self.inner = inner

        def __getattr__(self, name):
            return getattr(self.inner, name)

        def reset(self, rng, task_index=None):
            obs = self.inner.reset(rng, task_index)
            pending.append(AFFORDANCE_LABEL[self.inner.task.affordance])
            return obs

    collector.slots[0].env = _Tracker(env)
    while sum(report.n_trials.values()) < n_trials:
        collector.collect(policies, env_cfg.episode_cap + 1, deterministic=True, on_episode_end=on_end)
    return report


def run_eval(checkpoint, cfg: ExperimentConfig, n_trials: int, seed: int, tasks: list[TaskSpec] | None = None
             ) -> EvalReport:
    """Load ``checkpoint`` and evaluate its mean-action policy."""
    if n_trials < 1:
        raise ValueError(f"n_trials must be at least 1, got {n_trials}")
    nets, vectors, _ = load_checkpoint(checkpoint)
    policies = policies_from_checkpoint(cfg.machine(), nets, vectors)
    return evaluate_policies(policies, cfg, tasks if tasks is not None else load_suite(cfg), n_trials, seed)


# ---------------------------------------------------------------------------
# Reports


def emit_report(reports: list[EvalReport], labels: list[str], reference_column: bool = True) -> tuple[str, str]:
    """Aligned comparison table and its CSV mirror, one column pair per label."""
    if not reports or len(reports) != len(labels):
        raise ValueError("need one label per report and at least one report")
    affs = reports[0].affordances
    for r in reports[1:]:
        if r.affordances != affs:
            raise ValueError(f"affordance sets differ: {affs} vs {r.affordances}")
    names = affs + ["Overall"]
    cols = [(label, {name: r.row(name)[:2] for name in names}) for label, r in zip(labels, reports)]
    if reference_column:
        cols.append(REFERENCE_COLUMN)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label"] + EVAL_HEADER)
    for label, r in zip(labels, reports):
        for name, rate, length, n in r.rows():
            w.writerow([label, name, _fmt(rate), _fmt(length), n])
    if reference_column:
        for name, (rate, length) in REFERENCE_COLUMN[1].items():
            w.writerow([REFERENCE_COLUMN[0], name, _fmt(rate), _fmt(length), ""])

    width = 14
    head1 = f"{'Affordance':<14}" + "".join(f"{label:^{2 * width}}" for label, _ in cols)
    head2 = f"{'':<14}" + "".join(f"{'Success':>{width}}{'Ep. length':>{width}}" for _ in cols)
    lines = [head1.rstrip(), head2.rstrip()]
    for name in names:
        cells = []
        for _, values in cols:
            if name in values:
                rate, length = values[name]
                cells.append(f"{rate:>{width}.2f}{length:>{width}.2f}")
            else:
                cells.append(f"{'-':>{width}}{'-':>{width}}")
        lines.append((f"{name:<14}" + "".join(cells)).rstrip())
    return "\n".join(lines) + "\n", buf.getvalue()


def read_curves(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {key: np.array([float(r[key]) for r in rows]) for key in CURVE_HEADER[:-1]}


def plot_curves(curve_files: dict[str, list[Path]], out_png) -> Path:
    """Median rolling success and episode length per label across seeds."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for label, paths in curve_files.items():
        curves = [read_curves(p) for p in paths]
        curves = [c for c in curves if c["episode"].size]
        if not curves:
            continue
        # early-stopped seeds end sooner; the median uses the seeds still running
        n = max(c["episode"].size for c in curves)
        ep = np.arange(1, n + 1)
        for ax, key in zip(axes, ("success_100", "ep_len_100")):
            padded = np.full((len(curves), n), np.nan)
            for i, c in enumerate(curves):
                padded[i, :c[key].size] = c[key]
            ax.plot(ep, np.nanmedian(padded, axis=0), label=label)
    axes[0].set_ylabel("rolling success rate")
    axes[1].set_ylabel("rolling episode length")
    for ax in axes:
        ax.set_xlabel("episode")
        ax.grid(alpha=0.3)
    axes[0].legend()
    fig.tight_layout()
    out_png = Path(out_png)
    out_png.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_png, dpi=100)
    plt.close(fig)
    return out_png


def ordering_stats(summaries: dict[str, list[RunSummary]], threshold: float = 0.8) -> dict[str, dict]:
    """Median episodes-to-threshold (unreached counts as infinity) and mean converged length per mode."""
    key = f"{threshold:.2f}"
    out = {}
    for mode, runs in summaries.items():
        eps = [r.episodes_to.get(key) for r in runs]
        eps = [math.inf if e is None else e for e in eps]
        out[mode] = {
            "median_episodes_to": float(np.median(eps)) if eps else math.inf,
            "mean_converged_length": float(np.mean([r.final_ep_len_100 for r in runs])) if runs else math.inf,
        }
    return out
