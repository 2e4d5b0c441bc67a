"""Experiment configuration: one JSON document with crm/env/train/taxonomy/harness sections."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from ..agent import TrainConfig
from ..crm import ConfigError, RewardMachine, machine_from_config
from ..env.core import EnvConfig
from ..env.rewards import REWARD_MODES, RewardConfig
from ..taxonomy import GeneratorRanges

SECTIONS = ("crm", "env", "train", "taxonomy", "harness")


@dataclass
class HarnessSection:
    seeds: list[int] = field(default_factory=lambda: [0])
    mode: str = "full"
    task_file: str | None = None  # None selects the built-in desk suite
    out: str = "runs"
    eval_trials: int = 100
    eval_seed: int = 12345
    checkpoint_every: int = 1  # updates between resume snapshots
    workers: int = 1
    figures: bool = True

    def validate(self) -> None:
        if not self.seeds:
            raise ConfigError("harness.seeds", "needs at least one seed")
        if any(not isinstance(s, int) or isinstance(s, bool) or s < 0 for s in self.seeds):
            raise ConfigError("harness.seeds", f"seeds must be non-negative integers, got {self.seeds}")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("harness.seeds", f"seeds must be distinct, got {self.seeds}")
        if self.mode not in REWARD_MODES:
            raise ConfigError("harness.mode", f"expected one of {REWARD_MODES}, got {self.mode!r}")
        if self.task_file is not None and not Path(self.task_file).is_file():
            raise ConfigError("harness.task_file", f"no such file: {self.task_file}")
        if self.eval_trials < 1:
            raise ConfigError("harness.eval_trials", "must be at least 1")
        if self.checkpoint_every < 1:
            raise ConfigError("harness.checkpoint_every", "must be at least 1")
        if self.workers < 1:
            raise ConfigError("harness.workers", "must be at least 1")


@dataclass
class ExperimentConfig:
    crm: dict = field(default_factory=dict)
    env: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    taxonomy: dict = field(default_factory=dict)
    harness: HarnessSection = field(default_factory=HarnessSection)

    # built views, checked once at load time
    def machine(self) -> RewardMachine:
        return machine_from_config(self.crm)

    def env_config(self) -> EnvConfig:
        section = {k: v for k, v in self.env.items() if k != "rewards"}
        try:
            return EnvConfig.from_dict(section)
        except TypeError as exc:
            raise ConfigError("env", str(exc)) from None

    def reward_config(self, mode: str | None = None) -> RewardConfig:
        rewards = dict(self.env.get("rewards", {}))
        if "r_cone" in self.crm:
            rewards["r_cone"] = self.crm["r_cone"]
        rewards["mode"] = mode or self.harness.mode
        known = {f.name for f in fields(RewardConfig)}
        for key in rewards:
            if key not in known:
                raise ConfigError(f"env.rewards.{key}", "unknown key")
        try:
            return RewardConfig(**rewards)
        except (TypeError, ValueError) as exc:
            raise ConfigError("env.rewards", str(exc)) from None

    def train_config(self, seed: int | None = None) -> TrainConfig:
        section = dict(self.train)
        if seed is not None:
            section["seed"] = seed
        try:
            return TrainConfig.from_dict(section)
        except TypeError as exc:
            raise ConfigError("train", str(exc)) from None

    def generator_ranges(self) -> GeneratorRanges:
        section = {k: v for k, v in self.taxonomy.items() if k not in ("n_tasks", "seed")}
        known = {f.name for f in fields(GeneratorRanges)}
        for key in section:
            if key not in known:
                raise ConfigError(f"taxonomy.{key}", "unknown key")
        return GeneratorRanges(**{k: tuple(v) if isinstance(v, list) else v for k, v in section.items()})

    def validate(self) -> None:
        self.harness.validate()
        self.machine()
        self.env_config()
        self.reward_config()
        self.train_config()
        self.generator_ranges()

    def to_dict(self) -> dict:
        h = {f.name: getattr(self.harness, f.name) for f in fields(HarnessSection)}
        return {"crm": self.crm, "env": self.env, "train": self.train, "taxonomy": self.taxonomy, "harness": h}


def config_from_dict(doc: Mapping[str, Any], overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
    """Build and validate a config; ``overrides`` patch the harness section."""
    if not isinstance(doc, Mapping):
        raise ConfigError("<root>", "config must be a JSON object")
    for key in doc:
        if key not in SECTIONS:
            raise ConfigError(key, f"unknown section; expected one of {SECTIONS}")
    sections = {}
    for name in ("crm", "env", "train", "taxonomy"):
        value = doc.get(name, {})
        if not isinstance(value, Mapping):
            raise ConfigError(name, "section must be an object")
        sections[name] = dict(value)
    h = dict(doc.get("harness", {}))
    h.update({k: v for k, v in (overrides or {}).items() if v is not None})
    known = {f.name for f in fields(HarnessSection)}
    for key in h:
        if key not in known:
            raise ConfigError(f"harness.{key}", "unknown key")
    if isinstance(h.get("seeds"), int):
        h["seeds"] = [h["seeds"]]
    cfg = ExperimentConfig(harness=HarnessSection(**h), **sections)
    cfg.validate()
    return cfg


def load_config(path, overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("--config", f"no such file: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return config_from_dict(doc, overrides)
