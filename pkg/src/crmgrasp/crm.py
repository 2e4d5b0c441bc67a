"""Contextual reward machine for the staged grasping task.

A machine is a set of stage contexts (action width, observation mask and a
reward selector per stage) plus a transition table keyed by
``(stage, event)`` that also carries the reward paid once on each
transition.  ``MachineState`` holds the per-episode current stage and the
transition history.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .observation import FIELD_NAMES, FIELD_SLICE, FIELD_WIDTH, GlobalObservation


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class StageId(enum.IntEnum):
    INITIAL = 0
    APPROACH = 1
    GRASP = 2
    OUT_OF_REACH = 3
    GRASP_FAILURE = 4
    GRASP_SUCCESS = 5

    @property
    def terminal(self) -> bool:
        return self in TERMINAL_STAGES

    @property
    def short(self) -> str:
        return _SHORT[self]


TERMINAL_STAGES = frozenset({StageId.OUT_OF_REACH, StageId.GRASP_FAILURE, StageId.GRASP_SUCCESS})
ACTIVE_STAGES = (StageId.APPROACH, StageId.GRASP)
_SHORT = {
    StageId.INITIAL: "initial",
    StageId.APPROACH: "approach",
    StageId.GRASP: "grasp",
    StageId.OUT_OF_REACH: "out_of_reach",
    StageId.GRASP_FAILURE: "grasp_failure",
    StageId.GRASP_SUCCESS: "grasp_success",
}


class Event(enum.Enum):
    ARRIVE = "arrive"
    AOR = "aor"
    GOR = "gor"
    FAIL = "fail"
    SUCC = "succ"


# Which events may fire in which stage, listed in precedence order.
STAGE_EVENTS: dict[StageId, tuple[Event, ...]] = {
    StageId.APPROACH: (Event.ARRIVE, Event.AOR),
    StageId.GRASP: (Event.SUCC, Event.GOR, Event.FAIL),
}


@dataclass(frozen=True)
class EventFlags:
    e_arrive: bool = False
    e_aor: bool = False
    e_gor: bool = False
    e_fail: bool = False
    e_succ: bool = False

    def is_set(self, event: Event) -> bool:
        return getattr(self, "e_" + event.value)

    def fired(self) -> list[Event]:
        return [e for e in Event if self.is_set(e)]

    def any(self) -> bool:
        return bool(self.fired())

    @classmethod
    def of(cls, *events: Event) -> "EventFlags":
        return cls(**{"e_" + e.value: True for e in events})


@dataclass(frozen=True)
class StageContext:
    stage: StageId
    action_dim: int
    mask: tuple[str, ...] = ()
    reward_id: str = ""

    def __post_init__(self):
        unknown = [f for f in self.mask if f not in FIELD_WIDTH]
        if unknown:
            raise ConfigError(f"crm.masks.{self.stage.short}", f"unknown observation fields {unknown}")
        # keep the declared field order regardless of how the mask was listed
        object.__setattr__(self, "mask", tuple(f for f in FIELD_NAMES if f in set(self.mask)))

    @property
    def abstraction_mask(self) -> tuple[bool, ...]:
        return tuple(f in self.mask for f in FIELD_NAMES)

    @property
    def obs_dim(self) -> int:
        return sum(FIELD_WIDTH[f] for f in self.mask)


def abstract_state(context: StageContext, obs: GlobalObservation | np.ndarray) -> np.ndarray:
    """Project a global observation onto the fields selected by the stage mask."""
    vec = obs.to_vector() if isinstance(obs, GlobalObservation) else np.asarray(obs, dtype=float)
    if not context.mask:
        return np.zeros(0)
    return np.concatenate([vec[FIELD_SLICE[f]] for f in context.mask])


def mask_index(context: StageContext) -> np.ndarray:
    """Integer index into the flat observation vector, for batched abstraction."""
    return np.concatenate([np.arange(FIELD_SLICE[f].start, FIELD_SLICE[f].stop) for f in context.mask])


DEFAULT_MASKS = {
    StageId.APPROACH: ("n_c", "o_dist", "o_object", "o_relative"),
    StageId.GRASP: FIELD_NAMES,
}
DEFAULT_REWARDS = {"arrive": 10.0, "aor": -20.0, "gor": -10.0, "fail": -5.0, "succ": 100.0}
# supremum of the approach-stage reward -exp(o_dist) - rho*n_c
APPROACH_REWARD_SUP = -1.0


def default_contexts(masks: Mapping[StageId, Iterable[str]] | None = None) -> list[StageContext]:
    masks = {**DEFAULT_MASKS, **(masks or {})}
    return [
        StageContext(StageId.INITIAL, 0, (), "none"),
        StageContext(StageId.APPROACH, 3, tuple(masks[StageId.APPROACH]), "approach"),
        StageContext(StageId.GRASP, 8, tuple(masks[StageId.GRASP]), "grasp"),
        StageContext(StageId.OUT_OF_REACH, 0, (), "out_of_reach"),
        StageContext(StageId.GRASP_FAILURE, 0, (), "grasp_failure"),
        StageContext(StageId.GRASP_SUCCESS, 0, (), "grasp_success"),
    ]


@dataclass
class TransitionTable:
    entries: dict[tuple[StageId, Event], tuple[StageId, float]]

    @classmethod
    def from_rewards(cls, arrive=10.0, aor=-20.0, gor=-10.0, fail=-5.0, succ=100.0) -> "TransitionTable":
        return cls({
            (StageId.APPROACH, Event.ARRIVE): (StageId.GRASP, float(arrive)),
            (StageId.APPROACH, Event.AOR): (StageId.OUT_OF_REACH, float(aor)),
            (StageId.GRASP, Event.GOR): (StageId.OUT_OF_REACH, float(gor)),
            (StageId.GRASP, Event.FAIL): (StageId.GRASP_FAILURE, float(fail)),
            (StageId.GRASP, Event.SUCC): (StageId.GRASP_SUCCESS, float(succ)),
        })

    def reward(self, event: Event) -> float:
        for (stage, ev), (_, r) in self.entries.items():
            if ev is event:
                return r
        raise KeyError(event)

    def stage_pairs(self) -> set[tuple[StageId, StageId]]:
        return {(src, dst) for (src, _), (dst, _) in self.entries.items()}

    def pair_reward(self, src: StageId, dst: StageId) -> float:
        for (s, _), (d, r) in self.entries.items():
            if s == src and d == dst:
                return r
        raise KeyError((src, dst))

    def violations(self) -> list[tuple[str, str]]:
        """All broken constraints as ``(config key, message)`` pairs."""
        out = []
        for (src, ev), (dst, r) in self.entries.items():
            key = f"crm.transition_rewards.{ev.value}"
            if src.terminal:
                out.append((key, f"terminal stage {src.short} cannot have outgoing transitions"))
            if ev not in STAGE_EVENTS.get(src, ()):
                out.append((key, f"event {ev.value} cannot fire in stage {src.short}"))
            if src == StageId.APPROACH and dst in (StageId.GRASP_FAILURE, StageId.GRASP_SUCCESS):
                out.append((key, f"approach cannot transition directly to {dst.short}"))
            if not math.isfinite(r):
                out.append((key, "transition reward must be finite"))
        events = {ev for _, ev in self.entries}
        for ev in Event:
            if ev not in events:
                out.append((f"crm.transition_rewards.{ev.value}", "missing transition"))
        if out:
            return out
        r = {ev.value: self.reward(ev) for ev in Event}
        if not r["arrive"] > APPROACH_REWARD_SUP:
            out.append(("crm.transition_rewards.arrive",
                        f"R_arrive={r['arrive']} must exceed the approach reward supremum {APPROACH_REWARD_SUP}"))
        if not r["aor"] < r["gor"]:
            out.append(("crm.transition_rewards.aor", f"R_aor < R_gor violated ({r['aor']} >= {r['gor']})"))
        if not r["gor"] < 0:
            out.append(("crm.transition_rewards.gor", f"R_gor < 0 violated ({r['gor']})"))
        if not r["gor"] < r["fail"]:
            out.append(("crm.transition_rewards.fail", f"R_gor < R_fail violated ({r['gor']} >= {r['fail']})"))
        if not r["fail"] < 0:
            out.append(("crm.transition_rewards.fail", f"R_fail < 0 violated ({r['fail']})"))
        if not r["succ"] > 0:
            out.append(("crm.transition_rewards.succ", f"R_succ > 0 violated ({r['succ']})"))
        return out

    def validate(self) -> None:
        problems = self.violations()
        if problems:
            key, msg = problems[0]
            extra = f" (+{len(problems) - 1} more)" if len(problems) > 1 else ""
            raise ConfigError(key, msg + extra)


@dataclass
class MachineState:
    current: StageId = StageId.INITIAL
    history: list[tuple[StageId, StageId]] = field(default_factory=list)
    steps_in_stage: int = 0
    episode_step: int = 0


@dataclass
class RewardMachine:
    contexts: dict[StageId, StageContext]
    table: TransitionTable

    def context(self, stage: StageId) -> StageContext:
        return self.contexts[stage]

    def new_state(self) -> MachineState:
        return MachineState()

    def start(self, state: MachineState) -> MachineState:
        """Leave the initial stage for approach. No reward, no history entry."""
        if state.current != StageId.INITIAL:
            raise RuntimeError(f"start() called from {state.current.short}")
        state.current = StageId.APPROACH
        state.steps_in_stage = 0
        return state


def make_machine(contexts: Iterable[StageContext], table: TransitionTable) -> RewardMachine:
    by_stage: dict[StageId, StageContext] = {}
    for ctx in contexts:
        if ctx.stage in by_stage:
            raise ConfigError(f"crm.contexts.{ctx.stage.short}", "duplicate stage context")
        by_stage[ctx.stage] = ctx
    for stage in StageId:
        if stage not in by_stage:
            raise ConfigError(f"crm.contexts.{stage.short}", "missing stage context")
        ctx = by_stage[stage]
        if stage.terminal and ctx.action_dim != 0:
            raise ConfigError(f"crm.contexts.{stage.short}", "terminal stages take no actions")
        if stage in ACTIVE_STAGES and (ctx.action_dim <= 0 or not ctx.mask):
            raise ConfigError(f"crm.masks.{stage.short}", "active stages need actions and a non-empty mask")
    table.validate()
    return RewardMachine(by_stage, table)


def default_machine() -> RewardMachine:
    return make_machine(default_contexts(), TransitionTable.from_rewards())


def machine_from_config(section: Mapping | None) -> RewardMachine:
    """Build a machine from the ``crm`` config section."""
    section = dict(section or {})
    known = {"transition_rewards", "masks", "r_cone"}
    for key in section:
        if key not in known:
            raise ConfigError(f"crm.{key}", "unknown key")
    rewards = dict(DEFAULT_REWARDS)
    for key, value in dict(section.get("transition_rewards", {})).items():
        if key not in rewards:
            raise ConfigError(f"crm.transition_rewards.{key}", "unknown transition")
        try:
            rewards[key] = float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"crm.transition_rewards.{key}", f"not a number: {value!r}") from None
    masks = {}
    for key, fields in dict(section.get("masks", {})).items():
        stage = {"approach": StageId.APPROACH, "grasp": StageId.GRASP}.get(key)
        if stage is None:
            raise ConfigError(f"crm.masks.{key}", "only approach and grasp take masks")
        masks[stage] = tuple(fields)
    return make_machine(default_contexts(masks), TransitionTable.from_rewards(**rewards))


def resolve_transition(stage: StageId, flags: EventFlags, table: TransitionTable):
    """Pure transition lookup: ``(next_stage, reward, event_or_None)``."""
    if stage.terminal or stage == StageId.INITIAL:
        raise ValueError(f"no transitions are evaluated from {stage.short}")
    allowed = STAGE_EVENTS[stage]
    bad = [e.value for e in flags.fired() if e not in allowed]
    if bad:
        raise ValueError(f"events {bad} cannot fire in stage {stage.short}")
    for event in allowed:
        if flags.is_set(event):
            dst, reward = table.entries[(stage, event)]
            return dst, reward, event
    return stage, 0.0, None


def crm_step(machine: RewardMachine, state: MachineState, flags: EventFlags):
    """Advance ``state`` by one agent step.

    Returns ``(next_stage, transition_reward, transitioned)``; the history is
    appended only when a transition fires.
    """
    nxt, reward, event = resolve_transition(state.current, flags, machine.table)
    state.episode_step += 1
    if event is None:
        state.steps_in_stage += 1
        return nxt, 0.0, False
    state.history.append((state.current, nxt))
    state.current = nxt
    state.steps_in_stage = 0
    return nxt, reward, True


def fired_event(stage: StageId, flags: EventFlags) -> Event | None:
    for event in STAGE_EVENTS.get(stage, ()):
        if flags.is_set(event):
            return event
    return None


def cumulative_reward(step_rewards: Iterable[float], transition_rewards: Iterable[float]) -> float:
    return float(math.fsum(step_rewards) + math.fsum(transition_rewards))
