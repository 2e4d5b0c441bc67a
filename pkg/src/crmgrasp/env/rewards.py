"""Stage reward functions and reward-mode handling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..crm import Event, TransitionTable
from ..observation import GlobalObservation

REWARD_MODES = ("full", "transition_only", "intra_only")


@dataclass(frozen=True)
class RewardConfig:
    rho_appr: float = 0.1
    rho_grasp: float = 0.5
    r_cone: float = 20.0
    mode: str = "full"
    norm: str = "l1"

    def __post_init__(self):
        if not self.rho_appr > 0:
            raise ValueError(f"rho_appr must be positive, got {self.rho_appr}")
        if not self.rho_grasp > 0:
            raise ValueError(f"rho_grasp must be positive, got {self.rho_grasp}")
        if self.mode not in REWARD_MODES:
            raise ValueError(f"unknown reward mode {self.mode!r}")
        if self.norm not in ("l1", "l2"):
            raise ValueError(f"norm must be 'l1' or 'l2', got {self.norm!r}")

    @property
    def intra_enabled(self) -> bool:
        return self.mode != "transition_only"

    @property
    def transition_enabled(self) -> bool:
        return self.mode != "intra_only"


def _norm(v: np.ndarray, kind: str) -> float:
    v = np.asarray(v, dtype=float)
    return float(np.abs(v).sum()) if kind == "l1" else float(np.linalg.norm(v))


def reward_approach(obs: GlobalObservation, cfg: RewardConfig) -> float:
    if not cfg.intra_enabled:
        return 0.0
    return -math.exp(abs(obs.o_dist)) - cfg.rho_appr * obs.n_c


def equilibrium_reward(obs: GlobalObservation, norm: str = "l1") -> float:
    return -math.exp(_norm(obs.o_force, norm)) - math.exp(_norm(obs.o_torque, norm))


def reward_grasp(obs: GlobalObservation, cfg: RewardConfig) -> float:
    # the arrival bonus is paid by the reward machine on the transition step, not here
    if not cfg.intra_enabled:
        return 0.0
    return equilibrium_reward(obs, cfg.norm) + cfg.rho_grasp * obs.n_c


TERMINAL_EVENTS = (Event.AOR, Event.GOR, Event.FAIL, Event.SUCC)


def terminal_reward(event: Event, obs: GlobalObservation, table: TransitionTable, cfg: RewardConfig) -> float:
    """Reward for entering a terminal stage; the success stage adds the friction-cone bonus."""
    if event not in TERMINAL_EVENTS:
        raise ValueError(f"{event} does not enter a terminal stage")
    reward = table.reward(event)
    if event is Event.SUCC and obs.o_cone:
        reward += cfg.r_cone
    return reward


def emitted_transition_reward(event: Event | None, obs: GlobalObservation, table: TransitionTable,
                              cfg: RewardConfig) -> float:
    """What the agent actually receives for a transition under the configured mode."""
    if event is None or not cfg.transition_enabled:
        return 0.0
    if event in TERMINAL_EVENTS:
        return terminal_reward(event, obs, table, cfg)
    return table.reward(event)
