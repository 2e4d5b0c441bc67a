"""PPO over the stages of a contextual reward machine.

Each active stage owns an actor-critic pair that sees only the stage's
abstract observation.  Rollouts record intra-stage and transition rewards
separately; advantages are computed on their sum, bootstrapping across a
stage change with the next stage's critic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Callable, Mapping

import numpy as np

from .approx import (
    GaussianPolicyOutput, MlpParams, NonFiniteError, OptimState, gaussian_entropy, gaussian_log_prob,
    init_mlp, mlp_backward, mlp_forward, optim_step, policy_sample,
)
from .crm import (
    ACTIVE_STAGES, ConfigError, Event, MachineState, RewardMachine, StageId, crm_step, fired_event, mask_index,
)
from .env.rewards import REWARD_MODES, RewardConfig, emitted_transition_reward
from .observation import FIELD_SLICE, OBS_DIM, GlobalObservation

# fixed per-field input scaling so every network input is order one
_FIELD_SCALE = {
    "n_c": 0.1, "o_dist": 5.0, "o_object": 5.0, "o_cone": 1.0, "o_relative": 5.0, "o_force": 0.2,
    "o_torque": 5.0,
}
OBS_SCALE = np.ones(OBS_DIM)
for _name, _scale in _FIELD_SCALE.items():
    OBS_SCALE[FIELD_SLICE[_name]] = _scale

MAX_OBS_DIM = OBS_DIM
MAX_ACTION_DIM = 8


@dataclass
class TrainConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    batch_size: int = 64
    clip_eps: float = 0.2
    base_lr: float = 3e-5
    epochs_per_batch: int = 10
    total_timesteps: int = 200_000
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    seed: int = 0
    horizon: int = 1024  # steps per rollout, summed over the environment pool
    n_envs: int = 4
    hidden: tuple[int, ...] = (64, 64)
    init_log_std: float = -0.5
    grasp_log_std: float | None = None  # grasp-stage override of init_log_std
    close_prior: tuple[float, float] = (0.0, 0.0)  # initial mean joint action, (thumb, fingers)
    reward_scale: float = 1.0
    max_episodes: int = 0  # 0 means unlimited
    early_stop_window: int = 100
    early_stop_threshold: float = 0.99

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.close_prior = tuple(float(c) for c in self.close_prior)
        checks = [
            ("gamma", 0.0 < self.gamma <= 1.0, "must satisfy 0 < gamma <= 1"),
            ("gae_lambda", 0.0 <= self.gae_lambda <= 1.0, "must lie in [0, 1]"),
            ("clip_eps", self.clip_eps > 0.0, "must be positive"),
            ("base_lr", self.base_lr > 0.0, "must be positive"),
            ("batch_size", self.batch_size >= 1, "must be at least 1"),
            ("epochs_per_batch", self.epochs_per_batch >= 1, "must be at least 1"),
            ("total_timesteps", self.total_timesteps >= 1, "must be at least 1"),
            ("horizon", self.horizon >= 1, "must be at least 1"),
            ("n_envs", self.n_envs >= 1, "must be at least 1"),
            ("reward_scale", self.reward_scale > 0.0, "must be positive"),
            ("max_episodes", self.max_episodes >= 0, "must be non-negative"),
            ("close_prior", len(self.close_prior) == 2 and all(-1.0 <= c <= 1.0 for c in self.close_prior),
             "must be two values in [-1, 1]"),
            ("early_stop_window", self.early_stop_window >= 1, "must be at least 1"),
        ]
        for key, ok, msg in checks:
            if not ok:
                raise ConfigError(f"train.{key}", f"{msg}, got {getattr(self, key)!r}")

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "TrainConfig":
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        for key in d:
            if key not in known:
                raise ConfigError(f"train.{key}", "unknown key")
        return cls(**d)


# ---------------------------------------------------------------------------
# Policies


@dataclass
class ActorCritic:
    actor: MlpParams
    critic: MlpParams
    log_std: np.ndarray
    obs_index: np.ndarray  # global-observation indices this stage sees
    actor_opt: OptimState = field(default_factory=OptimState)
    critic_opt: OptimState = field(default_factory=OptimState)

    @property
    def obs_dim(self) -> int:
        return self.actor.in_dim

    @property
    def action_dim(self) -> int:
        return self.actor.out_dim

    def policy(self, obs: np.ndarray) -> GaussianPolicyOutput:
        mean = mlp_forward(self.actor, obs)
        return GaussianPolicyOutput(mean, np.broadcast_to(self.log_std, mean.shape))

    def value(self, obs: np.ndarray) -> np.ndarray:
        return mlp_forward(self.critic, obs)[..., 0]


@dataclass
class StagePolicies:
    pairs: dict[StageId, ActorCritic]

    def __getitem__(self, stage: StageId) -> ActorCritic:
        return self.pairs[stage]

    def abstract(self, stage: StageId, global_vec: np.ndarray) -> np.ndarray:
        """Scaled abstract observation(s) for ``stage`` from global vector(s)."""
        idx = self.pairs[stage].obs_index
        return global_vec[..., idx] * OBS_SCALE[idx]

    def set_lr(self, lr: float) -> None:
        for pair in self.pairs.values():
            pair.actor_opt.lr = lr
            pair.critic_opt.lr = lr

    def nets(self) -> dict[str, MlpParams]:
        out = {}
        for stage, pair in self.pairs.items():
            out[f"{stage.short}.actor"] = pair.actor
            out[f"{stage.short}.critic"] = pair.critic
        return out

    def vectors(self) -> dict[str, np.ndarray]:
        return {f"{stage.short}.log_std": pair.log_std for stage, pair in self.pairs.items()}


def make_policies(machine: RewardMachine, rng: np.random.Generator, hidden=(64, 64),
                  init_log_std: float = -0.5, close_prior=(0.0, 0.0),
                  grasp_log_std: float | None = None) -> StagePolicies:
    """Fresh actor-critic pairs.

    ``close_prior`` sets the initial mean joint action of the grasp stage
    (thumb, then the four fingers), biasing early exploration toward closing.
    """
    pairs = {}
    for stage in ACTIVE_STAGES:
        ctx = machine.context(stage)
        idx = mask_index(ctx)
        actor = init_mlp([len(idx), *hidden, ctx.action_dim], rng, last_scale=0.01)
        log_std = float(init_log_std)
        if stage == StageId.GRASP:
            actor.biases[-1][3] = close_prior[0]
            actor.biases[-1][4:] = close_prior[1]
            if grasp_log_std is not None:
                log_std = float(grasp_log_std)
        critic = init_mlp([len(idx), *hidden, 1], rng, last_scale=1.0)
        pairs[stage] = ActorCritic(actor, critic, np.full(ctx.action_dim, log_std), idx)
    return StagePolicies(pairs)


def policies_from_checkpoint(machine: RewardMachine, nets: Mapping[str, MlpParams],
                             vectors: Mapping[str, np.ndarray]) -> StagePolicies:
    """Rebuild policies from checkpoint contents, checking shapes against the machine."""
    pairs = {}
    for stage in ACTIVE_STAGES:
        ctx = machine.context(stage)
        idx = mask_index(ctx)
        try:
            actor = nets[f"{stage.short}.actor"]
            critic = nets[f"{stage.short}.critic"]
            log_std = np.asarray(vectors[f"{stage.short}.log_std"], dtype=float)
        except KeyError as exc:
            raise ValueError(f"checkpoint lacks {exc.args[0]}") from None
        if actor.in_dim != len(idx) or critic.in_dim != len(idx):
            raise ValueError(f"{stage.short}: checkpoint input size {actor.in_dim} but the stage observes {len(idx)}")
        if actor.out_dim != ctx.action_dim or log_std.shape != (ctx.action_dim,):
            raise ValueError(f"{stage.short}: checkpoint action size {actor.out_dim} "
                             f"but the stage acts in {ctx.action_dim}")
        pairs[stage] = ActorCritic(actor.copy(), critic.copy(), log_std.copy(), idx)
    return StagePolicies(pairs)


# ---------------------------------------------------------------------------
# Rollouts


@dataclass
class RolloutBatch:
    """Per-step records in environment-major order.

    ``abstract_obs`` and ``action`` are zero padded to the widest stage;
    ``obs_dim`` and ``action_dim`` give the used width of each row.
    """

    stage: np.ndarray
    abstract_obs: np.ndarray
    obs_dim: np.ndarray
    action: np.ndarray
    action_dim: np.ndarray
    log_prob_old: np.ndarray
    intra_reward: np.ndarray
    transition_reward: np.ndarray
    value_estimate: np.ndarray
    next_value: np.ndarray  # bootstrap value of the successor state, 0 when terminal
    done: np.ndarray  # entered a terminal stage
    episode_end: np.ndarray  # terminal, truncated or aborted: no recursion past this step
    success: np.ndarray
    aborted: int = 0
    segment_end: np.ndarray | None = None  # last record of an environment's run in this batch

    def cuts(self) -> np.ndarray:
        """Where the advantage recursion must not look ahead."""
        cut = self.episode_end.copy()
        if self.segment_end is not None:
            cut |= self.segment_end
        if len(cut):
            cut[-1] = True
        return cut

    def __len__(self) -> int:
        return len(self.stage)

    def stage_rows(self, stage: StageId) -> np.ndarray:
        return np.nonzero(self.stage == int(stage))[0]


@dataclass
class EpisodeInfo:
    success: bool
    length: int
    intra_return: float
    transition_return: float
    stages: list[StageId]  # every stage entered, in order, starting with approach
    aborted: bool = False
    truncated: bool = False


class _Slot:
    """One environment of the pool plus its reward-machine state."""

    def __init__(self, env):
        self.env = env
        self.ms: MachineState | None = None
        self.global_vec: np.ndarray | None = None
        self.length = 0
        self.intra: list[float] = []
        self.transition: list[float] = []
        self.stages: list[StageId] = []


def _start_episode(slot: _Slot, machine: RewardMachine, rng: np.random.Generator) -> None:
    obs = slot.env.reset(rng)
    slot.ms = machine.start(machine.new_state())
    slot.env.enter_stage(StageId.APPROACH)
    slot.global_vec = obs.to_vector()
    slot.length = 0
    slot.intra, slot.transition = [], []
    slot.stages = [StageId.APPROACH]


class Collector:
    """Steps a pool of environments; episodes carry over between rollouts."""

    def __init__(self, envs, machine: RewardMachine, rcfg: RewardConfig, rng: np.random.Generator):
        self.slots = [_Slot(env) for env in envs]
        self.machine = machine
        self.rcfg = rcfg
        self.rng = rng
        self.started = False

    def reset_all(self) -> None:
        for slot in self.slots:
            _start_episode(slot, self.machine, self.rng)
        self.started = True

    def collect(self, policies: StagePolicies, horizon: int, deterministic: bool = False,
                on_episode_end: Callable[[EpisodeInfo, int], bool] | None = None,
                timestep: int = 0) -> RolloutBatch:
        """Collect ``horizon`` steps, round-robin over the pool.

        ``on_episode_end(info, timestep)`` may return True to stop early;
        the batch then holds only the steps taken so far.
        """
        if horizon < 1:
            raise ValueError("horizon must be at least 1")
        if not self.started:
            self.reset_all()
        n_env = len(self.slots)
        recs: list[list[dict]] = [[] for _ in range(n_env)]
        aborted = 0
        stop = False
        steps = 0
        while steps < horizon and not stop:
            # one synchronous step for every environment, batched per stage
            active = list(range(min(n_env, horizon - steps)))
            by_stage: dict[StageId, list[int]] = {}
            for i in active:
                by_stage.setdefault(self.slots[i].ms.current, []).append(i)
            chosen: dict[int, tuple] = {}
            for stage in ACTIVE_STAGES:
                ids = by_stage.get(stage)
                if not ids:
                    continue
                pair = policies[stage]
                obs = policies.abstract(stage, np.stack([self.slots[i].global_vec for i in ids]))
                out = pair.policy(obs)
                values = pair.value(obs)
                if deterministic:
                    actions = out.mean.copy()
                    logps = gaussian_log_prob(out.mean, out.log_std, actions)
                else:
                    actions, logps = policy_sample(out, self.rng)
                for k, i in enumerate(ids):
                    chosen[i] = (stage, obs[k], actions[k], float(logps[k]), float(values[k]))
            for i in active:
                stage, obs, action, logp, value = chosen[i]
                slot = self.slots[i]
                env_obs, flags, intra = slot.env.step(np.clip(action, -1.0, 1.0), stage)
                slot.length += 1
                steps += 1
                rec = dict(stage=int(stage), obs=obs, action=action, logp=logp, value=value,
                           intra=float(intra), transition=0.0, next_value=math.nan, done=False, end=False,
                           success=False)
                recs[i].append(rec)
                if not env_obs.is_finite():
                    aborted += 1
                    rec.update(intra=0.0, next_value=0.0, end=True)
                    info = EpisodeInfo(False, slot.length, math.fsum(slot.intra), math.fsum(slot.transition),
                                       slot.stages, aborted=True)
                    _start_episode(slot, self.machine, self.rng)
                    if on_episode_end is not None and on_episode_end(info, timestep + steps):
                        stop = True
                    continue
                event = fired_event(stage, flags)
                nxt, _, transitioned = crm_step(self.machine, slot.ms, flags)
                trans = emitted_transition_reward(event, env_obs, self.machine.table, self.rcfg) if transitioned else 0.0
                rec["transition"] = trans
                slot.intra.append(rec["intra"])
                slot.transition.append(trans)
                slot.global_vec = env_obs.to_vector()
                if transitioned:
                    slot.stages.append(nxt)
                    slot.env.enter_stage(nxt)
                if nxt.terminal:
                    rec.update(next_value=0.0, done=True, end=True, success=(event is Event.SUCC))
                    info = EpisodeInfo(event is Event.SUCC, slot.length, math.fsum(slot.intra),
                                       math.fsum(slot.transition), slot.stages)
                elif slot.env.truncated(nxt):
                    boot = policies.abstract(nxt, slot.global_vec)
                    rec.update(next_value=float(policies[nxt].value(boot)), end=True)
                    info = EpisodeInfo(False, slot.length, math.fsum(slot.intra), math.fsum(slot.transition),
                                       slot.stages, truncated=True)
                else:
                    continue
                _start_episode(slot, self.machine, self.rng)
                if on_episode_end is not None and on_episode_end(info, timestep + steps):
                    stop = True
        # fill in bootstrap values from the successor record or the live state
        for i, seq in enumerate(recs):
            for t, rec in enumerate(seq):
                if not math.isnan(rec["next_value"]):
                    continue
                if t + 1 < len(seq):
                    rec["next_value"] = seq[t + 1]["value"]
                else:
                    slot = self.slots[i]
                    stage = slot.ms.current
                    boot = policies.abstract(stage, slot.global_vec)
                    rec["next_value"] = float(policies[stage].value(boot))
        for seq in recs:
            if seq:
                seq[-1]["cut"] = True
        flat = [rec for seq in recs for rec in seq]
        return _pack(flat, aborted)


def _pack(flat: list[dict], aborted: int) -> RolloutBatch:
    n = len(flat)
    obs = np.zeros((n, MAX_OBS_DIM))
    act = np.zeros((n, MAX_ACTION_DIM))
    obs_dim = np.zeros(n, dtype=int)
    act_dim = np.zeros(n, dtype=int)
    for k, rec in enumerate(flat):
        obs_dim[k] = len(rec["obs"])
        act_dim[k] = len(rec["action"])
        obs[k, :obs_dim[k]] = rec["obs"]
        act[k, :act_dim[k]] = rec["action"]

    def col(key, dtype=float):
        return np.array([rec[key] for rec in flat], dtype=dtype)

    return RolloutBatch(
        stage=col("stage", int), abstract_obs=obs, obs_dim=obs_dim, action=act, action_dim=act_dim,
        log_prob_old=col("logp"), intra_reward=col("intra"), transition_reward=col("transition"),
        value_estimate=col("value"), next_value=col("next_value"), done=col("done", bool),
        episode_end=col("end", bool), success=col("success", bool), aborted=aborted,
        segment_end=np.array([rec.get("cut", False) for rec in flat], dtype=bool),
    )


def collect_rollout(policies: StagePolicies, env_pool, machine: RewardMachine, horizon: int,
                    rng: np.random.Generator, rcfg: RewardConfig | None = None,
                    deterministic: bool = False) -> RolloutBatch:
    """One-shot rollout from freshly reset environments."""
    collector = Collector(env_pool, machine, rcfg or RewardConfig(), rng)
    return collector.collect(policies, horizon, deterministic=deterministic)


# ---------------------------------------------------------------------------
# Advantages and updates


def compute_advantages(batch: RolloutBatch, cfg: TrainConfig):
    """GAE over the combined reward; returns ``(advantages, value_targets)``.

    The transition reward is added to the step reward undiscounted, so with
    ``gae_lambda = 0`` the advantage is ``r + gamma * V' + R_T - V``.
    Records are in environment-major order; recursion stops at episode
    ends and wherever the next record belongs to another environment's
    sequence (the bootstrap value already covers it).
    """
    n = len(batch)
    reward = cfg.reward_scale * (batch.intra_reward + batch.transition_reward)
    delta = reward + cfg.gamma * batch.next_value - batch.value_estimate
    cut = batch.cuts()
    decay = cfg.gamma * cfg.gae_lambda
    adv = np.zeros(n)
    running = 0.0
    for t in range(n - 1, -1, -1):
        running = delta[t] + (0.0 if cut[t] else decay * running)
        adv[t] = running
    return adv, adv + batch.value_estimate


def clipped_surrogate(ratio: np.ndarray, adv: np.ndarray, clip_eps: float) -> np.ndarray:
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv)


@dataclass
class UpdateStats:
    loss_pi: float = 0.0
    loss_v: float = 0.0
    skipped: int = 0
    minibatches: int = 0
    surrogate_by_epoch: list[float] = field(default_factory=list)


def _normalize(adv: np.ndarray) -> np.ndarray:
    if len(adv) < 2:
        return adv - adv.mean()
    return (adv - adv.mean()) / max(float(adv.std()), 1e-8)


def ppo_update(policies: StagePolicies, batch: RolloutBatch, advantages: np.ndarray, targets: np.ndarray,
               cfg: TrainConfig, rng: np.random.Generator) -> UpdateStats:
    """Clipped-surrogate epochs over shuffled minibatches, routed by stage."""
    n = len(batch)
    stats = UpdateStats()
    if n == 0:
        return stats
    pi_losses, v_losses = [], []
    for _ in range(cfg.epochs_per_batch):
        order = rng.permutation(n)
        epoch_obj = []
        for lo in range(0, n, cfg.batch_size):
            mb = order[lo:lo + cfg.batch_size]
            adv = _normalize(advantages[mb])
            count = len(mb)
            results = []
            try:
                for stage in ACTIVE_STAGES:
                    sel = np.nonzero(batch.stage[mb] == int(stage))[0]
                    if len(sel) == 0:
                        continue
                    results.append((stage, _stage_grads(policies[stage], batch, mb[sel], adv[sel], targets[mb[sel]],
                                                        count, cfg)))
                total_pi = sum(r[1][0] for r in results)
                total_v = sum(r[1][1] for r in results)
                if not (math.isfinite(total_pi) and math.isfinite(total_v)):
                    raise NonFiniteError("non-finite loss")
                for stage, (_, _, a_grads, c_grads, _) in results:
                    pair = policies[stage]
                    optim_step(pair.actor.arrays() + [pair.log_std], a_grads, pair.actor_opt)
                    optim_step(pair.critic, c_grads, pair.critic_opt)
            except NonFiniteError:
                stats.skipped += 1
                continue
            stats.minibatches += 1
            pi_losses.append(total_pi)
            v_losses.append(total_v)
            epoch_obj.append(sum(r[1][4] for r in results))
        stats.surrogate_by_epoch.append(float(np.mean(epoch_obj)) if epoch_obj else math.nan)
    stats.loss_pi = float(np.mean(pi_losses)) if pi_losses else math.nan
    stats.loss_v = float(np.mean(v_losses)) if v_losses else math.nan
    return stats


def _stage_grads(pair: ActorCritic, batch: RolloutBatch, rows: np.ndarray, adv: np.ndarray,
                 targets: np.ndarray, count: int, cfg: TrainConfig):
    """Loss contributions and gradients for one stage's share of a minibatch.

    Losses are means over the whole minibatch (``count`` records), so the
    per-stage pieces add up to the minibatch loss.
    """
    d_obs, d_act = pair.obs_dim, pair.action_dim
    obs = batch.abstract_obs[rows, :d_obs]
    act = batch.action[rows, :d_act]
    mean = mlp_forward(pair.actor, obs)
    log_std = np.clip(pair.log_std, -5.0, 2.0)
    logp = gaussian_log_prob(mean, log_std, act)
    ratio = np.exp(logp - batch.log_prob_old[rows])
    clipped = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps)
    objective = np.minimum(ratio * adv, clipped * adv)
    share = len(rows) / count
    entropy = gaussian_entropy(log_std)
    loss_pi = -float(np.sum(objective)) / count - cfg.entropy_coef * entropy * share
    # gradient flows only where the unclipped term is the minimum
    active = (ratio * adv <= clipped * adv).astype(float)
    d_logp = -(ratio * adv * active) / count
    var = np.exp(2.0 * log_std)
    diff = act - mean
    d_mean = d_logp[:, None] * diff / var
    d_log_std = np.sum(d_logp[:, None] * (diff * diff / var - 1.0), axis=0) - cfg.entropy_coef * share
    a_grads = mlp_backward(pair.actor, obs, d_mean).arrays() + [d_log_std]

    values = mlp_forward(pair.critic, obs)[:, 0]
    err = values - targets
    loss_v = cfg.value_coef * float(np.sum(err * err)) / count
    c_grads = mlp_backward(pair.critic, obs, (2.0 * cfg.value_coef * err / count)[:, None])
    return loss_pi, loss_v, a_grads, c_grads, float(np.sum(objective)) / count


# ---------------------------------------------------------------------------
# Schedule, stopping, baselines


def lr_schedule(progress: float, base_lr: float) -> float:
    """Piecewise-constant decay: full rate, then 90 %, then 80 %."""
    if not 0.0 <= progress <= 1.0:
        raise ValueError(f"progress must lie in [0, 1], got {progress}")
    if progress < 0.4:
        return base_lr
    if progress < 0.7:
        return 0.9 * base_lr
    return 0.8 * base_lr


def early_stop(success_history, window: int = 100, threshold: float = 0.99) -> bool:
    hist = list(success_history)
    if len(hist) < window:
        return False
    return sum(1 for s in hist[-window:] if s) / window >= threshold


BASELINE_LABELS = {"full": "CRM-PPO", "transition_only": "IPPO-like", "intra_only": "LPPO-like"}


def make_baseline(mode: str, base: RewardConfig | None = None):
    """Reward ablation for ``mode``; returns ``(RewardConfig, label)``."""
    if mode not in REWARD_MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {REWARD_MODES}")
    base = base or RewardConfig()
    cfg = RewardConfig(rho_appr=base.rho_appr, rho_grasp=base.rho_grasp, r_cone=base.r_cone, mode=mode,
                       norm=base.norm)
    return cfg, BASELINE_LABELS[mode]


# ---------------------------------------------------------------------------
# Training loop


@dataclass
class EpisodeRow:
    episode: int
    timestep: int
    success: bool
    length: int
    success_100: float
    ep_len_100: float
    lr: float
    loss_pi: float
    loss_v: float
    stage_counts: dict[StageId, int]


@dataclass
class TrainResult:
    episodes: int
    timesteps: int
    early_stopped: bool
    successes: list[bool]
    lengths: list[int]


class Trainer:
    """CRM-PPO loop: collect, estimate advantages, update, repeat.

    Random streams for initialization, environments and minibatch shuffling
    are spawned from ``cfg.seed`` so runs are reproducible.
    """

    def __init__(self, envs, machine: RewardMachine, rcfg: RewardConfig, cfg: TrainConfig,
                 policies: StagePolicies | None = None):
        self.cfg = cfg
        self.machine = machine
        self.rcfg = rcfg
        init_ss, env_ss, upd_ss = np.random.SeedSequence(cfg.seed).spawn(3)
        self.env_rng = np.random.default_rng(env_ss)
        self.update_rng = np.random.default_rng(upd_ss)
        self.policies = policies or make_policies(machine, np.random.default_rng(init_ss), cfg.hidden,
                                                  cfg.init_log_std, cfg.close_prior,
                                                  cfg.grasp_log_std)
        self.collector = Collector(envs, machine, rcfg, self.env_rng)
        self.timesteps = 0
        self.successes: list[bool] = []
        self.lengths: list[int] = []
        self.stage_counts = {stage: 0 for stage in StageId if stage != StageId.INITIAL}
        self.last_stats = UpdateStats(loss_pi=math.nan, loss_v=math.nan)
        self.lr = lr_schedule(0.0, cfg.base_lr)
        self.early_stopped = False
        self._halt = False
        self._on_episode: Callable[[EpisodeRow], None] | None = None

    def __getstate__(self):
        # callbacks are bound to the caller; snapshots carry only training state
        state = self.__dict__.copy()
        state["_on_episode"] = None
        return state

    @property
    def episodes(self) -> int:
        return len(self.successes)

    def _episode_end(self, info: EpisodeInfo, timestep: int) -> bool:
        self.successes.append(bool(info.success))
        self.lengths.append(int(info.length))
        for stage in info.stages:
            self.stage_counts[stage] += 1
        w = self.cfg.early_stop_window
        if self._on_episode is not None:
            tail_s = self.successes[-w:]
            tail_l = self.lengths[-w:]
            self._on_episode(EpisodeRow(
                episode=self.episodes, timestep=timestep, success=bool(info.success), length=int(info.length),
                success_100=sum(tail_s) / len(tail_s), ep_len_100=sum(tail_l) / len(tail_l), lr=self.lr,
                loss_pi=self.last_stats.loss_pi, loss_v=self.last_stats.loss_v, stage_counts=dict(self.stage_counts),
            ))
        if early_stop(self.successes, w, self.cfg.early_stop_threshold):
            self.early_stopped = True
            self._halt = True
        elif self.cfg.max_episodes and self.episodes >= self.cfg.max_episodes:
            self._halt = True
        return self._halt

    def done(self) -> bool:
        return self._halt or self.timesteps >= self.cfg.total_timesteps

    def iterate(self) -> UpdateStats | None:
        """One rollout plus one update; returns None if training halted mid-rollout."""
        cfg = self.cfg
        self.lr = lr_schedule(min(1.0, self.timesteps / cfg.total_timesteps), cfg.base_lr)
        self.policies.set_lr(self.lr)
        horizon = min(cfg.horizon, cfg.total_timesteps - self.timesteps)
        batch = self.collector.collect(self.policies, horizon, on_episode_end=self._episode_end,
                                       timestep=self.timesteps)
        self.timesteps += len(batch)
        if self._halt:
            return None
        adv, targets = compute_advantages(batch, cfg)
        self.last_stats = ppo_update(self.policies, batch, adv, targets, cfg, self.update_rng)
        return self.last_stats

    def run(self, on_episode: Callable[[EpisodeRow], None] | None = None,
            on_update: Callable[["Trainer", UpdateStats], None] | None = None) -> TrainResult:
        self._on_episode = on_episode
        try:
            while not self.done():
                stats = self.iterate()
                if stats is not None and on_update is not None:
                    on_update(self, stats)
        finally:
            self._on_episode = None
        return TrainResult(self.episodes, self.timesteps, self.early_stopped, list(self.successes),
                           list(self.lengths))
