import math

import numpy as np
import pytest

from crmgrasp.agent import (
    RolloutBatch, TrainConfig, Trainer, _stage_grads, clipped_surrogate, compute_advantages, early_stop,
    lr_schedule, make_baseline, make_policies, policies_from_checkpoint,
)
from crmgrasp.approx import gaussian_log_prob, init_mlp, mlp_forward
from crmgrasp.crm import ConfigError, EventFlags, StageId, default_machine
from crmgrasp.env.core import GraspEnv
from crmgrasp.env.rewards import RewardConfig
from crmgrasp.observation import GlobalObservation


class AlwaysSucceedEnv:
    """Arrives on the first approach step and succeeds on the first grasp step."""

    def __init__(self):
        self.obs = GlobalObservation(0, 0.01, np.zeros(3), True, np.zeros(3), np.zeros(3), np.zeros(3))

    def reset(self, rng, task_index=None):
        return self.obs

    def enter_stage(self, stage):
        pass

    def step(self, action, stage):
        if stage == StageId.APPROACH:
            return self.obs, EventFlags(e_arrive=True), -1.0
        return self.obs, EventFlags(e_succ=True), -2.0

    def truncated(self, stage):
        return False


def toy_batch(rng, n=50):
    end = rng.random(n) < 0.2
    done = end & (rng.random(n) < 0.6)
    seg = np.zeros(n, bool)
    seg[n // 2] = True
    return RolloutBatch(
        stage=rng.integers(1, 3, n), abstract_obs=np.zeros((n, 1)), obs_dim=np.ones(n, int),
        action=np.zeros((n, 1)), action_dim=np.ones(n, int), log_prob_old=np.zeros(n),
        intra_reward=rng.normal(size=n), transition_reward=np.where(end, rng.normal(size=n) * 10, 0.0),
        value_estimate=rng.normal(size=n), next_value=np.where(done, 0.0, rng.normal(size=n)),
        done=done, episode_end=end, success=np.zeros(n, bool), segment_end=seg,
    )


# schedule and stopping

@pytest.mark.parametrize("progress, lr", [(0.0, 3e-5), (0.2, 3e-5), (0.39, 3e-5), (0.5, 2.7e-5), (0.69, 2.7e-5),
                                          (0.8, 2.4e-5), (1.0, 2.4e-5)])
def test_lr_plateaus(progress, lr):
    assert lr_schedule(progress, 3e-5) == pytest.approx(lr, rel=1e-12)


def test_lr_schedule_rejects_out_of_range():
    with pytest.raises(ValueError):
        lr_schedule(1.5, 3e-5)


def test_early_stop_rule():
    assert not early_stop([True] * 99)
    assert early_stop([True] * 100)
    assert early_stop([False] + [True] * 99 + [True])
    assert not early_stop([True] * 98 + [False, False])
    assert early_stop([False] + [True] * 99, threshold=0.99)


def test_training_halts_at_episode_100_when_always_successful():
    cfg = TrainConfig(seed=0, n_envs=1, horizon=64, total_timesteps=10_000, base_lr=3e-5)
    trainer = Trainer([AlwaysSucceedEnv()], default_machine(), RewardConfig(), cfg)
    result = trainer.run()
    assert result.early_stopped
    assert result.episodes == 100
    assert all(result.successes) and set(result.lengths) == {2}


def test_max_episodes_cap():
    cfg = TrainConfig(seed=0, n_envs=1, horizon=64, total_timesteps=10_000, max_episodes=37,
                      early_stop_threshold=1.0, early_stop_window=1000)
    result = Trainer([AlwaysSucceedEnv()], default_machine(), RewardConfig(), cfg).run()
    assert result.episodes == 37 and not result.early_stopped


# advantages

def gae_oracle(batch, gamma, lam, scale=1.0):
    # direct sum of discounted TD errors up to the next cut
    r = scale * (batch.intra_reward + batch.transition_reward)
    delta = r + gamma * batch.next_value - batch.value_estimate
    cut = batch.episode_end | batch.segment_end
    cut[-1] = True
    n = len(batch)
    out = np.zeros(n)
    for t in range(n):
        total, w = 0.0, 1.0
        for k in range(t, n):
            total += w * delta[k]
            if cut[k]:
                break
            w *= gamma * lam
        out[t] = total
    return out


@pytest.mark.parametrize("lam", [0.0, 0.5, 0.95, 1.0])
def test_gae_matches_direct_sum(lam, rng):
    batch = toy_batch(rng)
    cfg = TrainConfig(gamma=0.97, gae_lambda=lam, reward_scale=0.3)
    adv, targets = compute_advantages(batch, cfg)
    np.testing.assert_allclose(adv, gae_oracle(batch, 0.97, lam, 0.3), atol=1e-12)
    np.testing.assert_allclose(targets, adv + batch.value_estimate, atol=1e-12)


def test_gae_lambda_zero_is_one_step_crm_advantage(rng):
    batch = toy_batch(rng)
    cfg = TrainConfig(gamma=0.99, gae_lambda=0.0)
    adv, _ = compute_advantages(batch, cfg)
    ref = batch.intra_reward + 0.99 * batch.next_value + batch.transition_reward - batch.value_estimate
    assert np.max(np.abs(adv - ref)) < 1e-12


# losses

def test_clipped_surrogate_cases():
    ratio = np.array([0.5, 1.5, 0.5, 1.5, 1.0])
    adv = np.array([1.0, 1.0, -1.0, -1.0, 2.0])
    np.testing.assert_allclose(clipped_surrogate(ratio, adv, 0.2), [0.5, 1.2, -0.8, -1.5, 2.0])


def test_stage_gradients_match_finite_differences(rng):
    machine = default_machine()
    pol = make_policies(machine, rng, hidden=(6,))
    pair = pol[StageId.APPROACH]
    n, d_obs = 8, pair.obs_dim
    obs = rng.normal(size=(n, d_obs))
    act = rng.normal(size=(n, 3)) * 0.3
    # old log-probs near the current ones keep ratios inside the clip range
    logp_old = gaussian_log_prob(mlp_forward(pair.actor, obs), pair.log_std, act) + rng.normal(size=n) * 0.01
    batch = RolloutBatch(
        stage=np.full(n, int(StageId.APPROACH)), abstract_obs=obs, obs_dim=np.full(n, d_obs),
        action=act, action_dim=np.full(n, 3), log_prob_old=logp_old, intra_reward=np.zeros(n),
        transition_reward=np.zeros(n), value_estimate=np.zeros(n), next_value=np.zeros(n),
        done=np.zeros(n, bool), episode_end=np.zeros(n, bool), success=np.zeros(n, bool))
    adv = rng.normal(size=n)
    targets = rng.normal(size=n)
    cfg = TrainConfig(entropy_coef=0.01, clip_eps=0.2)
    rows = np.arange(n)
    _, _, a_grads, c_grads, _ = _stage_grads(pair, batch, rows, adv, targets, n, cfg)

    def losses():
        lp, lv, *_ = _stage_grads(pair, batch, rows, adv, targets, n, cfg)
        return lp, lv

    h = 1e-6
    for arrays, grads, which in ((pair.actor.arrays() + [pair.log_std], a_grads, 0),
                                 (pair.critic.arrays(), c_grads.arrays(), 1)):
        for arr, g in zip(arrays, grads):
            for idx in list(np.ndindex(arr.shape))[:20]:
                old = arr[idx]
                arr[idx] = old + h
                up = losses()[which]
                arr[idx] = old - h
                down = losses()[which]
                arr[idx] = old
                num = (up - down) / (2 * h)
                assert abs(num - g[idx]) <= 1e-6 + 1e-4 * abs(num)


# policies

def test_close_prior_and_grasp_log_std(rng):
    pol = make_policies(default_machine(), rng, init_log_std=-0.5, close_prior=(0.8, 0.6), grasp_log_std=-1.6)
    grasp = pol[StageId.GRASP]
    np.testing.assert_array_equal(grasp.actor.biases[-1], [0, 0, 0, 0.8, 0.6, 0.6, 0.6, 0.6])
    np.testing.assert_array_equal(grasp.log_std, np.full(8, -1.6))
    np.testing.assert_array_equal(pol[StageId.APPROACH].log_std, np.full(3, -0.5))


def test_policies_checkpoint_shape_mismatch(rng):
    machine = default_machine()
    pol = make_policies(machine, rng)
    nets, vectors = pol.nets(), pol.vectors()
    back = policies_from_checkpoint(machine, nets, vectors)
    np.testing.assert_array_equal(back[StageId.GRASP].actor.weights[0], pol[StageId.GRASP].actor.weights[0])
    nets["approach.actor"] = init_mlp([3, 4, 3], rng)
    with pytest.raises(ValueError):
        policies_from_checkpoint(machine, nets, vectors)
    with pytest.raises(ValueError):
        policies_from_checkpoint(machine, {}, vectors)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(gamma=1.5)
    with pytest.raises(ConfigError):
        TrainConfig(close_prior=(2.0, 0.0))
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"learning_rate": 1e-3})


def test_baselines():
    for mode, label in [("full", "CRM-PPO"), ("transition_only", "IPPO-like"), ("intra_only", "LPPO-like")]:
        cfg, got = make_baseline(mode, RewardConfig(rho_appr=0.2))
        assert cfg.mode == mode and got == label and cfg.rho_appr == 0.2
    with pytest.raises(ValueError):
        make_baseline("sac")


def test_trainer_is_deterministic(desk_tasks):
    def run():
        cfg = TrainConfig(seed=3, n_envs=2, horizon=256, total_timesteps=768, init_log_std=-0.5,
                          close_prior=(1.0, 1.0))
        envs = [GraspEnv(desk_tasks) for _ in range(cfg.n_envs)]
        tr = Trainer(envs, default_machine(), RewardConfig(), cfg)
        res = tr.run()
        return res, tr.policies
    (r1, p1), (r2, p2) = run(), run()
    assert r1.successes == r2.successes and r1.lengths == r2.lengths and r1.timesteps == 768
    for a, b in zip(p1[StageId.GRASP].actor.arrays(), p2[StageId.GRASP].actor.arrays()):
        np.testing.assert_array_equal(a, b)
    assert math.isfinite(float(p1[StageId.APPROACH].log_std.sum()))
