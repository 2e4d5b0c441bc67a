"""Property and oracle checks bundled with the package (the ``check`` verb).

Each check returns ``(name, passed, detail)``.  Oracles are written
independently of the code under test, mostly as finite differences or
brute-force enumeration.
"""

from __future__ import annotations

import itertools
import math
import time

import numpy as np

from .. import approx
from ..agent import RolloutBatch, TrainConfig, compute_advantages
from ..crm import (
    STAGE_EVENTS, ConfigError, Event, EventFlags, StageId, TransitionTable, crm_step, default_machine,
    resolve_transition,
)
from ..env.contact import Contact, contact_wrench, friction_cone_check
from ..env.core import GraspEnv
from ..env.kinematics import ALPHA_DIP, ALPHA_MCP, ALPHA_TMCP, coupled_angles
from ..env.rewards import RewardConfig, emitted_transition_reward
from ..tasks import ObjectState
from .suites import desk_suite, scripted_close


def check_gradient(seed: int = 0) -> tuple[str, bool, str]:
    rng = np.random.default_rng(seed)
    net = approx.init_mlp([5, 7, 6, 3], rng)
    x = rng.normal(size=(4, 5))
    g_out = rng.normal(size=(4, 3))
    grads = approx.mlp_backward(net, x, g_out)
    worst = 0.0
    h = 1e-6
    for arr, garr in zip(net.arrays(), grads.arrays()):
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            up = float(np.sum(approx.mlp_forward(net, x) * g_out))
            arr[idx] = old - h
            down = float(np.sum(approx.mlp_forward(net, x) * g_out))
            arr[idx] = old
            num = (up - down) / (2 * h)
            worst = max(worst, abs(num - garr[idx]) / max(1e-8, abs(num) + abs(garr[idx])))
    return "gradient check", worst < 1e-4, f"max relative error {worst:.2e}"


def _toy_batch(rng: np.random.Generator, n: int = 40) -> RolloutBatch:
    end = rng.random(n) < 0.15
    done = end & (rng.random(n) < 0.7)
    return RolloutBatch(
        stage=rng.integers(1, 3, n), abstract_obs=np.zeros((n, 1)), obs_dim=np.ones(n, int),
        action=np.zeros((n, 1)), action_dim=np.ones(n, int), log_prob_old=np.zeros(n),
        intra_reward=rng.normal(size=n), transition_reward=np.where(end, rng.normal(size=n) * 10, 0.0),
        value_estimate=rng.normal(size=n), next_value=np.where(done, 0.0, rng.normal(size=n)),
        done=done, episode_end=end, success=np.zeros(n, bool),
    )


def check_gae_lambda_zero(seed: int = 1) -> tuple[str, bool, str]:
    rng = np.random.default_rng(seed)
    batch = _toy_batch(rng)
    cfg = TrainConfig(gamma=0.97, gae_lambda=0.0)
    adv, _ = compute_advantages(batch, cfg)
    worst = 0.0
    for t in range(len(batch)):
        # one-step advantage with the transition reward added undiscounted
        ref = batch.intra_reward[t] + cfg.gamma * batch.next_value[t] + batch.transition_reward[t] \
            - batch.value_estimate[t]
        worst = max(worst, abs(adv[t] - ref))
    return "GAE lambda=0 matches the one-step CRM advantage", worst < 1e-12, f"max abs error {worst:.1e}"


def _random_contacts(rng: np.random.Generator, n: int, mu: float) -> list[Contact]:
    out = []
    for _ in range(n):
        normal = rng.normal(size=3)
        normal /= np.linalg.norm(normal)
        fn = float(rng.uniform(0.0, 2.0))
        t = rng.normal(size=3)
        t -= np.dot(t, normal) * normal
        t *= rng.uniform(0.0, 2.0) * mu * fn / max(np.linalg.norm(t), 1e-12)
        out.append(Contact(point=rng.normal(size=3) * 0.05, normal=normal, f_normal=fn, f_tangent=t))
    return out


def check_friction_cone(seed: int = 2, trials: int = 2000) -> tuple[str, bool, str]:
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(trials):
        mu = float(rng.uniform(0.1, 1.0))
        contacts = _random_contacts(rng, int(rng.integers(0, 5)), mu)
        # oracle: squared tangential magnitude against (mu * f_n)^2
        ref = bool(contacts) and all(
            float(c.f_tangent @ c.f_tangent) <= (mu * c.f_normal) ** 2 for c in contacts)
        mismatches += friction_cone_check(contacts, mu) != ref
    return "friction cone oracle agreement", mismatches == 0, f"{mismatches} mismatches in {trials}"


def check_wrench(seed: int = 3, trials: int = 200) -> tuple[str, bool, str]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        obj = ObjectState("box", [0.02, 0.03, 0.04], rng.normal(size=3) * 0.1, mass=float(rng.uniform(0.05, 1)))
        contacts = _random_contacts(rng, int(rng.integers(1, 6)), 0.5)
        force, torque = contact_wrench(contacts, obj)
        f_ref = np.array([0.0, 0.0, -obj.mass * 9.81])
        t_ref = np.zeros(3)
        for c in contacts:
            f = c.f_tangent - c.f_normal * c.normal
            r = c.point - obj.position
            f_ref = f_ref + f
            # cross product written out by components
            t_ref = t_ref + np.array([r[1] * f[2] - r[2] * f[1], r[2] * f[0] - r[0] * f[2],
                                      r[0] * f[1] - r[1] * f[0]])
        worst = max(worst, float(np.max(np.abs(force - f_ref))), float(np.max(np.abs(torque - t_ref))))
    return "wrench cross-product oracle", worst < 1e-9, f"max abs error {worst:.1e}"


def check_coupling(seed: int = 4) -> tuple[str, bool, str]:
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0.0, 1.6, size=5)
    mcp, pip, dip = coupled_angles(theta)
    ok = (mcp[0] == theta[0] and pip[0] == ALPHA_TMCP * theta[0] and dip[0] == 0.0
          and np.array_equal(pip[1:], theta[1:]) and np.array_equal(mcp[1:], ALPHA_MCP * theta[1:])
          and np.array_equal(dip[1:], ALPHA_DIP * theta[1:])
          and ALPHA_MCP == 0.67 and ALPHA_TMCP == 0.5
          and tuple(ALPHA_DIP) == (0.77, 0.75, 0.75, 0.57))
    return "joint coupling ratios", bool(ok), "exact equality"


def check_exactly_once(episodes: int = 6) -> tuple[str, bool, str]:
    machine = default_machine()
    table = machine.table
    rcfg = RewardConfig()
    env = GraspEnv(desk_suite(), rcfg=rcfg)
    worst = 0.0
    bad_counts = 0
    for ep in range(episodes):
        rng = np.random.default_rng(100 + ep)
        target = 1.6 if ep % 2 == 0 else 0.3  # alternately succeed and time out
        trace = scripted_close(env, rng, ep % 3, target, target, max_steps=600)
        ms = machine.start(machine.new_state())
        emitted = []
        for stage, flags in trace:
            _, reward, moved = crm_step(machine, ms, flags)
            event = next((e for e in STAGE_EVENTS[stage] if flags.is_set(e)), None)
            got = emitted_transition_reward(event, env.state.obs, table, rcfg)
            if moved:
                if got != reward and not (event is Event.SUCC and math.isclose(got, reward + rcfg.r_cone)):
                    bad_counts += 1
                emitted.append(got)
        ref = sum(table.pair_reward(a, b) for a, b in ms.history)
        if ms.history and ms.history[-1][1] == StageId.GRASP_SUCCESS and env.state.obs.o_cone:
            ref += rcfg.r_cone
        bad_counts += len(emitted) != len(ms.history)
        worst = max(worst, abs(math.fsum(emitted) - ref))
    ok = worst < 1e-9 and bad_counts == 0
    return "transition reward emitted exactly once", ok, f"max abs error {worst:.1e}, {bad_counts} count errors"


def check_table_ordering() -> tuple[str, bool, str]:
    TransitionTable.from_rewards().validate()
    broken = [dict(aor=-5.0), dict(gor=1.0), dict(fail=-20.0), dict(succ=-1.0), dict(arrive=-1.5), dict(fail=1.0)]
    rejected = 0
    for kwargs in broken:
        try:
            TransitionTable.from_rewards(**kwargs).validate()
        except ConfigError:
            rejected += 1
    return "transition table ordering validation", rejected == len(broken), f"{rejected}/{len(broken)} rejected"


def check_precedence() -> tuple[str, bool, str]:
    table = TransitionTable.from_rewards()
    expected_order = {StageId.APPROACH: [Event.ARRIVE, Event.AOR],
                      StageId.GRASP: [Event.SUCC, Event.GOR, Event.FAIL]}
    errors = 0
    total = 0
    for stage, events in expected_order.items():
        for bits in itertools.product([False, True], repeat=len(events)):
            total += 1
            flags = EventFlags.of(*[e for e, b in zip(events, bits) if b])
            nxt, reward, event = resolve_transition(stage, flags, table)
            want = next((e for e, b in zip(events, bits) if b), None)
            if event is not want:
                errors += 1
            elif want is None and (nxt != stage or reward != 0.0):
                errors += 1
    return "event precedence enumeration", errors == 0, f"{errors} errors in {total} combinations"


CHECKS = (check_gradient, check_gae_lambda_zero, check_friction_cone, check_wrench, check_coupling,
          check_exactly_once, check_table_ordering, check_precedence)


def run_checks() -> list[tuple[str, bool, str]]:
    results = []
    start = time.perf_counter()
    for fn in CHECKS:
        try:
            results.append(fn())
        except Exception as exc:  # a crashing check is a failing check
            results.append((fn.__name__, False, f"raised {type(exc).__name__}: {exc}"))
    elapsed = time.perf_counter() - start
    results.append(("runtime under one minute", elapsed < 60.0, f"{elapsed:.1f} s"))
    return results
