import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crmgrasp.crm import (
    STAGE_EVENTS, ConfigError, Event, EventFlags, StageContext, StageId, TransitionTable, abstract_state,
    crm_step, cumulative_reward, default_contexts, default_machine, machine_from_config, make_machine,
    resolve_transition,
)
from crmgrasp.observation import OBS_DIM, GlobalObservation


def test_default_table_is_valid():
    TransitionTable.from_rewards().validate()


@pytest.mark.parametrize("kwargs, key", [
    (dict(aor=-5.0), "aor"),
    (dict(gor=2.0), "gor"),
    (dict(fail=-12.0), "fail"),
    (dict(fail=0.5), "fail"),
    (dict(succ=0.0), "succ"),
    (dict(arrive=-1.0), "arrive"),
])
def test_table_ordering_violations_rejected(kwargs, key):
    with pytest.raises(ConfigError) as err:
        TransitionTable.from_rewards(**kwargs).validate()
    assert err.value.key == f"crm.transition_rewards.{key}"


def test_approach_cannot_jump_to_grasp_outcome():
    table = TransitionTable.from_rewards()
    table.entries[(StageId.APPROACH, Event.ARRIVE)] = (StageId.GRASP_SUCCESS, 10.0)
    with pytest.raises(ConfigError):
        table.validate()


def test_terminal_contexts_take_no_actions():
    ctx = default_contexts()
    ctx[3] = StageContext(StageId.OUT_OF_REACH, 2, ("n_c",), "x")
    with pytest.raises(ConfigError):
        make_machine(ctx, TransitionTable.from_rewards())


def test_unknown_mask_field_rejected():
    with pytest.raises(ConfigError):
        machine_from_config({"masks": {"approach": ["o_dist", "o_velocity"]}})


def test_unknown_config_keys_rejected():
    with pytest.raises(ConfigError):
        machine_from_config({"transition_rewards": {"teleport": 1.0}})
    with pytest.raises(ConfigError):
        machine_from_config({"bogus": 1})


def test_precedence_exhaustive():
    table = TransitionTable.from_rewards()
    for stage, events in STAGE_EVENTS.items():
        for bits in itertools.product([False, True], repeat=len(events)):
            fired = [e for e, b in zip(events, bits) if b]
            nxt, reward, event = resolve_transition(stage, EventFlags.of(*fired), table)
            if not fired:
                assert (nxt, reward, event) == (stage, 0.0, None)
            else:
                assert event is fired[0]
                assert (nxt, reward) == table.entries[(stage, fired[0])]


def test_foreign_event_rejected():
    with pytest.raises(ValueError):
        resolve_transition(StageId.APPROACH, EventFlags.of(Event.SUCC), TransitionTable.from_rewards())
    with pytest.raises(ValueError):
        resolve_transition(StageId.GRASP_SUCCESS, EventFlags(), TransitionTable.from_rewards())


def test_success_path_history_and_rewards(machine):
    ms = machine.start(machine.new_state())
    out = [crm_step(machine, ms, EventFlags()) for _ in range(3)]
    assert all(o == (StageId.APPROACH, 0.0, False) for o in out)
    assert crm_step(machine, ms, EventFlags.of(Event.ARRIVE)) == (StageId.GRASP, 10.0, True)
    assert crm_step(machine, ms, EventFlags.of(Event.SUCC, Event.FAIL)) == (StageId.GRASP_SUCCESS, 100.0, True)
    assert ms.history == [(StageId.APPROACH, StageId.GRASP), (StageId.GRASP, StageId.GRASP_SUCCESS)]
    assert ms.episode_step == 5


def test_start_only_from_initial(machine):
    ms = machine.start(machine.new_state())
    with pytest.raises(RuntimeError):
        machine.start(ms)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from(["none", "arrive", "aor", "gor", "fail", "succ"]), max_size=30))
def test_transition_rewards_sum_to_history(events):
    # every transition contributes its table reward exactly once
    machine = default_machine()
    ms = machine.start(machine.new_state())
    total = 0.0
    for name in events:
        if ms.current.terminal:
            break
        allowed = {e.value for e in STAGE_EVENTS[ms.current]}
        flags = EventFlags.of(Event(name)) if name in allowed else EventFlags()
        _, r, _ = crm_step(machine, ms, flags)
        total += r
    ref = sum(machine.table.pair_reward(a, b) for a, b in ms.history)
    assert total == pytest.approx(ref, abs=1e-12)
    assert len(ms.history) == len(set(ms.history))


def test_abstract_state_uses_mask(machine):
    vec = np.arange(OBS_DIM, dtype=float)
    vec[5] = 1.0  # the cone flag is boolean
    obs = GlobalObservation.from_vector(vec)
    approach = abstract_state(machine.context(StageId.APPROACH), obs)
    # n_c, o_dist, o_object, o_relative in declared order
    np.testing.assert_array_equal(approach, [0, 1, 2, 3, 4, 6, 7, 8])
    np.testing.assert_array_equal(abstract_state(machine.context(StageId.GRASP), obs), vec)


def test_config_masks_are_order_insensitive():
    m = machine_from_config({"masks": {"approach": ["o_relative", "o_dist"]}})
    assert m.context(StageId.APPROACH).mask == ("o_dist", "o_relative")
    assert m.context(StageId.APPROACH).obs_dim == 4


def test_cumulative_reward():
    assert cumulative_reward([-1.0, -2.5], [10.0, 100.0]) == pytest.approx(106.5)
    assert math.isclose(cumulative_reward([], []), 0.0)
