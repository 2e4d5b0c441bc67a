import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crmgrasp.crm import Event, EventFlags, StageId, TransitionTable
from crmgrasp.env.contact import (
    GRAVITY, Contact, compute_contacts, contact_wrench, friction_cone_check, signed_distance,
)
from crmgrasp.env.core import EnvConfig, GraspEnv, detect_events, reset
from crmgrasp.env.kinematics import (
    ALPHA_DIP, ALPHA_MCP, ALPHA_TMCP, THETA_MAX, HandGeometry, HandState, coupled_angles, forward_kinematics,
    hand_frame_points,
)
from crmgrasp.env.rewards import (
    RewardConfig, emitted_transition_reward, reward_approach, reward_grasp, terminal_reward,
)
from crmgrasp.harness.suites import scripted_close
from crmgrasp.observation import OBS_DIM, GlobalObservation
from crmgrasp.tasks import ObjectState, TaskError, load_tasks, quat_angle, save_tasks
from crmgrasp.taxonomy import make_task
from crmgrasp.tasks import Affordance


def obs_with(**kw):
    base = dict(n_c=0, o_dist=0.0, o_object=np.zeros(3), o_cone=False, o_relative=np.zeros(3),
                o_force=np.zeros(3), o_torque=np.zeros(3))
    base.update(kw)
    return GlobalObservation(**base)


# kinematics

def test_coupling_constants():
    assert ALPHA_MCP == 0.67 and ALPHA_TMCP == 0.5
    assert tuple(ALPHA_DIP) == (0.77, 0.75, 0.75, 0.57)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, THETA_MAX), min_size=5, max_size=5))
def test_coupled_angles_exact(theta):
    theta = np.array(theta)
    mcp, pip, dip = coupled_angles(theta)
    assert mcp[0] == theta[0] and pip[0] == 0.5 * theta[0] and dip[0] == 0.0
    for i in range(1, 5):
        assert pip[i] == theta[i]
        assert mcp[i] == 0.67 * theta[i]
        assert dip[i] == ALPHA_DIP[i - 1] * theta[i]


def test_index_fingertip_planar_chain():
    geom = HandGeometry()
    th = 0.9
    pts = hand_frame_points(np.array([0.0, th, 0.0, 0.0, 0.0]), geom)
    a1 = 0.67 * th
    a2 = a1 + th
    a3 = a2 + 0.77 * th
    l1, l2, l3 = geom.finger_links
    x = l1 * math.sin(a1) + l2 * math.sin(a2) + l3 * math.sin(a3)
    y = geom.finger_anchor_y + l1 * math.cos(a1) + l2 * math.cos(a2) + l3 * math.cos(a3)
    np.testing.assert_allclose(pts[1], [x, y, geom.finger_anchor_z[0]], atol=1e-15)


def test_open_hand_fingers_straight():
    geom = HandGeometry()
    pts = hand_frame_points(np.zeros(5), geom)
    assert pts[1, 1] == pytest.approx(geom.finger_anchor_y + sum(geom.finger_links))
    assert pts[0, 1] == pytest.approx(geom.thumb_anchor[1] - sum(geom.thumb_links))
    np.testing.assert_allclose(pts[:5, 0], 0.0, atol=1e-15)


def test_forward_kinematics_translates(rng):
    hand = HandState(np.array([0.1, -0.2, 0.3]), np.array([1.0, 0, 0, 0]), rng.uniform(0, 1.5, 5))
    np.testing.assert_allclose(forward_kinematics(hand) - hand.palm_pos,
                               hand_frame_points(hand.theta_pip, HandGeometry()), atol=1e-15)


def test_hand_state_clips_joints():
    hand = HandState(np.zeros(3), np.array([1.0, 0, 0, 0]), [-1.0, 0.5, 9.0, 0.0, 0.0])
    assert hand.theta_pip.min() == 0.0 and hand.theta_pip.max() == THETA_MAX


# contact

def test_box_signed_distance():
    obj = ObjectState("box", [0.02, 0.03, 0.04], [0.1, 0.0, 0.0])
    d, grad, ok = signed_distance(obj, np.array([[0.15, 0.0, 0.0], [0.1, 0.0, 0.035], [0.13, 0.04, 0.0]]))
    np.testing.assert_allclose(d, [0.03, -0.005, math.hypot(0.01, 0.01)], atol=1e-12)
    np.testing.assert_allclose(grad[0], [1, 0, 0])
    np.testing.assert_allclose(grad[1], [0, 0, 1])
    assert ok.all()


def test_cylinder_and_sphere_distance():
    cyl = ObjectState("cylinder", [0.03, 0.05], [0, 0, 0])
    sph = ObjectState("sphere", [0.04], [0, 0, 0.1])
    assert signed_distance(cyl, np.array([[0.05, 0, 0]]))[0][0] == pytest.approx(0.02)
    assert signed_distance(cyl, np.array([[0, 0, 0.07]]))[0][0] == pytest.approx(0.02)
    assert signed_distance(sph, np.array([[0, 0.05, 0.1]]))[0][0] == pytest.approx(0.01)


def test_weight_shared_in_proportion_to_depth():
    obj = ObjectState("box", [0.02, 0.02, 0.02], [0, 0, 0], mass=0.1, mu=5.0)
    # two opposing side contacts, one pressing twice as deep
    pts = np.array([[0.018, 0.0, 0.0], [-0.019, 0.0, 0.0]])
    contacts, _ = compute_contacts(pts, obj)
    assert len(contacts) == 2
    lift = [c.f_tangent[2] for c in contacts]
    assert lift[0] == pytest.approx(2 * lift[1])
    assert sum(lift) == pytest.approx(obj.mass * GRAVITY)
    force, _ = contact_wrench(contacts, obj)
    assert force[2] == pytest.approx(0.0, abs=1e-12)
    assert friction_cone_check(contacts, obj.mu)


def test_low_friction_slides():
    obj = ObjectState("box", [0.02, 0.02, 0.02], [0, 0, 0], mass=0.5, mu=0.1)
    contacts, _ = compute_contacts(np.array([[0.019, 0, 0], [-0.019, 0, 0]]), obj)
    assert all(c.sliding for c in contacts)
    assert not friction_cone_check(contacts, obj.mu)
    force, _ = contact_wrench(contacts, obj)
    assert force[2] < 0


def test_cone_requires_contacts():
    assert not friction_cone_check([], 0.5)


def test_cone_boundary_inclusive():
    c = Contact(point=np.zeros(3), normal=np.array([1.0, 0, 0]), f_normal=2.0, f_tangent=np.array([0, 0, 1.0]))
    assert friction_cone_check([c], 0.5)
    assert not friction_cone_check([c], 0.49)


# rewards

def test_reward_approach_formula():
    cfg = RewardConfig()
    o = obs_with(o_dist=0.3, n_c=2)
    assert reward_approach(o, cfg) == pytest.approx(-math.exp(0.3) - 0.1 * 2)
    assert reward_approach(o, RewardConfig(mode="transition_only")) == 0.0


def test_reward_grasp_formula():
    o = obs_with(n_c=3, o_force=np.array([0.1, -0.2, 0.3]), o_torque=np.array([0.0, 0.01, -0.02]))
    ref = -math.exp(0.6) - math.exp(0.03) + 0.5 * 3
    assert reward_grasp(o, RewardConfig()) == pytest.approx(ref)
    assert reward_grasp(o, RewardConfig(mode="intra_only")) == pytest.approx(ref)
    assert reward_grasp(o, RewardConfig(mode="transition_only")) == 0.0
    ref2 = -math.exp(math.sqrt(0.14)) - math.exp(math.sqrt(0.0005)) + 1.5
    assert reward_grasp(o, RewardConfig(norm="l2")) == pytest.approx(ref2)


def test_approach_reward_supremum_is_minus_one():
    assert reward_approach(obs_with(), RewardConfig()) == -1.0


def test_success_bonus_requires_cone():
    table = TransitionTable.from_rewards()
    cfg = RewardConfig()
    assert terminal_reward(Event.SUCC, obs_with(o_cone=True), table, cfg) == 120.0
    assert terminal_reward(Event.SUCC, obs_with(o_cone=False), table, cfg) == 100.0
    assert terminal_reward(Event.GOR, obs_with(o_cone=True), table, cfg) == -10.0
    with pytest.raises(ValueError):
        terminal_reward(Event.ARRIVE, obs_with(), table, cfg)


def test_intra_only_emits_no_transition_reward():
    table = TransitionTable.from_rewards()
    cfg = RewardConfig(mode="intra_only")
    for event in Event:
        assert emitted_transition_reward(event, obs_with(o_cone=True), table, cfg) == 0.0


def test_bad_reward_config():
    with pytest.raises(ValueError):
        RewardConfig(rho_appr=0.0)
    with pytest.raises(ValueError):
        RewardConfig(mode="sparse")


# observation and tasks

def test_observation_vector_roundtrip(rng):
    vec = rng.normal(size=OBS_DIM)
    vec[0] = 3.0
    vec[5] = 1.0
    back = GlobalObservation.from_vector(vec).to_vector()
    np.testing.assert_array_equal(back, vec)
    with pytest.raises(ValueError):
        GlobalObservation.from_vector(np.zeros(OBS_DIM + 1))


def test_task_file_roundtrip(tmp_path, desk_tasks):
    path = save_tasks(tmp_path / "t.json", desk_tasks)
    back = load_tasks(path)
    assert [t.to_dict() for t in back] == [t.to_dict() for t in desk_tasks]


def test_task_outside_workspace_rejected():
    obj = ObjectState("box", [0.02, 0.02, 0.02], [0.6, 0.0, 0.0])
    task = make_task("far", obj, Affordance.LIFT)
    with pytest.raises(TaskError):
        GraspEnv([task])


def test_empty_suite_rejected():
    with pytest.raises(TaskError):
        GraspEnv([])


# environment

def test_reset_canonical_start(desk_tasks):
    cfg = EnvConfig()
    for task in desk_tasks:
        hand, obj, obs, _ = reset(task, None, False, cfg)
        np.testing.assert_array_equal(obj.position, task.object.position)
        assert np.all(hand.theta_pip == 0.0)
        assert obs.o_dist == pytest.approx(cfg.start_distance)
        assert obs.n_c == 0


def test_randomized_reset_bounds(desk_tasks):
    cfg = EnvConfig()
    rng = np.random.default_rng(5)
    for i in range(600):
        task = desk_tasks[i % 3]
        hand, obj, _, _ = reset(task, rng, True, cfg)
        assert np.max(np.abs(obj.position - task.object.position)) <= 0.003
        assert math.degrees(quat_angle(obj.orient)) <= 11.5 + 1e-9
        assert hand.theta_pip.min() >= 0.0 and hand.theta_pip.max() <= 0.02


def test_randomized_reset_needs_rng(desk_tasks):
    with pytest.raises(ValueError):
        reset(desk_tasks[0], None, True)


def test_approach_events(desk_tasks):
    cfg = EnvConfig()
    _, _, _, state = reset(desk_tasks[0], None, False, cfg)
    assert detect_events(state, StageId.APPROACH, cfg) == EventFlags()
    with pytest.raises(ValueError):
        detect_events(state, StageId.GRASP_SUCCESS, cfg)


def test_approach_budget_truncates_without_event(desk_tasks):
    env = GraspEnv(desk_tasks, randomize=False)
    env.reset(np.random.default_rng(0), 0)
    env.enter_stage(StageId.APPROACH)
    for step in range(200):
        assert not env.truncated(StageId.APPROACH)
        _, flags, _ = env.step(np.zeros(3), StageId.APPROACH)
        assert not flags.any()
    assert env.truncated(StageId.APPROACH)


def test_leaving_workspace_fires_aor(desk_tasks):
    env = GraspEnv(desk_tasks, randomize=False)
    env.reset(np.random.default_rng(0), 0)
    env.state.obj.position = np.array([0.0, 0.0, 0.7])
    _, flags, _ = env.step(np.zeros(3), StageId.APPROACH)
    assert flags.e_aor


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_scripted_cylinder_lift_succeeds(cylinder_task, seed):
    env = GraspEnv([cylinder_task])
    trace = scripted_close(env, np.random.default_rng(seed))
    stages = [s for s, _ in trace]
    assert StageId.GRASP in stages
    last_flags = trace[-1][1]
    assert last_flags.e_succ
    assert env.state.obs.o_cone


def test_scripted_open_hand_fails(cylinder_task):
    env = GraspEnv([cylinder_task])
    trace = scripted_close(env, np.random.default_rng(0), thumb_target=0.0, finger_target=0.0)
    assert trace[-1][1].e_fail
    assert sum(1 for s, _ in trace if s == StageId.GRASP) == EnvConfig().grasp_budget
