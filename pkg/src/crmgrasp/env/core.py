"""Deterministic quasi-static grasping world.

No velocities or inertia: every step moves the hand by a bounded
increment, resolves contacts against the object's analytic shape, shoves
the object if the hand digs in too deep and reports the resulting wrench.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..crm import EventFlags, StageId
from ..observation import GlobalObservation
from ..tasks import (
    Affordance, ObjectState, TaskError, TaskSpec, in_workspace, quat_about, quat_angle, quat_multiply,
    quat_to_matrix,
)
from ..taxonomy import TopologySpec, topology_spec
from .contact import (
    Contact, ContactParams, compute_contacts, contact_wrench, friction_cone_check, settle_object,
)
from .kinematics import PALM_SLOT, THETA_MAX, HandGeometry, HandState, forward_kinematics
from .rewards import RewardConfig, reward_approach, reward_grasp

# buttons and knobs are fixed in place; everything else can be shoved around
ANCHORED_AFFORDANCES = (Affordance.PRESS, Affordance.TWIST)
HOLD_AFFORDANCES = (Affordance.LIFT, Affordance.PULL, Affordance.LEVER, Affordance.WRAP_GRASP,
                    Affordance.HANDLE_GRASP)


@dataclass
class EnvConfig:
    step_max: float = 0.02
    grasp_scale: float = 0.25
    dtheta_max: float = 0.05
    arrive_threshold: float = 0.02
    workspace_half: float = 0.5
    approach_budget: int = 200
    grasp_budget: int = 300
    episode_cap: int = 500
    stable_steps: int = 20
    start_distance: float = 0.25
    rand_position: float = 0.003
    rand_yaw_deg: float = 11.5
    rand_joint: float = 0.02
    force_tol: float = 0.5
    torque_tol: float = 0.05
    twist_torque: float = 0.05
    press_force: float = 2.0
    settle: bool = True
    contact: ContactParams = field(default_factory=ContactParams)
    geometry: HandGeometry = field(default_factory=HandGeometry)

    @classmethod
    def from_dict(cls, d: dict | None) -> "EnvConfig":
        d = dict(d or {})
        contact = ContactParams(**d.pop("contact", {}))
        geom_d = d.pop("geometry", {})
        geom = HandGeometry(**{k: tuple(v) if isinstance(v, list) else v for k, v in geom_d.items()})
        return cls(contact=contact, geometry=geom, **d)


@dataclass
class SimState:
    task: TaskSpec
    topology: TopologySpec
    hand: HandState
    obj: ObjectState
    grasp_offset: np.ndarray  # grasp location in the object frame
    steps_in_stage: int = 0
    stable_count: int = 0
    episode_step: int = 0
    contacts: list = field(default_factory=list)
    obs: GlobalObservation | None = None

    @property
    def grasp_location(self) -> np.ndarray:
        return self.obj.position + quat_to_matrix(self.obj.orient) @ self.grasp_offset

    def copy(self) -> "SimState":
        return SimState(self.task, self.topology, self.hand.copy(), self.obj.copy(), self.grasp_offset.copy(),
                        self.steps_in_stage, self.stable_count, self.episode_step, list(self.contacts),
                        self.obs)


def active_slots(topology: TopologySpec) -> np.ndarray:
    """Hand points that can touch the object: tips and mids of active fingers plus the palm pad."""
    fingers = [i for i, on in enumerate(topology.active_fingers) if on]
    return np.array(fingers + [5 + i for i in fingers] + [PALM_SLOT], dtype=int)


def validate_task(task: TaskSpec, cfg: EnvConfig) -> None:
    if not in_workspace(task.grasp_location, cfg.workspace_half):
        raise TaskError(f"{task.name}: grasp location {task.grasp_location.tolist()} is outside the workspace")
    if not in_workspace(task.object.position, cfg.workspace_half):
        raise TaskError(f"{task.name}: object position is outside the workspace")


def approach_axis(topology: TopologySpec) -> np.ndarray:
    return quat_to_matrix(topology.palm_orient_offset)[:, 0]


def observe(state: SimState, cfg: EnvConfig):
    """Resolve contacts for the current poses and build the observation.

    Free objects are first settled against the hand (or shoved, with
    ``settle`` off), then contacts are re-evaluated so the observation
    matches the settled state.
    """
    slots = active_slots(state.topology)
    points = forward_kinematics(state.hand, cfg.geometry)[slots]
    if state.task.affordance in ANCHORED_AFFORDANCES:
        contacts, _ = compute_contacts(points, state.obj, cfg.contact, slots)
    elif cfg.settle:
        settle_object(points, state.obj)
        contacts, _ = compute_contacts(points, state.obj, cfg.contact, slots)
    else:
        contacts, push = compute_contacts(points, state.obj, cfg.contact, slots)
        if np.any(push):
            state.obj.position = state.obj.position + push
            contacts, _ = compute_contacts(points, state.obj, cfg.contact, slots)
    state.contacts = contacts
    force, torque = contact_wrench(contacts, state.obj)
    palm = state.hand.palm_pos
    state.obs = GlobalObservation(
        n_c=len(contacts),
        o_dist=float(np.linalg.norm(palm - state.grasp_location)),
        o_object=state.obj.position.copy(),
        o_cone=friction_cone_check(contacts, state.obj.mu),
        o_relative=palm - state.obj.position,
        o_force=force,
        o_torque=torque,
    )
    return state.obs


def reset(task: TaskSpec, rng: np.random.Generator | None, randomize: bool, cfg: EnvConfig | None = None):
    """Canonical start: fingers open, palm ``start_distance`` back along the approach axis.

    With ``randomize`` the object position, yaw and finger joints get
    uniform noise.  Returns ``(hand, object, observation, state)``.
    """
    cfg = cfg or EnvConfig()
    validate_task(task, cfg)
    topo = topology_spec(task.topology)
    obj = task.object.copy()
    rot0 = quat_to_matrix(obj.orient)
    grasp_offset = rot0.T @ (task.grasp_location - obj.position)
    theta = np.zeros(5)
    if randomize:
        if rng is None:
            raise ValueError("randomized reset needs an rng")
        obj.position = obj.position + rng.uniform(-cfg.rand_position, cfg.rand_position, size=3)
        yaw = rng.uniform(-1.0, 1.0) * math.radians(cfg.rand_yaw_deg)
        obj.orient = quat_multiply(quat_about([0.0, 0.0, 1.0], yaw), obj.orient)
        theta = np.clip(rng.uniform(-cfg.rand_joint, cfg.rand_joint, size=5), 0.0, THETA_MAX)
    target = obj.position + quat_to_matrix(obj.orient) @ grasp_offset
    palm = target - approach_axis(topo) * cfg.start_distance
    hand = HandState(palm_pos=palm, palm_orient=np.array(topo.palm_orient_offset), theta_pip=theta)
    state = SimState(task=task, topology=topo, hand=hand, obj=obj, grasp_offset=grasp_offset)
    observe(state, cfg)
    return hand, obj, state.obs, state


def success_predicate(obs: GlobalObservation, task: TaskSpec, topology: TopologySpec, cfg: EnvConfig,
                      contacts: list[Contact] | None = None) -> bool:
    if obs.n_c == 0 or obs.n_c < topology.min_contacts:
        return False
    if topology.palm_contact_required and contacts is not None:
        if not any(c.slot == PALM_SLOT for c in contacts):
            return False
    aff = task.affordance
    if aff is Affordance.PRESS:
        return topology.label == "platform" and float(np.dot(obs.o_force, task.success_axis)) >= cfg.press_force
    if aff is Affordance.TWIST:
        return float(np.dot(obs.o_torque, task.success_axis)) >= cfg.twist_torque
    return (bool(obs.o_cone)
            and float(np.linalg.norm(obs.o_force)) <= cfg.force_tol
            and float(np.linalg.norm(obs.o_torque)) <= cfg.torque_tol)


def detect_events(state: SimState, stage: StageId, cfg: EnvConfig) -> EventFlags:
    obs = state.obs
    if stage.terminal or stage == StageId.INITIAL:
        raise ValueError(f"events are only detected in active stages, not {stage.short}")
    out = not in_workspace(obs.o_object, cfg.workspace_half)
    if stage == StageId.APPROACH:
        return EventFlags(e_arrive=obs.o_dist < cfg.arrive_threshold, e_aor=out)
    return EventFlags(
        e_gor=out,
        e_succ=state.stable_count >= cfg.stable_steps,
        e_fail=state.steps_in_stage >= cfg.grasp_budget,
    )


def stage_reward(stage: StageId, obs: GlobalObservation, rcfg: RewardConfig) -> float:
    if stage == StageId.APPROACH:
        return reward_approach(obs, rcfg)
    if stage == StageId.GRASP:
        return reward_grasp(obs, rcfg)
    return 0.0


ACTION_DIM = {StageId.APPROACH: 3, StageId.GRASP: 8}


def env_step(state: SimState, action, stage: StageId, cfg: EnvConfig | None = None,
             rcfg: RewardConfig | None = None):
    """Apply one bounded action in ``stage``; mutates and returns ``state``.

    Returns ``(state, observation, event_flags, intra_reward)``.
    """
    cfg = cfg or EnvConfig()
    rcfg = rcfg or RewardConfig()
    if stage not in ACTION_DIM:
        raise ValueError(f"no actions in stage {stage.short}")
    a = np.asarray(action, dtype=float).ravel()
    if a.shape != (ACTION_DIM[stage],):
        raise ValueError(f"{stage.short} stage takes {ACTION_DIM[stage]} action entries, got {a.shape[0]}")
    if not np.all(np.isfinite(a)) or np.any(np.abs(a) > 1.0 + 1e-9):
        raise ValueError(f"action entries must lie in [-1, 1], got {a}")
    hand = state.hand
    if stage == StageId.APPROACH:
        hand.palm_pos = hand.palm_pos + a * cfg.step_max
    else:
        hand.palm_pos = hand.palm_pos + a[:3] * cfg.step_max * cfg.grasp_scale
        dtheta = a[3:] * cfg.dtheta_max
        dtheta[~np.array(state.topology.active_fingers)] = 0.0
        hand.theta_pip = np.clip(hand.theta_pip + dtheta, 0.0, THETA_MAX)
    obs = observe(state, cfg)
    state.steps_in_stage += 1
    state.episode_step += 1
    if stage == StageId.GRASP:
        if success_predicate(obs, state.task, state.topology, cfg, state.contacts):
            state.stable_count += 1
        else:
            state.stable_count = 0
    flags = detect_events(state, stage, cfg)
    return state, obs, flags, stage_reward(stage, obs, rcfg)


def enter_stage(state: SimState) -> None:
    """Reset the per-stage counters after a transition."""
    state.steps_in_stage = 0
    state.stable_count = 0


class GraspEnv:
    """Episode wrapper over a task suite.

    ``reset`` draws a task uniformly with the caller's generator;
    ``step`` advances the world in the stage chosen by the reward machine.
    """

    def __init__(self, tasks, cfg: EnvConfig | None = None, rcfg: RewardConfig | None = None,
                 randomize: bool = True):
        self.tasks = list(tasks)
        if not self.tasks:
            raise TaskError("the task suite is empty")
        self.cfg = cfg or EnvConfig()
        self.rcfg = rcfg or RewardConfig()
        self.randomize = randomize
        for task in self.tasks:
            validate_task(task, self.cfg)
        self.state: SimState | None = None

    @property
    def task(self) -> TaskSpec:
        return self.state.task

    def reset(self, rng: np.random.Generator, task_index: int | None = None) -> GlobalObservation:
        if task_index is None:
            task_index = int(rng.integers(len(self.tasks)))
        _, _, obs, self.state = reset(self.tasks[task_index], rng, self.randomize, self.cfg)
        return obs

    def step(self, action, stage: StageId):
        _, obs, flags, intra = env_step(self.state, action, stage, self.cfg, self.rcfg)
        return obs, flags, intra

    def enter_stage(self, stage: StageId) -> None:
        enter_stage(self.state)

    def truncated(self, stage: StageId) -> bool:
        """Out of time without a terminal event: approach budget or episode cap."""
        st = self.state
        if stage == StageId.APPROACH and st.steps_in_stage >= self.cfg.approach_budget:
            return True
        return st.episode_step >= self.cfg.episode_cap
