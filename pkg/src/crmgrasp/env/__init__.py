"""Quasi-static grasping environment."""

from .contact import Contact, ContactParams, compute_contacts, contact_wrench, friction_cone_check, signed_distance
from .core import (
    EnvConfig, GraspEnv, SimState, detect_events, env_step, observe, reset, stage_reward, success_predicate,
)
from .kinematics import HandGeometry, HandState, coupled_angles, forward_kinematics
from .rewards import RewardConfig, reward_approach, reward_grasp, terminal_reward

__all__ = [
    "Contact", "ContactParams", "EnvConfig", "GraspEnv", "HandGeometry", "HandState", "RewardConfig", "SimState",
    "compute_contacts", "contact_wrench", "coupled_angles", "detect_events", "env_step", "forward_kinematics",
    "friction_cone_check", "observe", "reset", "reward_approach", "reward_grasp", "signed_distance",
    "stage_reward", "success_predicate", "terminal_reward",
]
