"""Built-in task suites and a scripted closing controller."""

from __future__ import annotations

import numpy as np

from ..crm import StageId
from ..env.core import EnvConfig, GraspEnv
from ..tasks import Affordance, ObjectState, TaskSpec
from ..taxonomy import make_task


def desk_suite() -> list[TaskSpec]:
    """Three box tasks (two Lift, one Pull) sized for desk-scale training."""
    return [
        make_task("lift_small_box", ObjectState("box", [0.025, 0.025, 0.04], [0, 0, 0], mass=0.05, mu=0.6),
                  Affordance.LIFT),
        make_task("pull_box", ObjectState("box", [0.025, 0.025, 0.04], [0, 0, 0], mass=0.06, mu=0.5),
                  Affordance.PULL),
        make_task("lift_large_box", ObjectState("box", [0.025, 0.03, 0.045], [0, 0, 0], mass=0.08, mu=0.7),
                  Affordance.LIFT),
    ]


def cylinder_lift_task() -> TaskSpec:
    """Canonical upright cylinder to be lifted with a power grasp."""
    obj = ObjectState("cylinder", [0.035, 0.05], [0, 0, 0], mass=0.2, mu=0.6)
    return make_task("cylinder_lift", obj, Affordance.LIFT)


def scripted_close(env: GraspEnv, rng: np.random.Generator, task_index: int = 0,
                   thumb_target: float = 1.2, finger_target: float = 1.3, max_steps: int = 400):
    """Drive the palm to the grasp location, then close toward fixed joint targets.

    Returns the list of ``(stage, flags)`` pairs seen after every step.
    """
    cfg: EnvConfig = env.cfg
    env.reset(rng, task_index)
    env.enter_stage(StageId.APPROACH)
    stage = StageId.APPROACH
    trace = []
    for _ in range(max_steps):
        st = env.state
        if stage == StageId.APPROACH:
            delta = st.grasp_location - st.hand.palm_pos
            action = np.clip(delta / cfg.step_max, -1.0, 1.0)
            _, flags, _ = env.step(action, stage)
            trace.append((stage, flags))
            if flags.e_arrive:
                stage = StageId.GRASP
                env.enter_stage(stage)
            elif flags.any():
                break
        else:
            target = np.array([thumb_target] + [finger_target] * 4)
            dtheta = np.clip((target - st.hand.theta_pip) / cfg.dtheta_max, -1.0, 1.0)
            _, flags, _ = env.step(np.concatenate([np.zeros(3), dtheta]), stage)
            trace.append((stage, flags))
            if flags.any():
                break
    return trace
