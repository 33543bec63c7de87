"""Success and timeout predicates."""
from __future__ import annotations

import math

from .catalog import TaskKind

GRASP_HEIGHT = 0.2
LIFT_HEIGHT = 0.15
POUR_RADIUS = 0.02
RELEASE_DISTANCE = 0.15
HOLD_DISTANCE = 0.10
HOLD_STEPS = 10
STEP_LIMIT = 600
HANDOVER_STEP_LIMIT = 800


def grasp_success(dz: float) -> bool:
    return dz > GRASP_HEIGHT


def lift_success(dz: float) -> bool:
    return dz > LIFT_HEIGHT


def pour_ball_in_bowl(horizontal_dist: float) -> bool:
    return horizontal_dist < POUR_RADIUS


def handover_hold(dz: float, right_released: bool, right_dist: float, left_attached: bool, left_dist: float) -> bool:
    return (dz > LIFT_HEIGHT and right_released and right_dist > RELEASE_DISTANCE
            and left_attached and left_dist < HOLD_DISTANCE)


def handover_success(hold_count: int) -> bool:
    return hold_count >= HOLD_STEPS


def step_limit(task: TaskKind) -> int:
    return HANDOVER_STEP_LIMIT if task == TaskKind.HANDOVER else STEP_LIMIT


def timeout_at(task: TaskKind, step_count: int, succeeded: bool = False) -> bool:
    return not succeeded and step_count > step_limit(task)


# ---- state-level ------------------------------------------------------------

def handover_hold_ok(state) -> bool:
    from .planar import object_center_of
    left, right = state.hands
    cx, cz = object_center_of(state)
    return handover_hold(
        state.obj.z - state.z_start,
        not right.attached,
        math.hypot(right.x - cx, right.z - cz),
        left.attached,
        math.hypot(left.x - cx, left.z - cz),
    )


def success(state) -> bool:
    task = state.task
    dz = state.obj.z - state.z_start
    if task == TaskKind.GRASP:
        return grasp_success(dz)
    if task == TaskKind.LIFT:
        return lift_success(dz)
    if task == TaskKind.HANDOVER:
        return handover_success(state.hold)
    rim = state.bowl.z + 2 * state.bowl_spec.half_extents[1]
    return any(
        b.status > 0 and b.z <= rim + 1e-12 and pour_ball_in_bowl(abs(b.x - state.bowl.x))
        for b in state.balls
    )


def timeout(state) -> bool:
    return timeout_at(state.task, state.step_count, success(state))
