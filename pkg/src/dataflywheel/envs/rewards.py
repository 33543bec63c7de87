"""Dense per-task rewards.

Each reward exists in two layers: a scalar formula over named quantities
(``grasp_reward(...)`` etc., pinned by unit tests) and a state-level wrapper
that measures those quantities in the planar world.
"""
from __future__ import annotations

import math

from .catalog import TaskKind
from .geometry import sdf_world

HANDOVER_OFFSET = 0.12
HANDOVER_LIFT = 0.2
RELEASE_DISTANCE = 0.15


# ---- scalar formulas -------------------------------------------------------

def grasp_reward(finger_dists, z_target: float, z_current: float) -> float:
    reach = math.exp(-5.0 * max(sum(finger_dists) - 0.05, 0.0))
    return reach + 100.0 * max(0.2 - abs(z_target - z_current), -0.01)


def pour_grasp_dist(d_thumb: float, d_finger: float) -> float:
    return 0.5 * (math.exp(-8.0 * d_thumb) + math.exp(-8.0 * d_finger)) / 2.0


def pour_lift(h_current: float) -> float:
    return 50.0 * max(0.08 - abs(h_current - 0.08), -0.01)


def pour_tilt(theta: float) -> float:
    # in the plane the cup axis dotted with world-up is cos(theta)
    return 0.5 * (1.0 - math.cos(theta))


def pour_ball_bowl(d: float) -> float:
    return 10.0 * math.exp(-5.0 * max(d - 0.02, 0.0))


def pour_reward(success: bool, d_thumb: float, d_finger: float, h_current: float, theta: float, d_ball_bowl: float) -> float:
    return (
        5.0 * float(success)
        + 10.0 * (pour_grasp_dist(d_thumb, d_finger) + pour_lift(h_current))
        + 50.0 * (pour_tilt(theta) + pour_ball_bowl(d_ball_bowl))
    )


def hand_grasp_term(d: float) -> float:
    return math.exp(-8.0 * max(d - 0.08, 0.0))


def sync_term(d_left: float, d_right: float) -> float:
    return 4.0 * math.exp(-5.0 * max(d_left + d_right - 0.2, 0.0))


def lift_height_term(dz: float) -> float:
    return 10.0 * min(max(dz / 0.15, 0.0), 1.0)


def tilt_penalty(theta_max_deg: float) -> float:
    if theta_max_deg > 30.0:
        return min(5.0, (theta_max_deg - 30.0) / 5.0)
    return 0.0


def lift_reward(d_left: float, d_right: float, dz: float, theta_max_deg: float) -> float:
    return (
        hand_grasp_term(d_left) + hand_grasp_term(d_right) + sync_term(d_left, d_right)
        + lift_height_term(dz) - tilt_penalty(theta_max_deg)
    )


def handover_reward(
    d_right: float,
    right_attached: bool,
    left_attached: bool,
    d_left: float,
    carry_dist: float,
    right_center_dist: float,
) -> float:
    """Staged shaping, each stage worth at most 1 (maximum 4).

    right grasp -> carry to the handover point -> left grasp -> release.
    Completed stages are held at 1 so the sum never drops while the task
    progresses.
    """
    any_held = right_attached or left_attached
    g_right = 1.0 if any_held else hand_grasp_term(d_right)
    if left_attached:
        carry = g_left = 1.0
    elif right_attached:
        carry = math.exp(-5.0 * carry_dist)
        g_left = hand_grasp_term(d_left)
    else:
        carry = g_left = 0.0
    release = min(right_center_dist / RELEASE_DISTANCE, 1.0) if left_attached and not right_attached else 0.0
    return g_right + carry + g_left + release


# ---- state-level wrappers --------------------------------------------------

def _center_dist(state, hand) -> float:
    from .planar import object_center_of
    cx, cz = object_center_of(state)
    return math.hypot(hand.x - cx, hand.z - cz)


def _surface_dist(state, px: float, pz: float) -> float:
    return max(sdf_world(state.obj_spec, state.obj.pose, px, pz), 0.0)


def handover_point(state) -> tuple[float, float]:
    return state.x_start - HANDOVER_OFFSET, state.z_start + HANDOVER_LIFT


def grasp_state_terms(state) -> tuple[list[float], float, float]:
    from .planar import contact_points, object_center_of
    cx, cz = object_center_of(state)
    d = [math.hypot(px - cx, pz - cz) for px, pz in contact_points(state.task, state.hands[0])]
    return d, state.z_start + 0.2, state.obj.z


def ball_bowl_distance(state) -> float:
    bhw, bhh = state.bowl_spec.half_extents
    bx, bz = state.bowl.x, state.bowl.z + bhh
    return min(math.hypot(b.x - bx, b.z - bz) for b in state.balls)


def reward(state) -> float:
    from .predicates import success
    task = state.task
    if task == TaskKind.GRASP:
        return grasp_reward(*grasp_state_terms(state))
    if task == TaskKind.POUR:
        from .planar import contact_points
        thumb, index, middle = contact_points(task, state.hands[0])
        d_thumb = _surface_dist(state, *thumb)
        d_finger = (_surface_dist(state, *index) + _surface_dist(state, *middle)) / 2.0
        return pour_reward(success(state), d_thumb, d_finger, state.obj.z - state.z_start,
                           state.obj.th, ball_bowl_distance(state))
    left, right = state.hands
    d_left = _surface_dist(state, left.x, left.z)
    d_right = _surface_dist(state, right.x, right.z)
    if task == TaskKind.LIFT:
        return lift_reward(d_left, d_right, state.obj.z - state.z_start, abs(math.degrees(state.obj.th)))
    from .planar import object_center_of
    hx, hz = handover_point(state)
    cx, cz = object_center_of(state)
    carry = math.hypot(state.obj.x - hx, state.obj.z - hz)
    return handover_reward(d_right, right.attached, left.attached, d_left, carry, math.hypot(right.x - cx, right.z - cz))
