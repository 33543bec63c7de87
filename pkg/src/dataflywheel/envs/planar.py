"""Deterministic planar manipulation world (x horizontal, z vertical, theta in-plane).

Physics is a kinematic attachment model: hands move by clamped pose deltas,
an object attaches to a hand whose contact points all lie within
``ATTACH_RADIUS`` of its surface while the fingers are closing, attached
objects follow their holder(s) rigidly (minus slip when the grip is too weak
for the load), and free objects fall straight down onto the table.

Actions are normalised to [-1, 1]^(4 * n_hands); per hand the channels are
(dx, dz, dtheta, aperture) with dx = u * MAX_DPOS, dtheta = u * MAX_DROT and
aperture target (u + 1) / 2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .catalog import (
    DEFAULT_ENVIRONMENTS,
    NOMINAL_TABLE_Z,
    THETA_MAX,
    X_MAX,
    X_MIN,
    EnvironmentParams,
    ScenarioConfig,
    TaskKind,
)
from .geometry import ObjectSpec, object_center, rotate, sdf_world
from .predicates import handover_hold_ok, success as success_fn, timeout as timeout_fn
from .rewards import reward

DT = 0.05
MAX_DPOS = 0.02
MAX_DROT = 0.1
APERTURE_RATE = 0.05
FINGER_HALF_SPAN = 0.12
FINGER_OFFSET = 0.008
ATTACH_RADIUS = 0.012
DETACH_STRETCH = 0.03
CLOSE_THRESHOLD = 0.95
RELEASE_MARGIN = 0.05
AREAL_DENSITY = 400.0
GRIP_GAIN = 1850.0
HAND_PAYLOAD = 60.0
SLIP_RATE = 0.01
SLIP_LIMIT = 0.02
SPILL_ANGLE = 0.95
HOME_APERTURE = 0.5
HAND_X_RANGE = (0.02, 0.98)
HAND_THETA_MAX = 1.6
N_BALLS = 2
BALL_SLOTS = (0.02, 0.035)
FRICTION_JITTER = 0.05
GRAVITY_JITTER = 0.02
BOWL_OFFSET = 0.16

ACTION_PER_HAND = 4
OBJ_FEATURES = 8
PROP_FEATURES = 8


class Hand(NamedTuple):
    x: float
    z: float
    th: float
    vx: float = 0.0
    vz: float = 0.0
    vth: float = 0.0
    a: float = HOME_APERTURE
    va: float = 0.0
    target: float = HOME_APERTURE
    attached: bool = False
    a_contact: float = 0.0
    attach_step: int = -1


class Body(NamedTuple):
    x: float
    z: float
    th: float
    vx: float = 0.0
    vz: float = 0.0
    vth: float = 0.0

    @property
    def pose(self) -> tuple[float, float, float]:
        return (self.x, self.z, self.th)


class Ball(NamedTuple):
    x: float
    z: float
    vz: float = 0.0
    status: int = 0  # 0 in cup, 1 falling, 2 landed


@dataclass(frozen=True)
class EnvState:
    task: TaskKind
    obj_spec: ObjectSpec
    hands: tuple[Hand, ...]
    obj: Body
    table_z: float
    friction: float
    gravity: float
    z_start: float
    x_start: float = 0.0
    step_count: int = 0
    grip: tuple | None = None
    slip: float = 0.0
    hold: int = 0
    bowl_spec: ObjectSpec | None = None
    bowl: Body | None = None
    balls: tuple[Ball, ...] = ()

    @property
    def mass(self) -> float:
        return self.obj_spec.density_scale * self.obj_spec.area * AREAL_DENSITY

    @property
    def attached(self) -> tuple[bool, ...]:
        return tuple(h.attached for h in self.hands)


class StepResult(NamedTuple):
    state: EnvState
    reward: float
    success: bool
    terminated: bool
    reason: str  # "success" | "timeout" | "none"


def home_hands(task: TaskKind, table_z: float) -> tuple[Hand, ...]:
    if task.n_hands == 1:
        return (Hand(0.5, table_z + 0.25, 0.0),)
    return (Hand(0.25, table_z + 0.2, 0.0), Hand(0.75, table_z + 0.2, 0.0))


def bowl_x_for(cup_x: float) -> float:
    return cup_x - BOWL_OFFSET if cup_x - BOWL_OFFSET >= X_MIN else cup_x + BOWL_OFFSET


def validate_config(config: ScenarioConfig, registry: dict[str, EnvironmentParams]) -> EnvironmentParams:
    if config.environment_id not in registry:
        raise ValueError(f"environment {config.environment_id!r} is not registered")
    env = registry[config.environment_id]
    x, z, th = config.pose
    if not (X_MIN <= x <= X_MAX) or abs(th) > THETA_MAX:
        raise ValueError(f"pose {config.pose} outside the workspace")
    if abs(z - env.table_height) > 1e-9:
        raise ValueError(f"pose z={z} does not rest on the table (z0={env.table_height})")
    if config.task == TaskKind.POUR and config.second_object is None:
        raise ValueError("pour scenarios need a bowl")
    return env


def reset(config: ScenarioConfig, seed: int, registry: dict[str, EnvironmentParams] | None = None) -> EnvState:
    """Initial state; the seed only jitters friction and gravity."""
    registry = DEFAULT_ENVIRONMENTS if registry is None else registry
    env = validate_config(config, registry)
    rng = np.random.default_rng(seed)
    friction = env.friction * (1.0 + FRICTION_JITTER * float(rng.uniform(-1.0, 1.0)))
    gravity = env.gravity * (1.0 + GRAVITY_JITTER * float(rng.uniform(-1.0, 1.0)))
    x, z, th = config.pose
    bowl = bowl_spec = None
    balls: tuple[Ball, ...] = ()
    if config.task == TaskKind.POUR:
        bowl_spec = config.second_object
        bowl = Body(bowl_x_for(x), z, 0.0)
        balls = tuple(Ball(*_ball_in_cup(config.object, Body(x, z, th), k)) for k in range(N_BALLS))
    return EnvState(
        task=config.task,
        obj_spec=config.object,
        hands=home_hands(config.task, z),
        obj=Body(x, z, th),
        table_z=z,
        friction=friction,
        gravity=gravity,
        z_start=z,
        x_start=x,
        bowl_spec=bowl_spec,
        bowl=bowl,
        balls=balls,
    )


def _ball_in_cup(cup: ObjectSpec, body: Body, k: int) -> tuple[float, float]:
    ox, oz = rotate(0.0, BALL_SLOTS[k], body.th)
    return body.x + ox, body.z + oz


def contact_points(task: TaskKind, hand: Hand) -> list[tuple[float, float]]:
    """Finger contact points: thumb/index/middle for one-arm tasks, the palm otherwise."""
    if task.n_hands == 2:
        return [(hand.x, hand.z)]
    s = hand.a * FINGER_HALF_SPAN
    pts = []
    for lx, lz in ((-s, 0.0), (s, FINGER_OFFSET), (s, -FINGER_OFFSET)):
        ox, oz = rotate(lx, lz, hand.th)
        pts.append((hand.x + ox, hand.z + oz))
    return pts


def grip_capacity(state: EnvState, hand: Hand) -> float:
    squeeze = max(hand.a_contact - hand.target, 0.0) * FINGER_HALF_SPAN
    return min(GRIP_GAIN * state.friction * squeeze, HAND_PAYLOAD)


def _grip_frame(hands: tuple[Hand, ...], obj: Body) -> tuple | None:
    idx = [i for i, h in enumerate(hands) if h.attached]
    if not idx:
        return None
    if len(idx) == 1:
        h = hands[idx[0]]
        rx, rz = rotate(obj.x - h.x, obj.z - h.z, -h.th)
        return ("one", idx[0], rx, rz, obj.th - h.th)
    left, right = hands[0], hands[1]
    mx, mz = (left.x + right.x) / 2, (left.z + right.z) / 2
    vx, vz = right.x - left.x, right.z - left.z
    ang = math.atan2(vz, vx)
    rx, rz = rotate(obj.x - mx, obj.z - mz, -ang)
    return ("two", rx, rz, obj.th - ang, math.hypot(vx, vz))


def _follow(grip: tuple, hands: tuple[Hand, ...]) -> tuple[float, float, float, bool]:
    """Object pose implied by the grip frame, plus whether the two-hand grip overstretched."""
    if grip[0] == "one":
        _, i, rx, rz, dth = grip
        h = hands[i]
        ox, oz = rotate(rx, rz, h.th)
        return h.x + ox, h.z + oz, h.th + dth, False
    _, rx, rz, dth, span = grip
    left, right = hands[0], hands[1]
    mx, mz = (left.x + right.x) / 2, (left.z + right.z) / 2
    vx, vz = right.x - left.x, right.z - left.z
    ang = math.atan2(vz, vx)
    ox, oz = rotate(rx, rz, ang)
    stretched = abs(math.hypot(vx, vz) - span) > DETACH_STRETCH
    return mx + ox, mz + oz, ang + dth, stretched


def _move_hand(hand: Hand, u: np.ndarray, table_z: float) -> Hand:
    dx = min(max(u[0], -1.0), 1.0) * MAX_DPOS
    dz = min(max(u[1], -1.0), 1.0) * MAX_DPOS
    dth = min(max(u[2], -1.0), 1.0) * MAX_DROT
    target = (min(max(u[3], -1.0), 1.0) + 1.0) / 2.0
    x = min(max(hand.x + dx, HAND_X_RANGE[0]), HAND_X_RANGE[1])
    z = max(hand.z + dz, table_z)
    th = min(max(hand.th + dth, -HAND_THETA_MAX), HAND_THETA_MAX)
    a = hand.a + min(max(target - hand.a, -APERTURE_RATE), APERTURE_RATE)
    if hand.attached:
        a = max(a, hand.a_contact)
    return hand._replace(
        x=x, z=z, th=th,
        vx=(x - hand.x) / DT, vz=(z - hand.z) / DT, vth=(th - hand.th) / DT,
        a=a, va=(a - hand.a) / DT, target=target,
    )


def hand_kinematics(hand: Hand, u, table_z: float) -> Hand:
    """Pose/aperture update of a free hand; shared with offline trajectory editing."""
    return _move_hand(hand, u, table_z)


def step(state: EnvState, action) -> StepResult:
    """Advance one control step. Pure: ``state`` is not modified."""
    u = np.asarray(action, dtype=np.float64).reshape(-1)
    n = len(state.hands)
    if u.size != ACTION_PER_HAND * n:
        raise ValueError(f"action must have {ACTION_PER_HAND * n} entries, got {u.size}")
    u = np.clip(u, -1.0, 1.0)
    hands = tuple(
        _move_hand(h, u[ACTION_PER_HAND * i: ACTION_PER_HAND * (i + 1)], state.table_z)
        for i, h in enumerate(state.hands)
    )
    obj = state.obj
    z0 = state.table_z
    grip, slip = state.grip, state.slip
    regrip = False

    if grip is not None:
        x, z, th, stretched = _follow(grip, hands)
        if stretched:
            late = max((i for i, h in enumerate(hands) if h.attached), key=lambda i: hands[i].attach_step)
            hands = _detach(hands, late)
            regrip = True
        load = state.mass * state.gravity
        if z - slip > z0 + 1e-9:
            cap = sum(grip_capacity(state, h) for h in hands if h.attached)
            if cap < load:
                slip += SLIP_RATE * (1.0 - cap / load)
        z = max(z - slip, z0)
        obj = Body(x, z, th, (x - obj.x) / DT, (z - obj.z) / DT, (th - obj.th) / DT)
        if slip > SLIP_LIMIT:
            hands = tuple(_detach(hands, i)[i] if h.attached else h for i, h in enumerate(hands))
            regrip = True
    else:
        vz = obj.vz - state.gravity * DT if obj.z > z0 else 0.0
        z = obj.z + vz * DT
        if z <= z0:
            z, vz = z0, 0.0
        obj = Body(obj.x, z, obj.th, 0.0, (z - obj.z) / DT, 0.0)

    # releases
    for i, h in enumerate(hands):
        if h.attached and h.target > h.a_contact + RELEASE_MARGIN:
            hands = _detach(hands, i)
            regrip = True
    # attachments
    pose = obj.pose
    for i, h in enumerate(hands):
        if h.attached or h.a >= CLOSE_THRESHOLD or h.target > h.a:
            continue
        if all(abs(sdf_world(state.obj_spec, pose, px, pz)) <= ATTACH_RADIUS for px, pz in contact_points(state.task, h)):
            hands = hands[:i] + (h._replace(attached=True, a_contact=h.a, attach_step=state.step_count + 1),) + hands[i + 1:]
            regrip = True
    if regrip:
        grip, slip = _grip_frame(hands, obj), 0.0

    balls = state.balls
    if balls:
        balls = _update_balls(state, obj)

    nxt = replace(state, hands=hands, obj=obj, grip=grip, slip=slip, balls=balls, step_count=state.step_count + 1)
    if state.task == TaskKind.HANDOVER:
        nxt = replace(nxt, hold=state.hold + 1 if handover_hold_ok(nxt) else 0)
    ok = success_fn(nxt)
    if ok:
        return StepResult(nxt, reward(nxt), True, True, "success")
    if timeout_fn(nxt):
        return StepResult(nxt, reward(nxt), False, True, "timeout")
    return StepResult(nxt, reward(nxt), False, False, "none")


def _detach(hands: tuple[Hand, ...], i: int) -> tuple[Hand, ...]:
    h = hands[i]._replace(attached=False, a_contact=0.0, attach_step=-1)
    return hands[:i] + (h,) + hands[i + 1:]


def _update_balls(state: EnvState, cup: Body) -> tuple[Ball, ...]:
    bowl, bspec = state.bowl, state.bowl_spec
    bhw, bhh = bspec.half_extents
    hw, hh = state.obj_spec.half_extents
    out = []
    spilled_now = False
    for k, b in enumerate(state.balls):
        if b.status == 0:
            if abs(cup.th) > SPILL_ANGLE and not spilled_now:
                side = -1.0 if cup.th > 0 else 1.0
                ox, oz = rotate(side * hw, 2 * hh, cup.th)
                out.append(Ball(cup.x + ox, cup.z + oz, 0.0, 1))
                spilled_now = True
            else:
                out.append(Ball(*_ball_in_cup(state.obj_spec, cup, k)))
        elif b.status == 1:
            vz = b.vz - state.gravity * DT
            z = b.z + vz * DT
            floor = bowl.z + bhh if abs(b.x - bowl.x) <= bhw else state.table_z
            if z <= floor:
                out.append(Ball(b.x, floor, 0.0, 2))
            else:
                out.append(Ball(b.x, z, vz, 1))
        else:
            out.append(b)
    return tuple(out)


# ---- observations ----------------------------------------------------------

def _body_features(spec: ObjectSpec, body: Body) -> list[float]:
    hw, hh = spec.half_extents
    return [body.x, body.z, body.th, body.vx, body.vz, body.vth, hw, hh]


def observation(state: EnvState) -> np.ndarray:
    """Flattened object state followed by per-hand proprioception."""
    feats = _body_features(state.obj_spec, state.obj)
    if state.bowl is not None:
        feats += _body_features(state.bowl_spec, state.bowl)
    for h in state.hands:
        feats += [h.x, h.z, h.th, h.vx, h.vz, h.vth, h.a, h.va]
    return np.array(feats, dtype=np.float64)


def obs_dim(task: TaskKind) -> int:
    n_obj = 2 if task == TaskKind.POUR else 1
    return OBJ_FEATURES * n_obj + PROP_FEATURES * task.n_hands


def action_dim(task: TaskKind) -> int:
    return ACTION_PER_HAND * task.n_hands


_OBJ_NORM = [(0.5, 0.25), (NOMINAL_TABLE_Z + 0.1, 0.15), (0.0, 0.5), (0.0, 0.4), (0.0, 0.4), (0.0, 2.0), (0.04, 0.02), (0.03, 0.02)]
_PROP_NORM = [(0.5, 0.25), (NOMINAL_TABLE_Z + 0.1, 0.15), (0.0, 0.5), (0.0, 0.4), (0.0, 0.4), (0.0, 2.0), (0.5, 0.5), (0.0, 1.0)]


def obs_normalizer(task: TaskKind) -> tuple[np.ndarray, np.ndarray]:
    """Fixed (offset, scale) per observation feature."""
    n_obj = 2 if task == TaskKind.POUR else 1
    rows = _OBJ_NORM * n_obj + _PROP_NORM * task.n_hands
    off = np.array([r[0] for r in rows])
    scale = np.array([r[1] for r in rows])
    return off, scale


def object_height(state: EnvState) -> float:
    return state.obj.z - state.z_start


def object_center_of(state: EnvState) -> tuple[float, float]:
    return object_center(state.obj_spec, *state.obj.pose)
