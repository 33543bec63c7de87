"""Scripted waypoint expert used to produce the single seed demonstration per task."""
from __future__ import annotations

import numpy as np

from .envs import planar
from .envs.catalog import TaskKind
from .envs.geometry import object_center, rotate
from .envs.rewards import handover_point

OPEN = 1.0
HOVER = 0.10
DWELL = 3
SETTLE = 2
GRIP_MARGIN = 0.012
PALM_SQUEEZE = 0.3
STANDOFF = 0.05
GRASP_LIFT = 0.25
POUR_LIFT = 0.08
LIFT_RAISE = 0.2
HANDOVER_RETREAT = 0.2


def _seek(hand: planar.Hand, tx: float, tz: float, tth: float) -> list[float]:
    return [
        float(np.clip((tx - hand.x) / planar.MAX_DPOS, -1, 1)),
        float(np.clip((tz - hand.z) / planar.MAX_DPOS, -1, 1)),
        float(np.clip((tth - hand.th) / planar.MAX_DROT, -1, 1)),
    ]


def _at(hand: planar.Hand, tx: float, tz: float, tth: float, tol: float = 1e-9) -> bool:
    return abs(hand.x - tx) < tol and abs(hand.z - tz) < tol and abs(hand.th - tth) < tol


def _ap(target: float) -> float:
    return 2.0 * target - 1.0


def close_target(hw: float) -> float:
    return max(hw - GRIP_MARGIN, 0.0) / planar.FINGER_HALF_SPAN


class ScriptedExpert:
    """Phase machine over privileged state; emits normalised actions."""

    def __init__(self):
        self.phase = 0
        self.count = 0
        self.memo: dict = {}

    def reset(self, state: planar.EnvState) -> None:
        self.phase = 0
        self.count = 0
        self.memo = {}
        spec = state.obj_spec
        self.memo["center"] = object_center(spec, *state.obj.pose)
        self.memo["th"] = state.obj.th

    def act(self, state: planar.EnvState):
        task = state.task
        if task in (TaskKind.GRASP, TaskKind.POUR):
            a = self._one_hand(state)
        elif task == TaskKind.LIFT:
            a = self._lift(state)
        else:
            a = self._handover(state)
        return np.asarray(a, dtype=np.float64), None, None

    def _advance(self, done: bool) -> None:
        if done:
            self.phase += 1
            self.count = 0

    # -- single hand: grasp / pour ------------------------------------------
    def _one_hand(self, s: planar.EnvState) -> list[float]:
        h = s.hands[0]
        cx, cz = self.memo["center"]
        th = self.memo["th"]
        hw, _ = s.obj_spec.half_extents
        grip = close_target(hw)
        if self.phase == 0:  # open and hover above
            self._advance(_at(h, cx, cz + HOVER, th) and h.a >= OPEN - 1e-9)
            return _seek(h, cx, cz + HOVER, th) + [_ap(OPEN)]
        if self.phase == 1:  # descend
            self._advance(_at(h, cx, cz, th))
            return _seek(h, cx, cz, th) + [_ap(OPEN)]
        if self.phase == 2:  # dwell
            self.count += 1
            self._advance(self.count >= DWELL)
            return [0.0, 0.0, 0.0, _ap(OPEN)]
        if self.phase == 3:  # close until attached, then settle
            if h.attached:
                self.count += 1
            self._advance(self.count >= SETTLE)
            if self.phase == 4:
                self.memo["lift_z"] = h.z + (GRASP_LIFT if s.task == TaskKind.GRASP else POUR_LIFT)
                self.memo["hx"] = h.x
                self.memo["hth"] = h.th
            return [0.0, 0.0, 0.0, _ap(grip)]
        if self.phase == 4:  # lift
            tz = self.memo["lift_z"]
            if s.task == TaskKind.POUR and _at(h, self.memo["hx"], tz, self.memo["hth"]):
                self._plan_pour(s)
                self.phase = 5
            return _seek(h, self.memo["hx"], tz, self.memo["hth"]) + [_ap(grip)]
        if self.phase == 5:  # carry the spill rim over the bowl
            tx = self.memo["pour_x"]
            self._advance(_at(h, tx, self.memo["lift_z"], self.memo["hth"]))
            return _seek(h, tx, self.memo["lift_z"], self.memo["hth"]) + [_ap(grip)]
        # tilt
        return _seek(h, h.x, self.memo["lift_z"], self.memo["tilt_to"]) + [_ap(grip)]

    def _plan_pour(self, s: planar.EnvState) -> None:
        h = s.hands[0]
        _, _, rx, rz, dth = s.grip
        hw, hh = s.obj_spec.half_extents
        sign = 1.0 if s.bowl.x < s.obj.x else -1.0
        ex, ez = rotate(-sign * hw, 2 * hh, dth)
        qx, qz = rx + ex, rz + ez
        # first hand angle on the rotation ladder where the cup passes the spill angle
        phi = h.th
        while abs(phi + dth) <= planar.SPILL_ANGLE:
            phi += sign * planar.MAX_DROT
        wx, _ = rotate(qx, qz, phi)
        self.memo["pour_x"] = s.bowl.x - wx
        self.memo["tilt_to"] = phi + sign * 2 * planar.MAX_DROT

    # -- two hands ---------------------------------------------------------------
    def _palm_targets(self, s: planar.EnvState, cx: float, cz: float, offset: float):
        th = self.memo["th"]
        hw, _ = s.obj_spec.half_extents
        lx, lz = rotate(-(hw + offset), 0.0, th)
        rx, rz = rotate(hw + offset, 0.0, th)
        return (cx + lx, cz + lz), (cx + rx, cz + rz)

    def _lift(self, s: planar.EnvState) -> list[float]:
        left, right = s.hands
        cx, cz = self.memo["center"]
        th = self.memo["th"]
        if self.phase in (0, 1):
            (lx, lz), (rx, rz) = self._palm_targets(s, cx, cz, STANDOFF if self.phase == 0 else 0.0)
            self._advance(_at(left, lx, lz, th) and _at(right, rx, rz, th) and min(left.a, right.a) >= OPEN - 1e-9)
            return _seek(left, lx, lz, th) + [_ap(OPEN)] + _seek(right, rx, rz, th) + [_ap(OPEN)]
        if self.phase == 2:
            if left.attached and right.attached:
                self.count += 1
            self._advance(self.count >= SETTLE)
            if self.phase == 3:
                self.memo["lz"], self.memo["rz"] = left.z + LIFT_RAISE, right.z + LIFT_RAISE
            g = _ap(OPEN - PALM_SQUEEZE - 0.1)
            return [0.0, 0.0, 0.0, g, 0.0, 0.0, 0.0, g]
        g = _ap(OPEN - PALM_SQUEEZE - 0.1)
        return (_seek(left, left.x, self.memo["lz"], left.th) + [g]
                + _seek(right, right.x, self.memo["rz"], right.th) + [g])

    def _handover(self, s: planar.EnvState) -> list[float]:
        left, right = s.hands
        cx, cz = self.memo["center"]
        th = self.memo["th"]
        g = _ap(OPEN - PALM_SQUEEZE - 0.1)
        idle = [0.0, 0.0, 0.0]
        if self.phase in (0, 1):
            _, (rx, rz) = self._palm_targets(s, cx, cz, STANDOFF if self.phase == 0 else 0.0)
            self._advance(_at(right, rx, rz, th) and right.a >= OPEN - 1e-9)
            return idle + [_ap(OPEN)] + _seek(right, rx, rz, th) + [_ap(OPEN)]
        if self.phase == 2:
            if right.attached:
                self.count += 1
            self._advance(self.count >= SETTLE)
            if self.phase == 3:
                hx, hz = handover_point(s)
                ox, oz = hx - s.obj.x, hz - s.obj.z
                self.memo["carry"] = (right.x + ox, right.z + oz)
                mcx, mcz = cx + ox, cz + oz
                (lsx, lsz), _ = self._palm_targets(s, mcx, mcz, STANDOFF)
                (lgx, lgz), _ = self._palm_targets(s, mcx, mcz, 0.0)
                self.memo["left_standoff"] = (lsx, lsz)
                self.memo["left_grip"] = (lgx, lgz)
            return idle + [_ap(OPEN)] + idle + [g]
        if self.phase == 3:  # carry while the left hand moves to its standoff
            tx, tz = self.memo["carry"]
            lsx, lsz = self.memo["left_standoff"]
            self._advance(_at(right, tx, tz, right.th) and _at(left, lsx, lsz, th))
            return _seek(left, lsx, lsz, th) + [_ap(OPEN)] + _seek(right, tx, tz, right.th) + [g]
        if self.phase == 4:
            lgx, lgz = self.memo["left_grip"]
            self._advance(_at(left, lgx, lgz, th))
            return _seek(left, lgx, lgz, th) + [_ap(OPEN)] + idle + [g]
        if self.phase == 5:
            if left.attached:
                self.count += 1
            self._advance(self.count >= SETTLE)
            return idle + [g] + idle + [g]
        if self.phase == 6:  # open the right hand in place
            self._advance(not right.attached)
            return idle + [g] + idle + [_ap(OPEN)]
        return idle + [g] + [1.0, 0.0, 0.0, _ap(OPEN)]


def seed_pose(task: TaskKind) -> tuple[float, float]:
    """Canonical (x, theta) of the seed demonstration."""
    return {TaskKind.GRASP: (0.5, 0.0), TaskKind.POUR: (0.55, 0.0),
            TaskKind.LIFT: (0.5, 0.0), TaskKind.HANDOVER: (0.55, 0.0)}[task]
