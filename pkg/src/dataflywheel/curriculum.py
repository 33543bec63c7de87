"""Object curriculum and outward-growing environment/pose pools."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .envs.catalog import DEFAULT_ENVIRONMENTS, TaskKind
from .envs.geometry import ObjectSpec
from .expert import seed_pose

DESCRIPTORS = ("single-object", "geometry-similar", "diverse-categories")


@dataclass(frozen=True)
class CurriculumStage:
    index: int  # 1-based
    objects: tuple[ObjectSpec, ...]
    descriptor: str

    def __post_init__(self):
        if self.descriptor not in DESCRIPTORS:
            raise ValueError(f"unknown stage descriptor {self.descriptor!r}")
        if self.index == 1 and len(self.objects) != 1:
            raise ValueError("the first curriculum stage holds exactly one object")
        ids = [o.object_id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate object ids in a stage")

    def to_dict(self) -> dict:
        return {"index": self.index, "descriptor": self.descriptor, "objects": [o.to_dict() for o in self.objects]}

    @classmethod
    def from_dict(cls, d: dict) -> "CurriculumStage":
        return cls(int(d["index"]), tuple(ObjectSpec.from_dict(o) for o in d["objects"]), str(d["descriptor"]))


def check_nested(stages: list[CurriculumStage]) -> None:
    for a, b in zip(stages, stages[1:]):
        missing = {o.object_id for o in a.objects} - {o.object_id for o in b.objects}
        if missing:
            raise ValueError(f"stage {b.index} drops objects {sorted(missing)} from stage {a.index}")


def _disk(name: str, r: float, density: float = 1.0) -> ObjectSpec:
    return ObjectSpec(name, "disk", (r,), density, "disk")


def _box(name: str, hw: float, hh: float, density: float = 1.0) -> ObjectSpec:
    return ObjectSpec(name, "box", (hw, hh), density, "box")


def _capsule(name: str, half_len: float, r: float, density: float = 1.0) -> ObjectSpec:
    return ObjectSpec(name, "capsule", (half_len, r), density, "capsule")


def _seed_object(task: TaskKind) -> ObjectSpec:
    if task == TaskKind.LIFT:
        return _box("crate", 0.08, 0.05, 0.6)
    if task == TaskKind.POUR:
        return _box("cup", 0.03, 0.04, 0.8)
    return _disk("disk_r30", 0.03)


def _similar(task: TaskKind) -> list[ObjectSpec]:
    if task == TaskKind.LIFT:
        return [_box(f"crate_{i}", 0.07 + 0.005 * i, 0.045 + 0.003 * (i % 3), 0.6 + 0.15 * (i % 4)) for i in range(10)]
    if task == TaskKind.POUR:
        return [_box(f"cup_{i}", 0.026 + 0.002 * (i % 5), 0.035 + 0.003 * (i % 4), 0.8 + 0.3 * (i % 3)) for i in range(10)]
    # similar disks; several are heavy enough that the base grip alone slips
    return [
        _disk("disk_r26", 0.026), _disk("disk_r28", 0.028, 1.5), _disk("disk_r33", 0.033),
        _disk("disk_r36", 0.036, 1.2), _disk("disk_r30_d36", 0.03, 3.6), _disk("disk_r30_d40", 0.03, 4.0),
        _disk("disk_r30_d44", 0.03, 4.4), _disk("disk_r31_d42", 0.031, 4.2), _disk("disk_r29_d38", 0.029, 3.8),
        _disk("disk_r32_d30", 0.032, 3.0),
    ]


def _diverse(task: TaskKind) -> list[ObjectSpec]:
    if task == TaskKind.LIFT:
        return [_box(f"bin_{i}", 0.06 + 0.01 * (i % 4), 0.03 + 0.01 * (i % 3), 0.4 + 0.2 * (i % 3)) for i in range(6)] + \
               [_capsule(f"roll_{i}", 0.05 + 0.01 * i, 0.03, 0.5) for i in range(5)]
    if task == TaskKind.POUR:
        return [_disk(f"can_{i}", 0.026 + 0.002 * i, 1.0) for i in range(5)] + \
               [_capsule(f"flask_{i}", 0.02, 0.024 + 0.002 * (i % 3), 0.8) for i in range(6)]
    return [
        _box("box_30x20", 0.03, 0.02), _box("box_25x40", 0.025, 0.04), _box("box_45x15", 0.045, 0.015, 0.8),
        _box("box_35x30", 0.035, 0.03, 1.2), _box("box_28x28", 0.028, 0.028),
        _capsule("caps_30x15", 0.03, 0.015), _capsule("caps_20x20", 0.02, 0.02, 1.5),
        _capsule("caps_15x25", 0.015, 0.025), _capsule("caps_35x18", 0.035, 0.018),
        _disk("disk_r40", 0.04), _disk("disk_r22", 0.022),
    ]


def default_stages(task: TaskKind, n_stages: int = 3) -> list[CurriculumStage]:
    """single object -> +10 geometry-similar -> +11 diverse; later stages repeat the full pool."""
    pools = [[_seed_object(task)]]
    pools.append(pools[0] + _similar(task))
    pools.append(pools[1] + _diverse(task))
    descs = ["single-object", "geometry-similar", "diverse-categories"]
    stages = []
    for i in range(n_stages):
        k = min(i, 2)
        stages.append(CurriculumStage(i + 1, tuple(pools[k]), descs[k]))
    return stages


# environment and pose pools per iteration: (E, P, x half-range, theta half-range)
POOL_SHAPES = [(3, 5, 0.03, math.radians(5)), (6, 10, 0.08, math.radians(8)), (12, 15, 0.15, math.radians(10))]


def pose_pool(task: TaskKind, n: int, x_half: float, th_half: float) -> list[tuple[float, float]]:
    """``n`` poses spreading outward from the seed pose; pose 0 is the seed pose itself.

    Deterministic low-discrepancy layout (golden-ratio sequence), rounded to 1 mm / 0.001 rad.
    """
    x0, th0 = seed_pose(task)
    out = [(x0, th0)]
    g = (math.sqrt(5) - 1) / 2
    k = 1
    while len(out) < n:
        u = (k * g) % 1.0
        v = (k * g * g + 0.5) % 1.0
        x = round(x0 + (2 * u - 1) * x_half, 3)
        th = round(th0 + (2 * v - 1) * th_half, 3)
        k += 1
        if all(abs(x - p[0]) > 5e-3 or abs(th - p[1]) > 0.05 for p in out):
            out.append((x, th))
    return out


def env_pool(n: int, registry=None) -> list[str]:
    ids = sorted(registry or DEFAULT_ENVIRONMENTS)
    if n > len(ids):
        raise ValueError(f"only {len(ids)} environments registered, {n} requested")
    return ids[:n]


def default_pools(task: TaskKind, n_iters: int) -> list[tuple[list[str], list[tuple[float, float]]]]:
    """Nested (environments, poses) per iteration; pools stop growing after the third."""
    out = []
    prev: list[tuple[float, float]] = []
    for i in range(n_iters):
        e, p, xh, th = POOL_SHAPES[min(i, len(POOL_SHAPES) - 1)]
        poses = list(prev)
        for q in pose_pool(task, p + len(prev), xh, th):
            if len(poses) >= p:
                break
            if q not in poses:
                poses.append(q)
        out.append((env_pool(e), poses))
        prev = poses
    return out


def workspace_ranges(task: TaskKind) -> tuple[tuple[float, float], float]:
    """(x range, theta half-range) covered by the widest pool; held-out poses come from here."""
    x0, _ = seed_pose(task)
    _, _, xh, th = POOL_SHAPES[-1]
    return (x0 - xh, x0 + xh), th


def unique(objects) -> list[ObjectSpec]:
    seen, out = set(), []
    for o in objects:
        if o.object_id not in seen:
            seen.add(o.object_id)
            out.append(o)
    return out


def introduced_at(stages: list[CurriculumStage], i: int) -> list[ObjectSpec]:
    """Objects first appearing in stage ``i`` (1-based)."""
    if i == 1:
        return list(stages[0].objects)
    prev = {o.object_id for o in stages[i - 2].objects}
    return [o for o in stages[i - 1].objects if o.object_id not in prev]


def rng_choice(rng: np.random.Generator, items: list, k: int) -> list:
    idx = rng.choice(len(items), size=min(k, len(items)), replace=False)
    return [items[int(i)] for i in sorted(idx)]
