"""Environment pool, object catalogs and scenario configurations."""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path

from .geometry import ObjectSpec

REGISTRY_VERSION = 1

# workspace bounds for object poses
X_MIN, X_MAX = 0.15, 0.85
THETA_MAX = 0.6
NOMINAL_TABLE_Z = 0.75

# pose bucket grid used when counting distinct poses
POSE_GRID_X = 0.01
POSE_GRID_THETA = math.radians(5.0)


class TaskKind(str, enum.Enum):
    GRASP = "grasp"
    POUR = "pour"
    LIFT = "lift"
    HANDOVER = "handover"

    @property
    def n_hands(self) -> int:
        return 2 if self in (TaskKind.LIFT, TaskKind.HANDOVER) else 1


@dataclass(frozen=True)
class EnvironmentParams:
    env_id: str
    friction: float
    table_height: float
    gravity: float = 9.81

    def to_dict(self) -> dict:
        return {"env_id": self.env_id, "friction": self.friction,
                "table_height": self.table_height, "gravity": self.gravity}

    @classmethod
    def from_dict(cls, d: dict) -> "EnvironmentParams":
        p = cls(str(d["env_id"]), float(d["friction"]), float(d["table_height"]), float(d.get("gravity", 9.81)))
        if p.friction <= 0 or p.gravity <= 0:
            raise ValueError(f"environment {p.env_id}: friction and gravity must be positive")
        return p


def _default_environments() -> dict[str, EnvironmentParams]:
    # friction / table height / gravity stand in for tabletop and lighting variation
    rows = [
        ("env00", 1.00, 0.000, 9.81),
        ("env01", 0.90, 0.010, 9.81),
        ("env02", 1.10, -0.010, 9.75),
        ("env03", 0.85, 0.020, 9.85),
        ("env04", 1.20, -0.020, 9.81),
        ("env05", 0.95, 0.030, 9.78),
        ("env06", 1.05, -0.030, 9.84),
        ("env07", 0.80, 0.005, 9.81),
        ("env08", 1.15, 0.025, 9.79),
        ("env09", 0.90, -0.025, 9.83),
        ("env10", 1.00, 0.015, 9.90),
        ("env11", 0.88, -0.015, 9.72),
    ]
    return {
        r[0]: EnvironmentParams(r[0], r[1], NOMINAL_TABLE_Z + r[2], r[3]) for r in rows
    }


DEFAULT_ENVIRONMENTS = _default_environments()


def save_environment_registry(path: str | Path, envs: dict[str, EnvironmentParams]) -> None:
    doc = {"version": REGISTRY_VERSION, "environments": [e.to_dict() for e in envs.values()]}
    Path(path).write_text(json.dumps(doc, indent=2))


def load_environment_registry(path: str | Path) -> dict[str, EnvironmentParams]:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != REGISTRY_VERSION:
        raise ValueError(f"{path}: unsupported registry version {doc.get('version')!r}")
    envs = [EnvironmentParams.from_dict(e) for e in doc["environments"]]
    return {e.env_id: e for e in envs}


def save_object_catalog(path: str | Path, objects: list[ObjectSpec]) -> None:
    doc = {"version": REGISTRY_VERSION, "objects": [o.to_dict() for o in objects]}
    Path(path).write_text(json.dumps(doc, indent=2))


def load_object_catalog(path: str | Path) -> list[ObjectSpec]:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != REGISTRY_VERSION:
        raise ValueError(f"{path}: unsupported catalog version {doc.get('version')!r}")
    return [ObjectSpec.from_dict(o) for o in doc["objects"]]


@dataclass(frozen=True)
class ScenarioConfig:
    """One (object, environment, spatial pose) triple.

    ``pose`` is absolute (x, z, theta); z must equal the environment's table
    height since objects start resting on the table. Use :func:`make_config`.
    """

    task: TaskKind
    object: ObjectSpec
    environment_id: str
    pose: tuple[float, float, float]
    second_object: ObjectSpec | None = None

    @property
    def pose_key(self) -> tuple[int, int]:
        return pose_bucket(self.pose[0], self.pose[2])

    @property
    def key(self) -> tuple[str, str, tuple[int, int]]:
        return (self.object.object_id, self.environment_id, self.pose_key)

    def to_dict(self) -> dict:
        d = {
            "task": self.task.value,
            "object": self.object.to_dict(),
            "environment_id": self.environment_id,
            "pose": list(self.pose),
        }
        if self.second_object is not None:
            d["second_object"] = self.second_object.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        second = d.get("second_object")
        return cls(
            task=TaskKind(d["task"]),
            object=ObjectSpec.from_dict(d["object"]),
            environment_id=str(d["environment_id"]),
            pose=tuple(float(v) for v in d["pose"]),
            second_object=None if second is None else ObjectSpec.from_dict(second),
        )


def pose_bucket(x: float, theta: float) -> tuple[int, int]:
    return (int(round(x / POSE_GRID_X)), int(round(theta / POSE_GRID_THETA)))


def make_config(
    task: TaskKind,
    obj: ObjectSpec,
    env_id: str,
    x: float,
    theta: float = 0.0,
    second_object: ObjectSpec | None = None,
    registry: dict[str, EnvironmentParams] | None = None,
) -> ScenarioConfig:
    registry = DEFAULT_ENVIRONMENTS if registry is None else registry
    if env_id not in registry:
        raise KeyError(f"environment {env_id!r} is not registered")
    if task == TaskKind.POUR and second_object is None:
        second_object = DEFAULT_BOWL
    return ScenarioConfig(task, obj, env_id, (float(x), registry[env_id].table_height, float(theta)), second_object)


DEFAULT_BOWL = ObjectSpec("bowl", "box", (0.10, 0.04), 1.0, "bowl")
