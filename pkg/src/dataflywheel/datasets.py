"""Trajectories, datasets, the diversity ledger and the on-disk dataset format.

File layout (UTF-8 text, one record per line)::

    {"format": "dataflywheel-dataset", "version": 1, ...header...}
    <record number> <TAB> <sha256 of payload> <TAB> <JSON trajectory payload>

Floats are written with ``repr`` precision, so the round-trip is exact.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .envs.catalog import ScenarioConfig, TaskKind

FORMAT_NAME = "dataflywheel-dataset"
FORMAT_VERSION = 1
CHUNK = 8
SOURCES = ("scripted-seed", "rollout", "augmented")


class DatasetFormatError(ValueError):
    pass


@dataclass
class Transition:
    obs: np.ndarray
    chunk: np.ndarray  # (k, action_dim), k <= CHUNK; row 0 is the executed action
    reward: float
    base_action: np.ndarray | None = None
    residual: np.ndarray | None = None

    @property
    def action(self) -> np.ndarray:
        return self.chunk[0]

    def to_dict(self) -> dict:
        d = {"obs": self.obs.tolist(), "chunk": self.chunk.tolist(), "reward": float(self.reward)}
        if self.base_action is not None:
            d["base"] = self.base_action.tolist()
        if self.residual is not None:
            d["residual"] = self.residual.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Transition":
        base = d.get("base")
        res = d.get("residual")
        return cls(
            obs=np.asarray(d["obs"], dtype=np.float64),
            chunk=np.asarray(d["chunk"], dtype=np.float64).reshape(len(d["chunk"]), -1),
            reward=float(d["reward"]),
            base_action=None if base is None else np.asarray(base, dtype=np.float64),
            residual=None if res is None else np.asarray(res, dtype=np.float64),
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, Transition):
            return NotImplemented
        def same(a, b):
            if a is None or b is None:
                return a is b
            return a.shape == b.shape and np.array_equal(a, b)
        return (same(self.obs, other.obs) and same(self.chunk, other.chunk) and self.reward == other.reward
                and same(self.base_action, other.base_action) and same(self.residual, other.residual))


def chunks_from_actions(actions: np.ndarray, horizon: int = CHUNK) -> list[np.ndarray]:
    """Chunk t holds executed actions t..t+H-1, truncated at the end of the episode."""
    actions = np.asarray(actions, dtype=np.float64)
    return [actions[t:t + horizon].copy() for t in range(len(actions))]


@dataclass
class Trajectory:
    traj_id: str
    config: ScenarioConfig
    seed: int
    transitions: list[Transition]
    success: bool
    source: str
    lineage: list[str] = field(default_factory=list)
    iteration_born: int = 0

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown trajectory source {self.source!r}")

    @property
    def actions(self) -> np.ndarray:
        return np.stack([t.action for t in self.transitions]) if self.transitions else np.zeros((0, 0))

    @property
    def observations(self) -> np.ndarray:
        return np.stack([t.obs for t in self.transitions]) if self.transitions else np.zeros((0, 0))

    @property
    def partial_final_chunk(self) -> bool:
        return any(len(t.chunk) < CHUNK for t in self.transitions)

    def to_dict(self) -> dict:
        return {
            "traj_id": self.traj_id,
            "config": self.config.to_dict(),
            "seed": int(self.seed),
            "success": bool(self.success),
            "source": self.source,
            "lineage": list(self.lineage),
            "iteration_born": int(self.iteration_born),
            "transitions": [t.to_dict() for t in self.transitions],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        return cls(
            traj_id=str(d["traj_id"]),
            config=ScenarioConfig.from_dict(d["config"]),
            seed=int(d["seed"]),
            transitions=[Transition.from_dict(t) for t in d["transitions"]],
            success=bool(d["success"]),
            source=str(d["source"]),
            lineage=[str(x) for x in d.get("lineage", [])],
            iteration_born=int(d.get("iteration_born", 0)),
        )


@dataclass(frozen=True)
class DiversityLedger:
    O: int = 0
    E: int = 0
    P: int = 0
    configs: int = 0
    traj: int = 0

    @classmethod
    def from_counts(cls, o: int, e: int, p: int, traj: int = 0) -> "DiversityLedger":
        return cls(o, e, p, o * e * p, traj)

    @classmethod
    def from_configs(cls, configs: list[ScenarioConfig]) -> "DiversityLedger":
        o = len({c.object.object_id for c in configs})
        e = len({c.environment_id for c in configs})
        p = len({c.pose_key for c in configs})
        return cls.from_counts(o, e, p, len(configs))

    def to_dict(self) -> dict:
        return {"O": self.O, "E": self.E, "P": self.P, "configs": self.configs, "traj": self.traj}

    @classmethod
    def from_dict(cls, d: dict) -> "DiversityLedger":
        return cls(int(d["O"]), int(d["E"]), int(d["P"]), int(d["configs"]), int(d["traj"]))


@dataclass
class Dataset:
    dataset_id: str
    task: TaskKind
    trajectories: list[Trajectory] = field(default_factory=list)

    @property
    def ledger(self) -> DiversityLedger:
        return diversity_stats(self)

    def __len__(self) -> int:
        return len(self.trajectories)

    def by_id(self) -> dict[str, Trajectory]:
        return {t.traj_id: t for t in self.trajectories}


def diversity_stats(dataset: Dataset) -> DiversityLedger:
    return DiversityLedger.from_configs([t.config for t in dataset.trajectories])


def downsample(dataset: Dataset, n: int, seed: int, new_id: str | None = None) -> Dataset:
    """Uniform selection of ``n`` trajectories without replacement; original order kept."""
    total = len(dataset.trajectories)
    if n > total:
        raise ValueError(f"cannot downsample {total} trajectories to {n}")
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(total, size=n, replace=False))
    return Dataset(new_id or dataset.dataset_id, dataset.task, [dataset.trajectories[i] for i in keep])


def merge(dataset_id: str, task: TaskKind, parts: list[Dataset]) -> Dataset:
    trajs = [t for p in parts for t in p.trajectories]
    return Dataset(dataset_id, task, trajs)


def _payload(traj: Trajectory) -> str:
    return json.dumps(traj.to_dict(), separators=(",", ":"))


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "dataset_id": dataset.dataset_id,
        "task": dataset.task.value,
        "count": len(dataset.trajectories),
        "chunk": CHUNK,
        "ledger": dataset.ledger.to_dict(),
    }
    lines = [json.dumps(header, sort_keys=True)]
    for i, traj in enumerate(dataset.trajectories, start=1):
        body = _payload(traj)
        lines.append(f"{i}\t{hashlib.sha256(body.encode()).hexdigest()}\t{body}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path: str | Path) -> Dataset:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise DatasetFormatError(f"{path}: line 1: missing header")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: line 1: malformed header ({exc})") from None
    if header.get("format") != FORMAT_NAME:
        raise DatasetFormatError(f"{path}: line 1: not a dataset file")
    if header.get("version") != FORMAT_VERSION:
        raise DatasetFormatError(f"{path}: line 1: unsupported version {header.get('version')!r}")
    trajs = []
    for k, line in enumerate(lines[1:], start=1):
        where = f"{path}: record {k} (line {k + 1})"
        parts = line.split("\t", 2)
        if len(parts) != 3:
            raise DatasetFormatError(f"{where}: malformed record")
        idx, digest, body = parts
        if idx != str(k):
            raise DatasetFormatError(f"{where}: record number {idx!r} out of sequence")
        if hashlib.sha256(body.encode()).hexdigest() != digest:
            raise DatasetFormatError(f"{where}: checksum mismatch")
        try:
            trajs.append(Trajectory.from_dict(json.loads(body)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DatasetFormatError(f"{where}: malformed record ({exc})") from None
    if header.get("count") != len(trajs):
        raise DatasetFormatError(f"{path}: header count {header.get('count')} but {len(trajs)} records")
    ds = Dataset(str(header["dataset_id"]), TaskKind(header["task"]), trajs)
    return ds


def lineage_roots(dataset: Dataset, known: dict[str, Trajectory]) -> dict[str, set[str]]:
    """Follow lineage to root sources; ``known`` maps ids to every trajectory ever produced."""
    out: dict[str, set[str]] = {}
    for t in dataset.trajectories:
        seen: set[str] = set()
        stack = [t.traj_id]
        roots: set[str] = set()
        while stack:
            cur = stack.pop()
            if cur in seen:
                raise ValueError(f"lineage cycle through {cur}")
            seen.add(cur)
            node = known.get(cur)
            if node is None:
                roots.add("missing")
                continue
            if node.source == "augmented":
                if not node.lineage:
                    roots.add("orphan")
                stack.extend(node.lineage)
            else:
                roots.add(node.source)
        out[t.traj_id] = roots
    return out
