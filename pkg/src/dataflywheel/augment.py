"""Object-centric trajectory editing with replay validation, plus the coverage sampler.

A source trajectory is split at its attachment events. Hand waypoints before
the grasp (approach and manipulate) are re-expressed in the target object's
frame with a rigid SE(2) transform and reached from the home pose by a
straight transit; the transport phase is replayed as recorded. Every edited
action sequence is replayed under the target scenario and kept only if it
succeeds.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import Dataset, Trajectory
from .envs import planar
from .envs.catalog import (
    DEFAULT_ENVIRONMENTS,
    EnvironmentParams,
    ScenarioConfig,
    TaskKind,
    make_config,
)
from .envs.geometry import ObjectSpec, rotate
from .rollout import Episode, replay
from .seeding import derive_rng, derive_seed

TRY_TIME = 10
SUCCESS_THRESHOLD = 4
APERTURE_JITTER = 2
REPLAY_TAIL = 20
SPEC_VERSION = 1


@dataclass
class AugmentationSpec:
    """C_aug: pools to draw scenarios from. Pose entries are (x, theta); z is the table height."""

    task: TaskKind
    objects: list[ObjectSpec]
    environments: list[str]
    poses: list[tuple[float, float]]
    samples: int
    second_object: ObjectSpec | None = None

    def __post_init__(self):
        if not self.objects or not self.environments or not self.poses:
            raise ValueError("augmentation pools must be non-empty")

    def to_dict(self) -> dict:
        d = {
            "version": SPEC_VERSION,
            "task": self.task.value,
            "objects": [o.to_dict() for o in self.objects],
            "environments": list(self.environments),
            "poses": [list(p) for p in self.poses],
            "samples": self.samples,
        }
        if self.second_object is not None:
            d["second_object"] = self.second_object.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentationSpec":
        allowed = {"version", "task", "objects", "environments", "poses", "samples", "second_object"}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown C_aug keys: {sorted(unknown)}")
        if d.get("version") != SPEC_VERSION:
            raise ValueError(f"unsupported C_aug version {d.get('version')!r}")
        second = d.get("second_object")
        return cls(
            TaskKind(d["task"]),
            [ObjectSpec.from_dict(o) for o in d["objects"]],
            [str(e) for e in d["environments"]],
            [(float(p[0]), float(p[1])) for p in d["poses"]],
            int(d["samples"]),
            None if second is None else ObjectSpec.from_dict(second),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "AugmentationSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def sample_scenarios(spec: AugmentationSpec, n: int, seed: int,
                     registry: dict[str, EnvironmentParams] | None = None) -> list[ScenarioConfig]:
    """``n`` configs covering every pool entry at least once; the rest uniform."""
    sizes = (len(spec.objects), len(spec.environments), len(spec.poses))
    m = max(sizes)
    if n < m:
        raise ValueError(f"{n} scenarios cannot cover pools of sizes {sizes}")
    rng = np.random.default_rng(seed)
    perms = [rng.permutation(s) for s in sizes]
    picks = []
    for k in range(m):
        picks.append(tuple(int(p[k % len(p)]) for p in perms))
    for _ in range(n - m):
        picks.append(tuple(int(rng.integers(s)) for s in sizes))
    out = []
    for oi, ei, pi in picks:
        x, th = spec.poses[pi]
        out.append(make_config(spec.task, spec.objects[oi], spec.environments[ei], x, th,
                               spec.second_object, registry))
    return out


# ---- segmentation and editing ----------------------------------------------

@dataclass(frozen=True)
class SegmentPlan:
    """Half-open step ranges; manipulate ends with the first attachment step."""

    approach: tuple[int, int]
    manipulate: tuple[int, int]
    transport: tuple[int, int]

    @property
    def grasp_end(self) -> int:
        return self.manipulate[1]


def segment(episode: Episode) -> SegmentPlan:
    n = len(episode.actions)
    n_hands = len(episode.states[0].hands)
    attach = next((t for t in range(n) if any(episode.states[t + 1].attached)), None)
    if attach is None:
        raise ValueError("source trajectory never attaches")
    # closing starts at the first aperture command below the running maximum
    ap = episode.actions[:, 3::4]
    close = attach
    for t in range(1, attach + 1):
        if any(ap[t, j] < ap[:t, j].max() for j in range(n_hands)):
            close = t
            break
    return SegmentPlan((0, close), (close, attach + 1), (attach + 1, n))


def _transform(pose, src: tuple[float, float, float], dst: tuple[float, float, float]):
    x, z, th = pose
    d = dst[2] - src[2]
    if d == 0.0:
        return x + (dst[0] - src[0]), z + (dst[1] - src[1]), th
    rx, rz = rotate(x - src[0], z - src[1], d)
    return dst[0] + rx, dst[1] + rz, th + d


def _steps_between(a, b) -> list[np.ndarray]:
    """Per-hand motion commands that move pose a to pose b without exceeding limits."""
    dx, dz, dth = b[0] - a[0], b[1] - a[1], b[2] - a[2]
    k = math.ceil(max(abs(dx) / planar.MAX_DPOS, abs(dz) / planar.MAX_DPOS, abs(dth) / planar.MAX_DROT) - 1e-12)
    k = max(k, 1) if (dx or dz or dth) else 0
    if k == 0:
        return []
    u = np.array([dx / planar.MAX_DPOS / k, dz / planar.MAX_DPOS / k, dth / planar.MAX_DROT / k])
    return [u] * k


def edit_actions(source_ep: Episode, plan: SegmentPlan, src_cfg: ScenarioConfig,
                 dst_cfg: ScenarioConfig, jitter: int = 0,
                 registry: dict[str, EnvironmentParams] | None = None) -> np.ndarray:
    registry = registry or DEFAULT_ENVIRONMENTS
    n_hands = len(source_ep.states[0].hands)
    g = plan.grasp_end
    src_pose = source_ep.states[0].obj.pose
    z_dst = registry[dst_cfg.environment_id].table_height
    dst_pose = (dst_cfg.pose[0], z_dst, dst_cfg.pose[2])
    # waypoints of every hand for steps 0..g (pose before each action, then after the last)
    wps = [[_transform((s.hands[j].x, s.hands[j].z, s.hands[j].th), src_pose, dst_pose)
            for s in source_ep.states[: g + 1]] for j in range(n_hands)]
    ap = source_ep.actions[:g, 3::4]
    shifted = np.array([ap[min(max(t - jitter, 0), g - 1)] for t in range(g)])

    rows: list[np.ndarray] = []
    home = planar.home_hands(dst_cfg.task, z_dst)
    transit = [_steps_between((h.x, h.z, h.th), wps[j][0]) for j, h in enumerate(home)]
    for k in range(max(len(t) for t in transit)):
        row = np.zeros(4 * n_hands)
        for j in range(n_hands):
            if k < len(transit[j]):
                row[4 * j: 4 * j + 3] = transit[j][k]
            row[4 * j + 3] = ap[0, j]
        rows.append(row)
    for t in range(g):
        moves = [_steps_between(wps[j][t], wps[j][t + 1]) for j in range(n_hands)]
        sub = max(1, max(len(m) for m in moves))
        for k in range(sub):
            row = np.zeros(4 * n_hands)
            for j in range(n_hands):
                if k < len(moves[j]):
                    row[4 * j: 4 * j + 3] = moves[j][k]
                row[4 * j + 3] = shifted[t, j]
            rows.append(row)
    tail = source_ep.actions[g:]
    out = np.array(rows).reshape(-1, 4 * n_hands)
    return np.concatenate([out, tail]) if len(tail) else out


def augment_trajectory(source: Trajectory, target: ScenarioConfig, seed: int, jitter: int = 0,
                       registry: dict[str, EnvironmentParams] | None = None,
                       traj_id: str = "", iteration_born: int = 0,
                       source_episode: Episode | None = None) -> tuple[Trajectory | None, str]:
    """Edit ``source`` for ``target`` and validate by replay. Returns (trajectory, reason)."""
    if not source.success:
        raise ValueError("augmentation sources must be successful")
    if source.config.task != target.task:
        raise ValueError("source and target tasks differ")
    ep = source_episode or replay(source.config, source.seed, source.actions, registry)
    if not ep.success:
        return None, "source-replay-failed"
    try:
        plan = segment(ep)
    except ValueError:
        return None, "no-attachment"
    actions = edit_actions(ep, plan, source.config, target, jitter, registry)
    try:
        out = replay(target, seed, actions, registry, tail=REPLAY_TAIL)
    except ValueError as exc:
        return None, f"invalid-target: {exc}"
    if not out.success:
        return None, "replay-failed"
    traj = out.to_trajectory(traj_id or f"{source.traj_id}>aug", target, seed, "augmented",
                             [source.traj_id], iteration_born)
    return traj, "ok"


# ---- dataset-level operator -------------------------------------------------

@dataclass
class ScenarioOutcome:
    index: int
    config_key: list
    tries: int
    successes: int
    accepted: bool
    reasons: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"index": self.index, "config": self.config_key, "tries": self.tries,
                "successes": self.successes, "accepted": self.accepted, "reasons": self.reasons}


@dataclass
class CollectionManifest:
    outcomes: list[ScenarioOutcome] = field(default_factory=list)

    @property
    def attempted(self) -> int:
        return len(self.outcomes)

    @property
    def accepted(self) -> int:
        return sum(o.accepted for o in self.outcomes)

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.attempted if self.outcomes else 0.0

    def to_dict(self) -> dict:
        return {"attempted": self.attempted, "accepted": self.accepted,
                "acceptance_rate": self.acceptance_rate,
                "scenarios": [o.to_dict() for o in self.outcomes]}


def _config_key(c: ScenarioConfig) -> list:
    return [c.object.object_id, c.environment_id, list(c.pose_key)]


def _augment_job(args) -> tuple[ScenarioOutcome, list[Trajectory]]:
    (idx, cfg, sources, seed, try_time, threshold, registry, id_prefix, iteration_born) = args
    same = [s for s in sources if s.config.object.object_id == cfg.object.object_id]
    pool = same or sources
    kept: list[Trajectory] = []
    reasons: dict[str, int] = {}
    tries = 0
    cache: dict[str, Episode] = {}
    for k in range(try_time):
        tries += 1
        rng = derive_rng(seed, "aug", idx, k)
        src = pool[int(rng.integers(len(pool)))]
        jitter = 0 if k == 0 else int(rng.integers(-APERTURE_JITTER, APERTURE_JITTER + 1))
        if src.traj_id not in cache:
            cache[src.traj_id] = replay(src.config, src.seed, src.actions, registry)
        traj, why = augment_trajectory(
            src, cfg, derive_seed(seed, "aug-env", idx, k), jitter, registry,
            f"{id_prefix}-s{idx:04d}-t{k}", iteration_born, cache[src.traj_id])
        reasons[why] = reasons.get(why, 0) + 1
        if traj is not None:
            kept.append(traj)
            if len(kept) >= threshold:
                break
    accepted = len(kept) >= threshold
    outcome = ScenarioOutcome(idx, _config_key(cfg), tries, len(kept), accepted, reasons)
    return outcome, kept if accepted else []


def run_jobs(fn, jobs: list, workers: int = 1) -> list:
    """Map ``fn`` over jobs; results come back in job order regardless of worker count."""
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


def augment_dataset(
    dataset: Dataset,
    spec: AugmentationSpec,
    seed: int,
    try_time: int = TRY_TIME,
    threshold: int = SUCCESS_THRESHOLD,
    registry: dict[str, EnvironmentParams] | None = None,
    workers: int = 1,
    dataset_id: str = "augmented",
    iteration_born: int = 0,
    scenarios: list[ScenarioConfig] | None = None,
) -> tuple[Dataset, CollectionManifest]:
    if not dataset.trajectories:
        raise ValueError("augmentation needs a non-empty source dataset")
    registry = registry or DEFAULT_ENVIRONMENTS
    if scenarios is None:
        scenarios = sample_scenarios(spec, spec.samples, derive_seed(seed, "scenarios"), registry)
    sources = [t for t in dataset.trajectories if t.success]
    jobs = [(i, c, sources, seed, try_time, threshold, registry, dataset_id, iteration_born)
            for i, c in enumerate(scenarios)]
    results = run_jobs(_augment_job, jobs, workers)
    manifest = CollectionManifest([r[0] for r in results])
    trajs = [t for r in results for t in r[1]]
    return Dataset(dataset_id, dataset.task, trajs), manifest
