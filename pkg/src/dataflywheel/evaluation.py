"""Test sets, success-rate evaluation and trajectory metrics."""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import run_jobs
from .datasets import Trajectory
from .envs import planar
from .envs.catalog import (
    DEFAULT_ENVIRONMENTS,
    THETA_MAX,
    EnvironmentParams,
    ScenarioConfig,
    TaskKind,
    make_config,
    pose_bucket,
)
from .envs.geometry import ObjectSpec
from .policy.base import BasePolicy
from .policy.combined import RESIDUAL_SCALE, PolicyController
from .policy.residual import ResidualPolicy
from .rollout import run_episode
from .seeding import derive_rng, derive_seed

RNR_EPS = 1e-6
T_OEP_SIZE = 40
TESTSET_VERSION = 1


@dataclass
class TestSet:
    kind: str  # "T_OEP" or "T_O"
    task: TaskKind
    configs: list[ScenarioConfig]
    held_out: list[bool] = field(default_factory=list)
    iteration: int | None = None

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self):
        if self.kind not in ("T_OEP", "T_O"):
            raise ValueError(f"unknown test-set kind {self.kind!r}")
        if not self.held_out:
            self.held_out = [True] * len(self.configs)

    def to_dict(self) -> dict:
        return {"version": TESTSET_VERSION, "kind": self.kind, "task": self.task.value,
                "iteration": self.iteration, "held_out": self.held_out,
                "configs": [c.to_dict() for c in self.configs]}

    @classmethod
    def from_dict(cls, d: dict) -> "TestSet":
        if d.get("version") != TESTSET_VERSION:
            raise ValueError(f"unsupported test-set version {d.get('version')!r}")
        return cls(d["kind"], TaskKind(d["task"]), [ScenarioConfig.from_dict(c) for c in d["configs"]],
                   list(d.get("held_out", [])), d.get("iteration"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "TestSet":
        return cls.from_dict(json.loads(Path(path).read_text()))


def build_t_oep(task: TaskKind, objects: list[ObjectSpec], environments: list[str],
                x_range: tuple[float, float], theta_range: float, seed: int,
                exclude: set, n: int = T_OEP_SIZE, second_object: ObjectSpec | None = None,
                registry: dict[str, EnvironmentParams] | None = None) -> TestSet:
    """``n`` object/environment/pose combinations whose keys avoid ``exclude``.

    ``exclude`` holds pose buckets ``(ix, itheta)`` and full config keys
    ``(object, env, pose bucket)`` that training ever used.
    """
    rng = derive_rng(seed, "t_oep")
    configs: list[ScenarioConfig] = []
    seen = set()
    attempts = 0
    while len(configs) < n:
        attempts += 1
        if attempts > 100 * n:
            raise RuntimeError("could not place enough held-out configurations")
        obj = objects[int(rng.integers(len(objects)))]
        env = environments[int(rng.integers(len(environments)))]
        x = float(rng.uniform(*x_range))
        th = float(rng.uniform(-theta_range, theta_range))
        b = pose_bucket(x, th)
        key = (obj.object_id, env, b)
        if b in exclude or key in exclude or key in seen:
            continue
        seen.add(key)
        configs.append(make_config(task, obj, env, x, th, second_object, registry))
    return TestSet("T_OEP", task, configs)


def build_t_o(task: TaskKind, objects: list[ObjectSpec], environment: str, pose: tuple[float, float],
              iteration: int, second_object: ObjectSpec | None = None,
              registry: dict[str, EnvironmentParams] | None = None) -> TestSet:
    cfgs = [make_config(task, o, environment, pose[0], pose[1], second_object, registry) for o in objects]
    return TestSet("T_O", task, cfgs, iteration=iteration)


def assert_disjoint(test: TestSet, training_keys: set) -> None:
    clash = [c.key for c in test.configs if c.key in training_keys]
    if clash:
        raise AssertionError(f"{len(clash)} test configurations appear in training data, e.g. {clash[0]}")


@dataclass
class EvalReport:
    runs: int
    per_run_sr: list[float]
    outcomes: list[list[bool]]  # [run][config]
    runtime: float = 0.0

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_run_sr)) if self.per_run_sr else 0.0

    @property
    def std(self) -> float:
        return float(np.std(self.per_run_sr)) if self.per_run_sr else 0.0

    @property
    def attempts(self) -> int:
        return sum(len(r) for r in self.outcomes)

    @property
    def successes(self) -> int:
        return sum(sum(r) for r in self.outcomes)

    def to_dict(self) -> dict:
        return {"runs": self.runs, "sr_mean": self.mean, "sr_std": self.std, "per_run_sr": self.per_run_sr,
                "successes": self.successes, "attempts": self.attempts, "outcomes": self.outcomes,
                "runtime": self.runtime}


def _eval_job(args) -> bool:
    base, residual, alpha, cfg, seed, registry, controller = args
    ctl = controller if controller is not None else PolicyController(base, residual, alpha, seed)
    if hasattr(ctl, "set_seed"):
        ctl.set_seed(seed)
    return run_episode(cfg, seed, ctl, registry).success


def eval_policy(base: BasePolicy | None, residual: ResidualPolicy | None, test: TestSet, runs: int = 5,
                seed: int = 0, alpha: float = RESIDUAL_SCALE, registry=None, workers: int = 1,
                controller=None) -> EvalReport:
    """Success rate per run (mean and std across runs); one rollout per (run, config).

    ``controller`` overrides the policy pair (used for scripted baselines).
    """
    if not test.configs:
        raise ValueError("empty test set")
    if runs < 1:
        raise ValueError("runs must be >= 1")
    registry = registry or DEFAULT_ENVIRONMENTS
    t0 = time.perf_counter()
    jobs = [(base, residual, alpha, c, derive_seed(seed, "eval", r, i), registry, controller)
            for r in range(runs) for i, c in enumerate(test.configs)]
    flat = run_jobs(_eval_job, jobs, workers)
    n = len(test.configs)
    outcomes = [[bool(x) for x in flat[r * n:(r + 1) * n]] for r in range(runs)]
    per_run = [sum(o) / n for o in outcomes]
    return EvalReport(runs, per_run, outcomes, time.perf_counter() - t0)


def residual_boost(base: BasePolicy, residual: ResidualPolicy, test: TestSet, runs: int = 5, seed: int = 0,
                   alpha: float = RESIDUAL_SCALE, registry=None, workers: int = 1) -> tuple[float, float, float]:
    """Paired evaluation (same seeds per config) of base alone vs base + residual."""
    a = eval_policy(base, None, test, runs, seed, alpha, registry, workers)
    b = eval_policy(base, residual, test, runs, seed, alpha, registry, workers)
    return a.mean, b.mean, b.mean - a.mean


# ---- trajectory metrics -----------------------------------------------------

def joint_coordinates(traj: Trajectory) -> np.ndarray:
    """Joint-like coordinates per step: each hand's theta and aperture mapped to [0, pi/2]."""
    task = traj.config.task
    n_obj = 2 if task == TaskKind.POUR else 1
    start = planar.OBJ_FEATURES * n_obj
    cols = []
    for j in range(task.n_hands):
        off = start + planar.PROP_FEATURES * j
        cols.append(off + 2)
        cols.append(off + 6)
    obs = traj.observations
    out = obs[:, cols].copy()
    out[:, 1::2] *= math.pi / 2
    return out


def resample(x: np.ndarray, n: int) -> np.ndarray:
    idx = np.round(np.linspace(0, len(x) - 1, n)).astype(int)
    return x[idx]


def joint_diff(a, b) -> float:
    """Mean absolute joint-coordinate difference (radians) after resampling to the shorter length."""
    ja = joint_coordinates(a) if isinstance(a, Trajectory) else np.asarray(a, dtype=np.float64)
    jb = joint_coordinates(b) if isinstance(b, Trajectory) else np.asarray(b, dtype=np.float64)
    if ja.ndim != 2 or jb.ndim != 2 or ja.shape[1] != jb.shape[1]:
        raise ValueError(f"incompatible joint layouts {ja.shape} vs {jb.shape}")
    n = min(len(ja), len(jb))
    if n == 0:
        raise ValueError("empty trajectory")
    return float(np.mean(np.abs(resample(ja, n) - resample(jb, n))))


def rnr(base_actions, residuals, eps: float = RNR_EPS) -> float:
    """Mean over steps of ||da_t|| / (||a_t|| + eps)."""
    a = np.asarray(base_actions, dtype=np.float64)
    d = np.asarray(residuals, dtype=np.float64)
    if a.shape != d.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {d.shape}")
    if a.ndim == 1:
        a, d = a[:, None], d[:, None]
    if len(a) == 0:
        return 0.0
    return float(np.mean(np.linalg.norm(d, axis=1) / (np.linalg.norm(a, axis=1) + eps)))


def trajectory_rnr(traj: Trajectory, alpha: float = RESIDUAL_SCALE) -> float | None:
    """RNR of the applied correction alpha * da against the base action."""
    steps = [(t.base_action, t.residual) for t in traj.transitions if t.base_action is not None and t.residual is not None]
    if not steps:
        return None
    return rnr([s[0] for s in steps], [alpha * s[1] for s in steps])


# ---- Table-1 style report -----------------------------------------------------

REPORT_COLUMNS = ["Task", "Iter", "O", "E", "P", "Configs", "Traj", "SR_boost", "SR_T_OEP"]


def report_rows(records: list[dict]) -> list[dict]:
    rows = []
    for r in records:
        led = r["ledger"]
        rows.append({
            "Task": r["task"], "Iter": int(r["iteration"]),
            "O": int(led["O"]), "E": int(led["E"]), "P": int(led["P"]),
            "Configs": int(led["configs"]), "Traj": int(led["traj"]),
            "SR_boost": r.get("sr_boost", ""), "SR_T_OEP": r.get("sr_t_oep", ""),
        })
    return rows


def _fmt_pct(v) -> str:
    return "-" if v in ("", None) else f"{100.0 * float(v):.1f}%"


def format_table(rows: list[dict]) -> str:
    body = []
    for r in rows:
        boost = r["SR_boost"]
        boost_s = "-" if boost in ("", None) else f"{_fmt_pct(boost[0])}->{_fmt_pct(boost[1])}"
        body.append([r["Task"], str(r["Iter"]), str(r["O"]), str(r["E"]), str(r["P"]),
                     str(r["Configs"]), str(r["Traj"]), boost_s, _fmt_pct(r["SR_T_OEP"])])
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h) for i, h in enumerate(REPORT_COLUMNS)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(REPORT_COLUMNS, widths)).rstrip()]
    lines += ["  ".join(c.ljust(w) for c, w in zip(b, widths)).rstrip() for b in body]
    return "\n".join(lines) + "\n"


def parse_table(text: str) -> list[dict]:
    """Inverse of :func:`format_table` (percentages come back as fractions rounded to 0.1%)."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].split() != REPORT_COLUMNS:
        raise ValueError("not a report table")

    def pct(s: str):
        return "" if s == "-" else round(float(s.rstrip("%")) / 100.0, 6)

    rows = []
    for ln in lines[1:]:
        f = ln.split()
        boost = "" if f[7] == "-" else tuple(pct(x) for x in f[7].split("->"))
        rows.append({"Task": f[0], "Iter": int(f[1]), "O": int(f[2]), "E": int(f[3]), "P": int(f[4]),
                     "Configs": int(f[5]), "Traj": int(f[6]), "SR_boost": boost, "SR_T_OEP": pct(f[8])})
    return rows


def report_table(records: list[dict]) -> tuple[str, str]:
    """(aligned plaintext, JSON) renderings of the per-iteration rows."""
    rows = report_rows(records)
    return format_table(rows), json.dumps(rows, indent=2)
