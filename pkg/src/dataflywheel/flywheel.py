"""Warm-up and the iterative loop: imitation -> residual RL -> filtered rollouts -> augmentation.

Run directory layout::

    configs/      flywheel.json, caug_<i>.json
    datasets/     D_<i>.jsonl, DO_<i>.jsonl, seed.jsonl
    checkpoints/  base_<i>.ckpt, residual_<i>.ckpt
    manifests/    warmup.json, rollout_<i>.json, augment_<i>.json, iteration_<i>.json, t_oep.json
    reports/      table.txt, table.json
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import (
    SUCCESS_THRESHOLD,
    TRY_TIME,
    AugmentationSpec,
    CollectionManifest,
    ScenarioOutcome,
    augment_dataset,
    run_jobs,
    sample_scenarios,
)
from .config import ConfigError, check_keys, read_config, write_config
from .core import params_digest
from .curriculum import (
    CurriculumStage,
    check_nested,
    default_pools,
    default_stages,
    introduced_at,
    workspace_ranges,
)
from .datasets import Dataset, Trajectory, downsample, load_dataset, merge, save_dataset
from .envs.catalog import DEFAULT_ENVIRONMENTS, ScenarioConfig, TaskKind, make_config
from .evaluation import (
    TestSet,
    assert_disjoint,
    build_t_o,
    build_t_oep,
    eval_policy,
    report_table,
    trajectory_rnr,
)
from .expert import ScriptedExpert, seed_pose
from .il import ILConfig, train_base
from .policy import BasePolicy, PolicyController, ResidualPolicy
from .rollout import run_episode
from .sac import SACConfig, train_residual
from .seeding import derive_seed

DEFAULT_TARGETS = (20, 100, 500)
SEED_ENV = "env00"


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass
class FlywheelConfig:
    task: TaskKind = TaskKind.GRASP
    iterations: int = 3
    targets: list[int] = field(default_factory=lambda: list(DEFAULT_TARGETS))
    scale: int = 1
    seed: int = 0
    stages: list[CurriculumStage] = field(default_factory=list)
    pools: list[tuple[list[str], list[tuple[float, float]]]] = field(default_factory=list)
    # small datasets need more passes than the standalone default to fit well
    il: ILConfig = field(default_factory=lambda: ILConfig(steps=8000))
    sac: SACConfig = field(default_factory=lambda: SACConfig.desk(total_timesteps=40_000, eval_every=4000,
                                                                  eval_scenarios=12))
    try_time: int = TRY_TIME
    threshold: int = SUCCESS_THRESHOLD
    rollout_per_object: int = 2
    sac_scenarios: int = 24
    eval_runs: int = 5
    t_oep_size: int = 40
    workers: int = 1

    def __post_init__(self):
        self.task = TaskKind(self.task)
        if not self.stages:
            self.stages = default_stages(self.task, self.iterations)
        if not self.pools:
            self.pools = default_pools(self.task, self.iterations)
        if len(self.targets) < self.iterations:
            # targets beyond the listed ones repeat the last
            self.targets = list(self.targets) + [self.targets[-1]] * (self.iterations - len(self.targets))
        self.validate()

    def validate(self) -> None:
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.scale < 1:
            raise ConfigError("scale must be >= 1")
        if any(t < 1 for t in self.targets):
            raise ConfigError("trajectory targets must be positive")
        if any(b < a for a, b in zip(self.targets, self.targets[1:])):
            raise ConfigError("trajectory targets must be non-decreasing")
        if len(self.stages) < self.iterations or len(self.pools) < self.iterations:
            raise ConfigError("need one curriculum stage and one pool per iteration")
        try:
            check_nested(self.stages)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        for (e0, p0), (e1, p1) in zip(self.pools, self.pools[1:]):
            if not set(e0) <= set(e1) or not set(map(tuple, p0)) <= set(map(tuple, p1)):
                raise ConfigError("environment/pose pools must grow monotonically")
        if self.try_time < 1 or not 1 <= self.threshold <= self.try_time:
            raise ConfigError("need 1 <= threshold <= try_time")
        if self.eval_runs < 1 or self.t_oep_size < 1 or self.workers < 1:
            raise ConfigError("eval_runs, t_oep_size and workers must be positive")

    def target(self, i: int) -> int:
        """Scaled trajectory target for D_i (1-based)."""
        return max(1, math.ceil(self.targets[i - 1] / self.scale))

    def stage(self, i: int) -> CurriculumStage:
        return self.stages[min(i, len(self.stages)) - 1]

    def caug(self, i: int, objects=None) -> AugmentationSpec:
        envs, poses = self.pools[i - 1]
        objs = list(objects) if objects is not None else list(self.stage(i).objects)
        need = max(len(objs), len(envs), len(poses))
        samples = max(need, math.ceil(1.25 * self.target(i) / self.threshold))
        return AugmentationSpec(self.task, objs, list(envs), [tuple(p) for p in poses], samples)

    def to_dict(self) -> dict:
        return {
            "task": self.task.value, "iterations": self.iterations, "targets": list(self.targets),
            "scale": self.scale, "seed": self.seed,
            "stages": [s.to_dict() for s in self.stages],
            "pools": [{"environments": list(e), "poses": [list(p) for p in ps]} for e, ps in self.pools],
            "il": self.il.to_dict(), "sac": self.sac.to_dict(),
            "try_time": self.try_time, "threshold": self.threshold,
            "rollout_per_object": self.rollout_per_object, "sac_scenarios": self.sac_scenarios,
            "eval_runs": self.eval_runs, "t_oep_size": self.t_oep_size, "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FlywheelConfig":
        allowed = {"kind", "version", "task", "iterations", "targets", "scale", "seed", "stages", "pools", "il",
                   "sac", "try_time", "threshold", "rollout_per_object", "sac_scenarios", "eval_runs",
                   "t_oep_size", "workers"}
        check_keys(d, allowed, "flywheel config", {"task"})
        kw: dict = {k: d[k] for k in ("iterations", "scale", "seed", "try_time", "threshold", "rollout_per_object",
                                      "sac_scenarios", "eval_runs", "t_oep_size", "workers") if k in d}
        try:
            kw["task"] = TaskKind(d["task"])
            if "targets" in d:
                kw["targets"] = [int(t) for t in d["targets"]]
            if "stages" in d:
                kw["stages"] = [CurriculumStage.from_dict(s) for s in d["stages"]]
            if "pools" in d:
                for p in d["pools"]:
                    check_keys(p, {"environments", "poses"}, "pool", {"environments", "poses"})
                kw["pools"] = [([str(e) for e in p["environments"]], [(float(x), float(t)) for x, t in p["poses"]])
                               for p in d["pools"]]
            if "il" in d:
                il = d["il"]
                check_keys(il, set(ILConfig.__dataclass_fields__), "il")
                if "hidden" in il:
                    il = {**il, "hidden": tuple(il["hidden"])}
                kw["il"] = ILConfig(**il)
            if "sac" in d:
                sc = d["sac"]
                check_keys(sc, set(SACConfig.__dataclass_fields__), "sac")
                sc = {**sc}
                for k in ("actor_hidden", "critic_hidden"):
                    if k in sc:
                        sc[k] = tuple(sc[k])
                kw["sac"] = SACConfig(**sc)
            return cls(**kw)
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"flywheel config: {exc}") from None

    def save(self, path: str | Path) -> None:
        write_config(path, "flywheel", self.to_dict())

    @classmethod
    def load(cls, path: str | Path) -> "FlywheelConfig":
        return cls.from_dict(read_config(path, "flywheel"))


@dataclass
class IterationRecord:
    iteration: int
    dataset_id: str
    rollout_dataset_id: str | None = None
    next_dataset_id: str | None = None
    base_checkpoint: str = ""
    residual_checkpoint: str = ""
    base_digest: str = ""
    residual_digest: str = ""
    ledger: dict = field(default_factory=dict)
    next_ledger: dict | None = None
    rollout_stats: dict = field(default_factory=dict)
    augment_stats: dict = field(default_factory=dict)
    train_stats: dict = field(default_factory=dict)
    sr_t_oep: float = 0.0
    t_oep: dict = field(default_factory=dict)
    boost: dict | None = None
    runtime: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "IterationRecord":
        return cls(**d)

    def report_row(self, task: TaskKind) -> dict:
        boost = (self.boost["sr_base"], self.boost["sr_combined"]) if self.boost else ""
        return {"task": task.value, "iteration": self.iteration, "ledger": self.ledger,
                "sr_boost": boost, "sr_t_oep": self.sr_t_oep}


# ---- stages -------------------------------------------------------------------

def canonical_config(task: TaskKind, stages: list[CurriculumStage] | None = None) -> ScenarioConfig:
    stages = stages or default_stages(task, 1)
    x, th = seed_pose(task)
    return make_config(task, stages[0].objects[0], SEED_ENV, x, th)


def scripted_seed(task: TaskKind, config: ScenarioConfig | None = None, seed: int = 0) -> Trajectory:
    """The single waypoint-expert demonstration that starts the loop."""
    config = config or canonical_config(task)
    ep = run_episode(config, seed, ScriptedExpert())
    if not ep.success:
        raise StageError("seed", f"scripted expert failed on {config.key} ({ep.reason}); environment misconfigured")
    return ep.to_trajectory("seed", config, seed, "scripted-seed")


def run_warmup(seed_traj: Trajectory, spec: AugmentationSpec, target: int, seed: int, workers: int = 1,
               try_time: int = TRY_TIME, threshold: int = SUCCESS_THRESHOLD,
               registry=None) -> tuple[Dataset, CollectionManifest]:
    """D_1: augmentation of the seed demonstration, downsampled to ``target``."""
    if not seed_traj.success:
        raise StageError("warmup", "seed demonstration is not successful")
    src = Dataset("seed", seed_traj.config.task, [seed_traj])
    aug, manifest = augment_dataset(src, spec, derive_seed(seed, "warmup"), try_time, threshold, registry,
                                    workers, "D1", iteration_born=1)
    if manifest.accepted == 0:
        raise StageError("warmup", "no augmentation scenario was accepted")
    n = min(target, len(aug))
    return downsample(aug, n, derive_seed(seed, "warmup-downsample"), "D1"), manifest


def _rollout_job(args) -> tuple[ScenarioOutcome, list[Trajectory]]:
    idx, cfg, base, residual, alpha, seed, try_time, threshold, registry, prefix, born = args
    kept: list[Trajectory] = []
    reasons: dict[str, int] = {}
    tries = 0
    for k in range(try_time):
        tries += 1
        ep_seed = derive_seed(seed, "rollout", idx, k)
        ep = run_episode(cfg, ep_seed, PolicyController(base, residual, alpha, ep_seed), registry)
        reasons[ep.reason] = reasons.get(ep.reason, 0) + 1
        if ep.success:
            kept.append(ep.to_trajectory(f"{prefix}-s{idx:04d}-t{k}", cfg, ep_seed, "rollout", [], born))
            if len(kept) >= threshold:
                break
    accepted = len(kept) >= threshold
    key = [cfg.object.object_id, cfg.environment_id, list(cfg.pose_key)]
    return ScenarioOutcome(idx, key, tries, len(kept), accepted, reasons), kept if accepted else []


def rollout_collect(base: BasePolicy, residual: ResidualPolicy | None, scenarios: list[ScenarioConfig], seed: int,
                    try_time: int = TRY_TIME, threshold: int = SUCCESS_THRESHOLD, alpha: float = 0.1,
                    registry=None, workers: int = 1, dataset_id: str = "DO",
                    iteration_born: int = 0) -> tuple[Dataset, CollectionManifest]:
    """Success-filtered rollouts of the frozen combined policy, same accept rule as augmentation."""
    registry = registry or DEFAULT_ENVIRONMENTS
    digest = (params_digest(base.net.params), residual and params_digest(residual.net.params))
    jobs = [(i, c, base, residual, alpha, seed, try_time, threshold, registry, dataset_id, iteration_born)
            for i, c in enumerate(scenarios)]
    results = run_jobs(_rollout_job, jobs, workers)
    if digest != (params_digest(base.net.params), residual and params_digest(residual.net.params)):
        raise StageError("rollout", "policy parameters changed during collection")
    manifest = CollectionManifest([r[0] for r in results])
    task = scenarios[0].task if scenarios else base.task
    return Dataset(dataset_id, task, [t for r in results for t in r[1]]), manifest


# ---- the loop -----------------------------------------------------------------

class RunDir:
    def __init__(self, root: str | Path):
        self.root = Path(root)

    def make(self) -> "RunDir":
        for sub in ("configs", "datasets", "checkpoints", "manifests", "reports"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)
        return self

    def path(self, sub: str, name: str) -> Path:
        return self.root / sub / name

    def write_json(self, sub: str, name: str, obj) -> None:
        self.path(sub, name).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def read_json(self, sub: str, name: str):
        return json.loads(self.path(sub, name).read_text())

    def records(self) -> list[IterationRecord]:
        out = []
        i = 1
        while self.path("manifests", f"iteration_{i}.json").exists():
            out.append(IterationRecord.from_dict(self.read_json("manifests", f"iteration_{i}.json")))
            i += 1
        return out


def t_oep_for(config: FlywheelConfig, registry=None) -> TestSet:
    """Held-out object/environment/pose combinations avoiding every training pose bucket."""
    from .envs.catalog import pose_bucket

    exclude = {pose_bucket(x, th) for _, poses in config.pools for x, th in poses}
    x_range, th_range = workspace_ranges(config.task)
    envs = sorted(registry or DEFAULT_ENVIRONMENTS)
    objects = list(config.stage(config.iterations).objects)
    return build_t_oep(config.task, objects, envs, x_range, th_range, derive_seed(config.seed, "t_oep"),
                       exclude, config.t_oep_size, registry=registry)


def t_o_for(config: FlywheelConfig, i: int, registry=None) -> TestSet | None:
    """Objects introduced by stage ``i`` at the seed environment and pose (None if there are none)."""
    stages = [config.stage(k) for k in range(1, i + 1)]
    objs = introduced_at(stages, i) if i <= len(stages) else []
    if not objs:
        return None
    return build_t_o(config.task, objs, SEED_ENV, seed_pose(config.task), i, registry=registry)


def _training_keys(run: RunDir, upto: int) -> set:
    keys = set()
    for k in range(1, upto + 1):
        ds = load_dataset(run.path("datasets", f"D_{k}.jsonl"))
        keys |= {t.config.key for t in ds.trajectories}
    return keys


def _stage(name: str, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except Exception as exc:  # tag and propagate
        raise StageError(name, f"{type(exc).__name__}: {exc}") from exc


def run_iteration(i: int, d_i: Dataset, config: FlywheelConfig, run: RunDir, registry=None,
                  log=print) -> IterationRecord:
    """Train base and residual on D_i, evaluate, and (unless last) collect D_{i+1}."""
    if not d_i.trajectories:
        raise StageError("iteration", f"D_{i} is empty")
    registry = registry or DEFAULT_ENVIRONMENTS
    seed = derive_seed(config.seed, "iteration", i)
    times: dict[str, float] = {}
    rec = IterationRecord(i, d_i.dataset_id, ledger=d_i.ledger.to_dict())

    t0 = time.perf_counter()
    il_cfg = ILConfig(**{**config.il.__dict__, "seed": derive_seed(seed, "il") % (2**31)})
    base, il_log = _stage("il", train_base, d_i, il_cfg)
    times["il"] = time.perf_counter() - t0
    log(f"[iter {i}] base trained on {len(d_i)} trajectories (val {il_log.best_val:.4g})")

    # residual RL on the next stage's objects at the pools this base was trained on
    t0 = time.perf_counter()
    envs, poses = config.pools[i - 1]
    rl_stage = config.stage(i + 1)
    rl_spec = AugmentationSpec(config.task, list(rl_stage.objects), list(envs), [tuple(p) for p in poses], 1)
    n_rl = max(config.sac_scenarios, len(rl_stage.objects), len(envs), len(poses))
    rl_scen = sample_scenarios(rl_spec, n_rl, derive_seed(seed, "rl-scenarios"), registry)
    sac_cfg = SACConfig(**{**config.sac.__dict__, "seed": derive_seed(seed, "sac") % (2**31)})
    residual, sac_log = _stage("residual", train_residual, rl_scen, base, sac_cfg, registry)
    times["residual"] = time.perf_counter() - t0
    if sac_log.base_digest_before != sac_log.base_digest_after:
        raise StageError("residual", "base policy changed during residual training")
    log(f"[iter {i}] residual trained ({sac_log.updates} updates, best step {sac_log.best_step})")

    bpath, rpath = run.path("checkpoints", f"base_{i}.ckpt"), run.path("checkpoints", f"residual_{i}.ckpt")
    base.save(bpath, {"iteration": i})
    residual.save(rpath, {"iteration": i})
    rec.base_checkpoint, rec.residual_checkpoint = str(bpath.relative_to(run.root)), str(rpath.relative_to(run.root))
    rec.base_digest, rec.residual_digest = params_digest(base.net.params), params_digest(residual.net.params)
    rec.train_stats = {"il_best_val": il_log.best_val, "il_best_step": il_log.best_step,
                       "sac_updates": sac_log.updates, "sac_best_step": sac_log.best_step,
                       "sac_best_return": sac_log.best_return, "sac_eval_success": sac_log.eval_success}

    # evaluation
    t0 = time.perf_counter()
    t_oep = TestSet.load(run.path("manifests", "t_oep.json"))
    _stage("eval", assert_disjoint, t_oep, _training_keys(run, i))
    rep = _stage("eval", eval_policy, base, residual, t_oep, config.eval_runs, derive_seed(config.seed, "eval-oep"),
                 sac_cfg.residual_scale, registry, config.workers)
    rec.sr_t_oep, rec.t_oep = rep.mean, {k: v for k, v in rep.to_dict().items() if k != "runtime"}
    t_o = t_o_for(config, i + 1, registry) if i < len(config.stages) else None
    if t_o is not None:
        es = derive_seed(config.seed, "eval-o", i + 1)
        rb = eval_policy(base, None, t_o, config.eval_runs, es, sac_cfg.residual_scale, registry, config.workers)
        rc = eval_policy(base, residual, t_o, config.eval_runs, es, sac_cfg.residual_scale, registry, config.workers)
        rec.boost = {"test_set": f"T_O({i + 1})", "sr_base": rb.mean, "sr_combined": rc.mean,
                     "delta": rc.mean - rb.mean, "std_base": rb.std, "std_combined": rc.std}
    times["eval"] = time.perf_counter() - t0
    boost_s = f", boost {rec.boost['sr_base']:.1%} -> {rec.boost['sr_combined']:.1%}" if rec.boost else ""
    log(f"[iter {i}] SR on T_OEP {rec.sr_t_oep:.1%}{boost_s}")

    if i < config.iterations:
        t0 = time.perf_counter()
        _collect_next(i, base, residual, sac_cfg.residual_scale, config, run, rec, registry, log)
        times["collect"] = time.perf_counter() - t0
    rec.runtime = times
    return rec


def _collect_next(i: int, base: BasePolicy, residual: ResidualPolicy, alpha: float, config: FlywheelConfig,
                  run: RunDir, rec: IterationRecord, registry, log) -> Dataset:
    seed = derive_seed(config.seed, "iteration", i)
    if (params_digest(base.net.params), params_digest(residual.net.params)) != (rec.base_digest, rec.residual_digest):
        raise StageError("rollout", "policies differ from the recorded checkpoints")
    envs, poses = config.pools[i - 1]
    objs = list(config.stage(i + 1).objects)
    spec = AugmentationSpec(config.task, objs, list(envs), [tuple(p) for p in poses], 1)
    n = max(config.rollout_per_object * len(objs), len(envs), len(poses))
    scen = sample_scenarios(spec, n, derive_seed(seed, "rollout-scenarios"), registry)
    d_o, man = _stage("rollout", rollout_collect, base, residual, scen, derive_seed(seed, "rollout"),
                      config.try_time, config.threshold, alpha, registry, config.workers, f"DO{i}", i)
    save_dataset(d_o, run.path("datasets", f"DO_{i}.jsonl"))
    run.write_json("manifests", f"rollout_{i}.json", man.to_dict())
    rnrs = [r for r in (trajectory_rnr(t, alpha) for t in d_o.trajectories) if r is not None]
    rec.rollout_dataset_id = d_o.dataset_id
    rec.rollout_stats = {"scenarios": man.attempted, "accepted": man.accepted, "trajectories": len(d_o),
                         "rnr_mean": float(np.mean(rnrs)) if rnrs else None, "ledger": d_o.ledger.to_dict()}
    log(f"[iter {i}] rollouts: {man.accepted}/{man.attempted} scenarios accepted, {len(d_o)} trajectories")
    if not d_o.trajectories:
        raise StageError("rollout", "no successful rollouts to augment")

    covered = []
    seen = set()
    for t in d_o.trajectories:
        if t.config.object.object_id not in seen:
            seen.add(t.config.object.object_id)
            covered.append(t.config.object)
    caug = config.caug(i + 1, covered)
    caug.save(run.path("configs", f"caug_{i + 1}.json"))
    aug, aman = _stage("augment", augment_dataset, d_o, caug, derive_seed(seed, "augment"), config.try_time,
                       config.threshold, registry, config.workers, f"A{i + 1}", i + 1)
    run.write_json("manifests", f"augment_{i + 1}.json", aman.to_dict())
    pool = merge(f"D{i + 1}", config.task, [d_o, aug])
    target = config.target(i + 1)
    d_next = downsample(pool, min(target, len(pool)), derive_seed(seed, "downsample"), f"D{i + 1}")
    save_dataset(d_next, run.path("datasets", f"D_{i + 1}.jsonl"))
    rec.augment_stats = {"attempted": aman.attempted, "accepted": aman.accepted,
                         "acceptance_rate": aman.acceptance_rate, "pool_size": len(pool), "target": target}
    rec.next_dataset_id = d_next.dataset_id
    rec.next_ledger = d_next.ledger.to_dict()
    log(f"[iter {i}] D_{i + 1}: {len(d_next)} trajectories, ledger {rec.next_ledger}")
    return d_next


def write_report(run: RunDir, config: FlywheelConfig, records: list[IterationRecord]) -> str:
    text, js = report_table([r.report_row(config.task) for r in records])
    run.path("reports", "table.txt").write_text(text)
    run.path("reports", "table.json").write_text(js + "\n")
    return text


def run_flywheel(config: FlywheelConfig, run_dir: str | Path, registry=None, log=print,
                 resume: bool = True) -> list[IterationRecord]:
    """Warm-up then iterations 1..n; completed iterations found in ``run_dir`` are reused."""
    registry = registry or DEFAULT_ENVIRONMENTS
    run = RunDir(run_dir).make()
    cfg_path = run.path("configs", "flywheel.json")
    records = run.records() if resume else []
    if records:
        prev = FlywheelConfig.load(cfg_path)
        frozen = {k: v for k, v in prev.to_dict().items() if k not in ("iterations", "workers", "targets", "stages",
                                                                       "pools")}
        now = {k: v for k, v in config.to_dict().items() if k in frozen}
        if frozen != now:
            raise ConfigError("resume: run directory was created with a different configuration")
        if len(records) > config.iterations:
            records = records[:config.iterations]
    config.save(cfg_path)

    if not run.path("manifests", "t_oep.json").exists() or not records:
        t_oep_for(config, registry).save(run.path("manifests", "t_oep.json"))

    if not records:
        t0 = time.perf_counter()
        seed_traj = _stage("seed", scripted_seed, config.task, canonical_config(config.task, config.stages),
                           derive_seed(config.seed, "seed-demo"))
        save_dataset(Dataset("seed", config.task, [seed_traj]), run.path("datasets", "seed.jsonl"))
        c1 = config.caug(1)
        c1.save(run.path("configs", "caug_1.json"))
        d1, man = run_warmup(seed_traj, c1, config.target(1), config.seed, config.workers, config.try_time,
                             config.threshold, registry)
        save_dataset(d1, run.path("datasets", "D_1.jsonl"))
        run.write_json("manifests", "warmup.json", {**man.to_dict(), "runtime": time.perf_counter() - t0})
        log(f"[warmup] D_1: {len(d1)} trajectories, ledger {d1.ledger.to_dict()}")

    # a finished run extended with more iterations needs its last collection step
    if records and records[-1].next_dataset_id is None and len(records) < config.iterations:
        last = records[-1]
        base = BasePolicy.load(run.root / last.base_checkpoint)
        res = ResidualPolicy.load(run.root / last.residual_checkpoint)
        _collect_next(last.iteration, base, res, config.sac.residual_scale, config, run, last, registry, log)
        run.write_json("manifests", f"iteration_{last.iteration}.json", last.to_dict())

    for i in range(len(records) + 1, config.iterations + 1):
        d_i = load_dataset(run.path("datasets", f"D_{i}.jsonl"))
        rec = run_iteration(i, d_i, config, run, registry, log)
        run.write_json("manifests", f"iteration_{i}.json", rec.to_dict())
        records.append(rec)
    write_report(run, config, records)
    return records
