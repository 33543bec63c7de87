import json
import math

import numpy as np
import pytest

from dataflywheel import flywheel as fw
from dataflywheel.config import ConfigError
from dataflywheel.curriculum import CurriculumStage, default_pools, default_stages
from dataflywheel.datasets import load_dataset
from dataflywheel.envs.catalog import TaskKind
from dataflywheel.expert import ScriptedExpert
from dataflywheel.flywheel import (
    FlywheelConfig,
    RunDir,
    StageError,
    canonical_config,
    rollout_collect,
    run_flywheel,
    run_warmup,
    scripted_seed,
)
from dataflywheel.il import ILConfig
from dataflywheel.policy.base import BasePolicy
from dataflywheel.sac import SACConfig


def tiny_config(**kw) -> FlywheelConfig:
    base = dict(iterations=1, targets=[4],
                il=ILConfig(steps=60, hidden=(16,), batch_size=32, eval_every=30),
                sac=SACConfig.desk(total_timesteps=400, eval_every=400, eval_scenarios=1, batch_size=16,
                                   actor_hidden=(8,), critic_hidden=(8,), episode_horizon=80),
                sac_scenarios=2, eval_runs=1, t_oep_size=3, rollout_per_object=1, try_time=3, threshold=1)
    base.update(kw)
    return FlywheelConfig(**base)


def test_default_config_shape():
    c = FlywheelConfig()
    assert c.targets == [20, 100, 500] and (c.try_time, c.threshold) == (10, 4)
    assert [len(s.objects) for s in c.stages] == [1, 11, 22]
    assert [c.target(i) for i in (1, 2, 3)] == [20, 100, 500]


@pytest.mark.parametrize("scale", [1, 3, 4, 7, 1000])
def test_scaled_targets_round_up(scale):
    c = FlywheelConfig(scale=scale)
    assert [c.target(i) for i in (1, 2, 3)] == [max(1, math.ceil(t / scale)) for t in (20, 100, 500)]


def test_extra_iterations_repeat_last_target_and_pool():
    c = FlywheelConfig(iterations=5)
    assert c.targets == [20, 100, 500, 500, 500]
    assert c.pools[3] == c.pools[2] and c.stage(5).objects == c.stage(3).objects


@pytest.mark.parametrize("bad", [
    {"targets": [20, 10, 30]},
    {"targets": [0, 10, 20]},
    {"scale": 0},
    {"iterations": 0},
    {"threshold": 11},
    {"eval_runs": 0},
])
def test_invalid_configs_raise(bad):
    with pytest.raises(ConfigError):
        FlywheelConfig(**bad)


def test_stages_and_pools_must_nest():
    st = default_stages(TaskKind.GRASP)
    shrunk = [st[0], st[1], CurriculumStage(3, st[1].objects[:3], "diverse-categories")]
    with pytest.raises(ConfigError, match="drops"):
        FlywheelConfig(stages=shrunk)
    pools = default_pools(TaskKind.GRASP, 3)
    with pytest.raises(ConfigError, match="monoton"):
        FlywheelConfig(pools=[pools[0], pools[2], pools[1]])


def test_config_roundtrip_and_unknown_keys(tmp_path):
    c = FlywheelConfig(task=TaskKind.POUR, scale=4, seed=9)
    c.save(tmp_path / "f.json")
    back = FlywheelConfig.load(tmp_path / "f.json")
    assert back.to_dict() == c.to_dict()
    with pytest.raises(ConfigError, match="unknown"):
        FlywheelConfig.from_dict({**c.to_dict(), "learning_rate": 1.0})
    with pytest.raises(ConfigError):
        FlywheelConfig.from_dict({**c.to_dict(), "il": {"steps": 5, "depth": 2}})
    with pytest.raises(ConfigError):
        FlywheelConfig.from_dict({"iterations": 2})


def test_caug_sample_budget():
    c = FlywheelConfig(scale=4)
    spec = c.caug(3)
    assert spec.samples == max(22, 12, 15, math.ceil(1.25 * 125 / 4))
    assert len(c.caug(1).objects) == 1


@pytest.mark.parametrize("task", list(TaskKind))
def test_scripted_seed_succeeds_for_every_task(task):
    traj = scripted_seed(task)
    assert traj.success and traj.source == "scripted-seed" and traj.config == canonical_config(task)


def test_warmup_hits_target_with_seed_lineage():
    c = FlywheelConfig(scale=4)
    seed = scripted_seed(TaskKind.GRASP)
    d1, man = run_warmup(seed, c.caug(1), c.target(1), 0)
    assert len(d1) == c.target(1) == 5 and man.accepted > 0
    assert all(t.lineage == [seed.traj_id] and t.iteration_born == 1 for t in d1.trajectories)
    bad = type(seed)(**{**seed.__dict__, "success": False})
    with pytest.raises(StageError):
        run_warmup(bad, c.caug(1), 5, 0)


def test_untrained_policy_rollouts_are_all_flagged():
    base = BasePolicy.create(TaskKind.GRASP, np.random.default_rng(0), hidden=(8,))
    ds, man = rollout_collect(base, None, [canonical_config(TaskKind.GRASP)] * 2, 0, try_time=3, threshold=2)
    assert len(ds) == 0 and man.accepted == 0
    assert all(o.tries == 3 and not o.accepted for o in man.outcomes)


def test_reliable_policy_stops_at_threshold(monkeypatch):
    monkeypatch.setattr(fw, "PolicyController", lambda *a: ScriptedExpert())
    base = BasePolicy.create(TaskKind.GRASP, np.random.default_rng(0), hidden=(8,))
    scen = [canonical_config(TaskKind.GRASP)] * 3
    ds, man = rollout_collect(base, None, scen, 5, dataset_id="DO_1", iteration_born=1)
    assert len(ds) == 12 and man.accepted == 3
    assert all(o.tries == 4 and o.successes == 4 for o in man.outcomes)
    assert all(t.source == "rollout" and t.iteration_born == 1 for t in ds.trajectories)


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    recs = run_flywheel(tiny_config(), root, log=lambda m: None)
    return root, recs


def test_run_directory_layout(tiny_run):
    root, recs = tiny_run
    run = RunDir(root)
    for sub, name in [("datasets", "seed.jsonl"), ("datasets", "D_1.jsonl"), ("configs", "flywheel.json"),
                      ("configs", "caug_1.json"), ("manifests", "t_oep.json"), ("manifests", "warmup.json"),
                      ("manifests", "iteration_1.json"), ("reports", "table.txt"), ("reports", "table.json")]:
        assert run.path(sub, name).exists(), name
    assert len(recs) == 1 and recs[0].iteration == 1
    assert (root / recs[0].base_checkpoint).exists() and (root / recs[0].residual_checkpoint).exists()
    assert len(load_dataset(run.path("datasets", "D_1.jsonl"))) == 4
    assert json.loads(run.path("reports", "table.json").read_text())[0]["Iter"] == 1


def test_same_seed_same_run(tiny_run, tmp_path):
    root, recs = tiny_run
    again = run_flywheel(tiny_config(), tmp_path, log=lambda m: None)
    assert [r.base_digest for r in again] == [r.base_digest for r in recs]
    assert [r.residual_digest for r in again] == [r.residual_digest for r in recs]
    for sub, name in [("datasets", "D_1.jsonl"), ("manifests", "t_oep.json")]:
        assert (tmp_path / sub / name).read_bytes() == (root / sub / name).read_bytes()


def test_resume_of_complete_run_reuses_records(tiny_run):
    root, recs = tiny_run
    before = (root / "manifests" / "iteration_1.json").read_bytes()
    again = run_flywheel(tiny_config(), root, log=lambda m: None)
    as_json = lambda rs: json.loads(json.dumps([r.to_dict() for r in rs]))
    assert as_json(again) == as_json(recs)
    assert (root / "manifests" / "iteration_1.json").read_bytes() == before
    with pytest.raises(ConfigError, match="different"):
        run_flywheel(tiny_config(seed=3), root, log=lambda m: None)


def test_collection_without_successes_is_a_stage_error(tmp_path):
    with pytest.raises(StageError, match="rollout"):
        run_flywheel(tiny_config(iterations=2, targets=[4, 6]), tmp_path, log=lambda m: None)
