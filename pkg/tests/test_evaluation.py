import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dataflywheel.datasets import DiversityLedger
from dataflywheel.envs.catalog import TaskKind, make_config
from dataflywheel.envs.geometry import ObjectSpec
from dataflywheel.expert import ScriptedExpert
from dataflywheel.evaluation import (
    REPORT_COLUMNS,
    TestSet,
    assert_disjoint,
    build_t_o,
    build_t_oep,
    eval_policy,
    joint_coordinates,
    joint_diff,
    parse_table,
    report_table,
    residual_boost,
    rnr,
)
from dataflywheel.flywheel import canonical_config
from dataflywheel.policy.base import BasePolicy
from dataflywheel.policy.residual import ResidualPolicy
from dataflywheel.rollout import run_episode
from dataflywheel.seeding import derive_seed

DISK = ObjectSpec("d", "disk", (0.03,), 1.0, "disk")


class Idle:
    def reset(self, state):
        pass

    def act(self, state):
        return np.zeros(4), None, None


class SeedGated:
    """Scripted expert for whitelisted episode seeds, idle otherwise."""

    def __init__(self, good):
        self.good, self.seed, self.expert = set(good), None, ScriptedExpert()

    def set_seed(self, seed):
        self.seed = seed

    def reset(self, state):
        self.expert.reset(state)

    def act(self, state):
        return self.expert.act(state) if self.seed in self.good else (np.zeros(4), None, None)


def test_always_timing_out_scores_zero():
    t = TestSet("T_O", TaskKind.GRASP, [canonical_config(TaskKind.GRASP)])
    rep = eval_policy(None, None, t, runs=2, controller=Idle())
    assert rep.mean == 0.0 and rep.attempts == 2 and rep.successes == 0


def test_expert_on_seed_config_scores_full():
    t = TestSet("T_O", TaskKind.GRASP, [canonical_config(TaskKind.GRASP)])
    rep = eval_policy(None, None, t, runs=3, controller=ScriptedExpert())
    assert rep.mean == 1.0 and rep.std == 0.0


def test_three_of_five_runs_is_sixty_percent():
    t = TestSet("T_O", TaskKind.GRASP, [canonical_config(TaskKind.GRASP)])
    good = [derive_seed(7, "eval", r, 0) for r in range(3)]
    rep = eval_policy(None, None, t, runs=5, seed=7, controller=SeedGated(good))
    assert rep.per_run_sr == [1.0, 1.0, 1.0, 0.0, 0.0]
    assert rep.mean == 0.6 and rep.std == pytest.approx(math.sqrt(0.24), abs=1e-15)
    assert rep.successes == 3 and rep.attempts == 5


def test_outcome_count_matches_runs_times_configs():
    cfgs = [make_config(TaskKind.GRASP, DISK, e, 0.5, 0.0) for e in ("env00", "env01", "env02")]
    rep = eval_policy(None, None, TestSet("T_O", TaskKind.GRASP, cfgs), runs=2, controller=Idle())
    assert len(rep.outcomes) == 2 and all(len(o) == 3 for o in rep.outcomes) and rep.attempts == 6
    with pytest.raises(ValueError):
        eval_policy(None, None, TestSet("T_O", TaskKind.GRASP, []), controller=Idle())


def test_zero_residual_gives_zero_boost():
    rng = np.random.default_rng(0)
    base = BasePolicy.create(TaskKind.GRASP, rng, hidden=(8,))
    res = ResidualPolicy.create(TaskKind.GRASP, rng, (8,))
    t = TestSet("T_O", TaskKind.GRASP, [canonical_config(TaskKind.GRASP)])
    sb, sc, delta = residual_boost(base, res, t, runs=1)
    assert delta == 0.0 and sb == sc


def test_t_oep_avoids_training_keys():
    objs = [DISK, ObjectSpec("b", "box", (0.03, 0.02), 1.0, "box")]
    envs = ["env00", "env01", "env02"]
    exclude = {(50, 0), ("d", "env00", (49, 0))}
    t = build_t_oep(TaskKind.GRASP, objs, envs, (0.45, 0.55), 0.1, 3, exclude, n=20)
    assert len(t.configs) == 20 and len({c.key for c in t.configs}) == 20
    assert all(c.pose_key != (50, 0) for c in t.configs)
    assert_disjoint(t, {("zz", "env00", (0, 0))})
    with pytest.raises(AssertionError):
        assert_disjoint(t, {t.configs[3].key})


def test_t_o_fixes_environment_and_pose(tmp_path):
    objs = [DISK, ObjectSpec("d2", "disk", (0.028,), 1.0, "disk")]
    t = build_t_o(TaskKind.GRASP, objs, "env03", (0.5, 0.05), 2)
    assert {c.environment_id for c in t.configs} == {"env03"} and len({c.pose_key for c in t.configs}) == 1
    t.save(tmp_path / "t.json")
    back = TestSet.load(tmp_path / "t.json")
    assert back.to_dict() == t.to_dict() and back.iteration == 2


def test_joint_diff_examples():
    a = np.random.default_rng(0).normal(size=(30, 4))
    assert joint_diff(a, a) == 0.0
    b = a.copy()
    b[:, 2] += 0.1
    assert joint_diff(a, b) == pytest.approx(0.1 / 4, abs=1e-12)
    assert joint_diff(a, b) == joint_diff(b, a)
    with pytest.raises(ValueError):
        joint_diff(a, np.zeros((30, 2)))


@given(arrays(np.float64, (12, 2), elements=st.floats(-3, 3)), arrays(np.float64, (7, 2), elements=st.floats(-3, 3)))
def test_joint_diff_is_a_pseudometric(a, b):
    assert joint_diff(a, b) >= 0.0
    assert joint_diff(a, b) == joint_diff(b, a)


def test_joint_coordinates_of_an_expert_trajectory():
    c = canonical_config(TaskKind.GRASP)
    traj = run_episode(c, 0, ScriptedExpert()).to_trajectory("x", c, 0, "scripted-seed")
    jc = joint_coordinates(traj)
    assert jc.shape == (len(traj.transitions), 2)
    assert np.all((jc[:, 1] >= 0) & (jc[:, 1] <= math.pi / 2 + 1e-12))
    assert joint_diff(traj, traj) == 0.0


def test_rnr_examples():
    assert rnr(np.ones((5, 4)), np.zeros((5, 4))) == 0.0
    a = np.array([[1.0, 0.0]])
    d = np.array([[0.0, 0.1]])
    assert rnr(a, d) == pytest.approx(0.1 / (1.0 + 1e-6), abs=1e-15)
    assert rnr(np.zeros((1, 2)), np.array([[1.0, 0.0]])) == pytest.approx(1e6, rel=1e-12)
    with pytest.raises(ValueError):
        rnr(np.ones((3, 2)), np.ones((2, 2)))


def _records():
    return [
        {"task": "grasp", "iteration": 1, "ledger": DiversityLedger.from_counts(1, 1, 6).to_dict(),
         "sr_boost": (0.71, 0.84), "sr_t_oep": 0.15},
        {"task": "grasp", "iteration": 3, "ledger": DiversityLedger.from_counts(22, 12, 15).to_dict(),
         "sr_boost": "", "sr_t_oep": 0.9},
    ]


def test_report_table_roundtrip():
    text, js = report_table(_records())
    rows = parse_table(text)
    assert rows[1]["Configs"] == 3960 and "3960" in text.splitlines()[2]
    assert rows[0]["SR_boost"] == (0.71, 0.84) and rows[1]["SR_boost"] == ""
    again, _ = report_table([{**r, "ledger": {"O": x["O"], "E": x["E"], "P": x["P"], "configs": x["Configs"],
                                              "traj": x["Traj"]},
                              "task": x["Task"], "iteration": x["Iter"], "sr_boost": x["SR_boost"],
                              "sr_t_oep": x["SR_T_OEP"]} for r, x in zip(_records(), rows)])
    assert again == text
    assert '"Configs": 3960' in js


def test_empty_report_is_header_only():
    text, js = report_table([])
    assert text.split() == REPORT_COLUMNS and parse_table(text) == [] and js == "[]"
