"""End-to-end acceptance suite, one test per criterion.

Each test records a PASS/FAIL line (printed in the terminal summary by
conftest.py) before asserting. Criteria 8, 9, 10 and 12 share one scale-4
Grasp flywheel run built once per session.
"""
import math
import shutil
import time

import numpy as np
import pytest

from dataflywheel.augment import AugmentationSpec, augment_dataset
from dataflywheel.curriculum import default_pools
from dataflywheel.datasets import Dataset, DiversityLedger
from dataflywheel.envs import predicates, rewards
from dataflywheel.envs.catalog import TaskKind
from dataflywheel.evaluation import joint_diff, rnr
from dataflywheel.flywheel import FlywheelConfig, canonical_config, run_flywheel, scripted_seed
from dataflywheel.policy.base import BasePolicy
from dataflywheel.policy.combined import CombinedPolicy, MixingSchedule, PolicyController
from dataflywheel.rollout import replay, run_episode

from helpers import gradcheck, gradient_cases
from test_policy import random_obs, randomized_residual

RESULTS: list[str] = []


def verdict(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def pins(cases) -> tuple[bool, float]:
    worst = max(abs(got - want) for got, want in cases)
    return worst <= 1e-9, worst


def test_c01_reward_formula_pins():
    t0 = time.perf_counter()
    cases = [
        (rewards.grasp_reward([0.02, 0.02, 0.01], 1.0, 1.0), 21.0),
        (rewards.grasp_reward([0.02, 0.02, 0.01], 1.0, 1.21), 0.0),
        (rewards.grasp_reward([0.02, 0.02, 0.01], 1.0, 0.5), 0.0),
        (rewards.grasp_reward([0.25, 0.0, 0.0], 1.0, 0.0) + 1.0, math.exp(-1.0)),
        (rewards.pour_tilt(0.0), 0.0),
        (rewards.pour_ball_bowl(0.02), 10.0),
        (rewards.pour_ball_bowl(0.005), 10.0),
        (rewards.pour_grasp_dist(0.0, 0.0), 0.5),
        (rewards.lift_reward(0.08, 0.08, 0.15, 0.0), 16.0),
        (rewards.tilt_penalty(30.0), 0.0),
        (rewards.tilt_penalty(60.0), 5.0),
    ]
    ok, worst = pins(cases)
    dt = time.perf_counter() - t0
    verdict(1, ok and dt < 1.0, f"{len(cases)} reward pins, max |err| {worst:.1e}, {dt * 1e3:.1f} ms")


def test_c02_success_and_timeout_pins():
    t0 = time.perf_counter()
    checks = [
        predicates.grasp_success(0.21),
        not predicates.grasp_success(0.20),
        predicates.pour_ball_in_bowl(0.019),
        not predicates.handover_success(9),
        predicates.handover_success(10),
        not predicates.timeout_at(TaskKind.GRASP, 600),
        predicates.timeout_at(TaskKind.GRASP, 601),
        not predicates.timeout_at(TaskKind.HANDOVER, 700),
        predicates.timeout_at(TaskKind.HANDOVER, 801),
        not predicates.timeout_at(TaskKind.GRASP, 601, succeeded=True),
    ]
    dt = time.perf_counter() - t0
    verdict(2, all(checks) and dt < 1.0, f"{sum(checks)}/{len(checks)} predicate pins, {dt * 1e3:.1f} ms")


def test_c03_gradient_correctness():
    t0 = time.perf_counter()
    worst, names = 0.0, set()
    for seed in range(32):
        for name, fn, params in gradient_cases(seed):
            err, checked, _ = gradcheck(fn, params, np.random.default_rng(seed))
            if checked == 0:
                err = math.inf
            worst = max(worst, err)
            names.add(name)
    dt = time.perf_counter() - t0
    verdict(3, worst <= 1e-4 and dt < 120, f"{sorted(names)} x 32 seeds, max rel err {worst:.2e}, {dt:.1f} s")


def test_c04_mixing_schedule_law():
    t0 = time.perf_counter()
    sched = MixingSchedule()
    ends = sched.epsilon(1500) == 0.0 and sched.epsilon(10000) == 1.0
    linear = all(abs(sched.epsilon(s) - (s - 1500) / 8500) <= 1e-15 for s in range(1500, 10001, 17))
    base = BasePolicy.create(TaskKind.GRASP, np.random.default_rng(0), hidden=(8,))
    comb = CombinedPolicy(base, randomized_residual(hidden=(4,)), schedule=sched)
    worst = 0.0
    n = 100_000
    for step in (1500, 3000, 5750, 8000, 10000):
        rng = np.random.default_rng(step)
        obs = random_obs(TaskKind.GRASP, rng)
        used = sum(comb.act_training(obs, np.zeros(4), step, rng)[1] for _ in range(n))
        worst = max(worst, abs(used / n - sched.epsilon(step)))
    dt = time.perf_counter() - t0
    verdict(4, ends and linear and worst <= 0.02 and dt < 30,
            f"endpoints/linearity ok={ends and linear}, max |freq - eps| {worst:.4f}, {dt:.1f} s")


def test_c05_zero_scale_equivalence():
    t0 = time.perf_counter()
    cfg = canonical_config(TaskKind.GRASP)
    identical = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        base = BasePolicy.create(TaskKind.GRASP, rng, "diffusion-mlp" if seed % 2 else "bc-mlp", (16, 16))
        res = randomized_residual(seed=seed, gain=2.0)
        a = run_episode(cfg, seed, PolicyController(base, None, 0.1, seed))
        b = run_episode(cfg, seed, PolicyController(base, res, 0.0, seed))
        identical += a.actions.shape == b.actions.shape and np.array_equal(a.actions, b.actions)
    dt = time.perf_counter() - t0
    verdict(5, identical == 20 and dt < 60, f"{identical}/20 paired rollouts action-identical, {dt:.1f} s")


def test_c06_augmentation_validity():
    t0 = time.perf_counter()
    seed = scripted_seed(TaskKind.GRASP)
    envs, poses = default_pools(TaskKind.GRASP, 3)[2]
    spec = AugmentationSpec(TaskKind.GRASP, [seed.config.object], envs, poses, 60)
    out, man = augment_dataset(Dataset("seed", TaskKind.GRASP, [seed]), spec, 0)
    replayed = sum(replay(t.config, t.seed, t.actions).success for t in out.trajectories)
    dt = time.perf_counter() - t0
    ok = man.acceptance_rate >= 0.85 and len(out) > 0 and replayed == len(out) and dt < 300
    verdict(6, ok, f"accepted {man.accepted}/{man.attempted} ({man.acceptance_rate:.1%}), "
                   f"replay {replayed}/{len(out)}, {dt:.1f} s")


def test_c07_diversity_accounting():
    got = [DiversityLedger.from_counts(*c).configs for c in ((22, 12, 15), (6, 5, 2), (12, 12, 10))]
    verdict(7, got == [3960, 60, 1440], f"configs {got}")


# ---- shared flywheel run -----------------------------------------------------


def scale4_config(iterations: int = 3) -> FlywheelConfig:
    return FlywheelConfig(task=TaskKind.GRASP, iterations=iterations, targets=[20, 100, 500], scale=4, seed=0)


@pytest.fixture(scope="session")
def flywheel_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("flywheel")
    t0 = time.perf_counter()
    recs = run_flywheel(scale4_config(), root, log=print)
    return root, recs, time.perf_counter() - t0


def test_c08_flywheel_effect(flywheel_run):
    _, recs, dt = flywheel_run
    sr = [100 * r.sr_t_oep for r in recs]
    monotone = all(b >= a - 5.0 for a, b in zip(sr, sr[1:]))
    gain = sr[2] - sr[0]
    verdict(8, len(sr) == 3 and monotone and gain >= 30.0 and dt <= 45 * 60,
            f"SR on T_OEP {' -> '.join(f'{s:.1f}%' for s in sr)} (gain {gain:+.1f}), run {dt / 60:.1f} min")


def test_c09_residual_boost(flywheel_run):
    _, recs, _ = flywheel_run
    boost = next((r.boost for r in recs if r.boost and r.boost["test_set"] == "T_O(2)"), None)
    delta = 100 * boost["delta"] if boost else -math.inf
    detail = (f"T_O(2): base {100 * boost['sr_base']:.1f}% -> combined {100 * boost['sr_combined']:.1f}% "
              f"({delta:+.1f})" if boost else "no stage-2 boost recorded")
    verdict(9, delta >= 10.0, detail)


def test_c10_diminishing_returns(flywheel_run, tmp_path):
    root, recs, _ = flywheel_run
    ext = tmp_path / "extended"
    shutil.copytree(root, ext)
    t0 = time.perf_counter()
    more = run_flywheel(scale4_config(5), ext, log=print)
    dt = time.perf_counter() - t0
    sr = [100 * r.sr_t_oep for r in more]
    # extending adds iteration 3's collection step but must not retrain anything
    fixed = lambda rs: [(r.ledger, r.sr_t_oep, r.base_digest, r.residual_digest) for r in rs]
    same_prefix = fixed(more[:3]) == fixed(recs)
    early, late = sr[2] - sr[1], sr[4] - sr[3]
    verdict(10, len(sr) == 5 and same_prefix and late < early,
            f"SR {' -> '.join(f'{s:.1f}%' for s in sr)}; gain 2->3 {early:+.1f}, 4->5 {late:+.1f}, "
            f"extension {dt / 60:.1f} min")


def test_c11_metric_pins():
    a = np.random.default_rng(0).normal(size=(40, 2))
    cases = [
        (rnr(np.ones((5, 4)), np.zeros((5, 4))), 0.0),
        (rnr(np.array([[1.0, 0.0]]), np.array([[0.0, 0.1]])), 0.1 / (1.0 + 1e-6)),
        (joint_diff(a, a), 0.0),
        (joint_diff(a, a + np.array([0.0, 0.2])), 0.1),
    ]
    ok, worst = pins(cases)
    verdict(11, ok, f"{len(cases)} metric pins, max |err| {worst:.1e}")


def test_c12_determinism(flywheel_run, tmp_path):
    _, recs, _ = flywheel_run
    again = run_flywheel(scale4_config(), tmp_path / "rerun", log=print)
    keys = lambda rs: [(r.ledger, r.next_ledger, r.sr_t_oep, r.t_oep, r.boost, r.base_digest, r.residual_digest)
                       for r in rs]
    same = keys(again) == keys(recs)
    verdict(12, same, f"{len(recs)} iterations: ledgers, SRs and checkpoint digests "
                      f"{'bit-identical' if same else 'differ'}")
