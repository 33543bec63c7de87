import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dataflywheel.datasets import (
    CHUNK,
    Dataset,
    DatasetFormatError,
    DiversityLedger,
    Trajectory,
    Transition,
    chunks_from_actions,
    diversity_stats,
    downsample,
    lineage_roots,
    load_dataset,
    merge,
    save_dataset,
)
from dataflywheel.envs.catalog import TaskKind, make_config
from dataflywheel.envs.geometry import ObjectSpec
from dataflywheel.expert import ScriptedExpert
from dataflywheel.rollout import replay, run_episode
from dataflywheel.seeding import derive_seed

DISK = ObjectSpec("disk", "disk", (0.03,), 1.0, "disk")


def fake_traj(i, obj="o0", env="env00", x=0.5, th=0.0, source="rollout", lineage=None, n=3):
    spec = ObjectSpec(obj, "disk", (0.03,), 1.0, "disk")
    cfg = make_config(TaskKind.GRASP, spec, env, x, th)
    rng = np.random.default_rng(i)
    acts = rng.uniform(-1, 1, size=(n, 4))
    trans = [Transition(rng.normal(size=16), c, float(rng.normal()), rng.normal(size=4), None)
             for c in chunks_from_actions(acts)]
    return Trajectory(f"t{i}", cfg, i, trans, True, source, list(lineage or []), 1)


@pytest.fixture(scope="module")
def expert_traj():
    c = make_config(TaskKind.GRASP, DISK, "env03", 0.47, 0.1)
    return run_episode(c, 11, ScriptedExpert()).to_trajectory("seed", c, 11, "scripted-seed")


def test_roundtrip(tmp_path, expert_traj):
    ds = Dataset("d", TaskKind.GRASP, [expert_traj, fake_traj(1), fake_traj(2, source="augmented", lineage=["t1"])])
    save_dataset(ds, tmp_path / "d.jsonl")
    back = load_dataset(tmp_path / "d.jsonl")
    assert back.dataset_id == "d" and back.task == TaskKind.GRASP
    assert [t.to_dict() for t in back.trajectories] == [t.to_dict() for t in ds.trajectories]
    assert back.trajectories[0].transitions == ds.trajectories[0].transitions
    assert back.ledger == ds.ledger


def test_full_precision(tmp_path):
    t = fake_traj(5)
    t.transitions[0].obs[:] = [np.nextafter(1.0, 2.0)] * 16
    save_dataset(Dataset("p", TaskKind.GRASP, [t]), tmp_path / "p.jsonl")
    back = load_dataset(tmp_path / "p.jsonl")
    assert np.array_equal(back.trajectories[0].transitions[0].obs, t.transitions[0].obs)


def test_empty_roundtrip(tmp_path):
    save_dataset(Dataset("e", TaskKind.LIFT, []), tmp_path / "e.jsonl")
    back = load_dataset(tmp_path / "e.jsonl")
    assert back.trajectories == [] and back.task == TaskKind.LIFT
    assert back.ledger == DiversityLedger(0, 0, 0, 0, 0)


def test_corrupt_record_3_is_named(tmp_path):
    ds = Dataset("c", TaskKind.GRASP, [fake_traj(i) for i in range(5)])
    path = tmp_path / "c.jsonl"
    save_dataset(ds, path)
    raw = bytearray(path.read_bytes())
    lines = raw.split(b"\n")
    rec3 = bytearray(lines[3])
    k = rec3.index(b'"reward":') + 10
    rec3[k] = ord("7") if rec3[k] != ord("7") else ord("8")
    lines[3] = bytes(rec3)
    path.write_bytes(b"\n".join(lines))
    with pytest.raises(DatasetFormatError, match=r"record 3 \(line 4\)"):
        load_dataset(path)


def test_version_mismatch_rejected(tmp_path):
    path = tmp_path / "v.jsonl"
    save_dataset(Dataset("v", TaskKind.GRASP, [fake_traj(0)]), path)
    text = path.read_text().replace('"version": 1', '"version": 9', 1)
    path.write_text(text)
    with pytest.raises(DatasetFormatError, match="line 1"):
        load_dataset(path)


def test_truncated_file_rejected(tmp_path):
    path = tmp_path / "t.jsonl"
    save_dataset(Dataset("t", TaskKind.GRASP, [fake_traj(0), fake_traj(1)]), path)
    path.write_text("\n".join(path.read_text().splitlines()[:2]) + "\n")
    with pytest.raises(DatasetFormatError, match="count"):
        load_dataset(path)


def test_ledger_examples():
    assert DiversityLedger.from_counts(22, 12, 15).configs == 3960
    assert DiversityLedger.from_counts(6, 5, 2).configs == 60
    assert diversity_stats(Dataset("e", TaskKind.GRASP)) == DiversityLedger(0, 0, 0, 0, 0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 3), st.integers(0, 5)), max_size=25))
def test_ledger_recomputes_from_configs(keys):
    trajs = [fake_traj(i, obj=f"o{o}", env=f"env{e:02d}", x=0.3 + 0.05 * p, n=1) for i, (o, e, p) in enumerate(keys)]
    led = Dataset("d", TaskKind.GRASP, trajs).ledger
    assert led.O == len({k[0] for k in keys})
    assert led.E == len({k[1] for k in keys})
    assert led.P == len({k[2] for k in keys})
    assert led.configs == led.O * led.E * led.P
    assert led.traj == len(keys)


def test_pose_bucketing_grid():
    a = fake_traj(0, x=0.501, th=0.01).config
    b = fake_traj(1, x=0.503, th=0.02).config
    c = fake_traj(2, x=0.52, th=0.0).config
    assert a.pose_key == b.pose_key != c.pose_key


def test_downsample_basics():
    ds = Dataset("d", TaskKind.GRASP, [fake_traj(i, n=1) for i in range(10)])
    full = downsample(ds, 10, 3)
    assert [t.traj_id for t in full.trajectories] == [t.traj_id for t in ds.trajectories]
    a, b = downsample(ds, 4, 9), downsample(ds, 4, 9)
    assert [t.traj_id for t in a.trajectories] == [t.traj_id for t in b.trajectories]
    with pytest.raises(ValueError):
        downsample(ds, 11, 0)


def test_downsample_is_uniform():
    n, total, seeds = 3, 10, 10_000
    ds = Dataset("d", TaskKind.GRASP, [fake_traj(i, n=1) for i in range(total)])
    counts = np.zeros(total)
    for s in range(seeds):
        for t in downsample(ds, n, derive_seed(77, s)).trajectories:
            counts[int(t.traj_id[1:])] += 1
    freq = counts / seeds
    assert np.all(np.abs(freq - n / total) <= 0.02), freq


def test_merge_keeps_order():
    a = Dataset("a", TaskKind.GRASP, [fake_traj(0), fake_traj(1)])
    b = Dataset("b", TaskKind.GRASP, [fake_traj(2)])
    assert [t.traj_id for t in merge("m", TaskKind.GRASP, [a, b]).trajectories] == ["t0", "t1", "t2"]


def test_lineage_roots_and_cycles():
    seed = fake_traj(0, source="scripted-seed")
    r = fake_traj(1, source="rollout")
    a1 = fake_traj(2, source="augmented", lineage=["t0"])
    a2 = fake_traj(3, source="augmented", lineage=["t2", "t1"])
    known = {t.traj_id: t for t in (seed, r, a1, a2)}
    roots = lineage_roots(Dataset("d", TaskKind.GRASP, [a1, a2]), known)
    assert roots == {"t2": {"scripted-seed"}, "t3": {"scripted-seed", "rollout"}}
    c1 = fake_traj(4, source="augmented", lineage=["t5"])
    c2 = fake_traj(5, source="augmented", lineage=["t4"])
    with pytest.raises(ValueError, match="cycle"):
        lineage_roots(Dataset("d", TaskKind.GRASP, [c1]), {"t4": c1, "t5": c2})


def test_success_matches_replay(expert_traj):
    ep = replay(expert_traj.config, expert_traj.seed, expert_traj.actions)
    assert ep.success == expert_traj.success


def test_chunks_are_h_except_at_the_end(expert_traj):
    lens = [len(t.chunk) for t in expert_traj.transitions]
    assert all(k == CHUNK for k in lens[:-CHUNK + 1])
    assert lens[-1] == 1 and expert_traj.partial_final_chunk
    for t, tr in enumerate(expert_traj.transitions[:-1]):
        assert np.array_equal(tr.chunk[1:], expert_traj.transitions[t + 1].chunk[: len(tr.chunk) - 1])


def test_unknown_source_rejected():
    with pytest.raises(ValueError):
        fake_traj(0, source="teleop")
