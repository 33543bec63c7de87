"""Command-line entry point: ``dataflywheel <subcommand> ...``.

Exit codes: 0 success, 1 usage, 2 config, 3 stage failure, 4 assertion failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from collections import Counter
from pathlib import Path

from .augment import AugmentationSpec, augment_dataset
from .config import ConfigError, default_run_dir, default_workers, read_config, write_config
from .core import CheckpointError
from .datasets import Dataset, DatasetFormatError, lineage_roots, load_dataset, save_dataset
from .envs.catalog import ScenarioConfig, TaskKind
from .evaluation import TestSet, eval_policy, format_table, report_rows
from .expert import ScriptedExpert
from .flywheel import (
    FlywheelConfig,
    RunDir,
    StageError,
    canonical_config,
    rollout_collect,
    run_flywheel,
    run_warmup,
    scripted_seed,
)
from .il import ILConfig, train_base
from .policy import BasePolicy, ResidualPolicy
from .sac import SACConfig, train_residual

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_STAGE, EXIT_ASSERT = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _emit(args, text: str, payload: dict) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True) if args.json else text)


def _need_file(p: str) -> Path:
    path = Path(p)
    if not path.exists():
        raise UsageError(f"no such file: {p}")
    return path


def _load_flywheel_config(args) -> FlywheelConfig:
    cfg = FlywheelConfig.load(_need_file(args.config))
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "scale", None) is not None:
        cfg.scale = args.scale
    if getattr(args, "iterations", None) is not None:
        cfg = FlywheelConfig(**{**cfg.__dict__, "iterations": args.iterations, "stages": [], "pools": []})
    cfg.workers = args.workers
    cfg.validate()
    return cfg


def _il_config(path: str | None, seed: int | None) -> ILConfig:
    d = {} if path is None else read_config(_need_file(path), "il")
    d = {k: v for k, v in d.items() if k not in ("kind", "version")}
    unknown = set(d) - set(ILConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"il config: unknown keys {sorted(unknown)}")
    if "hidden" in d:
        d["hidden"] = tuple(d["hidden"])
    if seed is not None:
        d["seed"] = seed
    return ILConfig(**d)


def _sac_config(path: str | None, seed: int | None) -> SACConfig:
    d = {} if path is None else read_config(_need_file(path), "sac")
    d = {k: v for k, v in d.items() if k not in ("kind", "version")}
    unknown = set(d) - set(SACConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"sac config: unknown keys {sorted(unknown)}")
    for k in ("actor_hidden", "critic_hidden"):
        if k in d:
            d[k] = tuple(d[k])
    if seed is not None:
        d["seed"] = seed
    return SACConfig.desk(**d)


def _load_scenarios(path: str) -> list[ScenarioConfig]:
    doc = read_config(_need_file(path), "scenarios")
    extra = set(doc) - {"kind", "version", "scenarios"}
    if extra:
        raise ConfigError(f"{path}: unknown keys {sorted(extra)}")
    try:
        return [ScenarioConfig.from_dict(c) for c in doc["scenarios"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: bad scenario ({exc})") from None


def cmd_seed(args) -> int:
    task = TaskKind(args.task)
    traj = scripted_seed(task, canonical_config(task), args.seed or 0)
    save_dataset(Dataset("seed", task, [traj]), args.out)
    _emit(args, f"seed trajectory: {len(traj.transitions)} steps, success {traj.success} -> {args.out}",
          {"steps": len(traj.transitions), "success": traj.success, "out": args.out})
    return EXIT_OK


def cmd_warmup(args) -> int:
    cfg = _load_flywheel_config(args)
    run = RunDir(args.run_dir or default_run_dir()).make()
    cfg.save(run.path("configs", "flywheel.json"))
    seed_traj = scripted_seed(cfg.task, canonical_config(cfg.task, cfg.stages))
    c1 = cfg.caug(1)
    c1.save(run.path("configs", "caug_1.json"))
    d1, man = run_warmup(seed_traj, c1, cfg.target(1), cfg.seed, cfg.workers, cfg.try_time, cfg.threshold)
    out = run.path("datasets", "D_1.jsonl")
    save_dataset(d1, out)
    run.write_json("manifests", "warmup.json", man.to_dict())
    _emit(args, f"D_1: {len(d1)} trajectories, ledger {d1.ledger.to_dict()}, "
                f"acceptance {man.acceptance_rate:.1%} -> {out}",
          {"trajectories": len(d1), "ledger": d1.ledger.to_dict(), "acceptance_rate": man.acceptance_rate,
           "out": str(out)})
    return EXIT_OK


def cmd_flywheel(args) -> int:
    if args.resume:
        run_dir = Path(args.resume)
        cfg_path = run_dir / "configs" / "flywheel.json"
        if args.config is None:
            args.config = str(cfg_path)
    else:
        run_dir = Path(args.run_dir) if args.run_dir else default_run_dir()
        if args.config is None:
            raise UsageError("flywheel: --config is required unless --resume is given")
    cfg = _load_flywheel_config(args)
    if args.resume:
        done = RunDir(run_dir).records()
        if len(done) >= cfg.iterations:
            _emit(args, f"run {run_dir} already complete ({len(done)} iterations); nothing to do",
                  {"run": str(run_dir), "iterations": len(done), "resumed": True, "noop": True})
            return EXIT_OK
    log = (lambda m: print(m, file=sys.stderr)) if args.json else print
    records = run_flywheel(cfg, run_dir, log=log, resume=bool(args.resume))
    rows = report_rows([r.report_row(cfg.task) for r in records])
    _emit(args, format_table(rows), {"run": str(run_dir), "rows": rows})
    return EXIT_OK


def cmd_train_base(args) -> int:
    ds = load_dataset(_need_file(args.dataset))
    cfg = _il_config(args.config, args.seed)
    policy, log = train_base(ds, cfg)
    policy.save(args.out)
    _emit(args, f"base policy ({cfg.variant}) best val {log.best_val:.6g} at step {log.best_step} -> {args.out}",
          {"variant": cfg.variant, "best_val": log.best_val, "best_step": log.best_step, "out": args.out})
    return EXIT_OK


def cmd_train_residual(args) -> int:
    ds = load_dataset(_need_file(args.dataset))
    base = BasePolicy.load(_need_file(args.base))
    cfg = _sac_config(args.config, args.seed)
    scen = [t.config for t in ds.trajectories]
    if not scen:
        raise ConfigError("train-residual: dataset has no scenarios")
    res, log = train_residual(scen, base, cfg)
    res.save(args.out)
    _emit(args, f"residual trained: {log.updates} updates, best eval return {log.best_return:.3f} "
                f"at step {log.best_step} -> {args.out}",
          {"updates": log.updates, "best_return": log.best_return, "best_step": log.best_step, "out": args.out})
    return EXIT_OK


def cmd_rollout(args) -> int:
    base = BasePolicy.load(_need_file(args.checkpoint))
    res = ResidualPolicy.load(_need_file(args.residual)) if args.residual else None
    scen = _load_scenarios(args.scenarios)
    d_o, man = rollout_collect(base, res, scen, args.seed or 0, workers=args.workers)
    save_dataset(d_o, args.out)
    _emit(args, f"{man.accepted}/{man.attempted} scenarios accepted, {len(d_o)} trajectories -> {args.out}",
          {"manifest": man.to_dict(), "trajectories": len(d_o), "out": args.out})
    return EXIT_OK


def cmd_augment(args) -> int:
    ds = load_dataset(_need_file(args.dataset))
    try:
        spec = AugmentationSpec.load(_need_file(args.caug))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{args.caug}: {exc}") from None
    aug, man = augment_dataset(ds, spec, args.seed or 0, workers=args.workers)
    save_dataset(aug, args.out)
    _emit(args, f"{man.accepted}/{man.attempted} scenarios accepted ({man.acceptance_rate:.1%}), "
                f"{len(aug)} trajectories -> {args.out}",
          {"manifest": man.to_dict(), "trajectories": len(aug), "out": args.out})
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        test = TestSet.load(_need_file(args.testset))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{args.testset}: {exc}") from None
    if args.checkpoint == "expert":
        rep = eval_policy(None, None, test, args.runs, args.seed or 0, controller=ScriptedExpert())
    else:
        base = BasePolicy.load(_need_file(args.checkpoint))
        res = ResidualPolicy.load(_need_file(args.residual)) if args.residual else None
        rep = eval_policy(base, res, test, args.runs, args.seed or 0, workers=args.workers)
    ok = rep.mean >= args.min_sr
    text = f"SR {100 * rep.mean:.1f}% (std {100 * rep.std:.1f}, {rep.successes}/{rep.attempts} attempts)"
    if args.assert_:
        text += f"\nassert SR >= {100 * args.min_sr:.1f}%: {'PASS' if ok else 'FAIL'}"
    _emit(args, text, {**rep.to_dict(), "min_sr": args.min_sr, "assert_pass": ok})
    return EXIT_ASSERT if args.assert_ and not ok else EXIT_OK


def cmd_report(args) -> int:
    run = RunDir(args.run)
    if not run.root.is_dir():
        raise UsageError(f"no such run directory: {args.run}")
    cfg = FlywheelConfig.load(run.path("configs", "flywheel.json"))
    rows = report_rows([r.report_row(cfg.task) for r in run.records()])
    _emit(args, format_table(rows), {"run": args.run, "rows": rows})
    return EXIT_OK


def cmd_inspect(args) -> int:
    ds = load_dataset(_need_file(args.dataset))
    led = ds.ledger.to_dict()
    sources = Counter(t.source for t in ds.trajectories)
    born = Counter(t.iteration_born for t in ds.trajectories)
    parents = Counter(p for t in ds.trajectories for p in t.lineage)
    roots = lineage_roots(ds, ds.by_id())
    root_counts = Counter(r for rs in roots.values() for r in rs)
    lines = [f"dataset {ds.dataset_id} ({ds.task.value}): {len(ds)} trajectories",
             f"ledger O={led['O']} E={led['E']} P={led['P']} configs={led['configs']}",
             "sources " + ", ".join(f"{k}={v}" for k, v in sorted(sources.items())),
             "iteration_born " + ", ".join(f"{k}={v}" for k, v in sorted(born.items())),
             f"distinct lineage parents {len(parents)}",
             "lineage roots " + ", ".join(f"{k}={v}" for k, v in sorted(root_counts.items()))]
    _emit(args, "\n".join(lines), {"dataset_id": ds.dataset_id, "task": ds.task.value, "count": len(ds),
                                   "ledger": led, "sources": dict(sources),
                                   "iteration_born": {str(k): v for k, v in born.items()},
                                   "lineage_parents": len(parents), "lineage_roots": dict(root_counts)})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="run seed (all randomness derives from it)")
    common.add_argument("--workers", type=int, default=None, help="worker processes for rollouts/augmentation")
    common.add_argument("--json", action="store_true", help="machine-readable output")

    p = _Parser(prog="dataflywheel", description="Self-improving data flywheel for planar manipulation.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("seed", parents=[common], help="emit the scripted seed demonstration")
    s.add_argument("--task", required=True, choices=[t.value for t in TaskKind])
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_seed)

    s = sub.add_parser("warmup", parents=[common], help="augment the seed into D_1")
    s.add_argument("--config", required=True)
    s.add_argument("--run-dir", default=None)
    s.set_defaults(fn=cmd_warmup)

    s = sub.add_parser("flywheel", parents=[common], help="run warm-up and all iterations")
    s.add_argument("--config", default=None)
    s.add_argument("--scale", type=int, default=None, help="divide trajectory targets by K")
    s.add_argument("--iterations", type=int, default=None)
    s.add_argument("--run-dir", default=None)
    s.add_argument("--resume", default=None, metavar="DIR")
    s.set_defaults(fn=cmd_flywheel)

    s = sub.add_parser("train-base", parents=[common], help="imitation-train a base policy")
    s.add_argument("--dataset", required=True)
    s.add_argument("--config", default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_train_base)

    s = sub.add_parser("train-residual", parents=[common], help="SAC-train a residual on a frozen base")
    s.add_argument("--dataset", required=True, help="scenarios are taken from this dataset's configs")
    s.add_argument("--base", required=True)
    s.add_argument("--config", default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_train_residual)

    s = sub.add_parser("rollout", parents=[common], help="success-filtered rollouts of a frozen policy")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--residual", default=None)
    s.add_argument("--scenarios", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_rollout)

    s = sub.add_parser("augment", parents=[common], help="environment/pose augmentation of a dataset")
    s.add_argument("--dataset", required=True)
    s.add_argument("--caug", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_augment)

    s = sub.add_parser("eval", parents=[common], help="success rate on a test set")
    s.add_argument("--checkpoint", required=True, help="base checkpoint, or 'expert' for the scripted expert")
    s.add_argument("--residual", default=None)
    s.add_argument("--testset", required=True)
    s.add_argument("--runs", type=int, default=5)
    s.add_argument("--assert", dest="assert_", action="store_true", help="exit 4 when SR < --min-sr")
    s.add_argument("--min-sr", type=float, default=0.8)
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("report", parents=[common], help="per-iteration diversity/SR table")
    s.add_argument("--run", required=True)
    s.set_defaults(fn=cmd_report)

    s = sub.add_parser("inspect", parents=[common], help="ledger and lineage summary of a dataset")
    s.add_argument("--dataset", required=True)
    s.set_defaults(fn=cmd_inspect)
    return p


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.workers is None:
            args.workers = default_workers()
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, DatasetFormatError, CheckpointError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RuntimeError as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
