"""Command-line front end: one subcommand per pipeline stage plus recipes.

Exit codes: 0 on success, 2 for configuration problems (bad JSON, unknown
keys, missing inputs), 3 for numeric failures (divergence, singular
systems). Set BCG_DETERMINISTIC=1 to cap numeric kernels at one thread so
a rerun with the same seed reproduces metrics.csv bit for bit.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import replace
from typing import List, Optional

import numpy as np

from . import __version__
from .cl import train_cl
from .config import ExperimentConfig, load_config, save_resolved
from .distill import split_head_arrays, train_distill
from .encoder import Encoder, ProjectionHead
from .errors import ConfigError, DataError, NumericError, ShapeError
from .evaluation import SupervisedConfig, probe, supervised_baseline
from .manifest import (
    RunManifest,
    export_results,
    metrics_dict,
    package_version,
    write_manifest,
    write_metrics,
)
from .mae import train_mae
from .recipes import RECIPE_NAMES, held_out_retrieval, probe_rows, retrieval_rows, run_recipe
from .synth import DatasetStore, build_dataset
from .tensor import load_checkpoint


def _load_cfg(args, command: Optional[str] = None) -> ExperimentConfig:
    cfg = load_config(args.config, command=command) if args.config else ExperimentConfig()
    if getattr(args, "out", None):
        cfg = replace(cfg, out_dir=args.out)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _start_run(cfg: ExperimentConfig):
    os.makedirs(cfg.out_dir, exist_ok=True)
    save_resolved(cfg, cfg.out_dir)
    return cfg.out_dir, time.monotonic()


def _finish_run(run_dir, cfg, t0, rows, artifacts) -> None:
    write_metrics(run_dir, rows)
    manifest = RunManifest(
        version=package_version(),
        config_hash=cfg.config_hash(),
        wall_clock_s=round(time.monotonic() - t0, 3),
        artifacts=["config.json"] + list(artifacts) + ["metrics.csv"],
        metrics=metrics_dict(rows),
    )
    write_manifest(run_dir, manifest)
    print(f"run complete: {os.path.abspath(run_dir)}")


def _open_store(cfg: ExperimentConfig) -> DatasetStore:
    return DatasetStore(cfg.data_dir())


def _load_encoder(enc_cfg, ckpt: Optional[str], seed: int) -> Encoder:
    enc = Encoder(enc_cfg, np.random.default_rng(np.random.SeedSequence([seed])))
    if ckpt:
        enc.load_params(load_checkpoint(ckpt))
    return enc


def _cmd_synth_data(args) -> None:
    cfg = _load_cfg(args, "synth-data")
    run_dir, t0 = _start_run(cfg)
    store = build_dataset(
        cfg.data_dir(), cfg.data.n_participants,
        cfg.data.segments_per_participant, cfg.data.seed,
    )
    rows = [
        ("synth-data", "n_records", store.n_records),
        ("synth-data", "train_records", store.train_record_indices().size),
        ("synth-data", "test_records", store.test_record_indices().size),
    ]
    print(f"dataset: {store.n_records} records under {cfg.data_dir()}")
    _finish_run(run_dir, cfg, t0, rows, [os.path.relpath(cfg.data_dir(), run_dir)])


def _cmd_pretrain_mae(args) -> None:
    cfg = _load_cfg(args, "pretrain-mae")
    run_dir, t0 = _start_run(cfg)
    store = _open_store(cfg)
    enc_cfg = cfg.encoder if args.modality == "ppg" else cfg.student
    _, losses = train_mae(
        store, enc_cfg, cfg.mae, os.path.join(run_dir, "ckpt"),
        modality=args.modality, seed=cfg.seed,
    )
    rows = [
        ("pretrain-mae", "final_loss", losses[-1]),
        ("pretrain-mae", "steps", len(losses)),
    ]
    print(f"pretrain-mae[{args.modality}]: final loss {losses[-1]:.4f}")
    _finish_run(run_dir, cfg, t0, rows, ["ckpt/encoder.ckpt", "ckpt/mae_loss.csv"])


def _cmd_pretrain_cl(args) -> None:
    cfg = _load_cfg(args, "pretrain-cl")
    run_dir, t0 = _start_run(cfg)
    store = _open_store(cfg)
    enc_cfg = cfg.encoder if args.modality == "ppg" else cfg.student
    _, losses = train_cl(
        store, enc_cfg, cfg.cl, os.path.join(run_dir, "ckpt"),
        modality=args.modality, seed=cfg.seed,
    )
    rows = [
        ("pretrain-cl", "final_loss", losses[-1]),
        ("pretrain-cl", "steps", len(losses)),
    ]
    print(f"pretrain-cl[{args.modality}]: final loss {losses[-1]:.4f}")
    _finish_run(run_dir, cfg, t0, rows, ["ckpt/encoder.ckpt", "ckpt/cl_loss.csv"])


def _cmd_distill(args) -> None:
    cfg = _load_cfg(args, None if args.teacher else "distill")
    run_dir, t0 = _start_run(cfg)
    store = _open_store(cfg)
    teacher_ckpt = args.teacher or cfg.teacher_ckpt
    model, losses = train_distill(
        store, cfg.encoder, cfg.student, cfg.distill,
        os.path.join(run_dir, "ckpt"), teacher_ckpt=teacher_ckpt, seed=cfg.seed,
    )
    rows = [
        ("distill", "final_loss", losses[-1]),
        ("distill", "steps", len(losses)),
    ]
    artifacts = ["ckpt/student.ckpt", "ckpt/heads.ckpt", "ckpt/distill_loss.csv"]
    if not cfg.distill.freeze_teacher:
        artifacts.append("ckpt/teacher.ckpt")
    print(f"distill: final loss {losses[-1]:.4f}")
    _finish_run(run_dir, cfg, t0, rows, artifacts)


def _cmd_eval_retrieval(args) -> None:
    cfg = _load_cfg(args, "eval-retrieval")
    run_dir, t0 = _start_run(cfg)
    store = _open_store(cfg)
    teacher = _load_encoder(cfg.encoder, args.teacher, cfg.seed)
    student = _load_encoder(cfg.student, args.student, cfg.seed)
    heads = None
    if args.heads:
        t_arrays, s_arrays = split_head_arrays(load_checkpoint(args.heads))
        teacher_head = ProjectionHead(
            cfg.encoder.token_dim, cfg.distill.proj_hidden, cfg.distill.proj_dim
        )
        student_head = ProjectionHead(
            cfg.student.token_dim, cfg.distill.proj_hidden, cfg.distill.proj_dim
        )
        teacher_head.load_params(t_arrays)
        student_head.load_params(s_arrays)
        heads = (teacher_head, student_head)
    reports, alignment = held_out_retrieval(
        store, teacher, student, cfg.eval, cfg.seed, heads=heads
    )
    rows = retrieval_rows("retrieval/", reports, alignment)
    for rep in reports:
        print(
            f"retrieval[{rep.space}]: top-1 {rep.top1_percent:.2f}% "
            f"mean rank {rep.mean_rank:.2f} (pool {rep.pool_size})"
        )
    _finish_run(run_dir, cfg, t0, rows, [])


def _cmd_probe(args) -> None:
    cfg = _load_cfg(args, "probe")
    run_dir, t0 = _start_run(cfg)
    store = _open_store(cfg)
    enc_cfg = cfg.student if args.modality == "accel" else cfg.encoder
    encoder = _load_encoder(enc_cfg, args.ckpt, cfg.seed)
    rows: List[tuple] = []
    for target in cfg.eval.probe_targets:
        for fraction in cfg.eval.label_fractions:
            report = probe(
                encoder, store, target, granularity=cfg.eval.granularity,
                label_fraction=float(fraction), modality=args.modality,
                seed=cfg.seed,
            )
            stage = f"probe/{target}/frac={fraction:g}"
            rows += probe_rows(stage, report)
            summary = ", ".join(
                f"{k} {v:.4f}" for k, v in sorted(report.metrics.items())
            )
            print(f"{stage}: {summary}")
    _finish_run(run_dir, cfg, t0, rows, [])


def _cmd_supervised(args) -> None:
    cfg = _load_cfg(args, "supervised")
    run_dir, t0 = _start_run(cfg)
    store = _open_store(cfg)
    overrides = {}
    if args.steps is not None:
        overrides["steps"] = args.steps
    if args.batch_size is not None:
        overrides["batch_size"] = args.batch_size
    sup_cfg = SupervisedConfig(**overrides)
    target = args.target or cfg.eval.probe_targets[0]
    report, losses = supervised_baseline(
        store, cfg.student, target, label_fraction=args.fraction,
        config=sup_cfg, out_dir=os.path.join(run_dir, "ckpt"),
        modality="accel", seed=cfg.seed,
    )
    stage = f"supervised/{target}/frac={args.fraction:g}"
    rows = probe_rows(stage, report)
    rows.append((stage, "final_loss", losses[-1]))
    summary = ", ".join(f"{k} {v:.4f}" for k, v in sorted(report.metrics.items()))
    print(f"{stage}: {summary}")
    _finish_run(
        run_dir, cfg, t0, rows,
        ["ckpt/supervised.ckpt", "ckpt/supervised_loss.csv"],
    )


def _cmd_recipe(args) -> None:
    cfg = _load_cfg(args)
    manifest = run_recipe(args.name, cfg)
    print(f"recipe {args.name}: {len(manifest.metrics)} metrics "
          f"in {os.path.abspath(cfg.out_dir)}")


def _cmd_export(args) -> None:
    csv_path, json_path = export_results(args.runs, args.out)
    print(f"exported {len(args.runs)} runs: {csv_path}, {json_path}")


def _add_common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", help="experiment config JSON document")
    sp.add_argument("--out", help="run directory (overrides out_dir)")
    sp.add_argument("--seed", type=int, help="override the global seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="biodistill",
        description="Cross-modal biosignal distillation pipeline",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate the paired synthetic corpus")
    _add_common(p)
    p.set_defaults(func=_cmd_synth_data)

    p = sub.add_parser("pretrain-mae", help="masked-autoencoder pre-training")
    _add_common(p)
    p.add_argument("--modality", choices=("ppg", "accel"), default="ppg")
    p.set_defaults(func=_cmd_pretrain_mae)

    p = sub.add_parser("pretrain-cl", help="contrastive pre-training")
    _add_common(p)
    p.add_argument("--modality", choices=("ppg", "accel"), default="ppg")
    p.set_defaults(func=_cmd_pretrain_cl)

    p = sub.add_parser("distill", help="cross-modal distillation into the student")
    _add_common(p)
    p.add_argument("--teacher", help="teacher encoder checkpoint path")
    p.set_defaults(func=_cmd_distill)

    p = sub.add_parser("eval-retrieval", help="held-out cross-modal retrieval")
    _add_common(p)
    p.add_argument("--teacher", required=True, help="teacher encoder checkpoint")
    p.add_argument("--student", required=True, help="student encoder checkpoint")
    p.add_argument("--heads", help="projection-head checkpoint for the shared space")
    p.set_defaults(func=_cmd_eval_retrieval)

    p = sub.add_parser("probe", help="ridge linear probe on frozen embeddings")
    _add_common(p)
    p.add_argument("--ckpt", help="encoder checkpoint (default: untrained)")
    p.add_argument("--modality", choices=("ppg", "accel"), default="accel")
    p.set_defaults(func=_cmd_probe)

    p = sub.add_parser("supervised", help="end-to-end supervised baseline")
    _add_common(p)
    p.add_argument("--target", help="regression target (default: first probe target)")
    p.add_argument("--fraction", type=float, default=1.0, help="label fraction")
    p.add_argument("--steps", type=int, help="override training steps")
    p.add_argument("--batch-size", type=int, help="override batch size")
    p.set_defaults(func=_cmd_supervised)

    p = sub.add_parser("recipe", help="run a canned experiment chain")
    p.add_argument("name", choices=RECIPE_NAMES)
    _add_common(p)
    p.set_defaults(func=_cmd_recipe)

    p = sub.add_parser("export", help="join run manifests into one table")
    p.add_argument("runs", nargs="+", help="run directories to join")
    p.add_argument("--out", required=True, help="directory for combined outputs")
    p.set_defaults(func=_cmd_export)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ConfigError, DataError) as e:
        print(f"biodistill: config error: {e}", file=sys.stderr)
        return 2
    except (NumericError, ShapeError) as e:
        print(f"biodistill: numeric failure: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
