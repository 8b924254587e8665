"""Canned experiment chains: synth -> pretrain -> distill -> eval.

Each recipe owns one run directory, writes a consolidated metrics.csv plus
manifest.json at the end, and aborts on the first failing stage with that
stage named in the error. Cells run serially so a fixed seed reproduces
the whole table bit for bit.
"""

from __future__ import annotations

import os
import time
from contextlib import contextmanager
from dataclasses import replace
from typing import List, Optional, Tuple

import numpy as np

from .config import ExperimentConfig, save_resolved
from .distill import train_distill
from .encoder import Encoder, EncoderConfig, param_count
from .errors import BiodistillError, ConfigError
from .evaluation import (
    bootstrap_retrieval,
    embed_records,
    probe,
    procrustes_align,
    retrieval,
)
from .manifest import RunManifest, metrics_dict, package_version, write_manifest, write_metrics
from .mae import train_mae
from .synth import DatasetStore, build_dataset
from .tensor import constant, default_dtype

RECIPE_NAMES = ("smoke", "label-sweep", "compression", "ablate-lambda")
LAMBDA_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)
COMPRESSION_TAGS = ("XS", "S", "M", "L", "XL")


@contextmanager
def _stage(name: str):
    try:
        yield
    except BiodistillError as e:
        raise type(e)(f"recipe stage {name!r} failed: {e}") from e


def _project(head, emb: np.ndarray) -> np.ndarray:
    x = constant(np.asarray(emb, dtype=default_dtype()))
    return head(x).data.astype(np.float64)


def held_out_retrieval(store: DatasetStore, teacher_enc: Encoder,
                       student_enc: Encoder, eval_cfg, seed: int, heads=None):
    """Cross-modal reports on the test split: student queries, teacher pool.

    With `heads` (teacher ProjectionHead, student ProjectionHead) the shared
    projection space is reported; matching encoder widths additionally give
    the raw-embedding report and a Procrustes-aligned one, with the alignment
    fitted on the training split only.
    """
    test_idx = store.test_record_indices()
    t_emb = embed_records(teacher_enc, store, test_idx, "ppg")
    s_emb = embed_records(student_enc, store, test_idx, "accel")

    def _report(space, queries, candidates):
        if eval_cfg.pool_participants is None:
            return retrieval(queries, candidates, space=space)
        pids = store.record_index[test_idx, 0]
        return bootstrap_retrieval(
            queries, candidates, pids, eval_cfg.pool_participants,
            eval_cfg.n_pools, seed=seed, space=space,
        )

    reports = []
    if heads is not None:
        teacher_head, student_head = heads
        reports.append(_report(
            "projection", _project(student_head, s_emb), _project(teacher_head, t_emb)
        ))
    alignment = None
    if t_emb.shape[1] == s_emb.shape[1]:
        reports.append(_report("encoder", s_emb, t_emb))
        train_idx = store.train_record_indices()
        t_train = embed_records(teacher_enc, store, train_idx, "ppg")
        s_train = embed_records(student_enc, store, train_idx, "accel")
        alignment = procrustes_align(s_train, t_train)
        reports.append(_report("procrustes", alignment.transform(s_emb), t_emb))
    if not reports:
        raise ConfigError(
            "teacher and student widths differ and no projection heads were "
            "given; no common space to evaluate in"
        )
    return reports, alignment


def retrieval_rows(prefix: str, reports, alignment=None) -> List[tuple]:
    rows = []
    for rep in reports:
        stage = f"{prefix}{rep.space}"
        rows += [
            (stage, "top1_percent", rep.top1_percent),
            (stage, "top1_std", rep.top1_std),
            (stage, "mean_rank", rep.mean_rank),
            (stage, "mean_rank_std", rep.mean_rank_std),
            (stage, "pool_size", rep.pool_size),
            (stage, "n_pools", rep.n_pools),
        ]
    if alignment is not None:
        rows += [
            (f"{prefix}procrustes", "scale", alignment.scale),
            (f"{prefix}procrustes", "residual", alignment.residual),
        ]
    return rows


def probe_rows(stage: str, report) -> List[tuple]:
    rows = [(stage, k, v) for k, v in sorted(report.metrics.items())]
    if report.alpha is not None:
        rows.append((stage, "alpha", report.alpha))
    rows.append((stage, "n_train_rows", report.n_train_rows))
    return rows


def _build_data(cfg: ExperimentConfig) -> DatasetStore:
    with _stage("synth-data"):
        return build_dataset(
            cfg.data_dir(), cfg.data.n_participants,
            cfg.data.segments_per_participant, cfg.data.seed,
        )


def _train_teacher(cfg: ExperimentConfig, run_dir: str, store: DatasetStore,
                   artifacts: List[str]) -> Tuple[object, str, List[float]]:
    out = os.path.join(run_dir, "teacher")
    with _stage("pretrain-mae"):
        model, losses = train_mae(
            store, cfg.encoder, cfg.mae, out, modality="ppg", seed=cfg.seed
        )
    artifacts += ["teacher/encoder.ckpt", "teacher/mae_loss.csv"]
    return model, os.path.join(out, "encoder.ckpt"), losses


def _distill_cell(cfg: ExperimentConfig, run_dir: str, store: DatasetStore,
                  teacher_ckpt: str, cell: str, artifacts: List[str],
                  distill_cfg=None, student_cfg: Optional[EncoderConfig] = None):
    out = os.path.join(run_dir, cell)
    with _stage(f"distill[{cell}]"):
        model, losses = train_distill(
            store, cfg.encoder, student_cfg or cfg.student,
            distill_cfg or cfg.distill, out,
            teacher_ckpt=teacher_ckpt, seed=cfg.seed,
        )
    artifacts += [f"{cell}/student.ckpt", f"{cell}/heads.ckpt", f"{cell}/distill_loss.csv"]
    return model, losses


def _probe_cell(cfg: ExperimentConfig, store: DatasetStore, encoder: Encoder,
                modality: str, stage: str, rows: List[tuple],
                fractions=None, targets=None) -> None:
    for target in targets or cfg.eval.probe_targets:
        for fraction in fractions or cfg.eval.label_fractions:
            label = f"{stage}/{target}/frac={fraction:g}"
            with _stage(f"probe[{label}]"):
                report = probe(
                    encoder, store, target,
                    granularity=cfg.eval.granularity,
                    label_fraction=float(fraction),
                    modality=modality, seed=cfg.seed,
                )
            rows += probe_rows(label, report)


def _recipe_smoke(cfg, run_dir, store, rows, artifacts):
    teacher, teacher_ckpt, t_losses = _train_teacher(cfg, run_dir, store, artifacts)
    rows.append(("pretrain-mae", "final_loss", t_losses[-1]))
    model, d_losses = _distill_cell(cfg, run_dir, store, teacher_ckpt, "kd", artifacts)
    rows.append(("distill", "final_loss", d_losses[-1]))
    with _stage("eval-retrieval"):
        reports, alignment = held_out_retrieval(
            store, model.teacher, model.student, cfg.eval, cfg.seed,
            heads=(model.teacher_head, model.student_head),
        )
    rows += retrieval_rows("retrieval/", reports, alignment)
    _probe_cell(cfg, store, model.student, "accel", "probe/kd", rows,
                fractions=(1.0,), targets=(cfg.eval.probe_targets[0],))


def _recipe_label_sweep(cfg, run_dir, store, rows, artifacts):
    teacher, teacher_ckpt, _ = _train_teacher(cfg, run_dir, store, artifacts)
    accel_dir = os.path.join(run_dir, "accel-mae")
    with _stage("pretrain-mae[accel]"):
        accel_mae, _ = train_mae(
            store, cfg.student, cfg.mae, accel_dir, modality="accel", seed=cfg.seed
        )
    artifacts += ["accel-mae/encoder.ckpt", "accel-mae/mae_loss.csv"]
    kd, _ = _distill_cell(cfg, run_dir, store, teacher_ckpt, "accel-kd", artifacts)
    arms = (
        ("ppg-mae", teacher.encoder, "ppg"),
        ("accel-mae", accel_mae.encoder, "accel"),
        ("accel-kd", kd.student, "accel"),
    )
    for name, encoder, modality in arms:
        _probe_cell(cfg, store, encoder, modality, name, rows)


def _recipe_compression(cfg, run_dir, store, rows, artifacts):
    _, teacher_ckpt, _ = _train_teacher(cfg, run_dir, store, artifacts)
    target = cfg.eval.probe_targets[0]
    for tag in COMPRESSION_TAGS:
        student_cfg = EncoderConfig.from_size(
            tag, cfg.student.input_channels,
            patch_window_s=cfg.student.patch_window_s,
            input_rate_hz=cfg.student.input_rate_hz,
            segment_s=cfg.student.segment_s,
        )
        rows.append((f"kd-{tag}", "param_count", param_count(student_cfg)))
        model, losses = _distill_cell(
            cfg, run_dir, store, teacher_ckpt, f"kd-{tag}", artifacts,
            student_cfg=student_cfg,
        )
        rows.append((f"kd-{tag}", "final_loss", losses[-1]))
        untrained = Encoder(
            student_cfg, np.random.default_rng(np.random.SeedSequence([cfg.seed]))
        )
        _probe_cell(cfg, store, model.student, "accel", f"kd-{tag}", rows,
                    fractions=(1.0,), targets=(target,))
        _probe_cell(cfg, store, untrained, "accel", f"untrained-{tag}", rows,
                    fractions=(1.0,), targets=(target,))


def _recipe_ablate_lambda(cfg, run_dir, store, rows, artifacts):
    _, teacher_ckpt, _ = _train_teacher(cfg, run_dir, store, artifacts)
    for lam in LAMBDA_GRID:
        cell = f"lambda-{lam:g}"
        model, losses = _distill_cell(
            cfg, run_dir, store, teacher_ckpt, cell, artifacts,
            distill_cfg=replace(cfg.distill, lam=lam),
        )
        rows.append((cell, "final_loss", losses[-1]))
        with _stage(f"eval-retrieval[{cell}]"):
            reports, alignment = held_out_retrieval(
                store, model.teacher, model.student, cfg.eval, cfg.seed,
                heads=(model.teacher_head, model.student_head),
            )
        rows += retrieval_rows(f"{cell}/", reports, alignment)


_RECIPES = {
    "smoke": _recipe_smoke,
    "label-sweep": _recipe_label_sweep,
    "compression": _recipe_compression,
    "ablate-lambda": _recipe_ablate_lambda,
}


def run_recipe(name: str, cfg: ExperimentConfig) -> RunManifest:
    """Execute one canned chain into cfg.out_dir; returns the final manifest."""
    if name not in _RECIPES:
        raise ConfigError(f"unknown recipe {name!r}; choose from {sorted(_RECIPES)}")
    run_dir = cfg.out_dir
    os.makedirs(run_dir, exist_ok=True)
    save_resolved(cfg, run_dir)
    t0 = time.monotonic()
    rows: List[tuple] = []
    artifacts: List[str] = ["config.json"]
    store = _build_data(cfg)
    _RECIPES[name](cfg, run_dir, store, rows, artifacts)
    write_metrics(run_dir, rows)
    artifacts.append("metrics.csv")
    manifest = RunManifest(
        version=package_version(),
        config_hash=cfg.config_hash(),
        wall_clock_s=round(time.monotonic() - t0, 3),
        artifacts=artifacts,
        metrics=metrics_dict(rows),
    )
    write_manifest(run_dir, manifest)
    return manifest
