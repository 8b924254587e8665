"""End-to-end supervised baseline: encoder + linear head on one target."""

import csv
import os
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from ..encoder import INIT_STD, Encoder, EncoderConfig
from ..errors import ConfigError, NumericError
from ..synth import DatasetStore
from ..tensor import constant, default_dtype, param, save_checkpoint
from ..tensor.functional import linear
from ..tensor.optim import AdamW, LrSchedule, clip_grad_norm
from .metrics import regression_metrics
from .probing import (
    REGRESSION_TARGETS,
    ProbeReport,
    embed_records,
    stratified_label_subsample,
)


@dataclass(frozen=True)
class SupervisedConfig:
    batch_size: int = 64
    steps: int = 2000
    max_lr: float = 1e-3
    warmup_steps: int = 100
    lr_gamma: float = 0.9
    lr_every: int = 1000
    clip_norm: float = 3.0
    weight_decay: float = 1e-5
    checkpoint_every_steps: Optional[int] = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("supervised training needs batch_size >= 1")
        if self.steps < 1:
            raise ConfigError("supervised training needs steps >= 1")

    def schedule(self) -> LrSchedule:
        return LrSchedule(
            kind="warmup-exponential",
            max_lr=self.max_lr,
            warmup_iters=self.warmup_steps,
            decay_gamma=self.lr_gamma,
            decay_every_iters=self.lr_every,
        )


def supervised_baseline(
    store: DatasetStore,
    enc_config: EncoderConfig,
    target: str,
    label_fraction: float = 1.0,
    config: Optional[SupervisedConfig] = None,
    out_dir=None,
    modality: str = "accel",
    seed: int = 0,
    log_every: int = 50,
) -> Tuple[ProbeReport, List[float]]:
    """Train encoder + linear head with MSE on a target; report test metrics.

    The target is standardized on the labeled training rows for
    conditioning and predictions are mapped back before metrics.
    """
    if target not in REGRESSION_TARGETS:
        raise ConfigError(
            f"supervised target must be one of {REGRESSION_TARGETS}, "
            f"got {target!r}"
        )
    config = config if config is not None else SupervisedConfig()

    init_rng = np.random.default_rng(np.random.SeedSequence([seed]))
    order_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    sub_rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))

    train_idx = store.train_record_indices()
    pids = store.record_index[train_idx, 0]
    rows = stratified_label_subsample(pids, label_fraction, sub_rng)
    labeled = train_idx[rows]
    if labeled.size < config.batch_size:
        batch_size = int(labeled.size)
    else:
        batch_size = config.batch_size

    y_all = store.labels(labeled)[target]
    y_mean = float(y_all.mean())
    y_scale = float(max(y_all.std(), 1e-8))

    encoder = Encoder(enc_config, init_rng)
    dt = default_dtype()
    head_w = param(
        init_rng.normal(0.0, INIT_STD, (enc_config.token_dim, 1)).astype(dt)
    )
    head_b = param(np.zeros(1, dtype=dt))
    params = dict(encoder.params)
    params["head.w"] = head_w
    params["head.b"] = head_b

    opt = AdamW(params, weight_decay=config.weight_decay)
    sched = config.schedule()
    fetch = store.ppg if modality == "ppg" else store.accel
    window = enc_config.segment_samples
    y_lookup = dict(zip(labeled.tolist(), ((y_all - y_mean) / y_scale).tolist()))

    log_file = None
    log = None
    if out_dir is not None:
        out_dir = os.fspath(out_dir)
        os.makedirs(out_dir, exist_ok=True)
        log_file = open(
            os.path.join(out_dir, "supervised_loss.csv"), "w", newline=""
        )
        log = csv.writer(log_file)
        log.writerow(["iter", "lr", "loss"])

    losses: List[float] = []
    try:
        step = 0
        while step < config.steps:
            epoch_order = order_rng.permutation(labeled)
            for lo in range(0, labeled.size, batch_size):
                if step >= config.steps:
                    break
                batch_idx = epoch_order[lo : lo + batch_size]
                raw = fetch(batch_idx)[:, :, :window]
                y = np.array([y_lookup[int(i)] for i in batch_idx], dtype=dt)
                pred = linear(encoder.encode(raw), head_w, head_b)
                diff = pred - constant(y[:, None])
                loss = (diff * diff).mean()
                value = float(loss.data)
                if not np.isfinite(value):
                    raise NumericError(
                        f"supervised training diverged at iter {step}: "
                        f"loss={value}"
                    )
                opt.zero_grad()
                loss.backward()
                clip_grad_norm(params, config.clip_norm)
                lr = sched.lr_at(step)
                opt.step(lr=lr)
                losses.append(value)
                if log is not None and (
                    step % log_every == 0 or step == config.steps - 1
                ):
                    log.writerow([step, f"{lr:.3e}", f"{value:.6f}"])
                step += 1
    finally:
        if log_file is not None:
            log_file.close()
    if out_dir is not None:
        arrays = encoder.export_params()
        arrays["head.w"] = head_w.data
        arrays["head.b"] = head_b.data
        save_checkpoint(os.path.join(out_dir, "supervised.ckpt"), arrays)

    test_idx = store.test_record_indices()
    emb = embed_records(encoder, store, test_idx, modality)
    pred_test = emb @ head_w.data.astype(np.float64) + head_b.data.astype(
        np.float64
    )
    pred_test = pred_test.reshape(-1) * y_scale + y_mean
    y_test = store.labels(test_idx)[target]
    report = ProbeReport(
        target=target,
        granularity="segment",
        label_fraction=label_fraction,
        modality=modality,
        space="encoder",
        n_train_rows=int(labeled.size),
        alpha=None,
        metrics=regression_metrics(y_test, pred_test),
    )
    return report, losses
