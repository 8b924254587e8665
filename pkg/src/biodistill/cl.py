"""Momentum-encoder contrastive pre-training with KoLeo-regularized InfoNCE.

Two independently augmented views of each segment go through an online
branch (encoder + projection head, trained by gradient) and a momentum
branch (EMA copy, never receives gradient). The loss is a symmetric
temperature-scaled InfoNCE over in-batch negatives plus a KoLeo spreading
term on the online projections. The online encoder is the artifact kept
for downstream use.
"""

from __future__ import annotations

import csv
import os
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .augment import AugmentConfig, apply_cascade
from .encoder import Encoder, EncoderConfig, ProjectionHead
from .errors import ConfigError, NumericError
from .synth import DatasetStore
from .tensor import (
    Tensor,
    clip_min,
    constant,
    l2_normalize,
    log,
    log_softmax,
    min_along,
    save_checkpoint,
    sqrt,
)
from .tensor.optim import AdamW, LrSchedule, clip_grad_norm


@dataclass(frozen=True)
class ClConfig:
    temperature: float = 0.04
    koleo_weight: float = 0.1
    momentum: float = 0.99
    batch_size: int = 256
    steps: int = 20000
    max_lr: float = 1e-3
    warmup_steps: int = 500
    lr_gamma: float = 0.9
    lr_every: int = 2000
    clip_norm: float = 3.0
    weight_decay: float = 1e-5
    positive_pair_mode: str = "segment"
    proj_hidden: int = 1024
    proj_dim: int = 128
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    checkpoint_every_steps: Optional[int] = None

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if not 0.0 <= self.momentum <= 1.0:
            raise ConfigError(f"momentum must be in [0, 1], got {self.momentum}")
        if self.koleo_weight < 0:
            raise ConfigError(f"koleo_weight must be non-negative, got {self.koleo_weight}")
        if self.positive_pair_mode not in ("segment", "participant"):
            raise ConfigError(
                f"positive_pair_mode must be 'segment' or 'participant', "
                f"got {self.positive_pair_mode!r}"
            )
        if self.batch_size < 2:
            raise ConfigError("contrastive training needs batch_size >= 2")

    def schedule(self) -> LrSchedule:
        return LrSchedule(
            kind="warmup-exponential",
            max_lr=self.max_lr,
            warmup_iters=self.warmup_steps,
            decay_gamma=self.lr_gamma,
            decay_every_iters=self.lr_every,
        )


def _check_rows(x: Tensor, name: str) -> None:
    if x.data.ndim != 2:
        raise ConfigError(f"{name} must be (N, dim), got shape {x.data.shape}")
    if x.data.shape[0] < 2:
        raise ConfigError(f"{name} needs at least 2 rows, got {x.data.shape[0]}")
    norms = np.linalg.norm(x.data, axis=1)
    bad = np.flatnonzero(norms < 1e-12)
    if bad.size:
        raise NumericError(f"{name} row {int(bad[0])} has zero norm")


def infonce(anchors: Tensor, keys: Tensor, temperature: float) -> Tensor:
    """N-way classification loss with cosine similarity logits.

    Row i of `keys` is the positive for row i of `anchors`; every other row
    is a negative. Row-wise rescaling of either side by positive constants
    cannot move the loss.
    """
    _check_rows(anchors, "anchors")
    _check_rows(keys, "keys")
    a = l2_normalize(anchors, axis=-1)
    k = l2_normalize(keys, axis=-1)
    logits = (a @ k.transpose(1, 0)) * (1.0 / temperature)
    logp = log_softmax(logits, axis=1)
    n = logits.data.shape[0]
    diag = logp.take_along(np.arange(n)[:, None], axis=1)
    return -diag.mean()


def koleo(embeddings: Tensor) -> Tensor:
    """Nearest-neighbor differential-entropy estimate on normalized rows.

    -(1/N) sum_i log min_{j != i} ||h_i - h_j||. Duplicate rows would give
    log 0; distances are clamped at 1e-8 with a warning so the loss stays
    finite and the duplicate contributes no gradient through the clamp.
    """
    if embeddings.data.ndim != 2 or embeddings.data.shape[0] < 2:
        raise ConfigError(
            f"koleo needs an (N >= 2, dim) matrix, got shape {embeddings.data.shape}"
        )
    h = l2_normalize(embeddings, axis=-1)
    gram = h @ h.transpose(1, 0)
    n = gram.data.shape[0]
    # squared distances between unit rows; diagonal pushed out of the min
    d2 = 2.0 - 2.0 * gram + constant(np.eye(n, dtype=str(gram.dtype)) * 1e9)
    nearest2 = min_along(d2, axis=1)
    if np.any(nearest2.data < 1e-16):
        warnings.warn("koleo: duplicate embeddings, distance clamped at 1e-8")
    d = sqrt(clip_min(nearest2, 1e-16))
    return -log(d).mean()


def ema_update(
    teacher: Dict[str, Tensor], student: Dict[str, Tensor], momentum: float
) -> None:
    """theta_t <- m * theta_t + (1 - m) * theta_s, elementwise, in place."""
    if teacher.keys() != student.keys():
        raise ConfigError("ema_update: teacher and student parameter names differ")
    for name, t in teacher.items():
        s = student[name]
        t.data = momentum * t.data + (1.0 - momentum) * s.data


class ContrastiveModel:
    """Online encoder + head and their momentum copies."""

    def __init__(
        self,
        enc_config: EncoderConfig,
        cl_config: ClConfig,
        rng: Optional[np.random.Generator] = None,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.enc_config = enc_config
        self.cl_config = cl_config
        self.encoder = Encoder(enc_config, rng)
        self.head = ProjectionHead(
            enc_config.token_dim, cl_config.proj_hidden, cl_config.proj_dim, rng
        )
        # momentum branch starts as an exact copy and never sees gradients
        self.m_encoder = Encoder(enc_config)
        self.m_head = ProjectionHead(
            enc_config.token_dim, cl_config.proj_hidden, cl_config.proj_dim
        )
        for copy_params, live in (
            (self.m_encoder.params, self.encoder.params),
            (self.m_head.params, self.head.params),
        ):
            for name, p in copy_params.items():
                p.data = live[name].data.copy()
                p.requires_grad = False

    def online_params(self) -> Dict[str, Tensor]:
        merged = dict(self.encoder.params)
        merged.update(self.head.params)
        return merged

    def momentum_params(self) -> Dict[str, Tensor]:
        merged = dict(self.m_encoder.params)
        merged.update(self.m_head.params)
        return merged

    def project_online(self, batch: np.ndarray) -> Tensor:
        return self.head(self.encoder.encode(batch))

    def project_momentum(self, batch: np.ndarray) -> Tensor:
        return self.m_head(self.m_encoder.encode(batch))

    def momentum_step(self) -> None:
        ema_update(self.momentum_params(), self.online_params(), self.cl_config.momentum)


def cl_loss(
    online_proj: Tensor, momentum_proj: Tensor, config: ClConfig
) -> Tuple[Tensor, float, float]:
    """Symmetric InfoNCE + weighted KoLeo; returns (loss, nce part, koleo part)."""
    nce = 0.5 * (
        infonce(online_proj, momentum_proj, config.temperature)
        + infonce(momentum_proj, online_proj, config.temperature)
    )
    spread = koleo(online_proj)
    total = nce + config.koleo_weight * spread
    return total, float(nce.data), float(spread.data)


def _pair_lookup(store: DatasetStore, indices: np.ndarray) -> Dict[int, np.ndarray]:
    by_pid: Dict[int, List[int]] = {}
    for rec in indices:
        pid = int(store.record_index[rec, 0])
        by_pid.setdefault(pid, []).append(int(rec))
    return {pid: np.asarray(recs) for pid, recs in by_pid.items()}


def _participant_partner(
    rec: int, store: DatasetStore, lookup: Dict[int, np.ndarray], rng: np.random.Generator
) -> int:
    pid = int(store.record_index[rec, 0])
    pool = lookup[pid]
    if pool.size == 1:
        return rec  # lone segment: degrade to segment-level pairing
    choice = rec
    while choice == rec:
        choice = int(pool[rng.integers(pool.size)])
    return choice


def train_cl(
    store: DatasetStore,
    enc_config: EncoderConfig,
    cl_config: ClConfig,
    out_dir,
    modality: str = "ppg",
    seed: int = 0,
    record_indices: Optional[np.ndarray] = None,
    log_every: int = 50,
) -> Tuple[ContrastiveModel, List[float]]:
    """Contrastive pre-training loop; saves the online encoder checkpoint."""
    if modality not in ("ppg", "accel"):
        raise ConfigError(f"modality must be 'ppg' or 'accel', got {modality!r}")
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)

    indices = (
        np.asarray(record_indices)
        if record_indices is not None
        else store.train_record_indices()
    )
    if indices.size < cl_config.batch_size:
        raise ConfigError(
            f"{indices.size} records cannot fill a batch of {cl_config.batch_size}"
        )

    init_rng = np.random.default_rng(np.random.SeedSequence([seed]))
    order_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    view_a_rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    view_b_rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
    pair_rng = np.random.default_rng(np.random.SeedSequence([seed, 4]))

    model = ContrastiveModel(enc_config, cl_config, init_rng)
    opt = AdamW(model.online_params(), weight_decay=cl_config.weight_decay)
    sched = cl_config.schedule()
    fetch = store.ppg if modality == "ppg" else store.accel
    lookup = _pair_lookup(store, indices)
    window = enc_config.segment_samples

    ckpt_path = os.path.join(out_dir, "encoder.ckpt")
    steps_per_epoch = max(1, int(np.ceil(indices.size / cl_config.batch_size)))
    ckpt_every = cl_config.checkpoint_every_steps or steps_per_epoch

    losses: List[float] = []
    log_path = os.path.join(out_dir, "cl_loss.csv")
    with open(log_path, "w", newline="") as log_file:
        log = csv.writer(log_file)
        log.writerow(["iter", "lr", "loss", "infonce", "koleo"])
        step = 0
        while step < cl_config.steps:
            epoch_order = order_rng.permutation(indices)
            for lo in range(0, indices.size, cl_config.batch_size):
                if step >= cl_config.steps:
                    break
                batch_idx = epoch_order[lo : lo + cl_config.batch_size]
                if batch_idx.size < 2:
                    break  # a trailing singleton cannot form negatives
                if cl_config.positive_pair_mode == "participant":
                    partner_idx = np.array(
                        [_participant_partner(int(r), store, lookup, pair_rng)
                         for r in batch_idx]
                    )
                else:
                    partner_idx = batch_idx
                raw_a = fetch(batch_idx)[:, :, :window]
                raw_b = fetch(partner_idx)[:, :, :window]
                view_a = np.stack(
                    [apply_cascade(x, cl_config.augment, view_a_rng) for x in raw_a]
                )
                view_b = np.stack(
                    [apply_cascade(x, cl_config.augment, view_b_rng) for x in raw_b]
                )

                proj_a = model.project_online(view_a)
                proj_b = model.project_momentum(view_b)
                loss, nce_val, koleo_val = cl_loss(proj_a, proj_b, cl_config)
                value = float(loss.data)
                if not np.isfinite(value):
                    raise NumericError(f"cl training diverged at iter {step}: loss={value}")
                opt.zero_grad()
                loss.backward()
                clip_grad_norm(model.online_params(), cl_config.clip_norm)
                lr = sched.lr_at(step)
                opt.step(lr=lr)
                model.momentum_step()

                losses.append(value)
                if step % log_every == 0 or step == cl_config.steps - 1:
                    log.writerow(
                        [step, f"{lr:.3e}", f"{value:.6f}",
                         f"{nce_val:.6f}", f"{koleo_val:.6f}"]
                    )
                step += 1
                if step % ckpt_every == 0:
                    save_checkpoint(ckpt_path, model.encoder.export_params())
    save_checkpoint(ckpt_path, model.encoder.export_params())
    return model, losses
