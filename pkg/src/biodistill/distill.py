"""Cross-modal representational distillation from a PPG teacher to an accel student.

Paired segments get independently augmented per modality, the (usually
frozen) teacher encodes PPG and the student encodes accelerometry, and
separate trainable projection heads map both embeddings into a shared
low-dimensional space where a lambda-weighted bidirectional InfoNCE pulls
matched pairs together. With the default lambda of 1 the teacher
embeddings act as fixed anchors and only the teacher-anchored direction
is optimized. Unfreezing the teacher (from random or pre-trained weights)
turns the same loop into simultaneous multi-modal contrastive learning.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .augment import AugmentConfig, apply_cascade
from .cl import infonce
from .encoder import Encoder, EncoderConfig, ProjectionHead
from .errors import ConfigError, NumericError
from .synth import DatasetStore
from .synth.dataset import ACCEL_CHANNELS, PPG_CHANNELS
from .tensor import Tensor, save_checkpoint
from .tensor.checkpoint import load_checkpoint
from .tensor.optim import AdamW, LrSchedule, clip_grad_norm


@dataclass(frozen=True)
class DistillConfig:
    lam: float = 1.0
    temperature: float = 0.04
    freeze_teacher: bool = True
    teacher_init: str = "pretrained"  # consulted only when the teacher is unfrozen
    batch_size: int = 256
    steps: int = 20000
    max_lr: float = 1e-3
    warmup_steps: int = 500
    lr_gamma: float = 0.9
    lr_every: int = 2000
    clip_norm: float = 3.0
    weight_decay: float = 1e-5
    proj_hidden: int = 1024
    proj_dim: int = 128
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    checkpoint_every_steps: Optional[int] = None

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lam must be in [0, 1], got {self.lam}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if self.teacher_init not in ("random", "pretrained"):
            raise ConfigError(
                f"teacher_init must be 'random' or 'pretrained', "
                f"got {self.teacher_init!r}"
            )
        if self.batch_size < 2:
            raise ConfigError("distillation needs batch_size >= 2")

    def schedule(self) -> LrSchedule:
        return LrSchedule(
            kind="warmup-exponential",
            max_lr=self.max_lr,
            warmup_iters=self.warmup_steps,
            decay_gamma=self.lr_gamma,
            decay_every_iters=self.lr_every,
        )


def distill_loss(
    teacher_proj: Tensor, student_proj: Tensor, lam: float, temperature: float
) -> Tensor:
    """lam-weighted sum of the two directional InfoNCE terms.

    The endpoints are computed single-sided so lam=1 is bit-identical to
    the teacher-anchored term alone (and lam=0 to the student-anchored
    term), not merely equal up to a multiply by 1.
    """
    if lam == 1.0:
        return infonce(teacher_proj, student_proj, temperature)
    if lam == 0.0:
        return infonce(student_proj, teacher_proj, temperature)
    return lam * infonce(teacher_proj, student_proj, temperature) + (
        1.0 - lam
    ) * infonce(student_proj, teacher_proj, temperature)


class DistillModel:
    """Teacher and student encoders plus their separate projection heads.

    Only `trainable_params()` reaches the optimizer; a frozen teacher
    encoder is excluded there and has requires_grad switched off, so its
    gradient is identically absent rather than merely unused.
    """

    def __init__(
        self,
        teacher_config: EncoderConfig,
        student_config: EncoderConfig,
        config: DistillConfig,
        rng: Optional[np.random.Generator] = None,
        teacher_arrays: Optional[Dict[str, np.ndarray]] = None,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.teacher_config = teacher_config
        self.student_config = student_config
        self.config = config

        self.teacher = Encoder(teacher_config, rng)
        if teacher_arrays is not None:
            self.teacher.load_params(teacher_arrays)
        if config.freeze_teacher:
            for p in self.teacher.params.values():
                p.requires_grad = False
        self.teacher_head = ProjectionHead(
            teacher_config.token_dim, config.proj_hidden, config.proj_dim, rng
        )
        self.student = Encoder(student_config, rng)
        self.student_head = ProjectionHead(
            student_config.token_dim, config.proj_hidden, config.proj_dim, rng
        )

    def trainable_params(self) -> Dict[str, Tensor]:
        merged: Dict[str, Tensor] = {}
        if not self.config.freeze_teacher:
            for name, p in self.teacher.params.items():
                merged["teacher." + name] = p
        for name, p in self.teacher_head.params.items():
            merged["teacher_head." + name] = p
        for name, p in self.student.params.items():
            merged["student." + name] = p
        for name, p in self.student_head.params.items():
            merged["student_head." + name] = p
        return merged

    def project_teacher(self, batch: np.ndarray) -> Tensor:
        return self.teacher_head(self.teacher.encode(batch))

    def project_student(self, batch: np.ndarray) -> Tensor:
        return self.student_head(self.student.encode(batch))

    def export_heads(self) -> Dict[str, np.ndarray]:
        out = {}
        for name, arr in self.teacher_head.export_params().items():
            out["teacher_" + name] = arr
        for name, arr in self.student_head.export_params().items():
            out["student_" + name] = arr
        return out

    def load_heads(self, arrays: Dict[str, np.ndarray]) -> None:
        teacher, student = split_head_arrays(arrays)
        self.teacher_head.load_params(teacher)
        self.student_head.load_params(student)


def split_head_arrays(
    arrays: Dict[str, np.ndarray],
) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray]]:
    """Undo the teacher_/student_ namespacing of export_heads()."""
    teacher = {k[len("teacher_"):]: v for k, v in arrays.items() if k.startswith("teacher_")}
    student = {k[len("student_"):]: v for k, v in arrays.items() if k.startswith("student_")}
    if not teacher or not student:
        raise ConfigError(
            "head checkpoint must hold teacher_head.* and student_head.* tensors"
        )
    return teacher, student


def _resolve_teacher_arrays(
    config: DistillConfig, teacher_ckpt
) -> Optional[Dict[str, np.ndarray]]:
    needs_weights = config.freeze_teacher or config.teacher_init == "pretrained"
    if needs_weights:
        if teacher_ckpt is None:
            raise ConfigError(
                "a teacher checkpoint is required unless the teacher is "
                "unfrozen with teacher_init='random'"
            )
        if isinstance(teacher_ckpt, dict):
            return teacher_ckpt
        return load_checkpoint(teacher_ckpt)
    if teacher_ckpt is not None:
        raise ConfigError(
            "teacher_init='random' starts from scratch; drop the checkpoint "
            "or set teacher_init='pretrained'"
        )
    return None


def train_distill(
    store: DatasetStore,
    teacher_config: EncoderConfig,
    student_config: EncoderConfig,
    distill_config: DistillConfig,
    out_dir,
    teacher_ckpt=None,
    seed: int = 0,
    record_indices: Optional[np.ndarray] = None,
    log_every: int = 50,
) -> Tuple[DistillModel, List[float]]:
    """Distillation loop; saves the student encoder and both heads."""
    if teacher_config.input_channels != PPG_CHANNELS:
        raise ConfigError(
            f"teacher reads {teacher_config.input_channels} channels but the "
            f"PPG stream has {PPG_CHANNELS}"
        )
    if student_config.input_channels != ACCEL_CHANNELS:
        raise ConfigError(
            f"student reads {student_config.input_channels} channels but the "
            f"accelerometry stream has {ACCEL_CHANNELS}"
        )
    teacher_arrays = _resolve_teacher_arrays(distill_config, teacher_ckpt)
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)

    indices = (
        np.asarray(record_indices)
        if record_indices is not None
        else store.train_record_indices()
    )
    if indices.size < distill_config.batch_size:
        raise ConfigError(
            f"{indices.size} records cannot fill a batch of "
            f"{distill_config.batch_size}"
        )

    init_rng = np.random.default_rng(np.random.SeedSequence([seed]))
    order_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    ppg_rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    accel_rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))

    model = DistillModel(
        teacher_config, student_config, distill_config, init_rng, teacher_arrays
    )
    opt = AdamW(model.trainable_params(), weight_decay=distill_config.weight_decay)
    sched = distill_config.schedule()
    t_window = teacher_config.segment_samples
    s_window = student_config.segment_samples

    student_path = os.path.join(out_dir, "student.ckpt")
    heads_path = os.path.join(out_dir, "heads.ckpt")
    steps_per_epoch = max(1, int(np.ceil(indices.size / distill_config.batch_size)))
    ckpt_every = distill_config.checkpoint_every_steps or steps_per_epoch

    def save_all():
        save_checkpoint(student_path, model.student.export_params())
        save_checkpoint(heads_path, model.export_heads())
        if not distill_config.freeze_teacher:
            save_checkpoint(
                os.path.join(out_dir, "teacher.ckpt"), model.teacher.export_params()
            )

    losses: List[float] = []
    log_path = os.path.join(out_dir, "distill_loss.csv")
    with open(log_path, "w", newline="") as log_file:
        log = csv.writer(log_file)
        log.writerow(["iter", "lr", "loss"])
        step = 0
        while step < distill_config.steps:
            epoch_order = order_rng.permutation(indices)
            for lo in range(0, indices.size, distill_config.batch_size):
                if step >= distill_config.steps:
                    break
                batch_idx = epoch_order[lo : lo + distill_config.batch_size]
                if batch_idx.size < 2:
                    break  # a trailing singleton cannot form negatives
                raw_ppg = store.ppg(batch_idx)[:, :, :t_window]
                raw_accel = store.accel(batch_idx)[:, :, :s_window]
                view_t = np.stack(
                    [apply_cascade(x, distill_config.augment, ppg_rng) for x in raw_ppg]
                )
                view_s = np.stack(
                    [
                        apply_cascade(x, distill_config.augment, accel_rng)
                        for x in raw_accel
                    ]
                )

                proj_t = model.project_teacher(view_t)
                proj_s = model.project_student(view_s)
                loss = distill_loss(
                    proj_t, proj_s, distill_config.lam, distill_config.temperature
                )
                value = float(loss.data)
                if not np.isfinite(value):
                    raise NumericError(
                        f"distillation diverged at iter {step}: loss={value}"
                    )
                opt.zero_grad()
                loss.backward()
                clip_grad_norm(model.trainable_params(), distill_config.clip_norm)
                lr = sched.lr_at(step)
                opt.step(lr=lr)

                losses.append(value)
                if step % log_every == 0 or step == distill_config.steps - 1:
                    log.writerow([step, f"{lr:.3e}", f"{value:.6f}"])
                step += 1
                if step % ckpt_every == 0:
                    save_all()
    save_all()
    return model, losses
