"""Masked-autoencoding pre-training for either signal modality.

80% of a segment's tokens are dropped; the encoder sees only the kept
tokens, a learnable mask token is reinserted at the dropped positions, and
a lighter decoder stack reconstructs the raw patch pixel values. The loss
reads only pixels of masked patches, so the model cannot score by copying
visible input.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .encoder import Encoder, EncoderConfig, init_block_params, run_blocks
from .errors import ConfigError, NumericError
from .synth import DatasetStore
from .tensor import Tensor, constant, default_dtype, param
from .tensor.checkpoint import save_checkpoint
from .tensor.functional import linear
from .tensor.optim import AdamW, LrSchedule, clip_grad_norm


@dataclass(frozen=True)
class MaeConfig:
    mask_ratio: float = 0.8
    decoder_layers: int = 4  # decoder reuses the encoder's dim/heads/hidden
    batch_size: int = 512
    steps: int = 20000
    max_lr: float = 2e-4
    warmup_steps: int = 500
    lr_gamma: float = 0.9
    lr_every: int = 2000
    clip_norm: float = 3.0
    weight_decay: float = 1e-5
    checkpoint_every_steps: Optional[int] = None  # default: once per data epoch

    def __post_init__(self):
        if not 0.0 <= self.mask_ratio < 1.0:
            raise ConfigError(f"mask_ratio must be in [0, 1), got {self.mask_ratio}")
        if self.batch_size < 1 or self.steps < 1 or self.decoder_layers < 1:
            raise ConfigError("batch_size, steps, decoder_layers must be positive")

    def schedule(self) -> LrSchedule:
        return LrSchedule(
            kind="warmup-exponential",
            max_lr=self.max_lr,
            warmup_iters=self.warmup_steps,
            decay_gamma=self.lr_gamma,
            decay_every_iters=self.lr_every,
        )


def split_mask_indices(
    n_tokens: int, ratio: float, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    """Partition {0..n_tokens-1} into (kept, masked), kept count exact.

    kept count = floor(n_tokens * (1 - ratio)); the subset is uniform
    without replacement. Both index arrays come back sorted.
    """
    if not 0.0 <= ratio < 1.0:
        raise ConfigError(f"mask ratio must be in [0, 1), got {ratio}")
    n_keep = int(np.floor(n_tokens * (1.0 - ratio)))
    if n_keep < 1:
        raise ConfigError(
            f"mask ratio {ratio} leaves no visible tokens out of {n_tokens}; "
            "lower the ratio or use longer segments"
        )
    perm = rng.permutation(n_tokens)
    return np.sort(perm[:n_keep]), np.sort(perm[n_keep:])


def mask_tokens(
    tokens: np.ndarray, ratio: float, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(kept tokens, kept indices, masked indices) for one (N, D) grid."""
    tokens = np.asarray(tokens)
    kept, masked = split_mask_indices(tokens.shape[0], ratio, rng)
    return tokens[kept], kept, masked


def sample_batch_masks(
    batch: int, n_tokens: int, ratio: float, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    """Independent per-sample masks; (batch, K) kept and (batch, N-K) masked."""
    kept_rows, masked_rows = [], []
    for _ in range(batch):
        kept, masked = split_mask_indices(n_tokens, ratio, rng)
        kept_rows.append(kept)
        masked_rows.append(masked)
    return np.stack(kept_rows), np.stack(masked_rows)


def mae_loss(rec_patches: Tensor, target: np.ndarray, masked_idx: np.ndarray) -> Tensor:
    """MSE over pixels of masked patches only, averaged over the batch.

    Reconstruction values at unmasked patches cannot move this loss: only
    masked rows are gathered before the difference is taken.
    """
    if masked_idx.shape[1] == 0:
        return constant(np.asarray(0.0, dtype=rec_patches.dtype))
    idx = masked_idx[:, :, None]
    rec_m = rec_patches.take_along(idx, axis=1)
    tgt_m = np.take_along_axis(np.asarray(target), idx, axis=1)
    diff = rec_m - constant(tgt_m.astype(rec_patches.dtype))
    return (diff * diff).mean()


class MaskedAutoencoder:
    """Encoder + mask token + decoder stack + pixel projection."""

    def __init__(
        self,
        enc_config: EncoderConfig,
        mae_config: MaeConfig,
        rng: Optional[np.random.Generator] = None,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.enc_config = enc_config
        self.mae_config = mae_config
        self.encoder = Encoder(enc_config, rng)
        d, h = enc_config.token_dim, enc_config.mlp_hidden
        dt = default_dtype()
        self.params: Dict[str, Tensor] = dict(self.encoder.params)
        # mask token drawn U(0, 1) elementwise
        self.params["decoder.mask_token"] = param(rng.uniform(0.0, 1.0, d).astype(dt))
        self.params.update(
            init_block_params(mae_config.decoder_layers, d, h, rng, prefix="decoder.block")
        )
        self.params["decoder.out.w"] = param(
            rng.normal(0.0, 0.02, (d, enc_config.patch_dim)).astype(dt)
        )
        self.params["decoder.out.b"] = param(np.zeros(enc_config.patch_dim, dtype=dt))

    def reconstruct_patches(
        self, signal: np.ndarray, kept_idx: np.ndarray, masked_idx: np.ndarray
    ) -> Tuple[Tensor, np.ndarray]:
        """Masked forward pass; returns (patch reconstruction, patch targets)."""
        cfg = self.enc_config
        target = self.encoder.patchify(signal)
        b, n = target.shape[0], target.shape[1]  # n <= cfg.n_tokens
        d = cfg.token_dim

        tokens = self.encoder.tokens_with_positions(signal)  # (B, N, D)
        kept = tokens.take_along(kept_idx[:, :, None], axis=1)
        encoded = self.encoder.forward_tokens(kept)  # (B, K, D)

        # full grid: encoder outputs at kept slots, mask token at dropped slots
        grid = encoded.scatter_along(kept_idx[:, :, None], axis=1, size=n)
        hole = np.zeros((b, n, d), dtype=str(grid.dtype))
        np.put_along_axis(hole, masked_idx[:, :, None], 1.0, axis=1)
        grid = grid + self.params["decoder.mask_token"] * constant(hole)

        pos = constant(self.encoder.positions[:n].astype(str(grid.dtype)))
        x = run_blocks(
            self.params, "decoder.block", grid + pos,
            self.mae_config.decoder_layers, cfg.n_heads,
        )
        rec = linear(x, self.params["decoder.out.w"], self.params["decoder.out.b"])
        return rec, target

    def forward(
        self, signal: np.ndarray, rng: np.random.Generator
    ) -> Tuple[Tensor, np.ndarray, np.ndarray, np.ndarray]:
        """Sample masks, reconstruct, and return the signal-layout output.

        Returns (reconstruction (B, C, T), target patches, kept, masked).
        """
        cfg = self.enc_config
        sig = np.asarray(signal)
        if sig.ndim == 2:
            sig = sig[None]
        b, c, p = sig.shape[0], cfg.input_channels, cfg.patch_samples
        n = sig.shape[-1] // p
        kept_idx, masked_idx = sample_batch_masks(
            b, n, self.mae_config.mask_ratio, rng
        )
        rec, target = self.reconstruct_patches(sig, kept_idx, masked_idx)
        rec_sig = rec.reshape(b, n, c, p).transpose(0, 2, 1, 3).reshape(b, c, n * p)
        return rec_sig, target, kept_idx, masked_idx

    def export_params(self) -> Dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}


def _non_finite_diagnostics(params: Dict[str, Tensor]) -> str:
    bad = [k for k, p in params.items() if not np.all(np.isfinite(p.data))]
    return f"non-finite parameters: {bad[:5]}" if bad else "parameters all finite"


def train_mae(
    store: DatasetStore,
    enc_config: EncoderConfig,
    mae_config: MaeConfig,
    out_dir,
    modality: str = "ppg",
    seed: int = 0,
    record_indices: Optional[np.ndarray] = None,
    log_every: int = 50,
) -> Tuple[MaskedAutoencoder, List[float]]:
    """Full pre-training loop; writes encoder checkpoints and a loss log.

    Pre-training reads only training-split participants unless explicit
    record indices are given. MAE uses no augmentation.
    """
    if modality not in ("ppg", "accel"):
        raise ConfigError(f"modality must be 'ppg' or 'accel', got {modality!r}")
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)

    indices = (
        np.asarray(record_indices)
        if record_indices is not None
        else store.train_record_indices()
    )
    if indices.size == 0:
        raise ConfigError("no records available for pre-training")

    init_rng = np.random.default_rng(np.random.SeedSequence([seed]))
    order_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    mask_rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))

    model = MaskedAutoencoder(enc_config, mae_config, init_rng)
    opt = AdamW(model.params, weight_decay=mae_config.weight_decay)
    sched = mae_config.schedule()
    fetch = store.ppg if modality == "ppg" else store.accel

    ckpt_path = os.path.join(out_dir, "encoder.ckpt")
    steps_per_epoch = max(1, int(np.ceil(indices.size / mae_config.batch_size)))
    ckpt_every = mae_config.checkpoint_every_steps or steps_per_epoch

    losses: List[float] = []
    log_path = os.path.join(out_dir, "mae_loss.csv")
    with open(log_path, "w", newline="") as log_file:
        log = csv.writer(log_file)
        log.writerow(["iter", "lr", "loss"])
        step = 0
        while step < mae_config.steps:
            epoch_order = order_rng.permutation(indices)
            for lo in range(0, indices.size, mae_config.batch_size):
                if step >= mae_config.steps:
                    break
                batch_idx = epoch_order[lo : lo + mae_config.batch_size]
                batch = fetch(batch_idx)
                if batch.shape[-1] > enc_config.segment_samples:
                    # the encoder declares a shorter window: train on the prefix
                    batch = batch[:, :, : enc_config.segment_samples]

                kept, masked = sample_batch_masks(
                    batch.shape[0], enc_config.n_tokens, mae_config.mask_ratio, mask_rng
                )
                rec, target = model.reconstruct_patches(batch, kept, masked)
                loss = mae_loss(rec, target, masked)
                value = float(loss.data)
                if not np.isfinite(value):
                    raise NumericError(
                        f"mae training diverged at iter {step}: loss={value}; "
                        + _non_finite_diagnostics(model.params)
                    )
                opt.zero_grad()
                loss.backward()
                clip_grad_norm(model.params, mae_config.clip_norm)
                lr = sched.lr_at(step)
                opt.step(lr=lr)

                losses.append(value)
                if step % log_every == 0 or step == mae_config.steps - 1:
                    log.writerow([step, f"{lr:.3e}", f"{value:.6f}"])
                step += 1
                if step % ckpt_every == 0:
                    save_checkpoint(ckpt_path, model.encoder.export_params())
    save_checkpoint(ckpt_path, model.encoder.export_params())
    return model, losses
