"""Patch-tokenized Transformer encoders and projection heads.

A 60 s multichannel segment at 64 Hz becomes 192 non-overlapping patches of
0.3125 s (20 samples x C channels, flattened), each linearly projected to a
token. Pre-layer-norm Transformer blocks with GeLU MLPs and sinusoidal
positions follow; the embedding is the global average over tokens. No CLS
token, no dropout.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, Optional

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor, constant, default_dtype, gelu, layer_norm, param
from .tensor.functional import linear, mean_pool, multi_head_attention

# size tag -> (token_dim, n_layers, mlp_hidden, n_heads)
SIZE_TABLE = {
    "XS": (128, 4, 512, 4),
    "S": (128, 6, 512, 4),
    "M": (192, 6, 1024, 6),
    "L": (256, 6, 1024, 8),
    "XL": (256, 8, 1024, 8),
}

INIT_STD = 0.02


@dataclass(frozen=True)
class EncoderConfig:
    token_dim: int
    n_layers: int
    n_heads: int
    mlp_hidden: int
    input_channels: int
    size_tag: str = "custom"
    patch_window_s: float = 0.3125
    input_rate_hz: int = 64
    segment_s: int = 60

    @classmethod
    def from_size(cls, tag: str, input_channels: int, **overrides) -> "EncoderConfig":
        if tag not in SIZE_TABLE:
            raise ConfigError(f"unknown encoder size {tag!r}; choose from {sorted(SIZE_TABLE)}")
        d, layers, mlp, heads = SIZE_TABLE[tag]
        cfg = cls(
            token_dim=d,
            n_layers=layers,
            n_heads=heads,
            mlp_hidden=mlp,
            input_channels=input_channels,
            size_tag=tag,
        )
        return replace(cfg, **overrides) if overrides else cfg

    def __post_init__(self):
        if self.token_dim % self.n_heads:
            raise ConfigError(
                f"token_dim {self.token_dim} not divisible by n_heads {self.n_heads}"
            )
        ps = self.patch_window_s * self.input_rate_hz
        if abs(ps - round(ps)) > 1e-9 or round(ps) <= 0:
            raise ConfigError(f"patch window {self.patch_window_s}s is not a whole number of samples at {self.input_rate_hz} Hz")
        if self.segment_samples % self.patch_samples:
            raise ConfigError(
                f"segment of {self.segment_samples} samples not divisible by patch of {self.patch_samples}"
            )

    @property
    def patch_samples(self) -> int:
        return int(round(self.patch_window_s * self.input_rate_hz))

    @property
    def segment_samples(self) -> int:
        return self.segment_s * self.input_rate_hz

    @property
    def n_tokens(self) -> int:
        return self.segment_samples // self.patch_samples

    @property
    def patch_dim(self) -> int:
        return self.input_channels * self.patch_samples


def positional_embedding(n_tokens: int, dim: int) -> np.ndarray:
    """Fixed sinusoid table: even columns sin(pos/10000^(2k/dim)), odd cos."""
    pos = np.arange(n_tokens, dtype=np.float64)[:, None]
    k2 = np.arange(0, dim, 2, dtype=np.float64)
    rates = pos / np.power(10000.0, k2 / dim)
    table = np.zeros((n_tokens, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(rates)
    table[:, 1::2] = np.cos(rates[:, : table[:, 1::2].shape[1]])
    return table


def param_count(config: EncoderConfig) -> int:
    """Trainable scalars in the encoder (projection heads not included)."""
    d, h = config.token_dim, config.mlp_hidden
    tok = config.patch_dim * d + d
    attn = 4 * (d * d + d)
    norms = 2 * 2 * d
    mlp = d * h + h + h * d + d
    return tok + config.n_layers * (attn + norms + mlp)


def init_block_params(
    n_layers: int,
    token_dim: int,
    mlp_hidden: int,
    rng: np.random.Generator,
    prefix: str = "block",
) -> Dict[str, Tensor]:
    """Fresh parameters for a pre-LN block stack, named `{prefix}{i}.*`."""
    d, h = token_dim, mlp_hidden
    dt = default_dtype()

    def w(shape):
        return param(rng.normal(0.0, INIT_STD, shape).astype(dt))

    def zeros(*shape):
        return param(np.zeros(shape, dtype=dt))

    def ones(*shape):
        return param(np.ones(shape, dtype=dt))

    p: Dict[str, Tensor] = {}
    for i in range(n_layers):
        p[f"{prefix}{i}.ln1.g"] = ones(d)
        p[f"{prefix}{i}.ln1.b"] = zeros(d)
        for name in ("q", "k", "v", "o"):
            p[f"{prefix}{i}.attn.{name}"] = w((d, d))
            p[f"{prefix}{i}.attn.{name}.b"] = zeros(d)
        p[f"{prefix}{i}.ln2.g"] = ones(d)
        p[f"{prefix}{i}.ln2.b"] = zeros(d)
        p[f"{prefix}{i}.mlp.w1"] = w((d, h))
        p[f"{prefix}{i}.mlp.b1"] = zeros(h)
        p[f"{prefix}{i}.mlp.w2"] = w((h, d))
        p[f"{prefix}{i}.mlp.b2"] = zeros(d)
    return p


def run_blocks(
    params: Dict[str, Tensor], prefix: str, x: Tensor, n_layers: int, n_heads: int
) -> Tensor:
    """Apply a named pre-LN block stack to a (B, N, D) token tensor."""
    p = params
    for i in range(n_layers):
        pre = layer_norm(x, p[f"{prefix}{i}.ln1.g"], p[f"{prefix}{i}.ln1.b"])
        x = x + multi_head_attention(
            pre,
            p[f"{prefix}{i}.attn.q"], p[f"{prefix}{i}.attn.q.b"],
            p[f"{prefix}{i}.attn.k"], p[f"{prefix}{i}.attn.k.b"],
            p[f"{prefix}{i}.attn.v"], p[f"{prefix}{i}.attn.v.b"],
            p[f"{prefix}{i}.attn.o"], p[f"{prefix}{i}.attn.o.b"],
            n_heads,
        )
        pre = layer_norm(x, p[f"{prefix}{i}.ln2.g"], p[f"{prefix}{i}.ln2.b"])
        hidden = gelu(linear(pre, p[f"{prefix}{i}.mlp.w1"], p[f"{prefix}{i}.mlp.b1"]))
        x = x + linear(hidden, p[f"{prefix}{i}.mlp.w2"], p[f"{prefix}{i}.mlp.b2"])
    return x


def _init_params(config: EncoderConfig, rng: np.random.Generator) -> Dict[str, Tensor]:
    d = config.token_dim
    dt = default_dtype()
    p: Dict[str, Tensor] = {
        "tokenizer.w": param(rng.normal(0.0, INIT_STD, (config.patch_dim, d)).astype(dt)),
        "tokenizer.b": param(np.zeros(d, dtype=dt)),
    }
    p.update(init_block_params(config.n_layers, d, config.mlp_hidden, rng))
    return p


class Encoder:
    """Transformer encoder mapping (B, C, T) signals to (B, token_dim) embeddings."""

    def __init__(self, config: EncoderConfig, rng: Optional[np.random.Generator] = None):
        self.config = config
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = _init_params(config, rng)
        self.positions = positional_embedding(config.n_tokens, config.token_dim)

    # -- persistence ---------------------------------------------------

    def export_params(self) -> Dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_params(self, arrays: Dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            if k not in arrays:
                raise ConfigError(f"missing encoder tensor {k!r} in checkpoint")
            if arrays[k].shape != p.data.shape:
                raise ShapeError(
                    f"encoder tensor {k!r}: checkpoint shape {arrays[k].shape} "
                    f"!= model shape {p.data.shape}"
                )
            p.data = np.array(arrays[k], dtype=p.data.dtype, copy=True)

    # -- forward pieces ------------------------------------------------

    def patchify(self, signal: np.ndarray) -> np.ndarray:
        """(B, C, T) -> (B, n_tokens, C*patch) patch matrix, numpy-side."""
        sig = np.asarray(signal)
        if sig.ndim == 2:
            sig = sig[None]
        b, c, t = sig.shape
        cfg = self.config
        if c != cfg.input_channels:
            raise ShapeError(
                f"encode: expected {cfg.input_channels} channels, got {c}"
            )
        if t % cfg.patch_samples:
            raise ShapeError(
                f"encode: length {t} not divisible by patch of {cfg.patch_samples} samples"
            )
        n_tok = t // cfg.patch_samples
        patches = sig.reshape(b, c, n_tok, cfg.patch_samples)
        return patches.transpose(0, 2, 1, 3).reshape(b, n_tok, c * cfg.patch_samples)

    def tokenize(self, signal: np.ndarray) -> Tensor:
        """Linear projection of patches; gradients flow to the tokenizer only."""
        patches = constant(np.ascontiguousarray(self.patchify(signal)))
        return linear(patches, self.params["tokenizer.w"], self.params["tokenizer.b"])

    def forward_tokens(self, tokens: Tensor) -> Tensor:
        """Run the Transformer blocks over an arbitrary token sequence."""
        cfg = self.config
        return run_blocks(self.params, "block", tokens, cfg.n_layers, cfg.n_heads)

    def tokens_with_positions(self, signal: np.ndarray) -> Tensor:
        tokens = self.tokenize(signal)
        n_tok = tokens.shape[1]
        pos = constant(self.positions[:n_tok].astype(tokens.dtype))
        return tokens + pos

    def encode(self, signal: np.ndarray) -> Tensor:
        """tokenize -> +positions -> blocks -> mean-pool."""
        return mean_pool(self.forward_tokens(self.tokens_with_positions(signal)))


class ProjectionHead:
    """MLP head: embedding -> hidden (GeLU) -> low-dimensional output."""

    def __init__(
        self,
        in_dim: int,
        hidden_dim: int = 1024,
        out_dim: int = 128,
        rng: Optional[np.random.Generator] = None,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        dt = default_dtype()
        self.in_dim, self.hidden_dim, self.out_dim = in_dim, hidden_dim, out_dim
        self.params = {
            "head.w1": param(rng.normal(0.0, INIT_STD, (in_dim, hidden_dim)).astype(dt)),
            "head.b1": param(np.zeros(hidden_dim, dtype=dt)),
            "head.w2": param(rng.normal(0.0, INIT_STD, (hidden_dim, out_dim)).astype(dt)),
            "head.b2": param(np.zeros(out_dim, dtype=dt)),
        }

    def __call__(self, x: Tensor) -> Tensor:
        h = gelu(linear(x, self.params["head.w1"], self.params["head.b1"]))
        return linear(h, self.params["head.w2"], self.params["head.b2"])

    def export_params(self) -> Dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_params(self, arrays: Dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            if k not in arrays:
                raise ConfigError(f"missing head tensor {k!r} in checkpoint")
            p.data = np.array(arrays[k], dtype=p.data.dtype, copy=True)
