"""Neural-net composites built from the primitive ops."""

from __future__ import annotations

import math
from typing import Optional

from ..errors import ShapeError
from .core import Tensor, add, matmul, mean, reshape, softmax, transpose


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    y = matmul(x, w)
    return add(y, b) if b is not None else y


def multi_head_attention(
    x: Tensor,
    wq: Tensor,
    bq: Tensor,
    wk: Tensor,
    bk: Tensor,
    wv: Tensor,
    bv: Tensor,
    wo: Tensor,
    bo: Tensor,
    n_heads: int,
) -> Tensor:
    """Scaled dot-product attention over (batch, tokens, dim) input."""
    b_sz, t_sz, d = x.shape
    if d % n_heads:
        raise ShapeError(f"attention: dim {d} not divisible by {n_heads} heads")
    dh = d // n_heads

    def split(t):
        return transpose(reshape(t, (b_sz, t_sz, n_heads, dh)), (0, 2, 1, 3))

    q = split(linear(x, wq, bq))
    k = split(linear(x, wk, bk))
    v = split(linear(x, wv, bv))
    scores = matmul(q, transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(dh))
    attn = softmax(scores, axis=-1)
    ctx = matmul(attn, v)
    merged = reshape(transpose(ctx, (0, 2, 1, 3)), (b_sz, t_sz, d))
    return linear(merged, wo, bo)


def mean_pool(x: Tensor) -> Tensor:
    """Average over the token axis of (batch, tokens, dim)."""
    return mean(x, axis=1)
