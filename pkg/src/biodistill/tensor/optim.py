"""AdamW with decoupled weight decay, global-norm clipping, lr schedules."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, Optional

import numpy as np

from ..errors import ConfigError, NumericError
from .core import Tensor


class AdamW:
    """Decoupled-weight-decay Adam over a named parameter dict.

    The update uses the bias-correction-in-step-size form:
        step = lr * sqrt(1 - b2^t) / (1 - b1^t)
        p   -= step * m / (sqrt(v) + eps)
    with the decay p *= (1 - lr*wd) applied first, independent of the
    gradient. A parameter with no gradient this step is treated as having
    a zero gradient (its moments still decay).
    """

    def __init__(
        self,
        params: Dict[str, Tensor],
        lr: float = 1e-3,
        betas: tuple = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 1e-5,
        strict: bool = False,
    ):
        self.params = params
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.strict = strict
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: Optional[float] = None) -> None:
        """Apply one update; `lr` overrides the stored rate for this step."""
        cur_lr = self.lr if lr is None else float(lr)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        step_size = cur_lr * np.sqrt(1.0 - b2**self.t) / (1.0 - b1**self.t)
        decay = 1.0 - cur_lr * self.weight_decay
        for name, p in self.params.items():
            g = p.grad
            if g is not None and self.strict and not np.all(np.isfinite(g)):
                raise NumericError(f"adamw_step: non-finite gradient for {name!r}")
            if self.weight_decay:
                p.data *= decay
            m, v = self.m[name], self.v[name]
            if g is None:
                m *= b1
                v *= b2
            else:
                m *= b1
                m += (1.0 - b1) * g
                v *= b2
                v += (1.0 - b2) * np.square(g)
            p.data -= step_size * m / (np.sqrt(v) + self.eps)

    # moments plus the step counter, for resumable checkpoints
    def state_arrays(self) -> Dict[str, np.ndarray]:
        out = {f"opt.m.{k}": v for k, v in self.m.items()}
        out.update({f"opt.v.{k}": v for k, v in self.v.items()})
        out["opt.step"] = np.asarray(self.t, dtype=np.int64)
        return out

    def load_state_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        for k in self.m:
            self.m[k] = np.array(arrays[f"opt.m.{k}"], copy=True)
            self.v[k] = np.array(arrays[f"opt.v.{k}"], copy=True)
        self.t = int(arrays["opt.step"])


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale the whole gradient set to global L2 norm `max_norm` if it exceeds it.

    Accepts a name→Tensor dict or an iterable of Tensors; returns the
    pre-clip norm. Norm accumulation happens in float64.
    """
    tensors = params.values() if isinstance(params, dict) else params
    grads = [p.grad for p in tensors if p.grad is not None]
    total_sq = 0.0
    for g in grads:
        total_sq += float(np.sum(np.square(g, dtype=np.float64)))
    total = float(np.sqrt(total_sq))
    if total > max_norm > 0.0:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total


@dataclass(frozen=True)
class LrSchedule:
    """Learning-rate curve: warmup-exponential, step-decay, or constant."""

    kind: str
    max_lr: float
    warmup_iters: int = 0
    decay_gamma: float = 1.0
    decay_every_iters: int = 0

    _KINDS = ("warmup-exponential", "step-decay", "constant")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ConfigError(f"unknown schedule kind {self.kind!r}")
        if self.max_lr < 0:
            raise ConfigError("max_lr must be non-negative")

    def lr_at(self, i: int) -> float:
        if i < 0:
            raise ConfigError(f"schedule iter must be >= 0, got {i}")
        if self.kind == "constant":
            return self.max_lr
        if self.kind == "warmup-exponential":
            if i < self.warmup_iters:
                return self.max_lr * (i / self.warmup_iters)
            if self.decay_every_iters <= 0:
                return self.max_lr
            k = (i - self.warmup_iters) // self.decay_every_iters
            return self.max_lr * self.decay_gamma**k
        # step-decay
        if self.decay_every_iters <= 0:
            return self.max_lr
        return self.max_lr * self.decay_gamma ** (i // self.decay_every_iters)


def lr_at(schedule: LrSchedule, i: int) -> float:
    return schedule.lr_at(i)
