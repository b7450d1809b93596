"""Adam with linear warmup followed by linear decay to zero."""
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping

import numpy as np

from errors import ConfigError, NumericalError, ShapeError
from tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LrSchedule:
    base_lr: float
    warmup_ratio: float
    total_steps: int

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ConfigError("base_lr must be positive")
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise ConfigError("warmup_ratio must lie in [0, 1)")
        if self.total_steps < 1:
            raise ConfigError("total_steps must be at least 1")

    @property
    def warmup_steps(self) -> int:
        """At least one warmup step whenever warmup_ratio > 0, so lr starts at 0."""
        if self.warmup_ratio == 0.0:
            return 0
        return min(math.ceil(round(self.warmup_ratio * self.total_steps, 9)), self.total_steps)


def lr_at(schedule: LrSchedule, step: int) -> float:
    """0 -> base_lr linearly over the warmup steps, then base_lr -> 0 at total_steps."""
    if not 0 <= step <= schedule.total_steps:
        raise ConfigError(f"step {step} outside [0, {schedule.total_steps}]")
    warmup, total = schedule.warmup_steps, schedule.total_steps
    if step == total:
        return 0.0
    if step < warmup:
        return schedule.base_lr * step / warmup
    return schedule.base_lr * (total - step) / (total - warmup)


@dataclass
class AdamState:
    """Per-parameter first/second moments and the shared step counter."""

    m: Dict[str, np.ndarray] = field(default_factory=OrderedDict)
    v: Dict[str, np.ndarray] = field(default_factory=OrderedDict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray], **hyper) -> "AdamState":
        return cls(
            m=OrderedDict((k, np.zeros_like(p)) for k, p in params.items()),
            v=OrderedDict((k, np.zeros_like(p)) for k, p in params.items()),
            **hyper,
        )

    def meta(self) -> Dict[str, Any]:
        return {"step": self.step, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}

    def arrays(self) -> "OrderedDict[str, np.ndarray]":
        out: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name in self.m:
            out[f"m.{name}"] = self.m[name]
            out[f"v.{name}"] = self.v[name]
        return out

    @classmethod
    def from_saved(cls, meta: Dict[str, Any], arrays: Mapping[str, np.ndarray]) -> "AdamState":
        m = OrderedDict((k[2:], v) for k, v in arrays.items() if k.startswith("m."))
        v = OrderedDict((k[2:], a) for k, a in arrays.items() if k.startswith("v."))
        return cls(m=m, v=v, step=int(meta["step"]), beta1=meta["beta1"], beta2=meta["beta2"], eps=meta["eps"])


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState,
              lr: float) -> "OrderedDict[str, np.ndarray]":
    """One bias-corrected Adam update; returns new parameter arrays and advances `state`."""
    if lr < 0:
        raise ConfigError("learning rate must be non-negative")
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape or state.m[name].shape != p.shape:
            raise ShapeError(f"gradient for '{name}' does not match parameter", g.shape, p.shape)
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for '{name}'")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** state.step
    correction2 = 1.0 - b2 ** state.step
    updated: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for name, p in params.items():
        g = grads[name]
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / correction1
        v_hat = state.v[name] / correction2
        updated[name] = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return updated


class Adam:
    """Adam over named leaf tensors; gradients are read from `.grad` (None counts as zero)."""

    def __init__(self, params: "OrderedDict[str, Tensor]", state: AdamState = None, **hyper):
        self.params = params
        self.state = state or AdamState.zeros_like({k: t.data for k, t in params.items()}, **hyper)
        missing = set(params) - set(self.state.m)
        if missing:
            raise ConfigError(f"optimizer state lacks moments for {sorted(missing)}")

    def step(self, lr: float) -> None:
        arrays = OrderedDict((k, t.data) for k, t in self.params.items())
        grads = OrderedDict(
            (k, t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in self.params.items()
        )
        for name, values in adam_step(arrays, grads, self.state, lr).items():
            self.params[name].assign(values)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()
