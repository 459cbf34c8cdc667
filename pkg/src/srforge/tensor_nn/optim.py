"""Parameter registry, Adam, and the warmup/inverse-sqrt schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor


@dataclass(frozen=True)
class ScheduleConfig:
    d_model: int
    warmup_steps: int = 4000
    scale: float = 1.0

    def __post_init__(self):
        if self.warmup_steps < 1:
            raise ValueError("warmup_steps must be >= 1")


def noam_lr(step: int, cfg: ScheduleConfig) -> float:
    """scale * d^-0.5 * min(step^-0.5, step * warmup^-1.5); peaks at warmup."""
    if step < 1:
        raise ValueError("schedule step starts at 1")
    return cfg.scale * cfg.d_model ** -0.5 * min(step ** -0.5, step * cfg.warmup_steps ** -1.5)


def init_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype=np.float32) -> np.ndarray:
    bound = math.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class ParameterStore:
    """Named trainable tensors in insertion order, with Adam moments."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def register(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        tensor = Tensor(np.asarray(data), requires_grad=True)
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def total_count(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = None

    def moments(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        return self._m[name], self._v[name]

    def set_moments(self, name: str, m: np.ndarray, v: np.ndarray) -> None:
        param = self._params[name]
        if m.shape != param.data.shape or v.shape != param.data.shape:
            raise ValueError(f"moment shape mismatch for {name!r}")
        self._m[name] = m.astype(param.data.dtype)
        self._v[name] = v.astype(param.data.dtype)

    def has_moments(self) -> bool:
        return bool(self._m)


def adam_step(
    store: ParameterStore,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.98,
    eps: float = 1e-9,
) -> None:
    """One Adam update with bias correction; clears gradients afterwards."""
    for name, param in store.items():
        if param.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient")
    store.step_count += 1
    t = store.step_count
    for name, param in store.items():
        g = param.grad
        m = store._m.get(name)
        v = store._v.get(name)
        if m is None:
            m = np.zeros_like(param.data)
            v = np.zeros_like(param.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        store._m[name] = m
        store._v[name] = v
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        param.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(param.data.dtype)
    store.zero_grads()
