"""Bias-corrected Adam over named parameter tensors."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError
from .tensor import Tensor


class AdamState:
    """First/second-moment buffers and a shared step counter.

    Buffers are keyed by parameter identity and created lazily on the first
    step that touches a parameter.
    """

    def __init__(self, lr: float = 0.001, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ContractError("learning rate must be positive")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._slots: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def slots_for(self, param: Tensor) -> tuple[np.ndarray, np.ndarray]:
        key = id(param)
        slot = self._slots.get(key)
        if slot is None:
            slot = (np.zeros_like(param.data), np.zeros_like(param.data))
            self._slots[key] = slot
        return slot

    def load_slots(self, param: Tensor, m: np.ndarray, v: np.ndarray) -> None:
        if m.shape != param.data.shape or v.shape != param.data.shape:
            raise ContractError("Adam moment shape does not match parameter")
        self._slots[id(param)] = (m.astype(np.float64), v.astype(np.float64))


def adam_step(params: list[Tensor], state: AdamState) -> None:
    """Apply one bias-corrected Adam update and clear gradients."""
    for p in params:
        if p.grad is None:
            raise ContractError("adam_step: parameter has no gradient")
        if p.grad.shape != p.data.shape:
            raise ContractError(
                f"adam_step: gradient shape {p.grad.shape} does not match "
                f"parameter shape {p.data.shape}"
            )
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p in params:
        m, v = state.slots_for(p)
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.grad = None
