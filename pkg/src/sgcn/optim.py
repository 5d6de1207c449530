"""ADAM optimizer with bias correction."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .errors import ShapeError, SgcnError


class AdamState:
    """First/second moment estimates for a fixed list of parameters."""

    def __init__(self, params: list[Tensor], lr: float = 0.002,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise SgcnError(f"learning rate must be positive, got {lr}")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise SgcnError("betas must lie in [0, 1)")
        if eps <= 0:
            raise SgcnError("eps must be positive")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]


def adam_step(params: list[Tensor], grads: list[np.ndarray], state: AdamState) -> None:
    """One ADAM update in place; ``grads`` align with ``params``."""
    if len(params) != len(grads) or len(params) != len(state.params):
        raise ShapeError(
            f"adam_step: {len(params)} params, {len(grads)} grads, "
            f"state holds {len(state.params)}"
        )
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.data.shape:
            raise ShapeError(f"adam_step: grad shape {g.shape} != param shape {p.data.shape}")
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p.data -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.data.dtype)


def apply_gradients(state: AdamState) -> None:
    """Convenience wrapper: step with each parameter's accumulated grad."""
    grads = []
    for p in state.params:
        grads.append(p.grad if p.grad is not None else np.zeros_like(p.data))
    adam_step(state.params, grads, state)


def zero_gradients(params: list[Tensor]) -> None:
    for p in params:
        p.zero_grad()
