"""Bias-corrected Adam over a fixed list of parameter tensors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import NonFiniteError, Tensor


@dataclass
class AdamState:
    """Optimizer moments, stored flat over the concatenated parameters."""

    step: int
    m: np.ndarray
    v: np.ndarray
    lr: float
    beta1: float
    beta2: float
    eps: float


def adam_init(params: Sequence[Tensor], lr: float = 2e-4, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    n = sum(p.data.size for p in params)
    return AdamState(step=0, m=np.zeros(n), v=np.zeros(n), lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_update(state: AdamState, params: Sequence[Tensor],
                grads: Sequence[np.ndarray] | None = None) -> None:
    """Apply one Adam step in place.

    ``grads`` defaults to each parameter's accumulated ``grad`` buffer
    (missing buffers count as zero).  Any non-finite gradient aborts before
    anything -- moments, step counter, or parameters -- is touched.
    """
    if grads is None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    if len(grads) != len(params):
        raise ValueError(f"got {len(grads)} gradients for {len(params)} parameters")
    flat_grads = []
    for p, g in zip(params, grads):
        g = np.asarray(g, dtype=np.float64)
        if g.size != p.data.size:
            raise ValueError(f"gradient size {g.size} does not match parameter size {p.data.size}")
        if not np.isfinite(g).all():
            raise NonFiniteError("non-finite gradient; update aborted")
        flat_grads.append(g.reshape(-1))
    g_all = np.concatenate(flat_grads) if flat_grads else np.zeros(0)
    if g_all.size != state.m.size:
        raise ValueError(f"parameter count {g_all.size} does not match optimizer state {state.m.size}")

    state.step += 1
    t = state.step
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g_all
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g_all * g_all
    m_hat = state.m / (1.0 - state.beta1 ** t)
    v_hat = state.v / (1.0 - state.beta2 ** t)
    delta = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)

    offset = 0
    for p in params:
        n = p.data.size
        p.data -= delta[offset:offset + n].reshape(p.data.shape)
        offset += n
