"""Pure-numpy reference implementation of the recurrent sequence kernels.

The hot loop of every encoder layer lives here (or in the compiled twin,
``_gru_cy``): a left-to-right GRU whose hidden state restarts from zero at
every position whose ``resets`` flag is set.  Input projections
``xw = x @ W + b`` are precomputed by the caller in one big matrix product,
so the kernel only handles the genuinely sequential part.

Gate order inside the stacked arrays is (update z, reset r, candidate c).
``resets[:, 0]`` must be 1: the first step always starts from the zero
state.  Rows at or beyond an item's length come out as exact zeros.
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def gru_forward(xw: np.ndarray, resets: np.ndarray, u: np.ndarray,
                lengths: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Run the recurrence; returns hidden states and cached gate activations.

    xw      (B, T, 3H) float64 -- precomputed x @ W + b per gate
    resets  (B, T) uint8       -- 1 where the previous state is dropped
    u       (3, H, H) float64  -- recurrent weights per gate
    lengths (B,) int64         -- valid prefix length per item

    Returns (h, gates): h is (B, T, H); gates is (B, T, 3H) holding the
    post-activation z, r, c values needed by the backward pass.
    """
    B, T, H3 = xw.shape
    H = H3 // 3
    uz, ur, uc = u[0], u[1], u[2]
    h = np.zeros((B, T, H))
    gates = np.zeros((B, T, H3))
    h_prev = np.zeros((B, H))
    active_t = lengths[:, None] > np.arange(T)[None, :]
    for t in range(T):
        hp = np.where(resets[:, t:t + 1] == 1, 0.0, h_prev)
        z = _sigmoid(xw[:, t, :H] + hp @ uz)
        r = _sigmoid(xw[:, t, H:2 * H] + hp @ ur)
        c = np.tanh(xw[:, t, 2 * H:] + (r * hp) @ uc)
        ht = (1.0 - z) * hp + z * c
        act = active_t[:, t:t + 1]
        ht = np.where(act, ht, 0.0)
        h[:, t] = ht
        gates[:, t, :H] = np.where(act, z, 0.0)
        gates[:, t, H:2 * H] = np.where(act, r, 0.0)
        gates[:, t, 2 * H:] = np.where(act, c, 0.0)
        h_prev = ht
    return h, gates


def gru_backward(dh: np.ndarray, h: np.ndarray, gates: np.ndarray,
                 resets: np.ndarray, u: np.ndarray,
                 lengths: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Backward pass matching ``gru_forward``.

    ``dh`` is the gradient w.r.t. the emitted hidden states (it must be
    zero at padded positions, which the mask layer guarantees).  Returns
    (dxw, du): gradients w.r.t. the input projections and the recurrent
    weights.  Bias gradients are just ``dxw`` summed over (B, T) and are
    left to the caller, as is the chain back through ``x @ W``.
    """
    B, T, H = dh.shape
    H3 = 3 * H
    uz, ur, uc = u[0], u[1], u[2]
    dxw = np.zeros((B, T, H3))
    du = np.zeros_like(u)
    carry = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        g = dh[:, t] + carry
        z = gates[:, t, :H]
        r = gates[:, t, H:2 * H]
        c = gates[:, t, 2 * H:]
        if t == 0:
            hp = np.zeros((B, H))
        else:
            hp = np.where(resets[:, t:t + 1] == 1, 0.0, h[:, t - 1])
        dz = g * (c - hp) * z * (1.0 - z)
        dc = g * z * (1.0 - c * c)
        drh = dc @ uc.T
        dr = drh * hp * r * (1.0 - r)
        dhp = g * (1.0 - z) + dz @ uz.T + dr @ ur.T + drh * r
        dxw[:, t, :H] = dz
        dxw[:, t, H:2 * H] = dr
        dxw[:, t, 2 * H:] = dc
        du[0] += hp.T @ dz
        du[1] += hp.T @ dr
        du[2] += (r * hp).T @ dc
        carry = np.where(resets[:, t:t + 1] == 1, 0.0, dhp)
    return dxw, du
