"""Pure numpy implementations of the LSTM step kernels.

Gate blocks are stacked along the last axis in the order ``i, o, f, g``.
"""
from __future__ import annotations

import numpy as np


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def gates_forward(z, c_prev, standard_cell_output):
    """Activate stacked pre-activations ``z`` (B, 4H) and advance the cell.

    Returns ``(acts, c, h)`` where ``acts`` holds the activated gates.
    """
    H = c_prev.shape[1]
    acts = np.empty_like(z)
    acts[:, : 3 * H] = _sigmoid(z[:, : 3 * H])
    acts[:, 3 * H :] = np.tanh(z[:, 3 * H :])
    i = acts[:, :H]
    o = acts[:, H : 2 * H]
    f = acts[:, 2 * H : 3 * H]
    g = acts[:, 3 * H :]
    c = f * c_prev + i * g
    h = o * np.tanh(c) if standard_cell_output else o * c
    return acts, c, h


def gates_backward(acts, c_prev, c, dh, dc_next, standard_cell_output):
    """Gradient of one step with respect to ``z`` and ``c_prev``."""
    H = c_prev.shape[1]
    i = acts[:, :H]
    o = acts[:, H : 2 * H]
    f = acts[:, 2 * H : 3 * H]
    g = acts[:, 3 * H :]
    if standard_cell_output:
        tc = np.tanh(c)
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
    else:
        do = dh * c
        dc = dc_next + dh * o
    dz = np.empty_like(acts)
    dz[:, :H] = dc * g * i * (1.0 - i)
    dz[:, H : 2 * H] = do * o * (1.0 - o)
    dz[:, 2 * H : 3 * H] = dc * c_prev * f * (1.0 - f)
    dz[:, 3 * H :] = dc * i * (1.0 - g * g)
    return dz, dc * f


def masked_xent(logits, support, targets, weights):
    """Masked softmax cross-entropy for a batch of rows.

    ``support`` is a (V,) or (B, V) boolean array; ``weights`` (B,) scales
    each row's loss and gradient (0 for padding). Returns per-row
    unweighted losses and weighted ``d loss / d logits``.
    """
    z = np.where(support, logits, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e.sum(axis=1, keepdims=True)
    p = e / s
    rows = np.arange(logits.shape[0])
    losses = np.log(s[:, 0]) - z[rows, targets]
    dlogits = p * weights[:, None]
    dlogits[rows, targets] -= weights
    return losses, dlogits
