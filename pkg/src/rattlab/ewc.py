"""Elastic Weight Consolidation for the growing-vocabulary decoder.

Only weights shared with the previous task are penalised; embedding
columns and classifier rows of words added for the current task are free.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError
from .model import BIASES, LSTM_H, LSTM_X, Example, ModelDims, ModelParams, backward, forward_batch


@dataclass(frozen=True)
class EwcConfig:
    lam: float = 1.0
    fisher_samples: int = 200

    def __post_init__(self):
        if self.lam < 0:
            raise DomainError("EWC lambda must be non-negative")
        if self.fisher_samples < 1:
            raise DomainError("fisher_samples must be >= 1")


@dataclass(frozen=True)
class Snapshot:
    params: ModelParams
    vocab_size: int

    @classmethod
    def take(cls, params: ModelParams) -> "Snapshot":
        return cls(params.copy(), params.dims.vocab_size)


FisherDiag = ModelParams


def fisher_from_gradients(grads: Sequence[ModelParams]) -> FisherDiag:
    """Mean of elementwise squared per-example gradients."""
    if not grads:
        raise DomainError("cannot estimate a Fisher diagonal from no examples")
    acc = grads[0].map(lambda k, v: v * v)
    for g in grads[1:]:
        for k, v in g.items():
            acc[k] += v * v
    n = float(len(grads))
    return acc.map(lambda k, v: v / n)


def estimate_fisher(
    params: ModelParams,
    data: Sequence[Example],
    n: int,
    support,
    standard_cell_output: bool = False,
) -> FisherDiag:
    """Empirical Fisher over the first ``n`` examples of ``data``.

    Each example contributes the squared gradient of its caption
    log-likelihood at the current parameters.
    """
    if not data:
        raise DomainError("cannot estimate a Fisher diagonal from an empty dataset")
    if n < 1:
        raise DomainError("need at least one Fisher sample")
    n = min(n, len(data))
    grads = []
    for ex in data[:n]:
        trace = forward_batch(params, ex.features[None, :], np.asarray([ex.caption]), support, standard_cell_output=standard_cell_output)
        grads.append(backward(trace, params))
    return fisher_from_gradients(grads)


def shared_param_indices(old_vocab_size: int, new_vocab_size: int, dims: ModelDims) -> ModelParams:
    """0/1 masks marking the entries shared with the previous task."""
    if new_vocab_size < old_vocab_size:
        raise DomainError("vocabulary cannot shrink")
    E, H, F = dims.d_emb, dims.d_hidden, dims.d_feat
    ones = {
        "V": np.ones((E, F)),
        "S": np.zeros((E, new_vocab_size)),
        "C": np.zeros((new_vocab_size, H)),
    }
    ones["S"][:, :old_vocab_size] = 1.0
    ones["C"][:old_vocab_size] = 1.0
    for k in LSTM_X:
        ones[k] = np.ones((H, E))
    for k in LSTM_H:
        ones[k] = np.ones((H, H))
    for k in BIASES:
        ones[k] = np.ones(H)
    return ModelParams(ones)


def _pad_to(arr: np.ndarray, key: str, vocab_size: int) -> np.ndarray:
    if key == "S" and arr.shape[1] < vocab_size:
        return np.pad(arr, ((0, 0), (0, vocab_size - arr.shape[1])))
    if key == "C" and arr.shape[0] < vocab_size:
        return np.pad(arr, ((0, vocab_size - arr.shape[0]), (0, 0)))
    return arr


def ewc_penalty_and_grad(
    theta: ModelParams,
    snap: Snapshot,
    fisher: FisherDiag,
    cfg: EwcConfig,
    shared: ModelParams | None = None,
):
    """``lam * sum_i F_i (theta_i - theta_hat_i)^2 / 2`` over shared entries, and its gradient."""
    vs = theta.dims.vocab_size
    if shared is None:
        shared = shared_param_indices(snap.vocab_size, vs, theta.dims)
    total = 0.0
    grads = {}
    for k, w in theta.items():
        ref = _pad_to(snap.params[k], k, vs)
        f = _pad_to(fisher[k], k, vs) * shared[k]
        diff = w - ref
        total += float((f * diff * diff).sum())
        grads[k] = cfg.lam * f * diff
    return 0.5 * cfg.lam * total, ModelParams(grads)


def ewc_proximal_step(
    theta: ModelParams,
    snap: Snapshot,
    fisher: FisherDiag,
    cfg: EwcConfig,
    lr: float,
    shared: ModelParams | None = None,
) -> None:
    """Apply the penalty exactly after a plain gradient step, in place.

    Minimises ``|theta' - theta|^2 / 2 + lr * penalty(theta')`` entrywise:
    ``theta' = (theta + a * theta_hat) / (1 + a)`` with ``a = lr * lam * F``.
    Unlike adding the penalty gradient, this is stable for any ``lam``.
    """
    vs = theta.dims.vocab_size
    if shared is None:
        shared = shared_param_indices(snap.vocab_size, vs, theta.dims)
    for k, w in theta.items():
        a = (lr * cfg.lam) * _pad_to(fisher[k], k, vs) * shared[k]
        theta[k] = (w + a * _pad_to(snap.params[k], k, vs)) / (1.0 + a)


def fisher_summary(fisher: FisherDiag) -> dict[str, float]:
    return {k: float(v.mean()) for k, v in fisher.items()}
