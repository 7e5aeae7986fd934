"""Per-task attention masks for the recurrent decoder (RATT).

Task embeddings ``A_x`` (d_emb x K) and ``A_h`` (d_hidden x K) produce
per-task attention vectors ``a = sigmoid(s * A[:, t])`` over the LSTM input
and hidden units. The running elementwise maximum of past masks decides
which weights are frozen when later tasks are trained.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DomainError, ShapeError, TaskError
from .linalg import Rng, sigmoid
from .model import BIASES, LSTM_H, LSTM_X, ModelDims, ModelParams

PREACT_CLAMP = 50.0


@dataclass
class TaskEmbeddings:
    A_x: np.ndarray  # (d_emb, K)
    A_h: np.ndarray  # (d_hidden, K)

    @classmethod
    def init(cls, d_emb: int, d_hidden: int, n_tasks: int, rng: Rng) -> "TaskEmbeddings":
        return cls(rng.uniform(-1.0, 1.0, (d_emb, n_tasks)), rng.uniform(-1.0, 1.0, (d_hidden, n_tasks)))

    @property
    def n_tasks(self) -> int:
        return self.A_x.shape[1]

    def copy(self) -> "TaskEmbeddings":
        return TaskEmbeddings(self.A_x.copy(), self.A_h.copy())


@dataclass(frozen=True)
class MaskSet:
    a_x: np.ndarray
    a_h: np.ndarray
    a_s: np.ndarray
    task: int
    s: float

    def binarized(self, threshold: float = 0.5) -> "MaskSet":
        return replace(
            self,
            a_x=(self.a_x >= threshold).astype(np.float64),
            a_h=(self.a_h >= threshold).astype(np.float64),
        )


@dataclass(frozen=True)
class CumulativeMasks:
    a_x: np.ndarray
    a_h: np.ndarray
    a_s: np.ndarray  # bool

    @classmethod
    def empty(cls, d_emb: int, d_hidden: int, vocab_size: int) -> "CumulativeMasks":
        return cls(np.zeros(d_emb), np.zeros(d_hidden), np.zeros(vocab_size, dtype=bool))

    def grown(self, vocab_size: int) -> "CumulativeMasks":
        """Extend the vocabulary mask with zeros for newly added words."""
        extra = vocab_size - self.a_s.shape[0]
        if extra < 0:
            raise ShapeError("vocabulary cannot shrink")
        return replace(self, a_s=np.concatenate([self.a_s, np.zeros(extra, dtype=bool)]))

    def binarized(self, threshold: float = 0.5) -> "CumulativeMasks":
        return replace(
            self,
            a_x=(self.a_x >= threshold).astype(np.float64),
            a_h=(self.a_h >= threshold).astype(np.float64),
        )


@dataclass(frozen=True)
class AnnealSchedule:
    s_max: float
    batches: int

    def __post_init__(self):
        if self.s_max < 1:
            raise DomainError("s_max must be >= 1")
        if self.batches < 1:
            raise DomainError("batches per epoch must be >= 1")


@dataclass(frozen=True)
class MaskFlags:
    """Which attention families are active (for ablations)."""

    x: bool = True
    h: bool = True
    s: bool = True


def _preactivation(A: np.ndarray, t: int, s: float) -> np.ndarray:
    return np.clip(s * A[:, t], -PREACT_CLAMP, PREACT_CLAMP)


def compute_masks(emb: TaskEmbeddings, t: int, s: float, task_vocab) -> MaskSet:
    if not 0 <= t < emb.n_tasks:
        raise TaskError(f"task {t} out of range for {emb.n_tasks} task embeddings")
    if not s > 0:
        raise DomainError(f"scale s must be positive, got {s}")
    return MaskSet(
        a_x=sigmoid(_preactivation(emb.A_x, t, s)),
        a_h=sigmoid(_preactivation(emb.A_h, t, s)),
        a_s=np.asarray(task_vocab).astype(bool).copy(),
        task=t,
        s=float(s),
    )


def anneal_s(b: int, sched: AnnealSchedule) -> float:
    """Scale for batch ``b`` (1-based): linear from 1/s_max up to s_max."""
    if not 1 <= b <= sched.batches:
        raise DomainError(f"batch index {b} outside 1..{sched.batches}")
    if sched.batches == 1:
        return float(sched.s_max)
    if b == sched.batches:
        return float(sched.s_max)
    lo = 1.0 / sched.s_max
    return lo + (sched.s_max - lo) * (b - 1) / (sched.batches - 1)


def update_cumulative(prev: CumulativeMasks, cur: MaskSet) -> CumulativeMasks:
    if prev.a_s.shape[0] < cur.a_s.shape[0]:
        prev = prev.grown(cur.a_s.shape[0])
    if prev.a_x.shape != cur.a_x.shape or prev.a_h.shape != cur.a_h.shape or prev.a_s.shape != cur.a_s.shape:
        raise ShapeError("cumulative and current masks differ in shape")
    return CumulativeMasks(
        a_x=np.maximum(prev.a_x, cur.a_x),
        a_h=np.maximum(prev.a_h, cur.a_h),
        a_s=prev.a_s | cur.a_s,
    )


def effective_cumulative(cum: CumulativeMasks, flags: MaskFlags) -> CumulativeMasks:
    """Zero out the families disabled by ``flags`` so they protect nothing."""
    return CumulativeMasks(
        a_x=cum.a_x if flags.x else np.zeros_like(cum.a_x),
        a_h=cum.a_h if flags.h else np.zeros_like(cum.a_h),
        a_s=cum.a_s if flags.s else np.zeros_like(cum.a_s),
    )


def backward_masks(cum: CumulativeMasks, d_feat: int) -> ModelParams:
    """Per-weight plasticity ``1 - min(incident cumulative attentions)``.

    Rows of ``C`` are words and columns hidden units, so ``B_C[i, j]``
    pairs the word mask of row ``i`` with the hidden mask of column ``j``.
    LSTM biases get the row mask ``1 - a_h``.
    """
    ax, ah = cum.a_x, cum.a_h
    a_s = cum.a_s.astype(np.float64)
    B_h = 1.0 - np.minimum(ah[:, None], ah[None, :])
    B_x = 1.0 - np.minimum(ah[:, None], ax[None, :])
    arrays = {
        "V": np.repeat((1.0 - ax)[:, None], d_feat, axis=1),
        "S": 1.0 - np.minimum(ax[:, None], a_s[None, :]),
        "C": 1.0 - np.minimum(a_s[:, None], ah[None, :]),
    }
    arrays.update({k: B_x for k in LSTM_X})
    arrays.update({k: B_h for k in LSTM_H})
    arrays.update({k: 1.0 - ah for k in BIASES})
    return ModelParams(arrays)


def apply_masked_update(W: np.ndarray, grad: np.ndarray, B: np.ndarray, lr: float) -> np.ndarray:
    """``W - lr * (B * grad)``; entries with ``B == 0`` come back unchanged."""
    if not (W.shape == grad.shape == B.shape):
        raise ShapeError(f"masked update shapes differ: W{W.shape}, grad{grad.shape}, B{B.shape}")
    return np.where(B == 0, W, W - lr * (B * grad))


def _ratio(cur: np.ndarray, cum: np.ndarray):
    free = 1.0 - cum
    den = free.sum()
    if den <= 0.0:
        return 0.0, np.zeros_like(cur)
    return float((cur * free).sum() / den), free / den


def sparsity_loss(cur: MaskSet, cum: CumulativeMasks) -> float:
    return _ratio(cur.a_x, cum.a_x)[0] + _ratio(cur.a_h, cum.a_h)[0]


def sparsity_loss_grad(cur: MaskSet, cum: CumulativeMasks):
    """Gradients of the sparsity loss with respect to ``a_x`` and ``a_h``."""
    return _ratio(cur.a_x, cum.a_x)[1], _ratio(cur.a_h, cum.a_h)[1]


def mask_preactivation_grad(da: np.ndarray, A: np.ndarray, t: int, s: float) -> np.ndarray:
    """Chain ``d/da`` through ``sigmoid(clip(s * A[:, t]))`` to ``A[:, t]``."""
    z = s * A[:, t]
    a = sigmoid(np.clip(z, -PREACT_CLAMP, PREACT_CLAMP))
    inside = np.abs(z) <= PREACT_CLAMP
    return np.where(inside, da * s * a * (1.0 - a), 0.0)


def compensation_scale(A_col: np.ndarray, s: float, s_max: float) -> np.ndarray:
    num = s_max * (np.cosh(np.clip(s * A_col, -PREACT_CLAMP, PREACT_CLAMP)) + 1.0)
    den = s * (np.cosh(np.clip(A_col, -PREACT_CLAMP, PREACT_CLAMP)) + 1.0)
    return num / den


def compensate_embedding_gradients(gA_x, gA_h, s: float, sched: AnnealSchedule, emb: TaskEmbeddings, t: int):
    """Rescale task-embedding gradients for column ``t`` against the annealed sigmoid slope."""
    return (
        gA_x * compensation_scale(emb.A_x[:, t], s, sched.s_max),
        gA_h * compensation_scale(emb.A_h[:, t], s, sched.s_max),
    )


def mask_usage(masks: dict[int, MaskSet], threshold: float = 0.5) -> list[dict]:
    rows = []
    for t in sorted(masks):
        m = masks[t]
        rows.append({
            "task": t,
            "x_units": int((m.a_x >= threshold).sum()),
            "x_total": int(m.a_x.size),
            "x_mean": float(m.a_x.mean()),
            "h_units": int((m.a_h >= threshold).sum()),
            "h_total": int(m.a_h.size),
            "h_mean": float(m.a_h.mean()),
            "vocab_words": int(m.a_s.sum()),
        })
    return rows


def export_mask_usage(masks: dict[int, MaskSet], path, threshold: float = 0.5) -> Path:
    path = Path(path)
    rows = mask_usage(masks, threshold)
    fields = ["task", "x_units", "x_total", "x_mean", "h_units", "h_total", "h_mean", "vocab_words"]
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return path


def check_dims(emb: TaskEmbeddings, dims: ModelDims) -> None:
    if emb.A_x.shape[0] != dims.d_emb or emb.A_h.shape[0] != dims.d_hidden:
        raise ShapeError("task embeddings do not match model dimensions")
