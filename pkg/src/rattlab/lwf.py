"""Recurrent Learning without Forgetting.

The model from the previous task is a frozen teacher. At every decoding
step the student's input embedding is fed to both networks, each keeping
its own hidden and cell state, and a temperature-softened cross-entropy
ties the student's distribution over old words to the teacher's.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .linalg import log_softmax_t, softmax_t
from .model import ForwardTrace, ModelParams, forward_batch, unroll


@dataclass(frozen=True)
class LwfConfig:
    lam: float = 1.0
    temperature: float = 2.0

    def __post_init__(self):
        if self.lam < 0:
            raise DomainError("LwF lambda must be non-negative")
        if not self.temperature > 0:
            raise DomainError("temperature must be positive")


@dataclass(frozen=True)
class TeacherSnapshot:
    params: ModelParams
    vocab_size: int

    @classmethod
    def take(cls, params: ModelParams) -> "TeacherSnapshot":
        return cls(params.copy(), params.dims.vocab_size)


def teacher_logits(teacher: TeacherSnapshot, x: np.ndarray, standard_cell_output: bool = False) -> np.ndarray:
    """Teacher logits (T, B, V_old) for student inputs ``x`` (T, B, E)."""
    _, _, _, hbar = unroll(teacher.params, x, None, standard_cell_output)
    T, B, H = hbar.shape
    return (hbar.reshape(T * B, H) @ teacher.params.C.T).reshape(T, B, teacher.vocab_size)


def distill_forward(student: ModelParams, teacher: TeacherSnapshot, features, captions, support, standard_cell_output=False):
    """Student trace and the teacher's per-step logits over the old vocabulary."""
    trace = forward_batch(student, features, captions, support, standard_cell_output=standard_cell_output)
    return trace, teacher_logits(teacher, trace.x, standard_cell_output)


def distill_loss(student_old: np.ndarray, teacher_old: np.ndarray, cfg: LwfConfig, valid: np.ndarray | None = None):
    """Cross-entropy of softened student predictions against the teacher's.

    Logit arrays end in the old-vocabulary axis; ``valid`` masks padded
    positions. Returns the summed loss and its gradient with respect to
    the student logits.
    """
    if student_old.shape[-1] == 0:
        return 0.0, np.zeros_like(student_old)
    T = cfg.temperature
    support = np.ones(student_old.shape[-1], dtype=bool)
    q_t = softmax_t(teacher_old, T, support)
    log_q_s = log_softmax_t(student_old, T, support)
    per_pos = -(q_t * log_q_s).sum(axis=-1)
    grad = (np.exp(log_q_s) - q_t) / T
    if valid is not None:
        per_pos = np.where(valid, per_pos, 0.0)
        grad = grad * valid[..., None]
    return float(per_pos.sum()), grad


def lwf_total_loss(ce: float, distill: float, lam: float) -> float:
    if lam < 0:
        raise DomainError("LwF lambda must be non-negative")
    return ce + lam * distill


def lwf_extra_dlogits(trace: ForwardTrace, t_logits: np.ndarray, cfg: LwfConfig, scale: float = 1.0):
    """Distillation loss on a batch and its gradient laid out over the full vocabulary."""
    v_old = t_logits.shape[-1]
    loss, g_old = distill_loss(trace.logits[..., :v_old], t_logits, cfg, trace.valid)
    extra = np.zeros_like(trace.logits)
    extra[..., :v_old] = (cfg.lam * scale) * g_old
    return loss, extra
