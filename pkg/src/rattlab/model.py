"""LSTM caption decoder with a growing vocabulary.

The decoder consumes a projected image feature at step 0 and teacher-forced
word embeddings afterwards::

    x_0 = V f,   x_n = S[:, s_n],   h_n = LSTM(x_n, h_{n-1}),   p_{n+1} = C h_n

The cell output is ``h = o * c`` by default; ``standard_cell_output=True`` gives the
conventional ``h = o * tanh(c)``. Optional attention vectors ``a_x`` and
``a_h`` multiply the LSTM input and hidden state (the masked path used by
RATT); ``a_h`` is applied to the state that feeds both the classifier and
the recurrence. Gradients are computed by hand (BPTT).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import kernels
from .errors import ShapeError, VocabularyError
from .linalg import Rng

START_ID = 0
END_ID = 1

GATES = ("i", "o", "f", "g")
LSTM_X = tuple(f"W_{g}x" for g in GATES)
LSTM_H = tuple(f"W_{g}h" for g in GATES)
BIASES = tuple(f"b_{g}" for g in GATES)
FIELDS = ("V", "S", "C") + LSTM_X + LSTM_H + BIASES

INIT_RANGE = 0.1
FORGET_BIAS = 1.0


@dataclass(frozen=True)
class ModelDims:
    d_feat: int
    d_emb: int
    d_hidden: int
    vocab_size: int

    def __post_init__(self):
        for name in ("d_feat", "d_emb", "d_hidden", "vocab_size"):
            if getattr(self, name) < 1:
                raise ShapeError(f"{name} must be >= 1")


class ModelParams:
    """All trainable decoder matrices, addressable by name.

    The same container is used for gradients, Fisher diagonals and
    backward masks, since they all share the parameter shapes.
    """

    __slots__ = ("arrays",)

    def __init__(self, arrays: dict[str, np.ndarray]):
        missing = set(FIELDS) - set(arrays)
        if missing:
            raise ShapeError(f"missing parameter arrays: {sorted(missing)}")
        self.arrays = {k: np.asarray(arrays[k], dtype=np.float64) for k in FIELDS}
        self._check()

    def _check(self):
        E, F = self.arrays["V"].shape
        H = self.arrays["W_ih"].shape[0]
        Vs = self.arrays["S"].shape[1]
        want = {"V": (E, F), "S": (E, Vs), "C": (Vs, H)}
        want.update({k: (H, E) for k in LSTM_X})
        want.update({k: (H, H) for k in LSTM_H})
        want.update({k: (H,) for k in BIASES})
        for k, shape in want.items():
            if self.arrays[k].shape != shape:
                raise ShapeError(f"{k} has shape {self.arrays[k].shape}, expected {shape}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __setitem__(self, name: str, value: np.ndarray):
        self.arrays[name] = value

    def __getattr__(self, name: str) -> np.ndarray:
        try:
            return self.arrays[name]
        except KeyError:
            raise AttributeError(name) from None

    def __iter__(self) -> Iterator[str]:
        return iter(FIELDS)

    def items(self):
        return ((k, self.arrays[k]) for k in FIELDS)

    @property
    def dims(self) -> ModelDims:
        E, F = self.arrays["V"].shape
        return ModelDims(F, E, self.arrays["W_ih"].shape[0], self.arrays["S"].shape[1])

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.arrays.items()})

    def zeros_like(self) -> "ModelParams":
        return ModelParams({k: np.zeros_like(v) for k, v in self.arrays.items()})

    def map(self, fn) -> "ModelParams":
        return ModelParams({k: fn(k, v) for k, v in self.arrays.items()})

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(v))) if v.size else 0.0 for v in self.arrays.values())

    def all_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.arrays.values())

    def equal(self, other: "ModelParams") -> bool:
        """Bit-exact equality of every array."""
        return all(
            a.shape == other.arrays[k].shape and np.array_equal(a, other.arrays[k])
            for k, a in self.arrays.items()
        )

    def stacked(self):
        """Gate matrices stacked as (4H, E), (4H, H) and (4H,) in i, o, f, g order."""
        Wx = np.concatenate([self.arrays[k] for k in LSTM_X], axis=0)
        Wh = np.concatenate([self.arrays[k] for k in LSTM_H], axis=0)
        b = np.concatenate([self.arrays[k] for k in BIASES])
        return Wx, Wh, b


Gradients = ModelParams


def init_params(dims: ModelDims, rng: Rng) -> ModelParams:
    """Uniform weights in [-0.1, 0.1); zero biases except the forget gate."""
    E, H, F, Vs = dims.d_emb, dims.d_hidden, dims.d_feat, dims.vocab_size
    arrays = {
        "V": rng.uniform(-INIT_RANGE, INIT_RANGE, (E, F)),
        "S": rng.uniform(-INIT_RANGE, INIT_RANGE, (E, Vs)),
        "C": rng.uniform(-INIT_RANGE, INIT_RANGE, (Vs, H)),
    }
    for k in LSTM_X:
        arrays[k] = rng.uniform(-INIT_RANGE, INIT_RANGE, (H, E))
    for k in LSTM_H:
        arrays[k] = rng.uniform(-INIT_RANGE, INIT_RANGE, (H, H))
    for k in BIASES:
        arrays[k] = np.full(H, FORGET_BIAS if k == "b_f" else 0.0)
    return ModelParams(arrays)


@dataclass
class Example:
    features: np.ndarray
    caption: Sequence[int]

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.caption = [int(w) for w in self.caption]
        if len(self.caption) < 1:
            raise ValueError("caption must contain at least one word")


def lstm_step(x, h_prev, c_prev, params: ModelParams, standard_cell_output: bool = False):
    """One LSTM step on single vectors; returns ``(h, c, cache)``."""
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    c_prev = np.asarray(c_prev, dtype=np.float64)
    dims = params.dims
    if x.shape != (dims.d_emb,) or h_prev.shape != (dims.d_hidden,) or c_prev.shape != (dims.d_hidden,):
        raise ShapeError(
            f"lstm_step got x{x.shape}, h{h_prev.shape}, c{c_prev.shape} "
            f"for d_emb={dims.d_emb}, d_hidden={dims.d_hidden}"
        )
    Wx, Wh, b = params.stacked()
    z = Wx @ x + Wh @ h_prev + b
    acts, c, h = kernels.gates_forward(z[None, :], c_prev[None, :], standard_cell_output)
    H = dims.d_hidden
    cache = {name: acts[0, k * H : (k + 1) * H] for k, name in enumerate(GATES)}
    return h[0], c[0], cache


def _as_support(active_vocab, vocab_size: int) -> np.ndarray:
    support = np.asarray(active_vocab).astype(bool)
    if support.shape[-1] != vocab_size:
        raise ShapeError(f"active vocabulary has length {support.shape[-1]}, model has {vocab_size} words")
    return support


@dataclass
class ForwardTrace:
    """Per-step activations cached for BPTT, for a padded batch.

    Arrays are indexed ``[step, example, ...]``. ``valid[n, b]`` is False
    on padding positions.
    """

    features: np.ndarray  # (B, F)
    captions: np.ndarray  # (B, T) word ids, -1 on padding
    valid: np.ndarray  # (T, B)
    x: np.ndarray  # (T, B, E) unmasked inputs
    xbar: np.ndarray  # (T, B, E)
    acts: np.ndarray  # (T, B, 4H)
    c: np.ndarray  # (T, B, H)
    h: np.ndarray  # (T, B, H) unmasked cell output
    hbar: np.ndarray  # (T, B, H)
    logits: np.ndarray  # (T, B, V)
    support: np.ndarray  # (V,) or (B, V)
    a_x: np.ndarray | None = None
    a_h: np.ndarray | None = None
    standard_cell_output: bool = False
    losses: np.ndarray = field(default=None)  # (T, B) per-step NLL, 0 on padding

    def __len__(self):
        return self.x.shape[0]

    @property
    def targets(self) -> np.ndarray:
        return self.captions

    def loss(self) -> float:
        return float(self.losses.sum())


def pad_captions(captions: Sequence[Sequence[int]]) -> np.ndarray:
    T = max(len(c) for c in captions)
    out = np.full((len(captions), T), -1, dtype=np.int64)
    for b, cap in enumerate(captions):
        out[b, : len(cap)] = cap
    return out


def unroll(params: ModelParams, xbar: np.ndarray, a_h: np.ndarray | None = None, standard_cell_output: bool = False):
    """Run the LSTM over (T, B, E) inputs; returns ``(acts, c, h, hbar)``."""
    T, B, E = xbar.shape
    H = params.dims.d_hidden
    Wx, Wh, bias = params.stacked()
    acts = np.empty((T, B, 4 * H))
    c = np.empty((T, B, H))
    h = np.empty((T, B, H))
    hbar = np.empty((T, B, H)) if a_h is not None else h
    zx = (xbar.reshape(T * B, E) @ Wx.T).reshape(T, B, 4 * H)
    zx += bias
    h_prev = np.zeros((B, H))
    c_prev = np.zeros((B, H))
    for n in range(T):
        z = zx[n] + h_prev @ Wh.T
        acts[n], c[n], h[n] = kernels.gates_forward(z, c_prev, standard_cell_output)
        if a_h is not None:
            hbar[n] = h[n] * a_h
        h_prev = hbar[n]
        c_prev = c[n]
    return acts, c, h, hbar


def forward_batch(
    params: ModelParams,
    features: np.ndarray,
    captions: np.ndarray,
    support: np.ndarray,
    a_x: np.ndarray | None = None,
    a_h: np.ndarray | None = None,
    standard_cell_output: bool = False,
) -> ForwardTrace:
    """Teacher-forced forward pass over a padded batch of captions."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    captions = np.atleast_2d(np.asarray(captions, dtype=np.int64))
    dims = params.dims
    B, T = captions.shape
    if features.shape != (B, dims.d_feat):
        raise ShapeError(f"features {features.shape} do not match batch of {B} with d_feat={dims.d_feat}")
    support = _as_support(support, dims.vocab_size)
    valid = (captions >= 0).T
    if not valid[0].all():
        raise ValueError("every caption needs at least one word")
    ids = np.where(captions >= 0, captions, 0)
    if (ids >= dims.vocab_size).any():
        bad = int(ids[ids >= dims.vocab_size][0])
        raise VocabularyError(f"word id {bad} outside vocabulary of size {dims.vocab_size}")
    sup_rows = support if support.ndim == 2 else np.broadcast_to(support, (B, dims.vocab_size))
    inactive = valid.T & ~sup_rows[np.arange(B)[:, None], ids]
    if inactive.any():
        b, n = np.argwhere(inactive)[0]
        raise VocabularyError(f"word id {int(ids[b, n])} is not in the active vocabulary")

    E, H, Vs = dims.d_emb, dims.d_hidden, dims.vocab_size
    x = np.empty((T, B, E))
    x[0] = features @ params.V.T
    if T > 1:
        x[1:] = params.S.T[ids[:, :-1].T]
    xbar = x * a_x if a_x is not None else x
    acts, c, h, hbar = unroll(params, xbar, a_h, standard_cell_output)
    logits = (hbar.reshape(T * B, H) @ params.C.T).reshape(T, B, Vs)
    trace = ForwardTrace(
        features=features, captions=captions, valid=valid, x=x, xbar=xbar, acts=acts,
        c=c, h=h, hbar=hbar, logits=logits, support=support, a_x=a_x, a_h=a_h,
        standard_cell_output=standard_cell_output,
    )
    trace.losses = step_losses(trace)
    return trace


def _flat_xent(trace: ForwardTrace, weights: np.ndarray):
    """Masked cross-entropy over every (step, example) row at once."""
    T, B, Vs = trace.logits.shape
    ids = np.where(trace.captions >= 0, trace.captions, 0).T.reshape(T * B)
    support = trace.support
    if support.ndim == 2:
        support = np.broadcast_to(support, (T, B, Vs)).reshape(T * B, Vs)
    losses, dlogits = kernels.masked_xent(
        trace.logits.reshape(T * B, Vs), support, ids, np.ascontiguousarray(weights.reshape(T * B))
    )
    return losses.reshape(T, B), dlogits.reshape(T, B, Vs)


def step_losses(trace: ForwardTrace) -> np.ndarray:
    losses, _ = _flat_xent(trace, trace.valid.astype(np.float64))
    return np.where(trace.valid, losses, 0.0)


def forward_teacher_forced(ex: Example, params: ModelParams, active_vocab, **masks) -> ForwardTrace:
    return forward_batch(params, ex.features[None, :], np.asarray([ex.caption]), active_vocab, **masks)


def ce_loss(trace: ForwardTrace, targets=None) -> float:
    """Summed negative log-likelihood of the targets under the trace's logits."""
    if targets is not None:
        targets = np.atleast_2d(np.asarray(targets, dtype=np.int64))
        if targets.shape != trace.captions.shape or not np.array_equal(targets, trace.captions):
            raise ShapeError("targets do not align with the traced captions")
    return float(step_losses(trace).sum())


@dataclass
class MaskGradients:
    a_x: np.ndarray | None
    a_h: np.ndarray | None


def backward(
    trace: ForwardTrace,
    params: ModelParams,
    scale: float = 1.0,
    extra_dlogits: np.ndarray | None = None,
    mask_grads: bool = False,
):
    """Exact gradients of ``scale * sum of per-step NLL`` by BPTT.

    ``extra_dlogits`` (T, B, V) is added to the loss gradient with respect
    to the logits, letting auxiliary losses share the same pass. Returns a
    ``Gradients`` container, plus ``MaskGradients`` when ``mask_grads``.
    """
    dims = params.dims
    T, B, _ = trace.logits.shape
    E, H = dims.d_emb, dims.d_hidden
    Wx, Wh, _ = params.stacked()
    ids = np.where(trace.captions >= 0, trace.captions, 0).T
    _, dlogits = _flat_xent(trace, scale * trace.valid.astype(np.float64))
    if extra_dlogits is not None:
        dlogits += extra_dlogits

    dC = dlogits.reshape(T * B, -1).T @ trace.hbar.reshape(T * B, H)
    dhbar_out = (dlogits.reshape(T * B, -1) @ params.C).reshape(T, B, H)
    dz_all = np.empty((T, B, 4 * H))
    dhbar_rec = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    da_h = np.zeros(H) if (mask_grads and trace.a_h is not None) else None
    for n in range(T - 1, -1, -1):
        dhbar = dhbar_out[n] + dhbar_rec
        if trace.a_h is not None:
            if da_h is not None:
                da_h += (dhbar * trace.h[n]).sum(axis=0)
            dh = dhbar * trace.a_h
        else:
            dh = dhbar
        c_prev = trace.c[n - 1] if n > 0 else np.zeros((B, H))
        dz, dc_next = kernels.gates_backward(trace.acts[n], c_prev, trace.c[n], dh, dc_next, trace.standard_cell_output)
        dz_all[n] = dz
        dhbar_rec = dz @ Wh

    dz_flat = dz_all.reshape(T * B, 4 * H)
    dWx = dz_flat.T @ trace.xbar.reshape(T * B, E)
    dWh = dz_all[1:].reshape((T - 1) * B, 4 * H).T @ trace.hbar[:-1].reshape((T - 1) * B, H)
    db = dz_flat.sum(axis=0)
    dxbar = (dz_flat @ Wx).reshape(T, B, E)
    dx = dxbar * trace.a_x if trace.a_x is not None else dxbar
    dV = dx[0].T @ trace.features
    dS = np.zeros((E, dims.vocab_size))
    if T > 1:
        valid_in = trace.valid[1:]
        np.add.at(dS.T, ids[:-1][valid_in], dx[1:][valid_in])

    arrays = {"V": dV, "S": dS, "C": dC}
    for k, name in enumerate(GATES):
        sl = slice(k * H, (k + 1) * H)
        arrays[f"W_{name}x"] = dWx[sl]
        arrays[f"W_{name}h"] = dWh[sl]
        arrays[f"b_{name}"] = db[sl]
    grads = Gradients(arrays)
    if not mask_grads:
        return grads
    da_x = None
    if trace.a_x is not None:
        da_x = (dxbar * trace.x).sum(axis=(0, 1))
    return grads, MaskGradients(da_x, da_h)


def greedy_decode_batch(
    params: ModelParams,
    features: np.ndarray,
    support: np.ndarray,
    max_len: int,
    a_x: np.ndarray | None = None,
    a_h: np.ndarray | None = None,
    standard_cell_output: bool = False,
    end_id: int = END_ID,
) -> list[list[int]]:
    """Greedy decoding for a batch of feature vectors.

    Argmax ties resolve to the lowest word id; inactive words are never
    chosen. Each output stops after emitting ``end_id`` or ``max_len`` words.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    dims = params.dims
    support = _as_support(support, dims.vocab_size)
    B = features.shape[0]
    H = dims.d_hidden
    Wx, Wh, bias = params.stacked()
    x = features @ params.V.T
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    out = np.zeros((B, max_len), dtype=np.int64)
    lengths = np.full(B, max_len)
    done = np.zeros(B, dtype=bool)
    for n in range(max_len):
        xb = x * a_x if a_x is not None else x
        z = (xb @ Wx.T + bias) + h @ Wh.T
        _, c, h = kernels.gates_forward(z, c, standard_cell_output)
        if a_h is not None:
            h = h * a_h
        logits = h @ params.C.T
        logits = np.where(support, logits, -np.inf)
        w = np.argmax(logits, axis=1)  # first maximum = lowest id
        out[:, n] = w
        newly = ~done & (w == end_id)
        lengths[newly] = n + 1
        done |= newly
        if done.all():
            break
        x = params.S.T[w]
    return [out[b, : lengths[b]].tolist() for b in range(B)]


def greedy_decode(features, params: ModelParams, active_vocab, max_len: int, **kw) -> list[int]:
    return greedy_decode_batch(params, np.asarray(features)[None, :], active_vocab, max_len, **kw)[0]


def strip_sentinels(ids: Sequence[int]) -> list[int]:
    """Drop a leading start token and everything from the first end token."""
    ids = list(ids)
    if ids and ids[0] == START_ID:
        ids = ids[1:]
    if END_ID in ids:
        ids = ids[: ids.index(END_ID)]
    return [w for w in ids if w != START_ID]


__all__ = [
    "END_ID", "Example", "FIELDS", "ForwardTrace", "Gradients", "MaskGradients", "ModelDims",
    "ModelParams", "START_ID", "backward", "ce_loss", "forward_batch", "forward_teacher_forced",
    "greedy_decode", "greedy_decode_batch", "init_params", "lstm_step", "pad_captions", "unroll",
    "strip_sentinels",
]
