"""Task-sequence training for fine-tuning, EWC, LwF and RATT.

``run_sequence`` trains one model on an ordered list of tasks. Before each
task the vocabulary and the model grow by the task's unseen words; after
each task every task seen so far is decoded task-aware on its test set
and scored with corpus BLEU-4.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import ratt
from .checkpoint import save_checkpoint
from .errors import TaskError, TrainingError
from .ewc import (
    EwcConfig, Snapshot, estimate_fisher, ewc_penalty_and_grad, ewc_proximal_step, fisher_summary,
    shared_param_indices,
)
from .linalg import Rng
from .lwf import LwfConfig, TeacherSnapshot, lwf_extra_dlogits, teacher_logits
from .metrics import RunReport, corpus_bleu4
from .model import (
    INIT_RANGE, Example, ModelDims, ModelParams, backward, forward_batch, greedy_decode_batch,
    init_params, pad_captions, strip_sentinels,
)
from .optim import make_optimizer
from .splitter import AnnotatedImage, SplitResult
from .vocab import Vocabulary

log = logging.getLogger(__name__)

METHODS = ("FT", "EWC", "LwF", "RATT")


@dataclass
class Item:
    """An image with its reference captions (token lists)."""

    features: np.ndarray
    captions: list[list[str]]


@dataclass
class TaskData:
    id: int
    name: str
    train: list[Item]
    valid: list[Item]
    test: list[Item]
    words: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.valid or not self.test:
            raise TaskError(f"task {self.name!r} needs non-empty valid and test sets")
        if not self.words:
            self.words = sorted({w for it in self.train for cap in it.captions for w in cap})


@dataclass(frozen=True)
class RattConfig:
    s_max: float = 400.0
    sparsity: float = 0.5
    mask_x: bool = True
    mask_h: bool = True
    mask_s: bool = True
    binarize: bool = False
    compensate: bool = True

    @property
    def flags(self) -> ratt.MaskFlags:
        return ratt.MaskFlags(self.mask_x, self.mask_h, self.mask_s)


@dataclass(frozen=True)
class TrainConfig:
    method: str = "FT"
    epochs: int = 10
    batch_size: int = 32
    lr: float = 5e-3
    max_len: int = 20
    seed: int = 0
    optimizer: str = "adam"
    d_emb: int = 32
    d_hidden: int = 64
    standard_cell_output: bool = False
    ewc: EwcConfig = EwcConfig()
    lwf: LwfConfig = LwfConfig()
    ratt: RattConfig = RattConfig()

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        for name in ("batch_size", "max_len", "d_emb", "d_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class MethodState:
    """What a method carries from one task to the next."""

    rng: Rng
    snapshot: Snapshot | None = None
    fisher: ModelParams | None = None
    teacher: TeacherSnapshot | None = None
    embeddings: ratt.TaskEmbeddings | None = None
    cumulative: ratt.CumulativeMasks | None = None
    masks: dict[int, ratt.MaskSet] = field(default_factory=dict)


@dataclass
class TaskResult:
    params: ModelParams
    curve: list[float]
    best_epoch: int
    embeddings: ratt.TaskEmbeddings | None = None


def build_tasks(images: Sequence[AnnotatedImage], split: SplitResult) -> list[TaskData]:
    """Turn a partitioned split into ``TaskData`` in task order."""
    by_id = {img.id: img for img in images}
    out = []
    for k, t in enumerate(split.tasks):
        part = split.partitions[t.id]
        items = {
            name: [Item(by_id[i].features, by_id[i].tokens()) for i in part[name]]
            for name in ("train", "valid", "test")
        }
        out.append(TaskData(k, t.name, **items))
    return out


def expand_model(model: ModelParams, vocab: Vocabulary, new_words: Sequence[str], rng: Rng) -> ModelParams:
    """Register ``new_words`` and append one S column and one C row for each.

    Existing entries are copied bit-for-bit; new ones are drawn uniformly
    from the initialisation range.
    """
    vocab.register(list(new_words))
    n = len(new_words)
    if n == 0:
        return model
    E, H = model.dims.d_emb, model.dims.d_hidden
    out = model.copy()
    out["S"] = np.concatenate([model.S, rng.uniform(-INIT_RANGE, INIT_RANGE, (E, n))], axis=1)
    out["C"] = np.concatenate([model.C, rng.uniform(-INIT_RANGE, INIT_RANGE, (n, H))], axis=0)
    return out


def _examples(task: TaskData, vocab: Vocabulary) -> list[Example]:
    return [Example(it.features, vocab.encode(cap)) for it in task.train for cap in it.captions]


def inference_masks(state: MethodState, cfg: TrainConfig, task: int):
    """``(a_x, a_h)`` used at test time for ``task``; None where unmasked."""
    if cfg.method != "RATT":
        return None, None
    if task not in state.masks:
        raise TaskError(f"no attention masks stored for task {task}")
    m = state.masks[task]
    return (m.a_x if cfg.ratt.mask_x else None), (m.a_h if cfg.ratt.mask_h else None)


def _decode(params, items, support, cfg, a_x=None, a_h=None) -> list[list[int]]:
    feats = np.stack([it.features for it in items])
    return greedy_decode_batch(params, feats, support, cfg.max_len, a_x=a_x, a_h=a_h, standard_cell_output=cfg.standard_cell_output)


def score(params, items, support, vocab: Vocabulary, cfg: TrainConfig, a_x=None, a_h=None) -> float:
    decoded = _decode(params, items, support, cfg, a_x, a_h)
    cands = [vocab.decode(strip_sentinels(d)) for d in decoded]
    return corpus_bleu4(cands, [it.captions for it in items])


def task_aware_infer(
    params: ModelParams,
    features: np.ndarray,
    task: int,
    vocab: Vocabulary,
    max_len: int,
    state: MethodState,
    cfg: TrainConfig,
) -> list[list[int]]:
    """Decode with the output restricted to ``task``'s words (and its masks for RATT)."""
    if task not in vocab.tasks:
        raise TaskError(f"task {task} has not been trained")
    support = vocab.membership(task, params.dims.vocab_size)
    a_x, a_h = inference_masks(state, cfg, task)
    feats = np.atleast_2d(features)
    return greedy_decode_batch(params, feats, support, max_len, a_x=a_x, a_h=a_h, standard_cell_output=cfg.standard_cell_output)


def _snapshot_masks(emb, t, support, rc: RattConfig) -> ratt.MaskSet:
    m = ratt.compute_masks(emb, t, rc.s_max, support)
    return m.binarized() if rc.binarize else m


def train_task(
    params: ModelParams,
    task: TaskData,
    cfg: TrainConfig,
    state: MethodState,
    vocab: Vocabulary,
) -> TaskResult:
    """Train on one task for ``cfg.epochs`` epochs; keep the best validation epoch."""
    t = task.id
    support = vocab.membership(t, params.dims.vocab_size)
    examples = _examples(task, vocab)
    if cfg.epochs == 0:
        return TaskResult(params, [], -1, state.embeddings.copy() if state.embeddings is not None else None)
    params = params.copy()
    opt = make_optimizer(cfg.optimizer, cfg.lr)
    rc = cfg.ratt
    use_ratt = cfg.method == "RATT"
    emb = state.embeddings.copy() if use_ratt else None
    if use_ratt:
        cum = state.cumulative.grown(params.dims.vocab_size)
        bmasks = ratt.backward_masks(ratt.effective_cumulative(cum, rc.flags), params.dims.d_feat).arrays
        emb_opt = make_optimizer(cfg.optimizer, cfg.lr)
    ewc_on = cfg.method == "EWC" and state.snapshot is not None
    # under plain SGD the quadratic penalty is applied as an exact proximal step
    ewc_prox = ewc_on and cfg.optimizer == "sgd"
    if ewc_on:
        shared = shared_param_indices(state.snapshot.vocab_size, params.dims.vocab_size, params.dims)
    lwf_on = cfg.method == "LwF" and state.teacher is not None

    N = len(examples)
    nb = math.ceil(N / cfg.batch_size)
    sched = ratt.AnnealSchedule(rc.s_max, nb) if use_ratt else None
    curve: list[float] = []
    best = (-1.0, -1, params.copy(), emb.copy() if emb is not None else None)
    for epoch in range(cfg.epochs):
        order = state.rng.stream(f"shuffle/{t}/{epoch}").permutation(N)
        for b in range(nb):
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            feats = np.stack([examples[i].features for i in idx])
            caps = pad_captions([examples[i].caption for i in idx])
            scale = 1.0 / len(idx)
            a_x = a_h = masks = None
            if use_ratt:
                s = ratt.anneal_s(b + 1, sched)
                masks = ratt.compute_masks(emb, t, s, support)
                a_x = masks.a_x if rc.mask_x else None
                a_h = masks.a_h if rc.mask_h else None
            trace = forward_batch(params, feats, caps, support, a_x=a_x, a_h=a_h, standard_cell_output=cfg.standard_cell_output)
            loss = trace.loss() * scale
            extra = None
            if lwf_on:
                tl = teacher_logits(state.teacher, trace.x, cfg.standard_cell_output)
                dl, extra = lwf_extra_dlogits(trace, tl, cfg.lwf, scale)
                loss += cfg.lwf.lam * dl * scale
            if use_ratt:
                grads, mgrads = backward(trace, params, scale, extra, mask_grads=True)
            else:
                grads = backward(trace, params, scale, extra)
            if ewc_on:
                pen, pgrad = ewc_penalty_and_grad(params, state.snapshot, state.fisher, cfg.ewc, shared)
                loss += pen
                if not ewc_prox:
                    for k, g in pgrad.items():
                        grads[k] = grads[k] + g
            if use_ratt:
                loss += rc.sparsity * ratt.sparsity_loss(masks, cum)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss on task {task.name!r}, epoch {epoch + 1}, batch {b + 1}")
            if use_ratt:
                opt.step(params.arrays, grads.arrays, masks=bmasks)
                _update_embeddings(emb, emb_opt, masks, mgrads, cum, s, sched, t, rc)
            else:
                opt.step(params.arrays, grads.arrays)
            if ewc_on and ewc_prox:
                ewc_proximal_step(params, state.snapshot, state.fisher, cfg.ewc, cfg.lr, shared)
            if not params.all_finite():
                raise TrainingError(
                    f"non-finite parameters on task {task.name!r}, epoch {epoch + 1}, batch {b + 1}"
                )
        if use_ratt:
            m = _snapshot_masks(emb, t, support, rc)
            v_ax, v_ah = (m.a_x if rc.mask_x else None), (m.a_h if rc.mask_h else None)
        else:
            v_ax = v_ah = None
        bleu = score(params, task.valid, support, vocab, cfg, v_ax, v_ah)
        curve.append(bleu)
        log.info("task %s epoch %d: valid BLEU-4 %.4f", task.name, epoch + 1, bleu)
        if bleu > best[0]:
            best = (bleu, epoch, params.copy(), emb.copy() if emb is not None else None)
    return TaskResult(best[2], curve, best[1], best[3])


def _update_embeddings(emb, emb_opt, masks, mgrads, cum, s, sched, t, rc: RattConfig):
    gx_sp, gh_sp = ratt.sparsity_loss_grad(masks, cum)
    grads = {}
    if rc.mask_x:
        da = mgrads.a_x + rc.sparsity * gx_sp
        grads["A_x"] = ratt.mask_preactivation_grad(da, emb.A_x, t, s)
    if rc.mask_h:
        da = mgrads.a_h + rc.sparsity * gh_sp
        grads["A_h"] = ratt.mask_preactivation_grad(da, emb.A_h, t, s)
    if not grads:
        return
    if rc.compensate:
        for k in grads:
            A = emb.A_x if k == "A_x" else emb.A_h
            grads[k] = grads[k] * ratt.compensation_scale(A[:, t], s, sched.s_max)
    cols = {k: (emb.A_x if k == "A_x" else emb.A_h)[:, t].copy() for k in grads}
    emb_opt.step(cols, grads)
    if "A_x" in cols:
        emb.A_x[:, t] = cols["A_x"]
    if "A_h" in cols:
        emb.A_h[:, t] = cols["A_h"]


def after_task(params: ModelParams, task: TaskData, cfg: TrainConfig, state: MethodState, vocab: Vocabulary, result: TaskResult):
    """Record what the method needs before the next task starts."""
    support = vocab.membership(task.id, params.dims.vocab_size)
    if cfg.method == "RATT":
        state.embeddings = result.embeddings
        m = _snapshot_masks(result.embeddings, task.id, support, cfg.ratt)
        state.masks[task.id] = m
        cum = ratt.update_cumulative(state.cumulative.grown(params.dims.vocab_size), m)
        state.cumulative = cum.binarized() if cfg.ratt.binarize else cum
    elif cfg.method == "EWC":
        state.snapshot = Snapshot.take(params)
        state.fisher = estimate_fisher(
            params, _examples(task, vocab), cfg.ewc.fisher_samples, support, cfg.standard_cell_output
        )
    elif cfg.method == "LwF":
        state.teacher = TeacherSnapshot.take(params)


def new_state(cfg: TrainConfig, n_tasks: int, d_feat: int) -> MethodState:
    rng = Rng(cfg.seed)
    state = MethodState(rng=rng)
    if cfg.method == "RATT":
        state.embeddings = ratt.TaskEmbeddings.init(cfg.d_emb, cfg.d_hidden, n_tasks, rng.stream("ratt/embeddings"))
        state.cumulative = ratt.CumulativeMasks.empty(cfg.d_emb, cfg.d_hidden, 0)
    return state


@dataclass
class SequenceRun:
    """Everything produced by ``run_sequence``."""

    report: RunReport
    params: ModelParams
    vocab: Vocabulary
    state: MethodState
    checkpoints: list[ModelParams]


def run_sequence(tasks: Sequence[TaskData], cfg: TrainConfig, run_dir=None) -> SequenceRun:
    if not tasks:
        raise TaskError("need at least one task")
    d_feat = tasks[0].train[0].features.shape[0]
    state = new_state(cfg, len(tasks), d_feat)
    vocab = Vocabulary()
    params = init_params(ModelDims(d_feat, cfg.d_emb, cfg.d_hidden, len(vocab)), state.rng.stream("init"))
    report = RunReport(tasks=[t.name for t in tasks], method=cfg.method)
    checkpoints = []
    run_dir = Path(run_dir) if run_dir is not None else None
    manifest = {"tasks": [t.name for t in tasks], "checkpoints": [], "config": cfg.to_json()}
    for task in tasks:
        if task.id != len(checkpoints):
            raise TaskError("task ids must be 0..K-1 in sequence order")
        new = vocab.new_words(task.words)
        params = expand_model(params, vocab, new, state.rng.stream(f"expand/{task.id}"))
        vocab.set_task_words(task.id, task.words)
        log.info("task %s: %d words (%d new), vocab %d", task.name, len(task.words), len(new), len(vocab))
        result = train_task(params, task, cfg, state, vocab)
        params = result.params
        after_task(params, task, cfg, state, vocab, result)
        report.curves[task.name] = result.curve
        row: list[float | None] = [None] * len(tasks)
        for prev in tasks[: task.id + 1]:
            support = vocab.membership(prev.id, params.dims.vocab_size)
            a_x, a_h = inference_masks(state, cfg, prev.id)
            row[prev.id] = score(params, prev.test, support, vocab, cfg, a_x, a_h)
        report.matrix.append(row)
        if state.fisher is not None:
            report.fisher[task.name] = fisher_summary(state.fisher)
        checkpoints.append(params.copy())
        if run_dir is not None:
            name = f"task{task.id:02d}_{task.name}.npz"
            save_checkpoint(
                run_dir / name, params, vocab, state.rng.state(),
                embeddings=state.embeddings, masks=state.masks,
                meta={"task": task.id, "task_name": task.name, "best_epoch": result.best_epoch, "method": cfg.method},
            )
            manifest["checkpoints"].append(name)
            (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return SequenceRun(report, params, vocab, state, checkpoints)
