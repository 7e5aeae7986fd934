"""Task splits over multi-label captioning data, plus a synthetic generator.

Two procedures turn category-labelled images into per-task example sets:

* disjoint: an image whose labels touch two tasks is dropped from both;
* incremental: tasks are ordered and an image matching a later task is
  kept only for the latest task it matches.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DefinitionError
from .linalg import Rng

DATASET_FORMAT = "rattlab-dataset/1"
MANIFEST_FORMAT = "rattlab-split/1"
MAX_CAPTIONS = 5


@dataclass(frozen=True)
class AnnotatedImage:
    id: str
    labels: frozenset[int]
    features: np.ndarray
    captions: tuple[str, ...]

    def label_vector(self, num_categories: int) -> np.ndarray:
        y = np.zeros(num_categories, dtype=np.int8)
        y[list(self.labels)] = 1
        return y

    def tokens(self) -> list[list[str]]:
        return [tokenize(c) for c in self.captions[:MAX_CAPTIONS]]


@dataclass(frozen=True)
class TaskDef:
    id: int
    name: str
    categories: frozenset[int]

    def __post_init__(self):
        if not self.categories:
            raise DefinitionError(f"task {self.name!r} has no categories")


@dataclass
class SplitResult:
    procedure: str
    tasks: list[TaskDef]
    examples: dict[int, list[str]]  # task id -> sorted example ids
    candidates: dict[int, list[str]]
    overlaps: dict[tuple[int, int], int] = field(default_factory=dict)  # |P_i & P_j|
    partitions: dict[int, dict[str, list[str]]] = field(default_factory=dict)

    def task_by_name(self, name: str) -> TaskDef:
        for t in self.tasks:
            if t.name == name:
                return t
        raise KeyError(name)


def tokenize(caption: str) -> list[str]:
    return caption.lower().split()


def _candidates(data: Iterable[AnnotatedImage], tasks: Sequence[TaskDef]) -> dict[int, set[str]]:
    P: dict[int, set[str]] = {t.id: set() for t in tasks}
    for img in data:
        for t in tasks:
            if img.labels & t.categories:
                P[t.id].add(img.id)
    return P


def _overlaps(P: dict[int, set[str]], tasks: Sequence[TaskDef]) -> dict[tuple[int, int], int]:
    return {(a.id, b.id): len(P[a.id] & P[b.id]) for a in tasks for b in tasks if a.id < b.id}


def _check_unique(data: Sequence[AnnotatedImage], tasks: Sequence[TaskDef]):
    ids = [img.id for img in data]
    if len(set(ids)) != len(ids):
        raise DefinitionError("example ids must be unique")
    tids = [t.id for t in tasks]
    if len(set(tids)) != len(tids):
        raise DefinitionError("task ids must be unique")


def split_disjoint(data: Sequence[AnnotatedImage], tasks: Sequence[TaskDef]) -> SplitResult:
    tasks = list(tasks)
    _check_unique(data, tasks)
    for i, a in enumerate(tasks):
        for b in tasks[i + 1 :]:
            common = a.categories & b.categories
            if common:
                raise DefinitionError(
                    f"tasks {a.name!r} and {b.name!r} share categories {sorted(common)}"
                )
    P = _candidates(data, tasks)
    E = {}
    for t in tasks:
        shared: set[str] = set()
        for u in tasks:
            if u.id != t.id:
                shared |= P[t.id] & P[u.id]
        E[t.id] = sorted(P[t.id] - shared)
    return SplitResult("disjoint", tasks, E, {k: sorted(v) for k, v in P.items()}, _overlaps(P, tasks))


def split_incremental(data: Sequence[AnnotatedImage], tasks: Sequence[TaskDef]) -> SplitResult:
    """Ordered split: an example matching several tasks goes to the last of them."""
    tasks = list(tasks)
    _check_unique(data, tasks)
    P = _candidates(data, tasks)
    E = {}
    for k, t in enumerate(tasks):
        later: set[str] = set()
        for u in tasks[k + 1 :]:
            later |= P[t.id] & P[u.id]
        E[t.id] = sorted(P[t.id] - later)
    return SplitResult("incremental", tasks, E, {k: sorted(v) for k, v in P.items()}, _overlaps(P, tasks))


SPLITTERS = {"disjoint": split_disjoint, "incremental": split_incremental}


def partition(
    split: SplitResult,
    fractions: tuple[float, float, float] = (0.7, 0.15, 0.15),
    seed: int = 0,
    max_examples: int | None = None,
) -> SplitResult:
    """Seeded train/valid/test partition of every task's examples.

    Tasks larger than ``max_examples`` are randomly sub-sampled first.
    """
    if any(f < 0 for f in fractions) or not math.isclose(sum(fractions), 1.0):
        raise DefinitionError(f"partition fractions must be non-negative and sum to 1, got {fractions}")
    rng = Rng(seed)
    parts = {}
    for t in split.tasks:
        ids = split.examples[t.id]
        stream = rng.stream(f"partition/{t.name}")
        order = [ids[i] for i in stream.permutation(len(ids))]
        if max_examples is not None and len(order) > max_examples:
            order = order[:max_examples]
        n = len(order)
        n_train = int(round(fractions[0] * n))
        n_valid = int(round(fractions[1] * n))
        parts[t.id] = {
            "train": sorted(order[:n_train]),
            "valid": sorted(order[n_train : n_train + n_valid]),
            "test": sorted(order[n_train + n_valid :]),
        }
    split.partitions = parts
    return split


def task_vocabulary(images: Iterable[AnnotatedImage]) -> set[str]:
    words: set[str] = set()
    for img in images:
        for toks in img.tokens():
            words.update(toks)
    return words


def vocab_stats(split: SplitResult, data: Sequence[AnnotatedImage]) -> dict:
    """Per-task example counts and vocabulary sizes, plus pairwise word overlaps.

    Vocabularies come from the training partition when one exists.
    Overlap percentages are relative to the row task's vocabulary.
    """
    by_id = {img.id: img for img in data}
    names = [t.name for t in split.tasks]
    per_task = {}
    vocabs = {}
    for t in split.tasks:
        part = split.partitions.get(t.id)
        pool = part["train"] if part else split.examples[t.id]
        vocabs[t.name] = task_vocabulary(by_id[i] for i in pool)
        per_task[t.name] = {
            "examples": len(split.examples[t.id]),
            "train": len(part["train"]) if part else len(split.examples[t.id]),
            "valid": len(part["valid"]) if part else 0,
            "test": len(part["test"]) if part else 0,
            "vocab": len(vocabs[t.name]),
        }
    counts = [[len(vocabs[a] & vocabs[b]) for b in names] for a in names]
    pct = [
        [100.0 * counts[i][j] / counts[i][i] if counts[i][i] else 0.0 for j in range(len(names))]
        for i in range(len(names))
    ]
    return {"tasks": names, "per_task": per_task, "overlap": counts, "overlap_pct": pct}


def format_stats(stats: dict) -> str:
    names = stats["tasks"]
    lines = [f"{'task':<12}{'train':>7}{'valid':>7}{'test':>7}{'words':>7}"]
    for n in names:
        r = stats["per_task"][n]
        lines.append(f"{n:<12}{r['train']:>7}{r['valid']:>7}{r['test']:>7}{r['vocab']:>7}")
    lines.append("")
    lines.append("word overlap".ljust(12) + "".join(f"{n:>18}" for n in names))
    for i, n in enumerate(names):
        cells = "".join(
            f"{stats['overlap'][i][j]:>8} ({stats['overlap_pct'][i][j]:6.2f}%)" for j in range(len(names))
        )
        lines.append(f"{n:<12}{cells}")
    return "\n".join(lines)


# -- dataset files ---------------------------------------------------------


def save_dataset(images: Sequence[AnnotatedImage], path, category_names: Sequence[str]) -> Path:
    doc = {
        "format": DATASET_FORMAT,
        "categories": list(category_names),
        "images": [
            {
                "id": img.id,
                "labels": sorted(img.labels),
                "features": [float(v) for v in img.features],
                "captions": list(img.captions),
            }
            for img in images
        ],
    }
    path = Path(path)
    path.write_text(json.dumps(doc, separators=(",", ":")) + "\n")
    return path


def load_dataset(path) -> tuple[list[AnnotatedImage], list[str]]:
    """Read and validate a dataset file; raises ``DefinitionError`` on bad records."""
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict) or doc.get("format") != DATASET_FORMAT:
        raise DefinitionError(f"{path}: not a {DATASET_FORMAT} document")
    cats = list(doc["categories"])
    images = []
    dim = None
    for rec in doc["images"]:
        missing = {"id", "labels", "features", "captions"} - set(rec)
        if missing:
            raise DefinitionError(f"{path}: record missing {sorted(missing)}")
        labels = frozenset(int(c) for c in rec["labels"])
        if any(not 0 <= c < len(cats) for c in labels):
            raise DefinitionError(f"{path}: record {rec['id']} has unknown category")
        feats = np.asarray(rec["features"], dtype=np.float64)
        if dim is None:
            dim = feats.shape
        elif feats.shape != dim:
            raise DefinitionError(f"{path}: record {rec['id']} has feature shape {feats.shape}, expected {dim}")
        if not rec["captions"]:
            raise DefinitionError(f"{path}: record {rec['id']} has no captions")
        images.append(AnnotatedImage(str(rec["id"]), labels, feats, tuple(rec["captions"])))
    return images, cats


def save_manifest(split: SplitResult, path, stats: dict | None = None) -> Path:
    doc = {
        "format": MANIFEST_FORMAT,
        "procedure": split.procedure,
        "tasks": [{"id": t.id, "name": t.name, "categories": sorted(t.categories)} for t in split.tasks],
        "examples": {t.name: split.examples[t.id] for t in split.tasks},
        "partitions": {t.name: split.partitions[t.id] for t in split.tasks if t.id in split.partitions},
    }
    if stats is not None:
        doc["stats"] = stats
    path = Path(path)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path


def load_manifest(path) -> SplitResult:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != MANIFEST_FORMAT:
        raise DefinitionError(f"{path}: not a {MANIFEST_FORMAT} document")
    tasks = [TaskDef(int(t["id"]), t["name"], frozenset(t["categories"])) for t in doc["tasks"]]
    examples = {t.id: list(doc["examples"][t.name]) for t in tasks}
    parts = {t.id: doc["partitions"][t.name] for t in tasks if t.name in doc.get("partitions", {})}
    return SplitResult(doc["procedure"], tasks, examples, {}, {}, parts)


# -- synthetic data --------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    num_categories: int = 3
    images_per_category: int = 700
    vocab_per_category: int = 120
    pool_size: int = 50
    caption_len: tuple[int, int] = (8, 12)
    overlap_rate: float = 0.0
    d_feat: int = 32
    roles: int = 3
    templates_per_category: int = 5
    captions_per_image: int = 5
    noise: float = 0.1

    def __post_init__(self):
        for name in ("num_categories", "vocab_per_category", "pool_size", "d_feat", "roles",
                     "templates_per_category", "captions_per_image"):
            if getattr(self, name) < 1:
                raise DefinitionError(f"{name} must be positive")
        if self.images_per_category < 0:
            raise DefinitionError("images_per_category must be non-negative")
        lo, hi = self.caption_len
        if not self.roles <= lo <= hi:
            raise DefinitionError("caption length range must be ordered and fit every content slot")
        if self.vocab_per_category < self.roles:
            raise DefinitionError("vocab_per_category must be at least the number of roles")
        if not 0.0 <= self.overlap_rate <= 1.0:
            raise DefinitionError("overlap_rate must lie in [0, 1]")


def _pool_word(j: int) -> str:
    return f"fw{j:02d}"


def _content_word(c: int, k: int) -> str:
    return f"c{c}w{k:03d}"


def generate_synthetic(spec: SyntheticSpec, seed: int) -> tuple[list[AnnotatedImage], list[str]]:
    """Deterministic toy captioning corpus.

    Each category owns ``vocab_per_category`` content words split into
    ``roles`` groups, and a few caption templates that interleave role
    slots with words from a pool shared by every category. An image picks
    one content word per role; its feature vector is the sum of the
    category's and the chosen words' random prototypes plus noise. With
    probability ``overlap_rate`` an image also carries a second category
    label and takes its last role word from that category.
    """
    rng = Rng(seed)
    K = spec.num_categories
    protos = rng.stream("prototypes")
    cat_proto = protos.normal((K, spec.d_feat))
    word_proto = protos.normal((K, spec.vocab_per_category, spec.d_feat))
    tmpl_rng = rng.stream("templates")
    lo, hi = spec.caption_len
    templates = []
    for c in range(K):
        cat_templates = []
        for _ in range(spec.templates_per_category):
            length = lo + int(tmpl_rng.integers(hi - lo + 1))
            slots = sorted(tmpl_rng.permutation(length)[: spec.roles].tolist())
            fill = tmpl_rng.integers(spec.pool_size, length)
            tmpl = [_pool_word(int(fill[i])) for i in range(length)]
            for role, pos in enumerate(slots):
                tmpl[pos] = role
            cat_templates.append(tmpl)
        templates.append(cat_templates)

    per_role = spec.vocab_per_category // spec.roles
    img_rng = rng.stream("images")
    images = []
    for c in range(K):
        for n in range(spec.images_per_category):
            labels = {c}
            words = []
            chosen = []
            for role in range(spec.roles):
                k = role * per_role + int(img_rng.integers(per_role))
                chosen.append((c, k))
            other = None
            if K > 1 and img_rng.random() < spec.overlap_rate:
                other = (c + 1 + int(img_rng.integers(K - 1))) % K
                labels.add(other)
                role = spec.roles - 1
                chosen[-1] = (other, role * per_role + int(img_rng.integers(per_role)))
            feats = cat_proto[c].copy()
            if other is not None:
                feats += cat_proto[other]
            for cc, k in chosen:
                feats += word_proto[cc, k]
                words.append(_content_word(cc, k))
            feats += spec.noise * img_rng.normal(spec.d_feat)
            caps = []
            picks = img_rng.integers(spec.templates_per_category, spec.captions_per_image)
            for p in picks:
                tmpl = templates[c][int(p)]
                caps.append(" ".join(words[s] if isinstance(s, int) else s for s in tmpl))
            images.append(AnnotatedImage(f"img{c}_{n:05d}", frozenset(labels), feats, tuple(caps)))
    return images, [f"cat{c}" for c in range(K)]
