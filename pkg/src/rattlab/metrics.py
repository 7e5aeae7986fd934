"""BLEU-4, forgetting percentages and run-report export.

BLEU follows the usual definition: geometric mean of clipped n-gram
precisions for n = 1..4 times a brevity penalty against the closest
reference length. A precision of zero is replaced by ``1 / (2 * c)``
where ``c`` is the candidate length (corpus level: total candidate
length), so a single missing n-gram order does not zero the score.
An empty candidate scores 0.
"""
from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Sequence

Tokens = Sequence[Hashable]


@dataclass(frozen=True)
class BleuConfig:
    max_n: int = 4
    smoothing: str = "half-over-length"

    def __post_init__(self):
        if self.max_n < 1:
            raise ValueError("max_n must be >= 1")
        if self.smoothing not in ("half-over-length", "none"):
            raise ValueError(f"unknown smoothing rule {self.smoothing!r}")


DEFAULT_BLEU = BleuConfig()


def ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _closest_ref_len(c: int, refs: Sequence[Tokens]) -> int:
    return min((abs(len(r) - c), len(r)) for r in refs)[1]


def _sentence_stats(candidate: Tokens, references: Sequence[Tokens], max_n: int):
    matches, totals = [], []
    for n in range(1, max_n + 1):
        cand = ngrams(candidate, n)
        max_ref: Counter = Counter()
        for ref in references:
            for g, k in ngrams(ref, n).items():
                if k > max_ref[g]:
                    max_ref[g] = k
        matches.append(sum(min(k, max_ref[g]) for g, k in cand.items()))
        totals.append(max(len(candidate) - n + 1, 0))
    return matches, totals, len(candidate), _closest_ref_len(len(candidate), references)


def _combine(matches, totals, c: int, r: int, cfg: BleuConfig) -> float:
    if c == 0:
        return 0.0
    log_p = 0.0
    for m, t in zip(matches, totals):
        if m == 0:
            if cfg.smoothing == "none":
                return 0.0
            p = 1.0 / (2.0 * c)
        else:
            p = m / t
        log_p += math.log(p)
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(log_p / cfg.max_n)


def bleu4(candidate: Tokens, references: Sequence[Tokens], cfg: BleuConfig = DEFAULT_BLEU) -> float:
    """Sentence-level BLEU of one candidate against 1-5 references."""
    if not references:
        raise ValueError("BLEU needs at least one reference")
    return _combine(*_sentence_stats(list(candidate), [list(r) for r in references], cfg.max_n), cfg)


def corpus_bleu4(
    candidates: Sequence[Tokens], references: Sequence[Sequence[Tokens]], cfg: BleuConfig = DEFAULT_BLEU
) -> float:
    """Corpus BLEU: n-gram matches and lengths summed before combining."""
    if len(candidates) != len(references):
        raise ValueError("one reference set is needed per candidate")
    matches = [0] * cfg.max_n
    totals = [0] * cfg.max_n
    c_len = r_len = 0
    for cand, refs in zip(candidates, references):
        if not refs:
            raise ValueError("BLEU needs at least one reference")
        m, t, c, r = _sentence_stats(list(cand), [list(x) for x in refs], cfg.max_n)
        matches = [a + b for a, b in zip(matches, m)]
        totals = [a + b for a, b in zip(totals, t)]
        c_len += c
        r_len += r
    return _combine(matches, totals, c_len, r_len, cfg)


def forgetting_pct(after_own: float, after_last: float) -> float | None:
    """``100 * (1 - after_last / after_own)``; None (N/A) when ``after_own`` is 0.

    Negative values mean the task improved after later training.
    """
    if after_own < 0:
        raise ValueError("scores must be non-negative")
    if after_own == 0:
        return None
    return 100.0 * (1.0 - after_last / after_own)


@dataclass(frozen=True)
class ForgettingRecord:
    task: int
    score_after_own_task: float
    score_after_last_task: float
    forgetting: float | None


def fmt_cell(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v))


@dataclass
class RunReport:
    """Per-session task scores for one method over a task sequence.

    ``matrix[i][j]`` is the test BLEU-4 of task ``j`` after training task
    ``i``; entries for tasks not yet trained are None.
    """

    tasks: list[str]
    method: str
    matrix: list[list[float | None]] = field(default_factory=list)
    curves: dict[str, list[float]] = field(default_factory=dict)
    fisher: dict[str, dict[str, float]] = field(default_factory=dict)

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    def forgetting(self) -> list[float | None]:
        """Per-task forgetting after the final session; None for the last task and N/A cases."""
        K = len(self.matrix)
        out: list[float | None] = []
        for j in range(len(self.tasks)):
            if K == 0 or j >= K - 1:
                out.append(None)
                continue
            out.append(forgetting_pct(self.matrix[j][j], self.matrix[K - 1][j]))
        return out

    def records(self) -> list[ForgettingRecord]:
        K = len(self.matrix)
        f = self.forgetting()
        return [
            ForgettingRecord(j, self.matrix[j][j], self.matrix[K - 1][j], f[j])
            for j in range(min(K, len(self.tasks)))
        ]

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "tasks": list(self.tasks),
            "matrix": [[None if v is None else float(v) for v in row] for row in self.matrix],
            "forgetting": self.forgetting(),
            "curves": {k: [float(x) for x in v] for k, v in self.curves.items()},
            "fisher": self.fisher,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "RunReport":
        return cls(
            tasks=list(doc["tasks"]),
            method=doc["method"],
            matrix=[list(r) for r in doc["matrix"]],
            curves={k: list(v) for k, v in doc.get("curves", {}).items()},
            fisher=doc.get("fisher", {}),
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["session"] + list(self.tasks))
        for i, row in enumerate(self.matrix):
            w.writerow([f"after_{self.tasks[i]}"] + [fmt_cell(v) for v in row])
        w.writerow(["forgetting_pct"] + ["N/A" if v is None else repr(v) for v in self.forgetting()])
        return buf.getvalue()


def read_report_csv(path) -> tuple[list[str], list[list[float | None]], list[float | None]]:
    """Parse a heatmap CSV back into task names, matrix and forgetting row."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    tasks = rows[0][1:]
    matrix = [[float(v) if v else None for v in r[1:]] for r in rows[1:-1]]
    forgetting = [None if v == "N/A" else float(v) for v in rows[-1][1:]]
    return tasks, matrix, forgetting


def export_report(report: RunReport, path) -> tuple[Path, Path]:
    """Write ``<path>.csv`` (heatmap) and ``<path>.json`` (full report)."""
    base = Path(path)
    if base.suffix in (".csv", ".json"):
        base = base.with_suffix("")
    csv_path = base.with_suffix(".csv")
    json_path = base.with_suffix(".json")
    csv_path.write_text(report.to_csv())
    json_path.write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n")
    return csv_path, json_path
