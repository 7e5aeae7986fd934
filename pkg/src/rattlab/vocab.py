"""Global word registry with per-task membership."""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import TaskError, VocabularyError
from .model import END_ID, START_ID

START = "<start>"
END = "<end>"


class Vocabulary:
    """Word <-> id registry. Ids are assigned in insertion order and never change.

    The start and end sentinels hold ids 0 and 1 and belong to every task.
    """

    def __init__(self, words: Sequence[str] = ()):
        self.words: list[str] = []
        self.index: dict[str, int] = {}
        self.tasks: dict[int, set[int]] = {}
        for w in (START, END):
            self._add(w)
        assert self.index[START] == START_ID and self.index[END] == END_ID
        for w in words:
            if w not in self.index:
                self._add(w)

    def _add(self, word: str) -> int:
        self.index[word] = len(self.words)
        self.words.append(word)
        return self.index[word]

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.index

    def new_words(self, words: Iterable[str]) -> list[str]:
        """Words not yet registered, deduplicated, in sorted order."""
        return sorted({w for w in words if w not in self.index})

    def register(self, words: Sequence[str]) -> list[int]:
        """Append new words; raises on a word that is already registered."""
        seen = set()
        for w in words:
            if w in self.index or w in seen:
                raise VocabularyError(f"word {w!r} is already in the vocabulary")
            seen.add(w)
        return [self._add(w) for w in words]

    def set_task_words(self, task: int, words: Iterable[str]):
        ids = {START_ID, END_ID}
        for w in words:
            if w not in self.index:
                raise VocabularyError(f"word {w!r} is not registered")
            ids.add(self.index[w])
        self.tasks[task] = ids

    def membership(self, task: int, size: int | None = None) -> np.ndarray:
        if task not in self.tasks:
            raise TaskError(f"no vocabulary registered for task {task}")
        bitmap = np.zeros(len(self) if size is None else size, dtype=bool)
        bitmap[sorted(i for i in self.tasks[task] if i < bitmap.size)] = True
        return bitmap

    def encode(self, tokens: Sequence[str]) -> list[int]:
        try:
            return [START_ID] + [self.index[w] for w in tokens] + [END_ID]
        except KeyError as exc:
            raise VocabularyError(f"word {exc.args[0]!r} is not registered") from None

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.words[i] for i in ids]

    def to_json(self) -> dict:
        return {"words": list(self.words), "tasks": {str(t): sorted(v) for t, v in sorted(self.tasks.items())}}

    @classmethod
    def from_json(cls, doc: dict) -> "Vocabulary":
        words = doc["words"]
        if words[:2] != [START, END]:
            raise VocabularyError("vocabulary must start with the sentinels")
        v = cls(words[2:])
        v.tasks = {int(t): set(ids) for t, ids in doc["tasks"].items()}
        return v
