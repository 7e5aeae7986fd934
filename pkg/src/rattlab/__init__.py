"""LSTM image captioning over a sequence of tasks, with per-task attention masks.

A from-scratch LSTM caption decoder, task-conditioned hard-attention masks
for continual learning, and the usual baselines (fine-tuning, EWC, LwF)
together with a task splitter, BLEU-4 scoring and a run harness.
"""
from .errors import (
    ConfigError,
    DefinitionError,
    DomainError,
    RattError,
    ShapeError,
    TaskError,
    TrainingError,
    VocabularyError,
)
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ConfigError",
    "DefinitionError",
    "DomainError",
    "RattError",
    "ShapeError",
    "TaskError",
    "TrainingError",
    "VocabularyError",
]
