"""Teacher-prediction cache: run each teacher once, keep its outputs fixed on disk."""
import logging
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from checkpoint import read_container, write_container
from data import EncodedPair, batch_iter
from distillation import TeacherPredictions
from errors import DataValidationError, FingerprintMismatchError
from models.cross import CrossModel, build_cross_input, cross_forward_batch
from schemas import TaskKind

logger = logging.getLogger(__name__)

CACHE_MAGIC = b"DVDTCH01"
CACHE_VERSION = 1


@dataclass
class TeacherCache:
    """Header {fingerprint, K, n, count} plus per-example predictions [K, count, n].

    Regression caches store one scalar per example (n = 1).
    """

    fingerprint: str
    teacher_ids: List[str]
    task_kind: TaskKind
    predictions: np.ndarray

    @property
    def num_teachers(self) -> int:
        return self.predictions.shape[0]

    @property
    def count(self) -> int:
        return self.predictions.shape[1]

    @property
    def num_outputs(self) -> int:
        return self.predictions.shape[2]

    def to_predictions(self) -> TeacherPredictions:
        values = self.predictions if self.task_kind is TaskKind.CLASSIFICATION else self.predictions[..., 0]
        return TeacherPredictions(values, self.task_kind)

    def save(self, path: Union[str, Path]) -> None:
        meta = {
            "version": CACHE_VERSION,
            "fingerprint": self.fingerprint,
            "K": self.num_teachers,
            "n": self.num_outputs,
            "count": self.count,
            "teacher_ids": list(self.teacher_ids),
            "task_kind": self.task_kind.value,
        }
        write_container(path, CACHE_MAGIC, meta, OrderedDict(predictions=self.predictions))
        logger.info("Saved teacher cache (K=%d, count=%d) to %s", self.num_teachers, self.count, path)

    @classmethod
    def load(cls, path: Union[str, Path], expected_fingerprint: Optional[str] = None) -> "TeacherCache":
        meta, arrays = read_container(path, CACHE_MAGIC)
        if meta.get("version") != CACHE_VERSION:
            raise DataValidationError(f"{path}: unsupported cache version {meta.get('version')}")
        predictions = arrays["predictions"]
        if predictions.shape != (meta["K"], meta["count"], meta["n"]):
            raise DataValidationError(f"{path}: header does not match prediction shape {predictions.shape}")
        if expected_fingerprint is not None and meta["fingerprint"] != expected_fingerprint:
            raise FingerprintMismatchError(expected_fingerprint, meta["fingerprint"])
        cache = cls(meta["fingerprint"], meta["teacher_ids"], TaskKind(meta["task_kind"]), predictions)
        # Validates distribution sums
        cache.to_predictions()
        return cache


def cache_teachers(teachers: Sequence[CrossModel], teacher_ids: Sequence[str], dataset: Sequence[EncodedPair],
                   dataset_fingerprint: str, path: Optional[Union[str, Path]] = None,
                   batch_size: int = 64) -> TeacherCache:
    """Run every teacher in eval mode over every example exactly once."""
    if not teachers:
        raise DataValidationError("at least one teacher is required")
    task_kinds = {t.task_kind for t in teachers}
    if len(task_kinds) != 1:
        raise DataValidationError("teachers disagree on task kind")
    task_kind = task_kinds.pop()
    outputs = []
    for teacher, name in zip(teachers, teacher_ids):
        max_len = teacher.encoder.config.max_seq_len
        rows = []
        for batch in batch_iter(dataset, batch_size):
            encodings = [build_cross_input(p.ids_a, p.ids_b, max_len) for p in batch]
            rows.append(cross_forward_batch(teacher, encodings).data.reshape(len(batch), -1))
        outputs.append(np.concatenate(rows, axis=0))
        logger.info("Teacher %s labeled %d examples", name, len(dataset))
    cache = TeacherCache(dataset_fingerprint, list(teacher_ids), task_kind, np.stack(outputs))
    if path is not None:
        cache.save(path)
    return cache


def merge_caches(caches: Sequence[TeacherCache]) -> TeacherCache:
    """Stack caches of the same dataset into one K-teacher cache."""
    if not caches:
        raise DataValidationError("no teacher caches given")
    first = caches[0]
    for other in caches[1:]:
        if other.fingerprint != first.fingerprint:
            raise FingerprintMismatchError(first.fingerprint, other.fingerprint)
        if other.task_kind is not first.task_kind or other.num_outputs != first.num_outputs:
            raise DataValidationError("teacher caches disagree on task kind or class count")
    ids = [tid for c in caches for tid in c.teacher_ids]
    return TeacherCache(first.fingerprint, ids, first.task_kind, np.concatenate([c.predictions for c in caches]))
