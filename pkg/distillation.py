"""Training objectives: hard targets, multi-teacher soft targets, teacher annealing,
loss weighting, and their regression counterparts.

Student distributions are Tensors of shape [n] or [B, n]; targets are plain
arrays. Per-example losses come back as Tensors of shape [] or [B]; callers
average over the batch.
"""
import logging
from dataclasses import dataclass
from typing import Literal, Sequence, Union

import numpy as np

from errors import ConfigError, DataValidationError, ShapeError
from schemas import ScheduleMode, TaskKind
from tensor import Tensor, log, pick, reduce_sum

logger = logging.getLogger(__name__)

Reduction = Literal["sum", "mean"]
Gold = Union[int, Sequence[int], np.ndarray]


def _plogp(target: np.ndarray) -> np.ndarray:
    # 0 * log 0 = 0
    safe = np.where(target > 0, target, 1.0)
    return np.sum(np.where(target > 0, target * np.log(safe), 0.0), axis=-1)


def kl_divergence(target, student: Tensor) -> Tensor:
    """D(target || student) = sum target * (log target - log student) over the last axis."""
    target = np.asarray(target, dtype=np.float64)
    if target.shape != student.shape:
        raise ShapeError("KL target and student distributions differ in shape", target.shape, student.shape)
    return Tensor(_plogp(target)) - reduce_sum(Tensor(target) * log(student), axis=-1)


def _check_gold(gold, student: Tensor) -> np.ndarray:
    gold = np.asarray(gold, dtype=np.int64)
    if gold.shape != student.shape[:-1]:
        raise ShapeError("gold labels do not match the student batch", gold.shape, student.shape)
    n = student.shape[-1]
    if gold.size and (gold.min() < 0 or gold.max() >= n):
        raise DataValidationError(f"gold label outside [0, {n})")
    return gold


def cross_entropy(gold: Gold, student: Tensor) -> Tensor:
    """-log student[gold]."""
    gold = _check_gold(gold, student)
    return -pick(log(student), gold)


def one_hot(gold: Gold, num_classes: int) -> np.ndarray:
    gold = np.asarray(gold, dtype=np.int64)
    return np.eye(num_classes)[gold]


def anneal_lambda(step: int, total_steps: int) -> float:
    """λ = step / total_steps, rising linearly from 0 to 1."""
    if total_steps < 1:
        raise ConfigError("total_steps must be at least 1")
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    return step / total_steps


def _check_lambda(lam: float) -> None:
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"λ {lam} outside [0, 1]")


def annealed_target(gold: Gold, teacher_dist, lam: float) -> np.ndarray:
    """λ·onehot(gold) + (1 − λ)·teacher_dist."""
    _check_lambda(lam)
    teacher_dist = np.asarray(teacher_dist, dtype=np.float64)
    return lam * one_hot(gold, teacher_dist.shape[-1]) + (1.0 - lam) * teacher_dist


def _reduce(terms, reduction: Reduction) -> Tensor:
    if not terms:
        raise ConfigError("at least one teacher is required")
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    if reduction == "mean":
        return total * (1.0 / len(terms))
    return total


def distill_loss(gold: Gold, teachers: Sequence, student: Tensor, lam: float,
                 reduction: Reduction = "sum") -> Tensor:
    """Σ_k D(λy + (1 − λ)q_k || p); equals K·cross_entropy at λ = 1."""
    _check_gold(gold, student)
    return _reduce([kl_divergence(annealed_target(gold, q, lam), student) for q in teachers], reduction)


def weighted_loss(gold: Gold, teachers: Sequence, student: Tensor, alpha: float,
                  reduction: Reduction = "sum") -> Tensor:
    """α·Σ_k D(q_k || p) + (1 − α)·cross_entropy."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha {alpha} outside [0, 1]")
    soft = _reduce([kl_divergence(q, student) for q in teachers], reduction)
    return soft * alpha + cross_entropy(gold, student) * (1.0 - alpha)


def mse_loss(pred: Tensor, gold) -> Tensor:
    """(pred − gold)² per example."""
    diff = pred - Tensor(np.asarray(gold, dtype=np.float64))
    return diff * diff


def regression_distill_target(gold_score, teacher_score, lam: float):
    """λ·gold + (1 − λ)·teacher, the scalar analogue of the annealed target."""
    _check_lambda(lam)
    return lam * np.asarray(gold_score, dtype=np.float64) + (1.0 - lam) * np.asarray(teacher_score, dtype=np.float64)


def to_cosine_range(score, scale: float = 5.0):
    """Map a gold similarity in [0, scale] to the cosine range: 2·(s/scale) − 1."""
    return 2.0 * np.asarray(score, dtype=np.float64) / scale - 1.0


@dataclass(frozen=True)
class AnnealSchedule:
    total_steps: int
    mode: ScheduleMode = ScheduleMode.ANNEAL
    alpha: float = 0.5

    def __post_init__(self):
        if self.total_steps < 1:
            raise ConfigError("total_steps must be at least 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha {self.alpha} outside [0, 1]")

    def lam(self, step: int) -> float:
        """λ for optimizer step `step` (0-based); the last planned step reaches 1."""
        if self.mode is ScheduleMode.HARD_ONLY:
            return 1.0
        if self.mode is ScheduleMode.WEIGHT:
            return 0.0
        return anneal_lambda(step, max(self.total_steps - 1, 1)) if self.total_steps > 1 else 1.0


class TeacherPredictions:
    """Fixed teacher outputs aligned with dataset rows: [K, N, n] distributions or [K, N] scores."""

    def __init__(self, values: np.ndarray, task_kind: TaskKind):
        values = np.array(values, dtype=np.float64)
        task_kind = TaskKind(task_kind)
        expected_ndim = 3 if task_kind is TaskKind.CLASSIFICATION else 2
        if values.ndim != expected_ndim or values.shape[0] < 1:
            raise DataValidationError(f"teacher predictions have shape {values.shape}, expected {expected_ndim} axes and K >= 1")
        if task_kind is TaskKind.CLASSIFICATION:
            if np.any(values < 0) or np.any(np.abs(values.sum(axis=-1) - 1.0) > 1e-6):
                raise DataValidationError("teacher distributions must be non-negative and sum to 1")
        values.flags.writeable = False
        self.values = values
        self.task_kind = task_kind

    @property
    def num_teachers(self) -> int:
        return self.values.shape[0]

    @property
    def num_examples(self) -> int:
        return self.values.shape[1]

    def for_rows(self, rows: Sequence[int]) -> list:
        """Per-teacher predictions of the given dataset rows."""
        rows = np.asarray(rows, dtype=np.int64)
        return [self.values[k][rows] for k in range(self.num_teachers)]


def student_objective(schedule: AnnealSchedule, step: int, gold: Gold, teachers: Sequence,
                      student: Tensor, reduction: Reduction = "sum") -> Tensor:
    """Per-example classification objective for the configured schedule."""
    if schedule.mode is ScheduleMode.HARD_ONLY:
        return cross_entropy(gold, student)
    if schedule.mode is ScheduleMode.WEIGHT:
        return weighted_loss(gold, teachers, student, schedule.alpha, reduction)
    return distill_loss(gold, teachers, student, schedule.lam(step), reduction)


def regression_objective(schedule: AnnealSchedule, step: int, gold, teachers: Sequence,
                         pred: Tensor, reduction: Reduction = "sum") -> Tensor:
    """Per-example regression objective; gold and teacher scores are already in cosine range."""
    if schedule.mode is ScheduleMode.HARD_ONLY:
        return mse_loss(pred, gold)
    if schedule.mode is ScheduleMode.WEIGHT:
        soft = _reduce([mse_loss(pred, q) for q in teachers], reduction)
        return soft * schedule.alpha + mse_loss(pred, gold) * (1.0 - schedule.alpha)
    lam = schedule.lam(step)
    return _reduce([mse_loss(pred, regression_distill_target(gold, q, lam)) for q in teachers], reduction)
