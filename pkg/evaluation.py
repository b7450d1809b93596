"""Spearman correlation, accuracy, and embedding-similarity evaluation drivers."""
import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import rankdata

from data import LabeledPair
from errors import ConfigError, NumericalError, ShapeError
from schemas import EvalReport, TaskKind

logger = logging.getLogger(__name__)

EmbedFn = Callable[[List[str]], np.ndarray]


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Pearson correlation of average ranks (ties share their mean rank)."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ShapeError("spearman inputs must be equal-length vectors", xs.shape, ys.shape)
    if xs.size < 2:
        raise ShapeError("spearman needs at least two observations", xs.shape)
    rx = rankdata(xs, method="average")
    ry = rankdata(ys, method="average")
    dx, dy = rx - rx.mean(), ry - ry.mean()
    sxx, syy = float(np.dot(dx, dx)), float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise NumericalError("Spearman correlation is undefined for constant input")
    rho = float(np.dot(dx, dy)) / np.sqrt(sxx * syy)
    return float(np.clip(rho, -1.0, 1.0))


def accuracy(predictions: Sequence[int], golds: Sequence[int]) -> float:
    predictions = np.asarray(predictions)
    golds = np.asarray(golds)
    if predictions.shape != golds.shape or predictions.ndim != 1:
        raise ShapeError("accuracy inputs must be equal-length vectors", predictions.shape, golds.shape)
    if predictions.size == 0:
        raise ShapeError("accuracy needs at least one prediction", predictions.shape)
    return float(np.mean(predictions == golds))


def summarize(values: Sequence[float]) -> Tuple[float, float]:
    """Mean and sample standard deviation across seeds (sd is 0 for one value)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ShapeError("cannot summarize an empty list", values.shape)
    sd = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return float(np.mean(values)), sd


def append_report(report: EvalReport, path: Union[str, Path]) -> None:
    """Append one JSON object per line; the timestamp is stored in its own field."""
    record = report.payload()
    record["timestamp"] = report.timestamp or datetime.now().strftime("%Y-%m-%d %H:%M:%S")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def pair_cosines(embed_fn: EmbedFn, pairs: Sequence[LabeledPair], batch_size: int = 64) -> np.ndarray:
    """Cosine of each pair, embedding every distinct sentence exactly once."""
    sentences = sorted({p.sentence_a for p in pairs} | {p.sentence_b for p in pairs})
    chunks = [embed_fn(sentences[i: i + batch_size]) for i in range(0, len(sentences), batch_size)]
    vectors = np.concatenate(chunks, axis=0)
    norms = np.linalg.norm(vectors, axis=1)
    if np.any(norms == 0.0):
        raise NumericalError("cosine similarity of a zero embedding is undefined")
    index: Dict[str, int] = {s: i for i, s in enumerate(sentences)}
    a = np.array([index[p.sentence_a] for p in pairs])
    b = np.array([index[p.sentence_b] for p in pairs])
    return np.sum(vectors[a] * vectors[b], axis=1) / (norms[a] * norms[b])


def _spearman_report(predicted: np.ndarray, dataset: Sequence[LabeledPair], seed: int, config_fingerprint: str,
                     sink: Optional[Union[str, Path]], split: str) -> EvalReport:
    rho = spearman(predicted, [p.score for p in dataset])
    report = EvalReport(metric="spearman", value=rho, count=len(dataset), seed=seed,
                        config_fingerprint=config_fingerprint, split=split)
    logger.info("Spearman on %d pairs: %.4f", len(dataset), rho)
    if sink is not None:
        append_report(report, sink)
    return report


def _require_scored(dataset: Sequence[LabeledPair]) -> None:
    if not dataset or any(p.task_kind is not TaskKind.REGRESSION for p in dataset):
        raise ConfigError("Spearman evaluation needs a non-empty regression (scored) dataset")


def eval_sts(embed_fn: EmbedFn, dataset: Sequence[LabeledPair], seed: int = 0, config_fingerprint: str = "",
             sink: Optional[Union[str, Path]] = None, batch_size: int = 64, split: str = "test") -> EvalReport:
    """Spearman between embedding cosines and gold similarity scores."""
    _require_scored(dataset)
    return _spearman_report(pair_cosines(embed_fn, dataset, batch_size), dataset, seed, config_fingerprint, sink,
                            split)


def eval_scores(score_fn: Callable[[Sequence[LabeledPair]], np.ndarray], dataset: Sequence[LabeledPair],
                seed: int = 0, config_fingerprint: str = "", sink: Optional[Union[str, Path]] = None,
                split: str = "test") -> EvalReport:
    """Spearman between directly predicted pair scores (a regression cross-encoder) and gold."""
    _require_scored(dataset)
    return _spearman_report(np.asarray(score_fn(dataset), dtype=np.float64), dataset, seed, config_fingerprint,
                            sink, split)


def eval_classification(predict_fn: Callable[[Sequence[LabeledPair]], np.ndarray], dataset: Sequence[LabeledPair],
                        seed: int = 0, config_fingerprint: str = "", sink: Optional[Union[str, Path]] = None,
                        split: str = "test") -> EvalReport:
    """Accuracy of argmax class predictions against gold labels."""
    if not dataset or any(p.task_kind is not TaskKind.CLASSIFICATION for p in dataset):
        raise ConfigError("classification evaluation needs a non-empty labeled dataset")
    predictions = predict_fn(dataset)
    value = accuracy(predictions, [p.label for p in dataset])
    report = EvalReport(metric="accuracy", value=value, count=len(dataset), seed=seed,
                        config_fingerprint=config_fingerprint, split=split)
    logger.info("Accuracy on %d pairs: %.4f", len(dataset), value)
    if sink is not None:
        append_report(report, sink)
    return report
