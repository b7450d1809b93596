"""Pair datasets: loading, writing, batching and the synthetic Jaccard task."""
import hashlib
import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np

from errors import ConfigError, DataValidationError
from schemas import TaskKind
from vocab import Vocab, count_tokens, vocab_from_counts

logger = logging.getLogger(__name__)

LABELS = ("entailment", "contradiction", "neutral")
LABEL_TO_ID = {name: i for i, name in enumerate(LABELS)}
ENTAILMENT, CONTRADICTION, NEUTRAL = range(3)
MAX_SCORE = 5.0

T = TypeVar("T")


@dataclass(frozen=True)
class LabeledPair:
    sentence_a: str
    sentence_b: str
    label: Optional[int] = None
    score: Optional[float] = None

    def __post_init__(self):
        if (self.label is None) == (self.score is None):
            raise DataValidationError("a pair carries exactly one of label or score")

    @property
    def task_kind(self) -> TaskKind:
        return TaskKind.CLASSIFICATION if self.label is not None else TaskKind.REGRESSION


@dataclass(frozen=True)
class EncodedPair:
    """A LabeledPair mapped to vocabulary ids; `index` is its row in the dataset file."""
    index: int
    ids_a: Tuple[int, ...]
    ids_b: Tuple[int, ...]
    label: Optional[int]
    score: Optional[float]


def fingerprint(path: Union[str, Path]) -> str:
    """SHA-256 of the raw file bytes."""
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError as e:
        raise DataValidationError(f"cannot read {path}: {e}")


def load_pairs(path: Union[str, Path], task_kind: TaskKind) -> List[LabeledPair]:
    """Read a UTF-8 file of `sentence_a<TAB>sentence_b<TAB>label-or-score` lines."""
    task_kind = TaskKind(task_kind)
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DataValidationError(f"cannot read pair file {path}: {e}")
    pairs = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise DataValidationError(f"{path}:{lineno}: expected 3 tab-separated fields, found {len(fields)}")
        a, b, target = (f.strip() for f in fields)
        if not a or not b:
            raise DataValidationError(f"{path}:{lineno}: empty sentence")
        _check_task_kind(path, lineno, target, task_kind)
        if task_kind is TaskKind.CLASSIFICATION:
            if target.lower() not in LABEL_TO_ID:
                raise DataValidationError(f"{path}:{lineno}: unknown label '{target}'")
            pairs.append(LabeledPair(a, b, label=LABEL_TO_ID[target.lower()]))
        else:
            try:
                score = float(target)
            except ValueError:
                raise DataValidationError(f"{path}:{lineno}: score '{target}' is not a number")
            if not 0.0 <= score <= MAX_SCORE:
                raise DataValidationError(f"{path}:{lineno}: score {score} outside [0, {MAX_SCORE}]")
            pairs.append(LabeledPair(a, b, score=score))
    logger.info("Loaded %d %s pairs from %s", len(pairs), task_kind.value, path)
    return pairs


def _check_task_kind(path, lineno: int, target: str, task_kind: TaskKind) -> None:
    if task_kind is TaskKind.REGRESSION and target.lower() in LABEL_TO_ID:
        raise ConfigError(f"{path}:{lineno}: found class label '{target}' but task kind is regression")
    if task_kind is TaskKind.CLASSIFICATION:
        try:
            float(target)
        except ValueError:
            return
        raise ConfigError(f"{path}:{lineno}: found score '{target}' but task kind is classification")


def write_pairs(path: Union[str, Path], pairs: Sequence[LabeledPair]) -> None:
    lines = []
    for p in pairs:
        target = LABELS[p.label] if p.label is not None else repr(float(p.score))
        lines.append(f"{p.sentence_a}\t{p.sentence_b}\t{target}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def corpus_sentences(paths: Iterable[Union[str, Path]]) -> Iterator[str]:
    """Sentences of pair files (first two fields) or plain text files (whole lines)."""
    for path in paths:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise DataValidationError(f"cannot read corpus file {path}: {e}")
        for line in text.splitlines():
            fields = line.split("\t")
            yield from (fields[:2] if len(fields) >= 3 else fields)


def build_vocab(paths: Sequence[Union[str, Path]], min_freq: int = 1) -> Vocab:
    counts = count_tokens(corpus_sentences(paths))
    if not counts:
        raise DataValidationError("cannot build a vocabulary from an empty corpus")
    return vocab_from_counts(counts, min_freq)


def encode_pairs(pairs: Sequence[LabeledPair], vocab: Vocab) -> List[EncodedPair]:
    return [
        EncodedPair(i, tuple(vocab.encode(p.sentence_a)), tuple(vocab.encode(p.sentence_b)), p.label, p.score)
        for i, p in enumerate(pairs)
    ]


def batch_iter(dataset: Sequence[T], batch_size: int, shuffle: bool = False, seed: int = 0) -> Iterator[List[T]]:
    """Yield consecutive batches; the final partial batch is kept."""
    if batch_size < 1:
        raise ConfigError("batch_size must be at least 1")
    order = np.random.default_rng(seed).permutation(len(dataset)) if shuffle else np.arange(len(dataset))
    for start in range(0, len(dataset), batch_size):
        yield [dataset[int(i)] for i in order[start: start + batch_size]]


def num_batches(size: int, batch_size: int) -> int:
    return -(-size // batch_size)


# ---------- synthetic task ----------

def multiset_overlap(tokens_a: Sequence[str], tokens_b: Sequence[str]) -> Tuple[int, int]:
    """(|A ∩ B|, |A ∪ B|) as multisets."""
    ca, cb = Counter(tokens_a), Counter(tokens_b)
    return sum((ca & cb).values()), sum((ca | cb).values())


def jaccard(tokens_a: Sequence[str], tokens_b: Sequence[str]) -> float:
    inter, union = multiset_overlap(tokens_a, tokens_b)
    return inter / union


def jaccard_label(tokens_a: Sequence[str], tokens_b: Sequence[str]) -> int:
    """Integer-only rule: J >= 0.6 entailment, J <= 0.1 contradiction, else neutral."""
    inter, union = multiset_overlap(tokens_a, tokens_b)
    if 5 * inter >= 3 * union:
        return ENTAILMENT
    if 10 * inter <= union:
        return CONTRADICTION
    return NEUTRAL


def _candidate(rng: np.random.Generator, words: List[str], wanted: int) -> Tuple[List[str], List[str]]:
    n = int(rng.integers(4, 11))
    a = [words[i] for i in rng.integers(0, len(words), size=n)]
    if wanted == ENTAILMENT:
        b = [a[i] for i in rng.permutation(n)]
        for _ in range(int(rng.integers(0, 2))):
            b[int(rng.integers(0, len(b)))] = words[int(rng.integers(0, len(words)))]
        if rng.random() < 0.3:
            b.pop(int(rng.integers(0, len(b))))
    elif wanted == CONTRADICTION:
        b = [words[i] for i in rng.integers(0, len(words), size=int(rng.integers(4, 11)))]
    else:
        keep = int(rng.integers(1, n))
        b = [a[i] for i in rng.permutation(n)[:keep]]
        b += [words[i] for i in rng.integers(0, len(words), size=int(rng.integers(1, n + 1)))]
        b = [b[i] for i in rng.permutation(len(b))]
    return a, b


def gen_synthetic(num_pairs: int, vocab_size: int, seed: int, task_kind: TaskKind,
                  balance: Tuple[float, float, float] = (0.4, 0.3, 0.3), max_tries: int = 1000) -> List[LabeledPair]:
    """Pairs over words w0..w{vocab_size-1} labeled by multiset Jaccard overlap.

    Class counts follow `balance` (entailment, contradiction, neutral) exactly;
    each slot is filled by rejection sampling. Regression pairs score 5 * J.
    """
    task_kind = TaskKind(task_kind)
    if vocab_size < 20:
        raise ConfigError("synthetic task needs vocab_size >= 20")
    if num_pairs < 1:
        raise ConfigError("num_pairs must be at least 1")
    rng = np.random.default_rng(seed)
    words = [f"w{i}" for i in range(vocab_size)]
    quotas = [int(round(balance[ENTAILMENT] * num_pairs)), int(round(balance[CONTRADICTION] * num_pairs))]
    quotas.append(num_pairs - sum(quotas))
    slots = [cls for cls, quota in enumerate(quotas) for _ in range(quota)]

    pairs = []
    for wanted in slots:
        for _ in range(max_tries):
            a, b = _candidate(rng, words, wanted)
            if jaccard_label(a, b) == wanted:
                break
        else:
            raise DataValidationError(f"could not sample a '{LABELS[wanted]}' pair in {max_tries} tries")
        if task_kind is TaskKind.CLASSIFICATION:
            pairs.append(LabeledPair(" ".join(a), " ".join(b), label=wanted))
        else:
            pairs.append(LabeledPair(" ".join(a), " ".join(b), score=MAX_SCORE * jaccard(a, b)))
    order = rng.permutation(len(pairs))
    return [pairs[int(i)] for i in order]


def label_counts(pairs: Sequence[LabeledPair]) -> List[int]:
    counts = [0] * len(LABELS)
    for p in pairs:
        counts[p.label] += 1
    return counts


def write_synthetic(out_dir: Union[str, Path], vocab_size: int, seed: int, task_kind: TaskKind,
                    train_pairs: int, dev_pairs: int = 0, test_pairs: int = 0) -> List[Path]:
    """Generate train/dev/test files (independent seeds) under `out_dir`."""
    out = Path(out_dir)
    written = []
    for offset, (split, size) in enumerate((("train", train_pairs), ("dev", dev_pairs), ("test", test_pairs))):
        if size <= 0:
            continue
        path = out / f"{split}.tsv"
        pairs = gen_synthetic(size, vocab_size, seed + offset, task_kind)
        write_pairs(path, pairs)
        written.append(path)
        logger.info("Wrote %d synthetic %s pairs to %s", size, task_kind.value, path)
        if task_kind is TaskKind.CLASSIFICATION:
            logger.info("Label balance of %s: %s", split, dict(zip(LABELS, label_counts(pairs))))
    return written

