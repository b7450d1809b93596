"""Siamese view: one shared encoder embeds each sentence independently."""
from collections import OrderedDict
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from errors import DataValidationError, NumericalError, ShapeError
from models.encoder import EncoderParams, encode_batch, pool
from schemas import PoolingStrategy, TaskKind
from tensor import Tensor, absolute, concat, reduce_sum, softmax, sqrt, select
from vocab import CLS_ID, PAD_ID, SEP_ID


@dataclass
class SiameseHead:
    """Classifier over [u, v, |u - v|]; W is stored as [3d, n] and applied as W^T x."""

    W: Tensor

    @classmethod
    def initialize(cls, hidden_dim: int, num_classes: int, std: float, seed: int) -> "SiameseHead":
        rng = np.random.default_rng(seed)
        return cls(Tensor(rng.normal(0.0, std, size=(3 * hidden_dim, num_classes)), requires_grad=True, name="head.W"))

    @property
    def num_classes(self) -> int:
        return self.W.shape[1]


@dataclass
class SiameseModel:
    """Student: encoder + pooling, with a classification head or a cosine (regression) output."""

    encoder: EncoderParams
    pooling: PoolingStrategy
    task_kind: TaskKind
    head: Optional[SiameseHead] = None

    def parameters(self) -> "OrderedDict[str, Tensor]":
        params = OrderedDict((f"encoder.{k}", v) for k, v in self.encoder.parameters().items())
        if self.head is not None:
            params["head.W"] = self.head.W
        return params


def sentence_inputs(sentences: Sequence[Sequence[int]], max_len: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pad `[CLS] s [SEP]` rows to the longest sentence of the batch."""
    rows = []
    for tokens in sentences:
        if len(tokens) == 0:
            raise DataValidationError("cannot embed an empty sentence")
        rows.append([CLS_ID] + list(tokens)[: max_len - 2] + [SEP_ID])
    length = max(len(r) for r in rows)
    ids = np.full((len(rows), length), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(rows), length), dtype=np.int64)
    for i, row in enumerate(rows):
        ids[i, : len(row)] = row
        mask[i, : len(row)] = 1
    return ids, np.zeros_like(ids), mask


def embed_batch(encoder: EncoderParams, pooling: PoolingStrategy, sentences: Sequence[Sequence[int]],
                training: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Sentence embeddings [B, d]."""
    ids, segments, mask = sentence_inputs(sentences, encoder.config.max_seq_len)
    hidden = encode_batch(encoder, ids, segments, mask, training=training, rng=rng)
    return pool(hidden, mask, pooling)


def siamese_embed(encoder: EncoderParams, pooling: PoolingStrategy, tokens: Sequence[int]) -> Tensor:
    """Production-time embedding [d] of one sentence (eval mode)."""
    return select(embed_batch(encoder, pooling, [tokens]), 0, axis=0)


def siamese_features(u: Tensor, v: Tensor) -> Tensor:
    return concat([u, v, absolute(u - v)], axis=-1)


def siamese_forward_batch(model: SiameseModel, sentences_a: Sequence[Sequence[int]],
                          sentences_b: Sequence[Sequence[int]], training: bool = False,
                          rng: Optional[np.random.Generator] = None) -> Tensor:
    """Class distributions [B, n] = softmax(W^T [u, v, |u - v|])."""
    if model.head is None:
        raise ShapeError("siamese model has no classification head")
    u = embed_batch(model.encoder, model.pooling, sentences_a, training, rng)
    v = embed_batch(model.encoder, model.pooling, sentences_b, training, rng)
    return softmax(siamese_features(u, v) @ model.head.W, axis=-1)


def siamese_forward(model: SiameseModel, tokens_a: Sequence[int], tokens_b: Sequence[int]) -> Tensor:
    return select(siamese_forward_batch(model, [tokens_a], [tokens_b]), 0, axis=0)


def cosine_batch(u: Tensor, v: Tensor) -> Tensor:
    """Row-wise differentiable cosine similarity of [B, d] embeddings."""
    dot = reduce_sum(u * v, axis=-1)
    norm_u = sqrt(reduce_sum(u * u, axis=-1))
    norm_v = sqrt(reduce_sum(v * v, axis=-1))
    return dot / (norm_u * norm_v)


def siamese_cosine_batch(model: SiameseModel, sentences_a: Sequence[Sequence[int]],
                         sentences_b: Sequence[Sequence[int]], training: bool = False,
                         rng: Optional[np.random.Generator] = None) -> Tensor:
    """Regression output [B]: cosine(u, v) in place of the classification head."""
    u = embed_batch(model.encoder, model.pooling, sentences_a, training, rng)
    v = embed_batch(model.encoder, model.pooling, sentences_b, training, rng)
    return cosine_batch(u, v)


def cosine_score(u, v) -> float:
    """u.v / (|u||v|) for plain vectors; symmetric and scale-invariant."""
    u = np.asarray(u.data if isinstance(u, Tensor) else u, dtype=np.float64)
    v = np.asarray(v.data if isinstance(v, Tensor) else v, dtype=np.float64)
    if u.shape != v.shape:
        raise ShapeError("cosine operands differ in shape", u.shape, v.shape)
    norm_u, norm_v = np.linalg.norm(u), np.linalg.norm(v)
    if norm_u == 0.0 or norm_v == 0.0:
        raise NumericalError("cosine similarity of a zero vector is undefined")
    return float(np.dot(u, v) / (norm_u * norm_v))


def embed_sentences(model: SiameseModel, sentences: List[Sequence[int]], batch_size: int = 64) -> np.ndarray:
    """Eval-mode embeddings of many sentences as a plain [N, d] array."""
    chunks = [
        embed_batch(model.encoder, model.pooling, sentences[start: start + batch_size]).data
        for start in range(0, len(sentences), batch_size)
    ]
    return np.concatenate(chunks, axis=0)
