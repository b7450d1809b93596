"""Interaction view: a cross-encoder over the packed pair [CLS] Q [SEP] T [SEP]."""
from collections import OrderedDict
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from errors import DataValidationError, ShapeError
from models.encoder import EncoderParams, encode_batch
from schemas import TaskKind
from tensor import Tensor, reshape, select, softmax
from vocab import CLS_ID, PAD_ID, SEP_ID


@dataclass(frozen=True)
class PairEncoding:
    token_ids: Tuple[int, ...]
    segment_ids: Tuple[int, ...]
    attention_mask: Tuple[int, ...]

    def __len__(self) -> int:
        return len(self.token_ids)


def truncate_longest_first(q_tokens: Sequence[int], t_tokens: Sequence[int], budget: int) -> Tuple[List[int], List[int]]:
    """Drop trailing tokens from the longer side (T on ties) until both fit in `budget`."""
    q, t = list(q_tokens), list(t_tokens)
    while len(q) + len(t) > budget:
        if len(q) > len(t):
            q.pop()
        else:
            t.pop()
    return q, t


def build_cross_input(q_tokens: Sequence[int], t_tokens: Sequence[int], max_len: int) -> PairEncoding:
    """Pack a pair as [CLS] Q [SEP] T [SEP]; segment 0 through the first [SEP], 1 after."""
    if max_len < 3:
        raise ShapeError(f"max_len {max_len} leaves no room for the three special tokens")
    q, t = truncate_longest_first(q_tokens, t_tokens, max_len - 3)
    if not q or not t:
        raise DataValidationError(
            f"pair of lengths ({len(q_tokens)}, {len(t_tokens)}) leaves an empty sentence at max_len {max_len}"
        )
    token_ids = [CLS_ID] + q + [SEP_ID] + t + [SEP_ID]
    segment_ids = [0] * (len(q) + 2) + [1] * (len(t) + 1)
    return PairEncoding(tuple(token_ids), tuple(segment_ids), tuple([1] * len(token_ids)))


@dataclass
class CrossHead:
    """Projection O [d, n] applied to the [CLS] state; n = 1 for regression teachers."""

    O: Tensor

    @classmethod
    def initialize(cls, hidden_dim: int, num_outputs: int, std: float, seed: int) -> "CrossHead":
        rng = np.random.default_rng(seed)
        return cls(Tensor(rng.normal(0.0, std, size=(hidden_dim, num_outputs)), requires_grad=True, name="head.O"))

    @property
    def num_outputs(self) -> int:
        return self.O.shape[1]


@dataclass
class CrossModel:
    """Teacher: its own encoder (never shared with the student) plus a CrossHead."""

    encoder: EncoderParams
    head: CrossHead
    task_kind: TaskKind

    def parameters(self) -> "OrderedDict[str, Tensor]":
        params = OrderedDict((f"encoder.{k}", v) for k, v in self.encoder.parameters().items())
        params["head.O"] = self.head.O
        return params


def pad_encodings(encodings: Sequence[PairEncoding]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    length = max(len(e) for e in encodings)
    ids = np.full((len(encodings), length), PAD_ID, dtype=np.int64)
    segments = np.zeros_like(ids)
    mask = np.zeros_like(ids)
    for i, e in enumerate(encodings):
        ids[i, : len(e)] = e.token_ids
        segments[i, : len(e)] = e.segment_ids
        mask[i, : len(e)] = e.attention_mask
    return ids, segments, mask


def cross_forward_batch(model: CrossModel, encodings: Sequence[PairEncoding], training: bool = False,
                        rng: Optional[np.random.Generator] = None) -> Tensor:
    """Classification: distributions [B, n] = softmax(O^T z). Regression: scores [B] = o^T z."""
    ids, segments, mask = pad_encodings(encodings)
    hidden = encode_batch(model.encoder, ids, segments, mask, training=training, rng=rng)
    logits = select(hidden, 0, axis=1) @ model.head.O
    if model.task_kind is TaskKind.REGRESSION:
        return reshape(logits, (len(encodings),))
    return softmax(logits, axis=-1)


def cross_forward(model: CrossModel, encoding: PairEncoding) -> Tensor:
    return select(cross_forward_batch(model, [encoding]), 0, axis=0)
