"""A small BERT-style transformer encoder and pooling over its hidden states."""
import logging
from collections import OrderedDict
from typing import Dict, List, Optional, Sequence

import numpy as np

from errors import DataValidationError, ShapeError
from schemas import EncoderConfig, PoolingStrategy
from tensor import (
    Tensor,
    dropout,
    gather,
    gelu,
    layer_norm,
    masked_max,
    masked_mean,
    select,
    softmax,
)

logger = logging.getLogger(__name__)

# Score added to masked keys before the softmax; exp() of it underflows to exactly 0
MASK_BIAS = -1e9


def parameter_count(config: EncoderConfig) -> int:
    """Number of scalars in EncoderParams for `config`.

    Embeddings: (vocab + positions + segments) * d plus one layer norm (2d).
    Each layer: Q/K/V/O projections 4d^2 with biases on Q, V and O (3d),
    two layer norms (4d), and the FFN d*f + f + f*d + d.
    """
    d, f = config.hidden_dim, config.ffn_dim
    embeddings = (config.vocab_size + config.max_seq_len + config.num_segments) * d + 2 * d
    per_layer = 4 * d * d + 3 * d + 4 * d + 2 * d * f + f + d
    return embeddings + config.num_layers * per_layer


class EncoderParams:
    """Named learnable parameters of one encoder.

    Attention has no key bias: a bias on the keys shifts every score of a
    query by the same amount and the softmax cancels it.
    """

    def __init__(self, config: EncoderConfig, tensors: "OrderedDict[str, Tensor]"):
        self.config = config
        self.tensors = tensors

    @classmethod
    def initialize(cls, config: EncoderConfig, seed: int) -> "EncoderParams":
        rng = np.random.default_rng(seed)
        d, f, std = config.hidden_dim, config.ffn_dim, config.init_std
        tensors: "OrderedDict[str, Tensor]" = OrderedDict()

        def normal(name, *shape):
            tensors[name] = Tensor(rng.normal(0.0, std, size=shape), requires_grad=True, name=name)

        def const(name, value, *shape):
            tensors[name] = Tensor(np.full(shape, value), requires_grad=True, name=name)

        normal("embeddings.token", config.vocab_size, d)
        normal("embeddings.position", config.max_seq_len, d)
        normal("embeddings.segment", config.num_segments, d)
        const("embeddings.ln.gamma", 1.0, d)
        const("embeddings.ln.beta", 0.0, d)
        for i in range(config.num_layers):
            p = f"layers.{i}."
            normal(p + "attn.wq", d, d)
            const(p + "attn.bq", 0.0, d)
            normal(p + "attn.wk", d, d)
            normal(p + "attn.wv", d, d)
            const(p + "attn.bv", 0.0, d)
            normal(p + "attn.wo", d, d)
            const(p + "attn.bo", 0.0, d)
            const(p + "attn.ln.gamma", 1.0, d)
            const(p + "attn.ln.beta", 0.0, d)
            normal(p + "ffn.w1", d, f)
            const(p + "ffn.b1", 0.0, f)
            normal(p + "ffn.w2", f, d)
            const(p + "ffn.b2", 0.0, d)
            const(p + "ffn.ln.gamma", 1.0, d)
            const(p + "ffn.ln.beta", 0.0, d)
        return cls(config, tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def parameters(self) -> "OrderedDict[str, Tensor]":
        return self.tensors

    def num_parameters(self) -> int:
        return int(sum(t.data.size for t in self.tensors.values()))

    def state_arrays(self) -> Dict[str, np.ndarray]:
        return {name: t.data for name, t in self.tensors.items()}

    @classmethod
    def from_arrays(cls, config: EncoderConfig, arrays: Dict[str, np.ndarray]) -> "EncoderParams":
        template = cls.initialize(config, seed=0)
        for name, t in template.tensors.items():
            if name not in arrays:
                raise DataValidationError(f"checkpoint is missing parameter '{name}'")
            t.assign(arrays[name])
        return template


def _validate_inputs(config: EncoderConfig, token_ids: np.ndarray, segment_ids: np.ndarray,
                     attention_mask: np.ndarray) -> None:
    if token_ids.shape != segment_ids.shape or token_ids.shape != attention_mask.shape:
        raise ShapeError("token, segment and mask arrays differ in shape",
                         token_ids.shape, segment_ids.shape, attention_mask.shape)
    if token_ids.shape[-1] > config.max_seq_len:
        raise ShapeError(f"sequence longer than max_seq_len {config.max_seq_len}", token_ids.shape)
    if token_ids.min() < 0 or token_ids.max() >= config.vocab_size:
        raise DataValidationError(f"token id outside [0, {config.vocab_size})")
    if segment_ids.min() < 0 or segment_ids.max() >= config.num_segments:
        raise DataValidationError(f"segment id outside [0, {config.num_segments})")


def encode_batch(params: EncoderParams, token_ids, segment_ids, attention_mask, training: bool = False,
                 rng: Optional[np.random.Generator] = None,
                 attention_sink: Optional[List[np.ndarray]] = None) -> Tensor:
    """Run the encoder over a padded batch.

    Args:
        params: Encoder parameters.
        token_ids, segment_ids, attention_mask: integer arrays of shape [B, L].
        training: Enables dropout (requires `rng`).
        rng: Seeded generator for dropout masks.
        attention_sink: When given, each layer's attention probabilities
            [B, H, L, L] are appended to it.

    Returns:
        Final-layer hidden states [B, L, d].
    """
    config = params.config
    token_ids = np.asarray(token_ids, dtype=np.int64)
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    attention_mask = np.asarray(attention_mask, dtype=np.int64)
    _validate_inputs(config, token_ids, segment_ids, attention_mask)
    batch, length = token_ids.shape
    heads, head_dim, d = config.num_heads, config.head_dim, config.hidden_dim
    rate, eps = config.dropout_rate, config.layer_norm_eps

    x = (gather(params["embeddings.token"], token_ids)
         + gather(params["embeddings.position"], np.arange(length))
         + gather(params["embeddings.segment"], segment_ids))
    x = layer_norm(x, params["embeddings.ln.gamma"], params["embeddings.ln.beta"], eps)
    x = dropout(x, rate, rng, training)

    bias = np.where(attention_mask[:, None, None, :] > 0, 0.0, MASK_BIAS)
    bias = Tensor(np.broadcast_to(bias, (batch, heads, length, length)))
    scale = 1.0 / np.sqrt(head_dim)

    def split_heads(t: Tensor) -> Tensor:
        return t.reshape(batch, length, heads, head_dim).transpose(0, 2, 1, 3)

    for i in range(config.num_layers):
        p = f"layers.{i}."
        q = split_heads(x @ params[p + "attn.wq"] + params[p + "attn.bq"])
        k = split_heads(x @ params[p + "attn.wk"])
        v = split_heads(x @ params[p + "attn.wv"] + params[p + "attn.bv"])
        scores = (q @ k.transpose(0, 1, 3, 2)) * scale + bias
        probs = softmax(scores, axis=-1)
        if attention_sink is not None:
            attention_sink.append(probs.data)
        probs = dropout(probs, rate, rng, training)
        context = (probs @ v).transpose(0, 2, 1, 3).reshape(batch, length, d)
        attn_out = dropout(context @ params[p + "attn.wo"] + params[p + "attn.bo"], rate, rng, training)
        x = layer_norm(x + attn_out, params[p + "attn.ln.gamma"], params[p + "attn.ln.beta"], eps)

        hidden = gelu(x @ params[p + "ffn.w1"] + params[p + "ffn.b1"])
        ffn_out = dropout(hidden @ params[p + "ffn.w2"] + params[p + "ffn.b2"], rate, rng, training)
        x = layer_norm(x + ffn_out, params[p + "ffn.ln.gamma"], params[p + "ffn.ln.beta"], eps)
    return x


def encode(params: EncoderParams, token_ids: Sequence[int], segment_ids: Sequence[int],
           attention_mask: Sequence[int], training: bool = False,
           rng: Optional[np.random.Generator] = None) -> Tensor:
    """Encode one sequence; returns hidden states [len, d]."""
    hidden = encode_batch(params, np.asarray([token_ids]), np.asarray([segment_ids]),
                          np.asarray([attention_mask]), training=training, rng=rng)
    return select(hidden, 0, axis=0)


def pool(hidden: Tensor, mask, strategy: PoolingStrategy) -> Tensor:
    """Reduce hidden states [len, d] (or [B, len, d]) to sentence vectors [d] (or [B, d])."""
    mask = np.asarray(mask)
    seq_axis = hidden.ndim - 2
    if mask.shape != hidden.shape[:-1]:
        raise ShapeError("pooling mask does not match hidden states", mask.shape, hidden.shape)
    if np.any(mask.sum(axis=-1) == 0):
        raise ShapeError("pooling mask has no set positions", mask.shape)
    strategy = PoolingStrategy(strategy)
    if strategy is PoolingStrategy.MEAN:
        return masked_mean(hidden, mask, axis=seq_axis)
    if strategy is PoolingStrategy.MAX:
        return masked_max(hidden, mask, axis=seq_axis)
    return select(hidden, 0, axis=seq_axis)
