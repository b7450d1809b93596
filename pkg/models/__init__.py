"""Model views and the encoder they are built on."""
from models.encoder import EncoderParams, encode, encode_batch, parameter_count, pool
from models.siamese import (
    SiameseHead,
    SiameseModel,
    cosine_score,
    embed_sentences,
    siamese_cosine_batch,
    siamese_embed,
    siamese_forward,
    siamese_forward_batch,
)
from models.cross import CrossHead, CrossModel, PairEncoding, build_cross_input, cross_forward, cross_forward_batch

__all__ = [
    'EncoderParams',
    'encode',
    'encode_batch',
    'parameter_count',
    'pool',
    'SiameseHead',
    'SiameseModel',
    'cosine_score',
    'embed_sentences',
    'siamese_cosine_batch',
    'siamese_embed',
    'siamese_forward',
    'siamese_forward_batch',
    'CrossHead',
    'CrossModel',
    'PairEncoding',
    'build_cross_input',
    'cross_forward',
    'cross_forward_batch',
]
