import numpy as np
import pytest

from data import encode_pairs, gen_synthetic, write_pairs
from schemas import EncoderConfig, TaskKind, TeacherSpec, TrainPlan
from vocab import Vocab

SYNTHETIC_WORDS = 20


def tiny_config(**overrides) -> EncoderConfig:
    base = dict(vocab_size=SYNTHETIC_WORDS + 4, max_seq_len=24, hidden_dim=8, num_layers=1, num_heads=2,
                ffn_dim=16, dropout_rate=0.1)
    return EncoderConfig(**{**base, **overrides})


@pytest.fixture
def config():
    return tiny_config()


@pytest.fixture
def vocab():
    return Vocab([f"w{i}" for i in range(SYNTHETIC_WORDS)])


@pytest.fixture
def nli_pairs():
    return gen_synthetic(24, SYNTHETIC_WORDS, seed=3, task_kind=TaskKind.CLASSIFICATION)


@pytest.fixture
def sts_pairs():
    return gen_synthetic(24, SYNTHETIC_WORDS, seed=4, task_kind=TaskKind.REGRESSION)


@pytest.fixture
def nli_encoded(nli_pairs, vocab):
    return encode_pairs(nli_pairs, vocab)


@pytest.fixture
def sts_encoded(sts_pairs, vocab):
    return encode_pairs(sts_pairs, vocab)


@pytest.fixture
def plan():
    return TrainPlan(
        encoder=tiny_config(),
        batch_size=8,
        epochs=1,
        seed=0,
        teachers=[
            TeacherSpec(name="t1", seed_offset=11),
            TeacherSpec(name="t2", seed_offset=22, encoder=tiny_config(num_layers=2, ffn_dim=12)),
        ],
    )


@pytest.fixture
def pair_files(tmp_path, nli_pairs, sts_pairs):
    """Small classification and regression pair files on disk."""
    paths = {
        "nli": tmp_path / "nli.tsv",
        "sts": tmp_path / "sts.tsv",
    }
    write_pairs(paths["nli"], nli_pairs)
    write_pairs(paths["sts"], sts_pairs)
    return paths


@pytest.fixture
def rng():
    return np.random.default_rng(0)
