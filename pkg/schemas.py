import hashlib
import json
from enum import Enum
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class TaskKind(str, Enum):
    CLASSIFICATION = "classification"
    REGRESSION = "regression"


class PoolingStrategy(str, Enum):
    MEAN = "mean"
    MAX = "max"
    CLS = "cls"


class ScheduleMode(str, Enum):
    HARD_ONLY = "hard"
    ANNEAL = "anneal"
    WEIGHT = "weight"


def _canonical_hash(payload: Dict[str, Any]) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


class EncoderConfig(BaseModel):
    """Architecture hyperparameters of one transformer encoder."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    vocab_size: int = Field(default=512, ge=5)
    max_seq_len: int = Field(default=64)
    hidden_dim: int = Field(default=64, ge=1)
    num_layers: int = Field(default=2, ge=0)
    num_heads: int = Field(default=4, ge=1)
    ffn_dim: int = Field(default=128, ge=1)
    num_segments: int = Field(default=2, ge=1)
    dropout_rate: float = Field(default=0.1)
    layer_norm_eps: float = Field(default=1e-12, gt=0)
    init_std: float = Field(default=0.02, gt=0)

    @field_validator("max_seq_len")
    @classmethod
    def validate_max_seq_len(cls, v):
        # [CLS] Q [SEP] T [SEP] needs at least three slots
        if v < 3:
            raise ValueError("max_seq_len must be at least 3")
        return v

    @field_validator("dropout_rate")
    @classmethod
    def validate_dropout(cls, v):
        if not 0.0 <= v < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        return v

    @model_validator(mode="after")
    def validate_heads(self):
        if self.hidden_dim % self.num_heads != 0:
            raise ValueError(
                f"hidden_dim {self.hidden_dim} is not divisible by num_heads {self.num_heads}"
            )
        return self

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads

    @classmethod
    def preset(cls, name: str, **overrides) -> "EncoderConfig":
        """Named configurations: the desk default plus base and large scales."""
        presets = {
            "desk": {},
            "base": dict(vocab_size=30522, max_seq_len=128, hidden_dim=768, num_layers=12, num_heads=12, ffn_dim=3072),
            "large": dict(vocab_size=30522, max_seq_len=128, hidden_dim=1024, num_layers=24, num_heads=16, ffn_dim=4096),
        }
        if name not in presets:
            raise ValueError(f"unknown encoder preset '{name}', expected one of {sorted(presets)}")
        return cls(**{**presets[name], **overrides})

    def fingerprint(self) -> str:
        return _canonical_hash(self.model_dump(mode="json"))


class TeacherSpec(BaseModel):
    """One interaction-view teacher; unset fields inherit from the plan."""

    model_config = ConfigDict(extra="forbid")

    name: str = Field(..., min_length=1)
    encoder: Optional[EncoderConfig] = None
    seed_offset: int = 0


def _default_teachers() -> List[TeacherSpec]:
    # Two heterogeneous teachers: different depth and initialization
    return [
        TeacherSpec(name="teacher-a", seed_offset=101),
        TeacherSpec(name="teacher-b", seed_offset=202, encoder=EncoderConfig(num_layers=1, ffn_dim=192)),
    ]


class TrainPlan(BaseModel):
    """Everything a training or evaluation command needs besides its data files."""

    model_config = ConfigDict(extra="forbid")

    task_kind: TaskKind = TaskKind.CLASSIFICATION
    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    pooling: PoolingStrategy = PoolingStrategy.MEAN
    num_classes: int = Field(default=3, ge=2)
    batch_size: int = Field(default=16, ge=1)
    epochs: int = Field(default=1, ge=0)
    base_lr: float = Field(default=1e-3, gt=0)
    warmup_ratio: float = Field(default=0.1)
    seed: int = 0
    mode: ScheduleMode = ScheduleMode.ANNEAL
    alpha: float = 0.5
    teacher_caches: List[str] = Field(default_factory=list)
    teacher_reduction: Literal["sum", "mean"] = "sum"
    teachers: List[TeacherSpec] = Field(default_factory=_default_teachers)
    score_scale: float = Field(default=5.0, gt=0)
    eval_every: int = Field(default=0, ge=0)
    min_freq: int = Field(default=1, ge=1)
    output_dir: str = "runs/default"
    init_checkpoint: Optional[str] = None

    @field_validator("warmup_ratio")
    @classmethod
    def validate_warmup(cls, v):
        if not 0.0 <= v < 1.0:
            raise ValueError("warmup_ratio must lie in [0, 1)")
        return v

    @field_validator("alpha")
    @classmethod
    def validate_alpha(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        return v

    def fingerprint(self) -> str:
        """Hash of every field that influences results; paths are excluded."""
        payload = self.model_dump(mode="json", exclude={"output_dir", "teacher_caches", "init_checkpoint"})
        return _canonical_hash(payload)


class EvalReport(BaseModel):
    """One evaluation result, serialized as a line of the results log."""

    metric: Literal["spearman", "accuracy"]
    value: float
    count: int = Field(..., ge=0)
    seed: int = 0
    config_fingerprint: str = ""
    split: str = "test"
    extra: Dict[str, Any] = Field(default_factory=dict)
    timestamp: Optional[str] = None

    @model_validator(mode="after")
    def validate_range(self):
        bounds = {"spearman": (-1.0, 1.0), "accuracy": (0.0, 1.0)}
        low, high = bounds[self.metric]
        if not low <= self.value <= high:
            raise ValueError(f"{self.metric} value {self.value} outside [{low}, {high}]")
        return self

    def payload(self) -> Dict[str, Any]:
        """The deterministic part of the report (everything but the timestamp)."""
        return self.model_dump(mode="json", exclude={"timestamp"})


# ---------- API bodies ----------

def _strip_sentence(v: str) -> str:
    if not v or not v.strip():
        raise ValueError("Sentence cannot be empty or just whitespace")
    return v.strip()


class EmbedRequest(BaseModel):
    sentences: List[str] = Field(..., min_length=1, max_length=256, description="Sentences to embed")

    @field_validator("sentences")
    @classmethod
    def validate_sentences(cls, v):
        return [_strip_sentence(s) for s in v]


class EmbedResponse(BaseModel):
    embeddings: List[List[float]]
    dim: int


class SimilarityRequest(BaseModel):
    sentence_a: str = Field(..., min_length=1, max_length=4000)
    sentence_b: str = Field(..., min_length=1, max_length=4000)

    @field_validator("sentence_a", "sentence_b")
    @classmethod
    def validate_sentence(cls, v):
        return _strip_sentence(v)


class SimilarityResponse(BaseModel):
    score: float = Field(..., description="Cosine similarity of the two sentence embeddings")


class SearchRequest(BaseModel):
    query: str = Field(..., min_length=1, max_length=4000)
    candidates: List[str] = Field(..., min_length=1, max_length=1000)
    top_k: int = Field(default=5, ge=1)

    @field_validator("query")
    @classmethod
    def validate_query(cls, v):
        return _strip_sentence(v)

    @field_validator("candidates")
    @classmethod
    def validate_candidates(cls, v):
        return [_strip_sentence(s) for s in v]


class SearchHit(BaseModel):
    rank: int
    sentence: str
    score: float


class SearchResponse(BaseModel):
    hits: List[SearchHit]
    error: str | None = None
