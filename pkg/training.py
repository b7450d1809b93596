"""Training loops for interaction-view teachers and siamese students."""
import logging
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from checkpoint import load_checkpoint
from data import EncodedPair, LabeledPair, batch_iter, encode_pairs, num_batches
from distillation import (
    AnnealSchedule,
    TeacherPredictions,
    cross_entropy,
    mse_loss,
    regression_objective,
    student_objective,
    to_cosine_range,
)
from errors import ConfigError, DataValidationError
from evaluation import eval_classification, eval_scores, eval_sts
from models.cross import CrossHead, CrossModel, build_cross_input, cross_forward_batch
from models.encoder import EncoderParams
from models.siamese import (
    SiameseHead,
    SiameseModel,
    embed_sentences,
    siamese_cosine_batch,
    siamese_forward_batch,
)
from optimizer import Adam, AdamState, LrSchedule, lr_at
from schemas import EncoderConfig, EvalReport, PoolingStrategy, ScheduleMode, TaskKind, TrainPlan
from state import RunState, new_run_state, record_workflow
from tensor import Tensor, backward, reduce_mean
from vocab import Vocab

logger = logging.getLogger(__name__)

Model = Union[SiameseModel, CrossModel]
# (batch, step, dropout rng) -> (scalar loss, λ or None)
LossFn = Callable[[List[EncodedPair], int, np.random.Generator], Tuple[Tensor, Optional[float]]]


@dataclass
class TrainResult:
    model: Model
    optimizer_state: AdamState
    state: RunState

    @property
    def final_loss(self) -> Optional[float]:
        history = self.state["history"]
        return history[-1]["loss"] if history else None


def planned_steps(num_examples: int, batch_size: int, epochs: int) -> int:
    """epochs × ceil(N / batch_size), fixed before training starts."""
    return epochs * num_batches(num_examples, batch_size)


def init_cross_model(config: EncoderConfig, task_kind: TaskKind, num_classes: int, seed: int) -> CrossModel:
    task_kind = TaskKind(task_kind)
    outputs = 1 if task_kind is TaskKind.REGRESSION else num_classes
    encoder = EncoderParams.initialize(config, seed)
    return CrossModel(encoder, CrossHead.initialize(config.hidden_dim, outputs, config.init_std, seed + 1), task_kind)


def init_siamese_model(config: EncoderConfig, pooling: PoolingStrategy, task_kind: TaskKind, num_classes: int,
                       seed: int) -> SiameseModel:
    task_kind = TaskKind(task_kind)
    encoder = EncoderParams.initialize(config, seed)
    head = None
    if task_kind is TaskKind.CLASSIFICATION:
        head = SiameseHead.initialize(config.hidden_dim, num_classes, config.init_std, seed + 1)
    return SiameseModel(encoder, PoolingStrategy(pooling), task_kind, head)


def warm_start(model: Model, source: Model) -> None:
    """Copy encoder weights of a pre-trained model (e.g. NLI) into `model`."""
    if source.encoder.config != model.encoder.config:
        raise ConfigError("warm-start checkpoint encoder config differs from the plan's encoder config")
    for name, tensor in model.encoder.parameters().items():
        tensor.assign(source.encoder[name].data)


def _run(model: Model, plan: TrainPlan, dataset: Sequence[EncodedPair], loss_fn: LossFn, role: str,
         eval_fn: Optional[Callable[[Model], float]] = None) -> TrainResult:
    total = planned_steps(len(dataset), plan.batch_size, plan.epochs)
    state = new_run_state(role, plan.fingerprint(), total)
    record_workflow(state, role, "start_training", examples=len(dataset), total_steps=total)
    schedule = LrSchedule(plan.base_lr, plan.warmup_ratio, max(total, 1))
    params: "OrderedDict[str, Tensor]" = model.parameters()
    optimizer = Adam(params)
    dropout_rng = np.random.default_rng([plan.seed, 1])

    step = 0
    for epoch in range(plan.epochs):
        epoch_loss = 0.0
        batches = 0
        for batch in batch_iter(dataset, plan.batch_size, shuffle=True, seed=plan.seed * 100003 + epoch):
            optimizer.zero_grad()
            loss, lam = loss_fn(batch, step, dropout_rng)
            backward(loss)
            lr = lr_at(schedule, step)
            optimizer.step(lr)
            value = loss.item()
            state["history"].append({"step": step, "epoch": epoch, "loss": value, "lr": lr, "lam": lam})
            logger.debug("%s step %d loss %.6f lr %.3g lam %s", role, step, value, lr, lam)
            epoch_loss += value
            batches += 1
            step += 1
            state["step"] = step
            if eval_fn is not None and plan.eval_every and step % plan.eval_every == 0:
                metric = eval_fn(model)
                state["curve"].append({"step": step, "metric": "spearman", "value": metric})
                logger.info("%s step %d held-out spearman %.4f", role, step, metric)
        if batches:
            logger.info("%s epoch %d/%d mean loss %.4f", role, epoch + 1, plan.epochs, epoch_loss / batches)
    state["is_complete"] = True
    record_workflow(state, role, "complete_training", steps=step)
    return TrainResult(model, optimizer.state, state)


def train_teacher(plan: TrainPlan, model: CrossModel, dataset: Sequence[EncodedPair]) -> TrainResult:
    """Fit a cross-encoder on hard targets (cross-entropy, or MSE in regression mode)."""
    max_len = model.encoder.config.max_seq_len

    def loss_fn(batch, step, rng):
        encodings = [build_cross_input(p.ids_a, p.ids_b, max_len) for p in batch]
        out = cross_forward_batch(model, encodings, training=True, rng=rng)
        if model.task_kind is TaskKind.REGRESSION:
            gold = to_cosine_range([p.score for p in batch], plan.score_scale)
            return reduce_mean(mse_loss(out, gold)), None
        return reduce_mean(cross_entropy([p.label for p in batch], out)), None

    _check_targets(model.task_kind, dataset)
    return _run(model, plan, dataset, loss_fn, role="teacher")


def train_student(plan: TrainPlan, model: SiameseModel, dataset: Sequence[EncodedPair],
                  teachers: Optional[TeacherPredictions] = None,
                  eval_fn: Optional[Callable[[Model], float]] = None) -> TrainResult:
    """Fit the siamese student with the plan's schedule.

    Only fixed teacher predictions are consumed; teacher parameters never enter
    this function.
    """
    total = planned_steps(len(dataset), plan.batch_size, plan.epochs)
    schedule = AnnealSchedule(max(total, 1), plan.mode, plan.alpha)
    _check_targets(model.task_kind, dataset)
    if plan.mode is not ScheduleMode.HARD_ONLY:
        if teachers is None:
            raise ConfigError(f"schedule mode '{plan.mode.value}' needs teacher predictions")
        if teachers.task_kind is not model.task_kind:
            raise DataValidationError("teacher predictions were made for a different task kind")
        if teachers.num_examples != len(dataset):
            raise DataValidationError(
                f"teacher predictions cover {teachers.num_examples} examples, dataset has {len(dataset)}"
            )
        if model.task_kind is TaskKind.CLASSIFICATION and teachers.values.shape[-1] != model.head.num_classes:
            raise DataValidationError("teacher class count differs from the student head")

    def soft_targets(batch):
        if plan.mode is ScheduleMode.HARD_ONLY:
            return []
        return teachers.for_rows([p.index for p in batch])

    def classification_loss(batch, step, rng):
        probs = siamese_forward_batch(model, [p.ids_a for p in batch], [p.ids_b for p in batch], True, rng)
        per_example = student_objective(schedule, step, [p.label for p in batch], soft_targets(batch), probs,
                                        plan.teacher_reduction)
        return reduce_mean(per_example), schedule.lam(step) if plan.mode is not ScheduleMode.WEIGHT else None

    def regression_loss(batch, step, rng):
        cos = siamese_cosine_batch(model, [p.ids_a for p in batch], [p.ids_b for p in batch], True, rng)
        gold = to_cosine_range([p.score for p in batch], plan.score_scale)
        per_example = regression_objective(schedule, step, gold, soft_targets(batch), cos, plan.teacher_reduction)
        return reduce_mean(per_example), schedule.lam(step) if plan.mode is not ScheduleMode.WEIGHT else None

    loss_fn = classification_loss if model.task_kind is TaskKind.CLASSIFICATION else regression_loss
    return _run(model, plan, dataset, loss_fn, role="student", eval_fn=eval_fn)


def _check_targets(task_kind: TaskKind, dataset: Sequence[EncodedPair]) -> None:
    if not dataset:
        raise DataValidationError("training dataset is empty")
    if task_kind is TaskKind.CLASSIFICATION:
        matches = all(p.label is not None for p in dataset)
    else:
        matches = all(p.score is not None for p in dataset)
    if not matches:
        raise ConfigError(f"dataset does not match task kind '{task_kind.value}'")


# ---------- inference helpers ----------

def predict_classes(model: Model, dataset: Sequence[EncodedPair], batch_size: int = 64) -> np.ndarray:
    """Argmax class per pair (eval mode)."""
    if model.task_kind is not TaskKind.CLASSIFICATION:
        raise ConfigError("class predictions need a classification model")
    out = []
    for batch in batch_iter(dataset, batch_size):
        if isinstance(model, CrossModel):
            max_len = model.encoder.config.max_seq_len
            probs = cross_forward_batch(model, [build_cross_input(p.ids_a, p.ids_b, max_len) for p in batch])
        else:
            probs = siamese_forward_batch(model, [p.ids_a for p in batch], [p.ids_b for p in batch])
        out.append(np.argmax(probs.data, axis=-1))
    return np.concatenate(out)


def predict_scores(model: CrossModel, dataset: Sequence[EncodedPair], batch_size: int = 64) -> np.ndarray:
    max_len = model.encoder.config.max_seq_len
    return np.concatenate([
        cross_forward_batch(model, [build_cross_input(p.ids_a, p.ids_b, max_len) for p in batch]).data
        for batch in batch_iter(dataset, batch_size)
    ])


def embedding_fn(model: SiameseModel, vocab: Vocab) -> Callable[[List[str]], np.ndarray]:
    def embed(sentences: List[str]) -> np.ndarray:
        return embed_sentences(model, [vocab.encode(s) for s in sentences])
    return embed


def as_sentence_encoder(model: Model, pooling: Optional[PoolingStrategy] = None) -> SiameseModel:
    """View any checkpoint's encoder as a siamese sentence encoder (optionally re-pooled)."""
    if isinstance(model, CrossModel):
        return SiameseModel(model.encoder, PoolingStrategy(pooling or PoolingStrategy.MEAN), TaskKind.REGRESSION)
    if pooling is None:
        return model
    return SiameseModel(model.encoder, PoolingStrategy(pooling), model.task_kind, model.head)


def evaluate_model(model: Model, vocab: Vocab, pairs: Sequence[LabeledPair], task_kind: TaskKind, seed: int = 0,
                   config_fingerprint: str = "", sink=None, pooling: Optional[PoolingStrategy] = None,
                   split: str = "test") -> EvalReport:
    """Spearman for scored data, accuracy for labeled data.

    With `pooling` set, the checkpoint's encoder is evaluated as a plain
    sentence encoder (the average/max/CLS embedding baselines).
    """
    task_kind = TaskKind(task_kind)
    encoded = encode_pairs(pairs, vocab)
    if task_kind is TaskKind.CLASSIFICATION:
        if model.task_kind is not TaskKind.CLASSIFICATION:
            raise ConfigError("classification evaluation needs a classification checkpoint")
        scored = as_sentence_encoder(model, pooling) if isinstance(model, SiameseModel) else model
        return eval_classification(lambda _: predict_classes(scored, encoded), pairs, seed, config_fingerprint,
                                   sink, split)
    if isinstance(model, CrossModel) and pooling is None:
        if model.task_kind is not TaskKind.REGRESSION:
            raise ConfigError("a classification cross-encoder cannot score regression data; pass --pooling to "
                              "evaluate its encoder as a sentence encoder")
        return eval_scores(lambda _: predict_scores(model, encoded), pairs, seed, config_fingerprint, sink, split)
    encoder = as_sentence_encoder(model, pooling)
    return eval_sts(embedding_fn(encoder, vocab), pairs, seed, config_fingerprint, sink, split=split)


def sts_curve_fn(vocab: Vocab, pairs: Sequence[LabeledPair]) -> Callable[[Model], float]:
    """Held-out Spearman of a student, for learning curves during training."""
    def measure(model: Model) -> float:
        return eval_sts(embedding_fn(as_sentence_encoder(model), vocab), pairs).value
    return measure


def build_student(plan: TrainPlan) -> SiameseModel:
    """Fresh student for `plan`, warm-started from `plan.init_checkpoint` when set."""
    model = init_siamese_model(plan.encoder, plan.pooling, plan.task_kind, plan.num_classes, plan.seed)
    if plan.init_checkpoint:
        source, _, _, _ = load_checkpoint(plan.init_checkpoint)
        warm_start(model, source)
        logger.info("Warm-started student encoder from %s", plan.init_checkpoint)
    return model
