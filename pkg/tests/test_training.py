from unittest.mock import patch

import numpy as np
import pytest

from checkpoint import save_checkpoint
from distillation import TeacherPredictions
from errors import ConfigError, DataValidationError
from models.siamese import SiameseModel
from schemas import PoolingStrategy, ScheduleMode, TaskKind
from tensor import Tensor, softmax
from tests.conftest import tiny_config
from training import (
    as_sentence_encoder,
    build_student,
    evaluate_model,
    init_cross_model,
    init_siamese_model,
    planned_steps,
    predict_classes,
    train_student,
    train_teacher,
    warm_start,
)


def student_for(plan):
    return init_siamese_model(plan.encoder, plan.pooling, plan.task_kind, plan.num_classes, plan.seed)


def snapshot(model):
    return {name: t.data.copy() for name, t in model.parameters().items()}


def random_teachers(rng, num_teachers, count, num_classes=3):
    return TeacherPredictions(softmax(Tensor(rng.normal(size=(num_teachers, count, num_classes)))).data,
                              TaskKind.CLASSIFICATION)


# ---------- Planning ----------

@pytest.mark.parametrize("n, batch_size, epochs, expected", [(24, 8, 2, 6), (25, 8, 1, 4), (24, 8, 0, 0)])
def test_planned_steps(n, batch_size, epochs, expected):
    assert planned_steps(n, batch_size, epochs) == expected


# ---------- Teachers ----------

def test_train_teacher_records_history(plan, nli_encoded):
    teacher = init_cross_model(plan.encoder, TaskKind.CLASSIFICATION, 3, seed=11)
    result = train_teacher(plan, teacher, nli_encoded)
    state = result.state
    assert state["role"] == "teacher" and state["is_complete"]
    assert state["step"] == state["total_steps"] == 3
    assert [r["step"] for r in state["history"]] == [0, 1, 2]
    assert all(r["lam"] is None for r in state["history"])
    assert np.isfinite(result.final_loss)
    assert [w["action"] for w in state["workflow_history"]] == ["start_training", "complete_training"]


def test_train_regression_teacher(plan, sts_encoded):
    plan = plan.model_copy(update={"task_kind": TaskKind.REGRESSION})
    teacher = init_cross_model(plan.encoder, TaskKind.REGRESSION, 3, seed=11)
    before = snapshot(teacher)
    result = train_teacher(plan, teacher, sts_encoded)
    assert np.isfinite(result.final_loss)
    assert not np.array_equal(before["head.O"], teacher.head.O.data)


def test_train_teacher_rejects_wrong_task_kind(plan, sts_encoded):
    teacher = init_cross_model(plan.encoder, TaskKind.CLASSIFICATION, 3, seed=11)
    with pytest.raises(ConfigError):
        train_teacher(plan, teacher, sts_encoded)


# ---------- Students ----------

def test_zero_epochs_leave_parameters_unchanged(plan, nli_encoded):
    plan = plan.model_copy(update={"epochs": 0, "mode": ScheduleMode.HARD_ONLY})
    model = student_for(plan)
    before = snapshot(model)
    result = train_student(plan, model, nli_encoded)
    assert result.state["history"] == [] and result.state["is_complete"]
    assert result.final_loss is None
    for name, values in before.items():
        np.testing.assert_array_equal(model.parameters()[name].data, values)


def test_training_is_deterministic(plan, nli_encoded, rng):
    teachers = random_teachers(rng, 2, len(nli_encoded))
    runs = []
    for _ in range(2):
        model = student_for(plan)
        result = train_student(plan, model, nli_encoded, teachers)
        runs.append((snapshot(model), [r["loss"] for r in result.state["history"]]))
    assert runs[0][1] == runs[1][1]
    for name in runs[0][0]:
        np.testing.assert_array_equal(runs[0][0][name], runs[1][0][name])


def test_annealed_lambda_rises_from_zero_to_one(plan, nli_encoded, rng):
    plan = plan.model_copy(update={"epochs": 2})
    result = train_student(plan, student_for(plan), nli_encoded, random_teachers(rng, 2, len(nli_encoded)))
    lams = [r["lam"] for r in result.state["history"]]
    assert len(lams) == 6
    assert lams[0] == 0.0 and lams[-1] == 1.0
    assert all(a < b for a, b in zip(lams, lams[1:]))


def test_hard_mode_ignores_teachers(plan, nli_encoded, rng):
    plan = plan.model_copy(update={"mode": ScheduleMode.HARD_ONLY})
    with_teachers, without = student_for(plan), student_for(plan)
    train_student(plan, with_teachers, nli_encoded, random_teachers(rng, 2, len(nli_encoded)))
    result = train_student(plan, without, nli_encoded)
    assert all(r["lam"] == 1.0 for r in result.state["history"])
    for name, t in with_teachers.parameters().items():
        np.testing.assert_array_equal(t.data, without.parameters()[name].data)


def test_weighting_with_alpha_zero_follows_hard_targets(plan, nli_encoded, rng):
    hard_plan = plan.model_copy(update={"mode": ScheduleMode.HARD_ONLY})
    weight_plan = plan.model_copy(update={"mode": ScheduleMode.WEIGHT, "alpha": 0.0})
    hard, weighted = student_for(hard_plan), student_for(weight_plan)
    train_student(hard_plan, hard, nli_encoded)
    result = train_student(weight_plan, weighted, nli_encoded, random_teachers(rng, 2, len(nli_encoded)))
    assert all(r["lam"] is None for r in result.state["history"])
    for name, t in hard.parameters().items():
        np.testing.assert_allclose(weighted.parameters()[name].data, t.data, atol=1e-12)


def test_student_never_loads_teacher_checkpoints(plan, nli_encoded, rng):
    with patch("training.load_checkpoint") as mock_load:
        train_student(plan, student_for(plan), nli_encoded, random_teachers(rng, 2, len(nli_encoded)))
    mock_load.assert_not_called()


def test_student_rejects_missing_teachers(plan, nli_encoded):
    with pytest.raises(ConfigError):
        train_student(plan, student_for(plan), nli_encoded)


def test_student_rejects_misaligned_teachers(plan, nli_encoded, rng):
    with pytest.raises(DataValidationError):
        train_student(plan, student_for(plan), nli_encoded, random_teachers(rng, 2, len(nli_encoded) - 1))
    with pytest.raises(DataValidationError):
        train_student(plan, student_for(plan), nli_encoded, random_teachers(rng, 2, len(nli_encoded), 4))
    regression = TeacherPredictions(np.zeros((1, len(nli_encoded))), TaskKind.REGRESSION)
    with pytest.raises(DataValidationError):
        train_student(plan, student_for(plan), nli_encoded, regression)


def test_student_learning_curve(plan, nli_encoded, rng):
    plan = plan.model_copy(update={"eval_every": 1})
    calls = []

    def eval_fn(model):
        calls.append(model)
        return 0.25

    result = train_student(plan, student_for(plan), nli_encoded, random_teachers(rng, 2, len(nli_encoded)),
                           eval_fn=eval_fn)
    assert [p["step"] for p in result.state["curve"]] == [1, 2, 3]
    assert all(p["value"] == 0.25 and p["metric"] == "spearman" for p in result.state["curve"])
    assert len(calls) == 3


def test_regression_student(plan, sts_encoded, rng):
    plan = plan.model_copy(update={"task_kind": TaskKind.REGRESSION})
    model = student_for(plan)
    assert model.head is None
    teachers = TeacherPredictions(rng.uniform(-1.0, 1.0, size=(2, len(sts_encoded))), TaskKind.REGRESSION)
    result = train_student(plan, model, sts_encoded, teachers)
    assert np.isfinite(result.final_loss)
    assert result.state["history"][-1]["lam"] == 1.0


# ---------- Evaluation helpers ----------

def test_evaluate_classification_student(plan, vocab, nli_pairs, tmp_path):
    model = student_for(plan)
    sink = tmp_path / "results.jsonl"
    report = evaluate_model(model, vocab, nli_pairs, TaskKind.CLASSIFICATION, seed=1, sink=sink)
    assert report.metric == "accuracy" and report.count == len(nli_pairs)
    assert sink.exists()


def test_evaluate_sentence_encoder_on_scored_pairs(plan, vocab, sts_pairs):
    report = evaluate_model(student_for(plan), vocab, sts_pairs, TaskKind.REGRESSION, pooling=PoolingStrategy.CLS)
    assert report.metric == "spearman"
    assert -1.0 <= report.value <= 1.0


def test_evaluate_cross_encoder(plan, vocab, sts_pairs):
    classifier = init_cross_model(plan.encoder, TaskKind.CLASSIFICATION, 3, seed=1)
    with pytest.raises(ConfigError):
        evaluate_model(classifier, vocab, sts_pairs, TaskKind.REGRESSION)
    assert evaluate_model(classifier, vocab, sts_pairs, TaskKind.REGRESSION, pooling="max").metric == "spearman"
    scorer = init_cross_model(plan.encoder, TaskKind.REGRESSION, 3, seed=1)
    assert evaluate_model(scorer, vocab, sts_pairs, TaskKind.REGRESSION).metric == "spearman"


def test_predict_classes_for_both_views(plan, nli_encoded):
    student = student_for(plan)
    teacher = init_cross_model(plan.encoder, TaskKind.CLASSIFICATION, 3, seed=1)
    for model in (student, teacher):
        predictions = predict_classes(model, nli_encoded, batch_size=5)
        assert predictions.shape == (len(nli_encoded),)
        assert set(predictions.tolist()) <= {0, 1, 2}


def test_cross_encoder_viewed_as_sentence_encoder(plan):
    teacher = init_cross_model(plan.encoder, TaskKind.CLASSIFICATION, 3, seed=1)
    encoder = as_sentence_encoder(teacher)
    assert isinstance(encoder, SiameseModel)
    assert encoder.encoder is teacher.encoder
    assert encoder.pooling is PoolingStrategy.MEAN and encoder.head is None


# ---------- Warm start ----------

def test_build_student_warm_starts_encoder(plan, vocab, tmp_path):
    source = init_siamese_model(plan.encoder, PoolingStrategy.MEAN, TaskKind.REGRESSION, 3, seed=42)
    save_checkpoint(tmp_path / "nli.ckpt", source, vocab)
    plan = plan.model_copy(update={"init_checkpoint": str(tmp_path / "nli.ckpt")})
    student = build_student(plan)
    for name, t in source.encoder.parameters().items():
        np.testing.assert_array_equal(student.encoder[name].data, t.data)
    assert student.head is not None


def test_warm_start_rejects_other_architecture(plan):
    model = student_for(plan)
    other = init_siamese_model(tiny_config(num_layers=2), PoolingStrategy.MEAN, TaskKind.REGRESSION, 3, seed=1)
    with pytest.raises(ConfigError):
        warm_start(model, other)
