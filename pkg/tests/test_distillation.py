import math
from collections import OrderedDict

import numpy as np
import pytest

from distillation import (
    AnnealSchedule,
    TeacherPredictions,
    anneal_lambda,
    annealed_target,
    cross_entropy,
    distill_loss,
    kl_divergence,
    mse_loss,
    one_hot,
    regression_distill_target,
    regression_objective,
    student_objective,
    to_cosine_range,
    weighted_loss,
)
from errors import ConfigError, DataValidationError, ShapeError
from optimizer import Adam
from schemas import ScheduleMode, TaskKind
from tensor import Tensor, backward, softmax


def random_dist(rng, shape):
    return softmax(Tensor(rng.normal(size=shape))).data


# ---------- Divergences ----------

def test_kl_of_point_mass_against_uniform_is_log_two():
    kl = kl_divergence([1.0, 0.0], Tensor([0.5, 0.5]))
    assert kl.item() == pytest.approx(math.log(2.0), abs=1e-15)


def test_kl_of_identical_distributions_is_zero(rng):
    p = random_dist(rng, (4, 3))
    np.testing.assert_allclose(kl_divergence(p, Tensor(p)).data, 0.0, atol=1e-15)


@pytest.mark.parametrize("seed", range(20))
def test_cross_entropy_equals_kl_of_one_hot(seed):
    rng = np.random.default_rng(seed)
    student = Tensor(random_dist(rng, (5, 3)))
    gold = rng.integers(0, 3, size=5)
    ce = cross_entropy(gold, student).data
    kl = kl_divergence(one_hot(gold, 3), student).data
    np.testing.assert_allclose(ce, kl, rtol=0, atol=1e-15)


def test_kl_rejects_mismatched_shapes():
    with pytest.raises(ShapeError):
        kl_divergence([0.5, 0.5], Tensor([0.2, 0.3, 0.5]))


def test_cross_entropy_rejects_out_of_range_gold():
    with pytest.raises(DataValidationError):
        cross_entropy([3], Tensor([[0.2, 0.3, 0.5]]))


# ---------- Annealing ----------

def test_annealed_target_mixes_gold_and_teacher():
    np.testing.assert_allclose(annealed_target(0, [0.2, 0.8], 0.5), [0.6, 0.4], atol=1e-15)


@pytest.mark.parametrize("lam", [-0.1, 1.5])
def test_annealed_target_rejects_lambda_outside_unit_interval(lam):
    with pytest.raises(ConfigError):
        annealed_target(0, [0.5, 0.5], lam)


@pytest.mark.parametrize("seed", range(100))
def test_distill_loss_at_lambda_one_is_k_cross_entropy(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 4))
    student = Tensor(random_dist(rng, (6, 3)))
    gold = rng.integers(0, 3, size=6)
    teachers = [random_dist(rng, (6, 3)) for _ in range(k)]
    loss = distill_loss(gold, teachers, student, 1.0).data
    np.testing.assert_allclose(loss, k * cross_entropy(gold, student).data, rtol=0, atol=1e-10)


def test_distill_loss_at_lambda_zero_is_sum_of_kls(rng):
    student = Tensor(random_dist(rng, (4, 3)))
    teachers = [random_dist(rng, (4, 3)) for _ in range(2)]
    expected = sum(kl_divergence(q, student).data for q in teachers)
    np.testing.assert_allclose(distill_loss([0, 1, 2, 0], teachers, student, 0.0).data, expected, atol=1e-12)


def test_mean_reduction_divides_by_teacher_count(rng):
    student = Tensor(random_dist(rng, (4, 3)))
    teachers = [random_dist(rng, (4, 3)) for _ in range(3)]
    total = distill_loss([0, 1, 2, 0], teachers, student, 0.3).data
    mean = distill_loss([0, 1, 2, 0], teachers, student, 0.3, reduction="mean").data
    np.testing.assert_allclose(mean, total / 3.0, atol=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_weighted_loss_at_alpha_zero_is_cross_entropy(seed):
    rng = np.random.default_rng(seed)
    student = Tensor(random_dist(rng, (5, 3)))
    gold = rng.integers(0, 3, size=5)
    teachers = [random_dist(rng, (5, 3)) for _ in range(2)]
    np.testing.assert_allclose(weighted_loss(gold, teachers, student, 0.0).data,
                               cross_entropy(gold, student).data, rtol=0, atol=1e-12)


def test_losses_need_a_teacher(rng):
    student = Tensor(random_dist(rng, (2, 3)))
    with pytest.raises(ConfigError):
        distill_loss([0, 1], [], student, 0.5)


def test_lambda_endpoints_and_monotonicity():
    total = 10_000
    values = np.array([anneal_lambda(step, total) for step in range(total + 1)])
    assert values[0] == 0.0 and values[-1] == 1.0
    assert np.all(np.diff(values) > 0)


@pytest.mark.parametrize("step, total", [(-1, 10), (11, 10), (0, 0)])
def test_anneal_lambda_rejects_bad_steps(step, total):
    with pytest.raises(ConfigError):
        anneal_lambda(step, total)


schedule_cases = [
    (ScheduleMode.ANNEAL, 0, 0.0),
    (ScheduleMode.ANNEAL, 2, 0.5),
    (ScheduleMode.ANNEAL, 4, 1.0),
    (ScheduleMode.HARD_ONLY, 0, 1.0),
    (ScheduleMode.WEIGHT, 4, 0.0),
]


@pytest.mark.parametrize("mode, step, expected", schedule_cases)
def test_anneal_schedule_modes(mode, step, expected):
    assert AnnealSchedule(total_steps=5, mode=mode).lam(step) == expected


def test_single_step_schedule_uses_gold():
    assert AnnealSchedule(total_steps=1).lam(0) == 1.0


def test_schedule_rejects_bad_alpha():
    with pytest.raises(ConfigError):
        AnnealSchedule(total_steps=5, alpha=1.5)


def test_student_objective_dispatches_on_mode(rng):
    student = Tensor(random_dist(rng, (3, 3)))
    teachers = [random_dist(rng, (3, 3))]
    gold = [0, 1, 2]
    hard = student_objective(AnnealSchedule(5, ScheduleMode.HARD_ONLY), 0, gold, teachers, student)
    np.testing.assert_array_equal(hard.data, cross_entropy(gold, student).data)
    weighted = student_objective(AnnealSchedule(5, ScheduleMode.WEIGHT, 0.25), 0, gold, teachers, student)
    np.testing.assert_array_equal(weighted.data, weighted_loss(gold, teachers, student, 0.25).data)
    annealed = student_objective(AnnealSchedule(5), 2, gold, teachers, student)
    np.testing.assert_array_equal(annealed.data, distill_loss(gold, teachers, student, 0.5).data)


# ---------- Regression ----------

@pytest.mark.parametrize("score, expected", [(0.0, -1.0), (2.5, 0.0), (5.0, 1.0)])
def test_to_cosine_range(score, expected):
    assert to_cosine_range(score) == pytest.approx(expected, abs=1e-15)


def test_regression_objective_modes():
    pred = Tensor([0.2, -0.4])
    gold = np.array([1.0, 0.0])
    teacher = np.array([0.0, -1.0])
    hard = regression_objective(AnnealSchedule(3, ScheduleMode.HARD_ONLY), 0, gold, [teacher], pred)
    np.testing.assert_allclose(hard.data, [0.64, 0.16], atol=1e-12)
    start = regression_objective(AnnealSchedule(3), 0, gold, [teacher], pred)
    np.testing.assert_allclose(start.data, mse_loss(pred, teacher).data, atol=1e-12)
    np.testing.assert_allclose(regression_distill_target(gold, teacher, 0.5), [0.5, -0.5])


# ---------- Teacher predictions ----------

def test_teacher_predictions_validate_distributions():
    with pytest.raises(DataValidationError):
        TeacherPredictions(np.array([[[0.5, 0.6]]]), TaskKind.CLASSIFICATION)
    with pytest.raises(DataValidationError):
        TeacherPredictions(np.zeros((2, 3)), TaskKind.CLASSIFICATION)


def test_teacher_predictions_are_read_only():
    preds = TeacherPredictions(np.array([[0.1, 0.2, 0.3]]), TaskKind.REGRESSION)
    assert preds.num_teachers == 1 and preds.num_examples == 3
    with pytest.raises(ValueError):
        preds.values[0, 0] = 1.0
    np.testing.assert_array_equal(preds.for_rows([2, 0])[0], [0.3, 0.1])


# ---------- Convergence ----------

def test_student_logits_converge_to_teacher_at_lambda_zero():
    target = np.array([[0.7, 0.2, 0.1]])
    logits = Tensor(np.zeros((1, 3)), requires_grad=True)
    optimizer = Adam(OrderedDict(logits=logits))
    kl = None
    for _ in range(2000):
        optimizer.zero_grad()
        loss = distill_loss([2], [target], softmax(logits), 0.0)
        backward(loss.sum())
        optimizer.step(0.01)
        kl = float(loss.data.sum())
        if kl < 1e-3:
            break
    assert kl < 1e-3


def test_kl_matches_direct_summation():
    expected = 0.3 * math.log(0.3 / 0.6) + 0.7 * math.log(0.7 / 0.4)
    assert kl_divergence([0.3, 0.7], Tensor([0.6, 0.4])).item() == pytest.approx(expected, abs=1e-14)


def test_distill_loss_with_two_teachers_by_hand():
    student = Tensor([0.5, 0.3, 0.2])
    teachers = [np.array([0.2, 0.6, 0.2]), np.array([0.1, 0.1, 0.8])]
    expected = 0.0
    for q in teachers:
        target = 0.5 * np.array([1.0, 0.0, 0.0]) + 0.5 * q
        expected += float(np.sum(target * np.log(target / student.data)))
    assert distill_loss(0, teachers, student, 0.5).item() == pytest.approx(expected, abs=1e-14)


def test_weighted_loss_by_hand():
    student = Tensor([0.5, 0.3, 0.2])
    q = np.array([0.2, 0.6, 0.2])
    soft = float(np.sum(q * np.log(q / student.data)))
    expected = 0.5 * soft + 0.5 * -math.log(0.3)
    assert weighted_loss(1, [q], student, 0.5).item() == pytest.approx(expected, abs=1e-14)
