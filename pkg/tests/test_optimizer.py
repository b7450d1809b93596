from collections import OrderedDict

import numpy as np
import pytest

from errors import ConfigError, NumericalError, ShapeError
from optimizer import Adam, AdamState, LrSchedule, adam_step, lr_at
from tensor import Tensor, backward, reduce_sum


# ---------- Learning-rate schedule ----------

def test_lr_endpoints():
    schedule = LrSchedule(base_lr=2e-3, warmup_ratio=0.1, total_steps=100)
    assert schedule.warmup_steps == 10
    assert lr_at(schedule, 0) == 0.0
    assert lr_at(schedule, 10) == pytest.approx(2e-3, abs=1e-18)
    assert lr_at(schedule, 100) == 0.0
    assert lr_at(schedule, 5) == pytest.approx(1e-3, abs=1e-18)
    assert lr_at(schedule, 55) == pytest.approx(1e-3, abs=1e-18)


def test_lr_rises_then_falls():
    schedule = LrSchedule(base_lr=1.0, warmup_ratio=0.25, total_steps=40)
    values = np.array([lr_at(schedule, step) for step in range(41)])
    peak = schedule.warmup_steps
    assert np.all(np.diff(values[: peak + 1]) > 0)
    assert np.all(np.diff(values[peak:]) < 0)
    assert values.max() == 1.0


short_schedules = [
    # (warmup_ratio, total_steps) -> warmup_steps
    (0.1, 9, 1),
    (0.1, 3, 1),
    (0.5, 1, 1),
    (0.25, 10, 3),
    (0.95, 10, 10),
    (0.1, 100, 10),
]


@pytest.mark.parametrize("ratio, total, warmup", short_schedules)
def test_any_warmup_starts_at_zero(ratio, total, warmup):
    schedule = LrSchedule(base_lr=1e-3, warmup_ratio=ratio, total_steps=total)
    assert schedule.warmup_steps == warmup
    assert lr_at(schedule, 0) == 0.0
    assert lr_at(schedule, total) == 0.0
    values = [lr_at(schedule, step) for step in range(total + 1)]
    assert all(0.0 <= v <= 1e-3 for v in values)
    if warmup < total:
        assert lr_at(schedule, warmup) == 1e-3


def test_no_warmup_starts_at_base_lr():
    schedule = LrSchedule(base_lr=0.5, warmup_ratio=0.0, total_steps=10)
    assert lr_at(schedule, 0) == 0.5


@pytest.mark.parametrize("kwargs", [
    dict(base_lr=0.0, warmup_ratio=0.1, total_steps=10),
    dict(base_lr=1e-3, warmup_ratio=1.0, total_steps=10),
    dict(base_lr=1e-3, warmup_ratio=0.1, total_steps=0),
])
def test_lr_schedule_rejects_invalid_values(kwargs):
    with pytest.raises(ConfigError):
        LrSchedule(**kwargs)


def test_lr_at_rejects_step_past_total():
    with pytest.raises(ConfigError):
        lr_at(LrSchedule(1e-3, 0.1, 10), 11)


# ---------- Adam ----------

def reference_adam(p, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return p


def test_adam_step_matches_reference(rng):
    p = rng.normal(size=(3, 2))
    grads = [rng.normal(size=(3, 2)) for _ in range(5)]
    state = AdamState.zeros_like({"w": p})
    current = OrderedDict(w=p)
    for g in grads:
        current = adam_step(current, {"w": g}, state, lr=0.01)
    np.testing.assert_allclose(current["w"], reference_adam(p, grads, 0.01), rtol=0, atol=1e-14)
    assert state.step == 5


def test_first_adam_step_moves_by_lr(rng):
    p = rng.normal(size=4)
    g = rng.normal(size=4)
    updated = adam_step({"w": p}, {"w": g}, AdamState.zeros_like({"w": p}), lr=0.1)
    np.testing.assert_allclose(updated["w"], p - 0.1 * np.sign(g), atol=1e-6)


def test_adam_rejects_non_finite_gradient():
    p = np.ones(3)
    state = AdamState.zeros_like({"w": p})
    with pytest.raises(NumericalError):
        adam_step({"w": p}, {"w": np.array([0.0, np.nan, 1.0])}, state, lr=0.1)
    assert state.step == 0


def test_adam_rejects_mismatched_gradient():
    p = np.ones(3)
    with pytest.raises(ShapeError):
        adam_step({"w": p}, {"w": np.ones(4)}, AdamState.zeros_like({"w": p}), lr=0.1)


def test_adam_treats_missing_grad_as_zero(rng):
    w = Tensor(rng.normal(size=3), requires_grad=True)
    unused = Tensor(rng.normal(size=2), requires_grad=True)
    before = unused.data.copy()
    optimizer = Adam(OrderedDict(w=w, unused=unused))
    backward(reduce_sum(w * w))
    optimizer.step(0.01)
    np.testing.assert_array_equal(unused.data, before)
    assert optimizer.state.step == 1


def test_adam_minimizes_quadratic():
    w = Tensor(np.array([3.0, -2.0]), requires_grad=True)
    optimizer = Adam(OrderedDict(w=w))
    for _ in range(500):
        optimizer.zero_grad()
        backward(reduce_sum(w * w))
        optimizer.step(0.05)
    assert np.all(np.abs(w.data) < 1e-2)


def test_adam_state_round_trip(rng):
    p = {"a": rng.normal(size=(2, 2)), "b": rng.normal(size=3)}
    state = AdamState.zeros_like(p)
    adam_step(p, {k: rng.normal(size=v.shape) for k, v in p.items()}, state, lr=0.01)
    restored = AdamState.from_saved(state.meta(), state.arrays())
    assert restored.meta() == state.meta()
    for name in p:
        np.testing.assert_array_equal(restored.m[name], state.m[name])
        np.testing.assert_array_equal(restored.v[name], state.v[name])


def test_adam_requires_moments_for_every_parameter(rng):
    state = AdamState.zeros_like({"a": np.zeros(2)})
    with pytest.raises(ConfigError):
        Adam(OrderedDict(b=Tensor(np.zeros(2), requires_grad=True)), state=state)


def test_adam_on_square_matches_scripted_trajectory():
    x = Tensor(np.array(1.0), requires_grad=True)
    optimizer = Adam(OrderedDict(x=x))
    trajectory = []
    for _ in range(10):
        optimizer.zero_grad()
        backward(x * x)
        optimizer.step(0.1)
        trajectory.append(float(x.data))

    expected, p, m, v = [], 1.0, 0.0, 0.0
    for t in range(1, 11):
        g = 2.0 * p
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        p -= 0.1 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        expected.append(p)
    np.testing.assert_allclose(trajectory, expected, rtol=0, atol=1e-12)
