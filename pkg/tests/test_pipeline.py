import numpy as np
import pytest

import pipeline
import tensor
from cache import cache_teachers
from data import encode_pairs, gen_synthetic
from distillation import TeacherPredictions
from errors import ConfigError, DataValidationError
from pipeline import (
    ExperimentData,
    GradcheckEntry,
    GradcheckReport,
    SweepRow,
    create_stage_graph,
    format_table,
    gradcheck_config,
    loss_paths,
    run_alpha_sweep,
    run_dual_view,
    run_experiment,
    run_gradcheck,
    run_stages,
    summarize_metrics,
    sweep_table,
    teacher_config,
    train_teachers,
)
from schemas import EncoderConfig, TaskKind, TrainPlan
from state import new_experiment_state
from tensor import Tensor, softmax
from tests.conftest import SYNTHETIC_WORDS
from training import init_cross_model, predict_classes, train_teacher
from vocab import Vocab

LOSS_PATHS = [
    "siamese_ce",
    "cross_ce",
    "distill_lambda_0",
    "distill_lambda_0.5",
    "distill_lambda_1",
    "weighted_alpha_0",
    "weighted_alpha_0.5",
    "weighted_alpha_1",
    "cosine_mse",
]


# ---------- Gradient checks ----------

def test_loss_paths_cover_every_objective():
    paths = loss_paths(gradcheck_config(), seed=0)
    assert list(paths) == LOSS_PATHS
    for model, loss_fn in paths.values():
        assert loss_fn().shape == ()
        assert model.parameters()


def test_gradcheck_passes_for_seed_zero():
    report = run_gradcheck(seed=0, max_coords=4)
    assert [e.path for e in report.entries] == LOSS_PATHS
    assert report.passed, "\n".join(report.lines())
    assert report.max_error <= 1e-4


def test_gradcheck_catches_wrong_gelu_backward(monkeypatch):
    original = tensor.Gelu.backward
    monkeypatch.setattr(tensor.Gelu, "backward", lambda self, grad: tuple(1.5 * g for g in original(self, grad)))
    report = run_gradcheck(seed=0, max_coords=4)
    assert not report.passed
    assert report.lines()[-1].endswith("FAIL")


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradcheck_passes_for_three_seeds(seed):
    report = run_gradcheck(seed=seed)
    assert report.passed, "\n".join(report.lines())


def test_gradcheck_report_lines():
    report = GradcheckReport(seed=3, entries=[GradcheckEntry("a", 1e-6), GradcheckEntry("b", 2e-3)])
    lines = report.lines()
    assert lines[0].split()[-1] == "ok" and lines[1].split()[-1] == "FAIL"
    assert lines[-1].startswith("seed 3") and lines[-1].endswith("FAIL")
    assert report.max_error == 2e-3


# ---------- Stage graph ----------

def test_run_stages_records_transitions():
    state = new_experiment_state(seed=4)
    context = {}

    def first(ctx, update):
        ctx["value"] = 1

    def second(ctx, update):
        ctx["value"] += 1
        update["metrics"]["second.value"] = float(ctx["value"])

    run_stages(state, [("first", first), ("second", second)], context)
    assert context["value"] == 2
    assert state["is_complete"] and state["stage"] == "done"
    assert state["metrics"] == {"second.value": 2.0}
    assert [(w["stage"], w["action"]) for w in state["workflow_history"]] == [
        ("first", "enter"), ("first", "complete"), ("second", "enter"), ("second", "complete"),
    ]


def test_run_stages_records_failures():
    state = new_experiment_state(seed=4)

    def broken(ctx, update):
        raise DataValidationError("bad rows")

    with pytest.raises(DataValidationError):
        run_stages(state, [("broken", broken)], {})
    assert state["error"] == "broken: bad rows"
    assert not state["is_complete"]
    assert state["workflow_history"][-1]["action"] == "error"


def test_failed_stage_routes_to_end(mocker):
    state = new_experiment_state(seed=2)
    stages = mocker.MagicMock()
    stages.first.side_effect = lambda ctx, update: update["metrics"].update({"first.value": 1.0})
    stages.broken.side_effect = ConfigError("no teachers")

    with pytest.raises(ConfigError):
        run_stages(state, [("first", stages.first), ("broken", stages.broken), ("last", stages.last)], {})
    stages.first.assert_called_once()
    stages.broken.assert_called_once()
    stages.last.assert_not_called()
    assert state["metrics"] == {"first.value": 1.0}
    assert state["error"] == "broken: no teachers"
    assert [w["stage"] for w in state["workflow_history"]] == ["first", "first", "broken", "broken"]


def test_stage_graph_wires_stages_in_order(mocker):
    spy = mocker.spy(pipeline, "create_stage_graph")
    stages = [("first", lambda ctx, update: None), ("second", lambda ctx, update: None)]
    run_stages(new_experiment_state(seed=0), stages, {})
    spy.assert_called_once()
    graph = spy.spy_return.compile().get_graph()
    assert {"first", "second"} <= set(graph.nodes)


def test_empty_stage_graph_is_rejected():
    with pytest.raises(ConfigError):
        create_stage_graph([], {}, [])


def test_non_dvd_errors_propagate():
    state = new_experiment_state(seed=0)

    def crash(ctx, update):
        raise KeyError("teachers")

    with pytest.raises(KeyError):
        run_stages(state, [("crash", crash)], {})
    assert not state["is_complete"]


# ---------- Dual-view experiment ----------

@pytest.fixture
def experiment_data(vocab, nli_pairs, sts_pairs):
    test = gen_synthetic(12, SYNTHETIC_WORDS, seed=8, task_kind=TaskKind.CLASSIFICATION)
    return ExperimentData(vocab, nli_pairs, test, sts_test=sts_pairs, fingerprint="fp")


def test_teacher_config_shares_plan_vocabulary(plan):
    own = teacher_config(plan, plan.teachers[1])
    assert own.num_layers == 2 and own.vocab_size == plan.encoder.vocab_size
    assert teacher_config(plan, plan.teachers[0]) == plan.encoder


def test_run_dual_view_metrics(plan, experiment_data):
    state = run_dual_view(plan, experiment_data, seed=1)
    assert state["is_complete"] and state["error"] is None
    assert set(state["metrics"]) == {
        "teacher.t1.accuracy",
        "teacher.t2.accuracy",
        "teacher.best.accuracy",
        "hard.accuracy",
        "anneal.accuracy",
        "hard.sts_spearman",
        "anneal.sts_spearman",
    }
    assert state["metrics"]["teacher.best.accuracy"] == max(
        state["metrics"]["teacher.t1.accuracy"], state["metrics"]["teacher.t2.accuracy"]
    )
    assert set(state["runs"]) == {"teacher.t1", "teacher.t2", "hard", "anneal"}
    assert state["runs"]["anneal"]["history"][-1]["lam"] == 1.0
    stages = [w["stage"] for w in state["workflow_history"] if w["action"] == "complete"]
    assert stages == ["train_teachers", "cache_teachers", "train_hard_student", "train_annealed_student"]


def test_run_dual_view_needs_teachers(plan, experiment_data):
    with pytest.raises(ConfigError):
        run_dual_view(plan.model_copy(update={"teachers": []}), experiment_data, seed=0)


def test_experiment_summary_over_seeds(plan, experiment_data):
    states = run_experiment(plan, experiment_data, seeds=[0, 1])
    summary = summarize_metrics(states)
    values = [s["metrics"]["hard.accuracy"] for s in states]
    assert summary["hard.accuracy"][0] == pytest.approx(np.mean(values), abs=1e-12)
    assert list(summary) == sorted(summary)


# ---------- α sweep ----------

def test_alpha_sweep_rows(plan, experiment_data, rng):
    count = len(experiment_data.train)
    teachers = TeacherPredictions(softmax(Tensor(rng.normal(size=(2, count, 3)))).data, TaskKind.CLASSIFICATION)
    rows = run_alpha_sweep(plan, experiment_data, teachers, alphas=[0.0, 1.0], seeds=[0])
    assert [r.label for r in rows] == ["alpha=0", "alpha=1", "anneal"]
    assert all(len(r.values) == 1 and -1.0 <= r.mean <= 1.0 for r in rows)
    table = sweep_table(rows).splitlines()
    assert len(table) == 4
    assert table[0].split() == ["schedule", "mean", "sd", "n"]


@pytest.mark.parametrize("alphas, seeds", [([0.5], [0]), ([0.0, 1.0], [])])
def test_alpha_sweep_rejects_small_grids(plan, experiment_data, alphas, seeds):
    teachers = TeacherPredictions(np.full((1, len(experiment_data.train), 3), 1 / 3), TaskKind.CLASSIFICATION)
    with pytest.raises(ConfigError):
        run_alpha_sweep(plan, experiment_data, teachers, alphas=alphas, seeds=seeds)


def test_sweep_row_statistics():
    row = SweepRow("anneal", [0.5, 0.7])
    assert row.mean == pytest.approx(0.6)
    assert row.sd == pytest.approx(np.std([0.5, 0.7], ddof=1))


def test_format_table_aligns_columns():
    table = format_table([("a", 0.5, 0.1, 3), ("longer", 0.25, 0.0, 3)]).splitlines()
    assert len({len(line) for line in table}) == 1


# ---------- Desk-scale runs ----------

DESK_WORDS = 200


def desk_data(seed: int = 0) -> ExperimentData:
    train = gen_synthetic(5000, DESK_WORDS, seed=seed, task_kind=TaskKind.CLASSIFICATION)
    test = gen_synthetic(1000, DESK_WORDS, seed=seed + 1, task_kind=TaskKind.CLASSIFICATION)
    sts = gen_synthetic(1000, DESK_WORDS, seed=seed + 2, task_kind=TaskKind.REGRESSION)
    vocab = Vocab([f"w{i}" for i in range(DESK_WORDS)])
    return ExperimentData(vocab, train, test, sts_test=sts, fingerprint="desk")


def desk_plan(data: ExperimentData, **updates) -> TrainPlan:
    return TrainPlan(encoder=EncoderConfig(vocab_size=len(data.vocab)), **updates)


@pytest.mark.slow
def test_desk_experiment_direction():
    data = desk_data()
    states = run_experiment(desk_plan(data), data, seeds=range(5))
    summary = summarize_metrics(states)
    assert summary["teacher.best.accuracy"][0] > summary["hard.accuracy"][0]
    assert summary["anneal.sts_spearman"][0] >= summary["hard.sts_spearman"][0]


@pytest.mark.slow
def test_desk_teacher_fits_training_data():
    data = desk_data()
    plan = desk_plan(data, epochs=3)
    encoded = encode_pairs(data.train, data.vocab)
    teacher = init_cross_model(plan.encoder, TaskKind.CLASSIFICATION, 3, seed=0)
    train_teacher(plan, teacher, encoded)
    predictions = predict_classes(teacher, encoded)
    assert np.mean(predictions == np.array([p.label for p in encoded])) > 0.9


@pytest.mark.slow
def test_desk_annealing_competes_with_best_weighting():
    data = desk_data()
    plan = desk_plan(data)
    encoded = encode_pairs(data.train, data.vocab)
    teachers = train_teachers(plan, encoded)
    cache = cache_teachers([m for _, m, _ in teachers], [n for n, _, _ in teachers], encoded, data.fingerprint)
    rows = run_alpha_sweep(plan, data, cache.to_predictions(), alphas=[0.0, 0.5, 1.0], seeds=range(5))
    anneal = rows[-1]
    best = max(rows[:-1], key=lambda r: r.mean)
    assert anneal.mean >= best.mean - best.sd
