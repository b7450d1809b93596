"""Multi-stage experiments: the gradient-check suite, dual-view runs and the α sweep.

Each experiment is a linear langgraph workflow of named stages over a shared context;
stage transitions are recorded on an ExperimentState.
"""
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from langgraph.graph import END, StateGraph

from cache import cache_teachers
from data import LabeledPair, encode_pairs
from distillation import TeacherPredictions, cross_entropy, distill_loss, mse_loss, weighted_loss
from errors import ConfigError, DvdError
from evaluation import summarize
from models.cross import CrossModel, build_cross_input, cross_forward_batch
from models.siamese import siamese_cosine_batch, siamese_forward_batch
from schemas import EncoderConfig, PoolingStrategy, ScheduleMode, TaskKind, TeacherSpec, TrainPlan
from state import ExperimentState, new_experiment_state, record_workflow
from tensor import Tensor, grad_check, reduce_sum
from training import (
    build_student,
    evaluate_model,
    init_cross_model,
    init_siamese_model,
    train_student,
    train_teacher,
)
from vocab import Vocab

logger = logging.getLogger(__name__)

GRADCHECK_THRESHOLD = 1e-4
GRADCHECK_EPS = 1e-5
GRADCHECK_LAMBDAS = (0.0, 0.5, 1.0)
GRADCHECK_ALPHAS = (0.0, 0.5, 1.0)

# stage(context, update): context is shared across stages, update is the pending state update
StageFn = Callable[[Dict[str, Any], Dict[str, Any]], None]
Stage = Tuple[str, StageFn]


# ---------- gradient-check suite ----------

def gradcheck_config(**overrides) -> EncoderConfig:
    """Two-layer encoder narrow enough for per-coordinate finite differences."""
    base = dict(vocab_size=24, max_seq_len=12, hidden_dim=8, num_layers=2, num_heads=2, ffn_dim=16,
                dropout_rate=0.0, init_std=0.3)
    return EncoderConfig(**{**base, **overrides})


@dataclass
class GradcheckEntry:
    path: str
    max_error: float
    threshold: float = GRADCHECK_THRESHOLD

    @property
    def passed(self) -> bool:
        return self.max_error <= self.threshold


@dataclass
class GradcheckReport:
    seed: int
    entries: List[GradcheckEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def max_error(self) -> float:
        return max((e.max_error for e in self.entries), default=0.0)

    def lines(self) -> List[str]:
        rows = [f"{e.path:<22} {e.max_error:.3e}  {'ok' if e.passed else 'FAIL'}" for e in self.entries]
        rows.append(f"{'seed ' + str(self.seed):<22} {self.max_error:.3e}  {'PASS' if self.passed else 'FAIL'}")
        return rows


def _gradcheck_batch(config: EncoderConfig, seed: int, size: int = 2):
    rng = np.random.default_rng(seed)

    def sentence():
        return tuple(int(t) for t in rng.integers(4, config.vocab_size, size=int(rng.integers(3, 6))))

    pairs = [(sentence(), sentence()) for _ in range(size)]
    gold = rng.integers(0, 3, size=size)
    teachers = [rng.dirichlet(np.ones(3), size=size) for _ in range(2)]
    scores = rng.uniform(-1.0, 1.0, size=size)
    return pairs, gold, teachers, scores


def loss_paths(config: EncoderConfig, seed: int) -> "OrderedDict[str, Tuple[Any, Callable[[], Tensor]]]":
    """Every training objective as (model, zero-argument loss) on one small batch, in eval mode."""
    student = init_siamese_model(config, PoolingStrategy.MEAN, TaskKind.CLASSIFICATION, 3, seed)
    regressor = init_siamese_model(config, PoolingStrategy.MEAN, TaskKind.REGRESSION, 3, seed + 2)
    teacher = init_cross_model(config, TaskKind.CLASSIFICATION, 3, seed + 4)
    pairs, gold, teachers, scores = _gradcheck_batch(config, seed)
    sentences_a = [a for a, _ in pairs]
    sentences_b = [b for _, b in pairs]
    encodings = [build_cross_input(a, b, config.max_seq_len) for a, b in pairs]

    def student_probs() -> Tensor:
        return siamese_forward_batch(student, sentences_a, sentences_b)

    paths: "OrderedDict[str, Tuple[Any, Callable[[], Tensor]]]" = OrderedDict()
    paths["siamese_ce"] = (student, lambda: reduce_sum(cross_entropy(gold, student_probs())))
    paths["cross_ce"] = (teacher, lambda: reduce_sum(cross_entropy(gold, cross_forward_batch(teacher, encodings))))
    for lam in GRADCHECK_LAMBDAS:
        paths[f"distill_lambda_{lam:g}"] = (
            student, lambda lam=lam: reduce_sum(distill_loss(gold, teachers, student_probs(), lam))
        )
    for alpha in GRADCHECK_ALPHAS:
        paths[f"weighted_alpha_{alpha:g}"] = (
            student, lambda alpha=alpha: reduce_sum(weighted_loss(gold, teachers, student_probs(), alpha))
        )
    paths["cosine_mse"] = (
        regressor, lambda: reduce_sum(mse_loss(siamese_cosine_batch(regressor, sentences_a, sentences_b), scores))
    )
    return paths


def run_gradcheck(config: Optional[EncoderConfig] = None, seed: int = 0, max_coords: Optional[int] = 16,
                  threshold: float = GRADCHECK_THRESHOLD) -> GradcheckReport:
    """Finite-difference check of every parameter tensor under every loss path."""
    config = config or gradcheck_config()
    report = GradcheckReport(seed)
    for name, (model, loss_fn) in loss_paths(config, seed).items():
        params = model.parameters()
        worst = 0.0
        for tensor in params.values():
            worst = max(worst, grad_check(lambda _: loss_fn(), tensor, GRADCHECK_EPS, max_coords, seed))
        for tensor in params.values():
            tensor.zero_grad()
        entry = GradcheckEntry(name, worst, threshold)
        report.entries.append(entry)
        logger.info("gradcheck %s: max relative error %.3e (%s)", name, worst, "ok" if entry.passed else "FAIL")
    return report


# ---------- stage graph ----------

def _stage_node(name: str, stage: StageFn, context: Dict[str, Any], failures: List[DvdError]):
    def node(state: ExperimentState) -> Dict[str, Any]:
        update: Dict[str, Any] = {
            "stage": name,
            "metrics": dict(state["metrics"]),
            "runs": dict(state["runs"]),
            "workflow_history": list(state["workflow_history"]),
        }
        record_workflow(update, name, "enter")
        try:
            stage(context, update)
        except DvdError as e:
            failures.append(e)
            update["error"] = f"{name}: {e}"
            record_workflow(update, name, "error", message=str(e))
            logger.error("Stage %s failed for seed %d: %s", name, state["seed"], e)
            return update
        record_workflow(update, name, "complete")
        return update
    return node


def create_stage_graph(stages: Sequence[Stage], context: Dict[str, Any], failures: List[DvdError]) -> StateGraph:
    """Chain the stages in order; a recorded error routes straight to END."""
    if not stages:
        raise ConfigError("a workflow needs at least one stage")
    workflow = StateGraph(ExperimentState)
    names = [name for name, _ in stages]
    for name, stage in stages:
        workflow.add_node(name, _stage_node(name, stage, context, failures))

    for current, following in zip(names, names[1:] + [END]):
        def stage_edge(state: ExperimentState, following: str = following) -> str:
            if state.get("error"):
                return END
            return following

        workflow.add_conditional_edges(current, stage_edge, {following: following, END: END})

    workflow.set_entry_point(names[0])
    return workflow


def run_stages(state: ExperimentState, stages: Sequence[Stage], context: Dict[str, Any]) -> ExperimentState:
    """Run the stage graph on `state`; a stage error is recorded on the state and re-raised."""
    failures: List[DvdError] = []
    app = create_stage_graph(stages, context, failures).compile()
    state.update(app.invoke(state))
    if failures:
        raise failures[0]
    state["stage"] = "done"
    state["is_complete"] = True
    return state


# ---------- dual-view experiment ----------

@dataclass
class ExperimentData:
    """Vocabulary and splits; `sts_test` holds scored pairs for embedding evaluation."""

    vocab: Vocab
    train: List[LabeledPair]
    test: List[LabeledPair]
    sts_test: Optional[List[LabeledPair]] = None
    fingerprint: str = ""


def teacher_config(plan: TrainPlan, spec: TeacherSpec) -> EncoderConfig:
    """A teacher's own architecture, sharing the plan's vocabulary."""
    if spec.encoder is None:
        return plan.encoder
    return spec.encoder.model_copy(update={"vocab_size": plan.encoder.vocab_size})


def train_teachers(plan: TrainPlan, encoded) -> List[Tuple[str, CrossModel, Any]]:
    trained = []
    for spec in plan.teachers:
        teacher_plan = plan.model_copy(update={"seed": plan.seed + spec.seed_offset})
        model = init_cross_model(teacher_config(plan, spec), plan.task_kind, plan.num_classes, teacher_plan.seed)
        result = train_teacher(teacher_plan, model, encoded)
        logger.info("Teacher %s finished with loss %s", spec.name, result.final_loss)
        trained.append((spec.name, model, result.state))
    return trained


def _metric_name(pairs: Sequence[LabeledPair]) -> str:
    return "accuracy" if pairs[0].task_kind is TaskKind.CLASSIFICATION else "spearman"


def run_dual_view(plan: TrainPlan, data: ExperimentData, seed: int) -> ExperimentState:
    """Teachers, their cache, then hard-only and annealed students, all for one seed."""
    if not plan.teachers:
        raise ConfigError("the dual-view experiment needs at least one teacher")
    plan = plan.model_copy(update={"seed": seed})
    state = new_experiment_state(seed)
    context: Dict[str, Any] = {"encoded": encode_pairs(data.train, data.vocab)}
    test_kind = data.test[0].task_kind

    def teachers_stage(ctx, update):
        ctx["teachers"] = train_teachers(plan, ctx["encoded"])
        for name, model, run in ctx["teachers"]:
            update["runs"][f"teacher.{name}"] = run
            report = evaluate_model(model, data.vocab, data.test, test_kind, seed, plan.fingerprint())
            update["metrics"][f"teacher.{name}.{report.metric}"] = report.value

    def cache_stage(ctx, update):
        teachers = ctx["teachers"]
        cache = cache_teachers([m for _, m, _ in teachers], [n for n, _, _ in teachers], ctx["encoded"],
                               data.fingerprint)
        ctx["predictions"] = cache.to_predictions()

    def student_stage(role: str, mode: ScheduleMode):
        def stage(ctx, update):
            student_plan = plan.model_copy(update={"mode": mode})
            model = build_student(student_plan)
            predictions = None if mode is ScheduleMode.HARD_ONLY else ctx["predictions"]
            result = train_student(student_plan, model, ctx["encoded"], predictions)
            update["runs"][role] = result.state
            report = evaluate_model(model, data.vocab, data.test, test_kind, seed, student_plan.fingerprint())
            update["metrics"][f"{role}.{report.metric}"] = report.value
            if data.sts_test:
                sts = evaluate_model(model, data.vocab, data.sts_test, TaskKind.REGRESSION, seed,
                                     student_plan.fingerprint(), split="sts")
                update["metrics"][f"{role}.sts_spearman"] = sts.value
        return stage

    stages: List[Stage] = [
        ("train_teachers", teachers_stage),
        ("cache_teachers", cache_stage),
        ("train_hard_student", student_stage("hard", ScheduleMode.HARD_ONLY)),
        ("train_annealed_student", student_stage("anneal", ScheduleMode.ANNEAL)),
    ]
    run_stages(state, stages, context)
    metric = _metric_name(data.test)
    teacher_values = [v for k, v in state["metrics"].items() if k.startswith("teacher.") and k.endswith(metric)]
    state["metrics"][f"teacher.best.{metric}"] = max(teacher_values)
    return state


def run_experiment(plan: TrainPlan, data: ExperimentData, seeds: Sequence[int]) -> List[ExperimentState]:
    states = []
    for seed in seeds:
        logger.info("Dual-view experiment, seed %d", seed)
        states.append(run_dual_view(plan, data, seed))
    return states


def summarize_metrics(states: Sequence[ExperimentState]) -> "OrderedDict[str, Tuple[float, float]]":
    """Mean and sd per metric across seeds."""
    names = sorted({k for s in states for k in s["metrics"]})
    return OrderedDict((name, summarize([s["metrics"][name] for s in states if name in s["metrics"]]))
                       for name in names)


# ---------- α sweep ----------

@dataclass
class SweepRow:
    label: str
    values: List[float]

    @property
    def mean(self) -> float:
        return summarize(self.values)[0]

    @property
    def sd(self) -> float:
        return summarize(self.values)[1]


def run_alpha_sweep(plan: TrainPlan, data: ExperimentData, teachers: TeacherPredictions, alphas: Sequence[float],
                    seeds: Sequence[int]) -> List[SweepRow]:
    """One loss-weighting student per α plus one annealed student, each over every seed."""
    if len(alphas) < 2:
        raise ConfigError("the α sweep needs at least two α values")
    if not seeds:
        raise ConfigError("the α sweep needs at least one seed")
    eval_pairs = data.sts_test or data.test
    eval_kind = eval_pairs[0].task_kind
    encoded = encode_pairs(data.train, data.vocab)
    settings = [(f"alpha={a:g}", {"mode": ScheduleMode.WEIGHT, "alpha": float(a)}) for a in alphas]
    settings.append(("anneal", {"mode": ScheduleMode.ANNEAL}))

    rows = []
    for label, update in settings:
        values = []
        for seed in seeds:
            run_plan = plan.model_copy(update={**update, "seed": seed})
            model = build_student(run_plan)
            train_student(run_plan, model, encoded, teachers)
            report = evaluate_model(model, data.vocab, eval_pairs, eval_kind, seed, run_plan.fingerprint())
            values.append(report.value)
        row = SweepRow(label, values)
        logger.info("sweep %s: %.4f ± %.4f", label, row.mean, row.sd)
        rows.append(row)
    return rows


def format_table(rows: Sequence[Tuple[str, float, float, int]], header: str = "setting") -> str:
    """Plain-text table of (label, mean, sd, n) rows."""
    width = max([len(header)] + [len(r[0]) for r in rows])
    lines = [f"{header:<{width}}  {'mean':>8}  {'sd':>8}  {'n':>3}"]
    lines.extend(f"{label:<{width}}  {mean:>8.4f}  {sd:>8.4f}  {n:>3d}" for label, mean, sd, n in rows)
    return "\n".join(lines)


def sweep_table(rows: Sequence[SweepRow]) -> str:
    return format_table([(r.label, r.mean, r.sd, len(r.values)) for r in rows], header="schedule")
