"""Command-line entry points: `python cli.py <verb> [flags]`."""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, List, Optional, Sequence

from pydantic import ValidationError

from cache import TeacherCache, cache_teachers, merge_caches
from checkpoint import load_checkpoint, save_checkpoint
from data import build_vocab, encode_pairs, fingerprint, load_pairs, write_synthetic
from errors import ConfigError, DvdError, NumericalError
from models.cross import CrossModel
from pipeline import (
    ExperimentData,
    run_alpha_sweep,
    run_experiment,
    run_gradcheck,
    summarize_metrics,
    format_table,
    sweep_table,
    teacher_config,
)
from schemas import PoolingStrategy, ScheduleMode, TaskKind, TeacherSpec, TrainPlan
from settings import Settings, configure_logging
from training import (
    build_student,
    evaluate_model,
    init_cross_model,
    init_siamese_model,
    sts_curve_fn,
    train_student,
    train_teacher,
    warm_start,
)
from vocab import Vocab

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def parse_list(text: Optional[str], cast: Callable[[str], Any] = str) -> List[Any]:
    """'a,b,c' -> [a, b, c]; empty items are dropped."""
    if not text:
        return []
    try:
        return [cast(item.strip()) for item in text.split(",") if item.strip()]
    except ValueError as e:
        raise ConfigError(f"cannot parse list '{text}': {e}")


def _one(paths: Optional[Sequence[str]], flag: str) -> str:
    if not paths or len(paths) != 1:
        raise ConfigError(f"{flag} needs exactly one file")
    return paths[0]


def load_plan(args: argparse.Namespace) -> TrainPlan:
    """Plan file (if any) with command-line overrides applied and validated."""
    payload = {}
    if args.plan:
        try:
            payload = json.loads(Path(args.plan).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read plan {args.plan}: {e}")
    overrides = {
        "seed": args.seed,
        "task_kind": args.task,
        "mode": args.mode,
        "alpha": args.alpha,
        "output_dir": args.out,
        "init_checkpoint": args.init,
    }
    if args.teachers:
        overrides["teacher_caches"] = parse_list(args.teachers)
    payload.update({k: v for k, v in overrides.items() if v is not None})
    return TrainPlan.model_validate(payload)


def plan_with_vocab(plan: TrainPlan, vocab: Vocab) -> TrainPlan:
    encoder = plan.encoder.model_copy(update={"vocab_size": len(vocab)})
    return plan.model_copy(update={"encoder": encoder})


def resolve_vocab(args: argparse.Namespace, plan: TrainPlan, corpus: Sequence[str]) -> Vocab:
    if args.vocab:
        return Vocab.load(args.vocab)
    return build_vocab(corpus, plan.min_freq)


def echo_plan(plan: TrainPlan) -> Path:
    out = Path(plan.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "plan.json").write_text(plan.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return out


def write_json(path: Path, payload: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def results_log(args: argparse.Namespace) -> str:
    return args.results or Settings.from_env().results_log


def _eval_if_requested(args, model, vocab, plan: TrainPlan, split: str = "dev"):
    if not args.eval_data:
        return None
    task = TaskKind(args.eval_task or plan.task_kind)
    pairs = load_pairs(args.eval_data, task)
    report = evaluate_model(model, vocab, pairs, task, plan.seed, plan.fingerprint(), results_log(args), split=split)
    print(json.dumps(report.payload(), sort_keys=True))
    return report


# ---------- verbs ----------

def cmd_gen_synthetic(args) -> None:
    task = TaskKind(args.task or TaskKind.CLASSIFICATION)
    out = args.out or "data/synthetic"
    for path in write_synthetic(out, args.vocab_size, args.seed or 0, task, args.train_pairs, args.dev_pairs,
                                args.test_pairs):
        print(path)


def cmd_build_vocab(args) -> None:
    if not args.data:
        raise ConfigError("--data needs at least one corpus file")
    vocab = build_vocab(args.data, args.min_freq)
    out = Path(args.out or "vocab.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    vocab.save(out)
    print(f"{out} ({len(vocab)} entries)")


def cmd_train_teacher(args) -> None:
    plan = load_plan(args)
    data_path = _one(args.data, "--data")
    pairs = load_pairs(data_path, plan.task_kind)
    vocab = resolve_vocab(args, plan, [data_path])
    plan = plan_with_vocab(plan, vocab)
    specs = {s.name: s for s in plan.teachers} or {"teacher": TeacherSpec(name="teacher")}
    name = args.teacher or next(iter(specs))
    if name not in specs:
        raise ConfigError(f"unknown teacher '{name}', plan defines {sorted(specs)}")
    spec = specs[name]
    teacher_plan = plan.model_copy(update={"seed": plan.seed + spec.seed_offset})
    model = init_cross_model(teacher_config(plan, spec), plan.task_kind, plan.num_classes, teacher_plan.seed)
    if plan.init_checkpoint:
        warm_start(model, load_checkpoint(plan.init_checkpoint)[0])

    result = train_teacher(teacher_plan, model, encode_pairs(pairs, vocab))
    out = echo_plan(plan)
    extra = {"role": "teacher", "name": name, "plan_fingerprint": plan.fingerprint(),
             "data_fingerprint": fingerprint(data_path)}
    save_checkpoint(out / f"{name}.ckpt", model, vocab, result.optimizer_state, extra)
    write_json(out / f"{name}.history.json", result.state)
    _eval_if_requested(args, model, vocab, teacher_plan)


def cmd_cache_teachers(args) -> None:
    data_path = _one(args.data, "--data")
    checkpoints = parse_list(args.checkpoints)
    if not checkpoints:
        raise ConfigError("--checkpoints needs at least one teacher checkpoint")
    data_fingerprint = fingerprint(data_path)
    caches = []
    for path in checkpoints:
        model, vocab, _, extra = load_checkpoint(path)
        if not isinstance(model, CrossModel):
            raise ConfigError(f"{path} is not a cross-encoder checkpoint")
        pairs = load_pairs(data_path, model.task_kind)
        caches.append(cache_teachers([model], [extra.get("name", Path(path).stem)], encode_pairs(pairs, vocab),
                                     data_fingerprint))
    merged = merge_caches(caches)
    out = Path(args.out or "teachers.cache")
    out.parent.mkdir(parents=True, exist_ok=True)
    merged.save(out)
    print(f"{out} (K={merged.num_teachers}, count={merged.count})")


def _teacher_predictions(plan: TrainPlan, data_path: str):
    if plan.mode is ScheduleMode.HARD_ONLY:
        return None
    if not plan.teacher_caches:
        raise ConfigError(f"mode '{plan.mode.value}' needs --teachers <cache,...>")
    expected = fingerprint(data_path)
    caches = [TeacherCache.load(path, expected_fingerprint=expected) for path in plan.teacher_caches]
    return merge_caches(caches).to_predictions()


def cmd_train_student(args) -> None:
    plan = load_plan(args)
    data_path = _one(args.data, "--data")
    pairs = load_pairs(data_path, plan.task_kind)
    vocab = resolve_vocab(args, plan, [data_path])
    plan = plan_with_vocab(plan, vocab)
    teachers = _teacher_predictions(plan, data_path)
    eval_fn = None
    if plan.eval_every and args.eval_data:
        eval_fn = sts_curve_fn(vocab, load_pairs(args.eval_data, TaskKind.REGRESSION))

    model = build_student(plan)
    result = train_student(plan, model, encode_pairs(pairs, vocab), teachers, eval_fn)
    out = echo_plan(plan)
    extra = {"role": "student", "mode": plan.mode.value, "plan_fingerprint": plan.fingerprint(),
             "data_fingerprint": fingerprint(data_path)}
    save_checkpoint(out / "student.ckpt", model, vocab, result.optimizer_state, extra)
    write_json(out / "student.history.json", result.state)
    _eval_if_requested(args, model, vocab, plan)


def _experiment_data(args, plan: TrainPlan):
    data_path = _one(args.data, "--data")
    if not args.eval_data:
        raise ConfigError("--eval-data is required")
    vocab = resolve_vocab(args, plan, [data_path])
    plan = plan_with_vocab(plan, vocab)
    eval_task = TaskKind(args.eval_task or plan.task_kind)
    data = ExperimentData(
        vocab=vocab,
        train=load_pairs(data_path, plan.task_kind),
        test=load_pairs(args.eval_data, eval_task),
        sts_test=load_pairs(args.sts_data, TaskKind.REGRESSION) if args.sts_data else None,
        fingerprint=fingerprint(data_path),
    )
    return plan, data, data_path


def cmd_alpha_sweep(args) -> None:
    plan, data, data_path = _experiment_data(args, load_plan(args))
    plan = plan.model_copy(update={"mode": ScheduleMode.WEIGHT})
    teachers = _teacher_predictions(plan, data_path)
    alphas = parse_list(args.alphas, float)
    seeds = parse_list(args.seeds, int) or [plan.seed]
    rows = run_alpha_sweep(plan, data, teachers, alphas, seeds)
    out = echo_plan(plan)
    write_json(out / "alpha_sweep.json", [{"label": r.label, "values": r.values, "mean": r.mean, "sd": r.sd}
                                          for r in rows])
    print(sweep_table(rows))


def cmd_experiment(args) -> None:
    plan, data, _ = _experiment_data(args, load_plan(args))
    seeds = parse_list(args.seeds, int) or [plan.seed]
    states = run_experiment(plan, data, seeds)
    summary = summarize_metrics(states)
    out = echo_plan(plan)
    write_json(out / "experiment.json", {
        "seeds": list(seeds),
        "metrics": [s["metrics"] for s in states],
        "summary": {k: {"mean": m, "sd": sd} for k, (m, sd) in summary.items()},
    })
    print(format_table([(k, m, sd, len(states)) for k, (m, sd) in summary.items()], header="metric"))


def cmd_evaluate(args) -> None:
    data_path = _one(args.data, "--data")
    pooling = PoolingStrategy(args.pooling) if args.pooling else None
    if args.checkpoint:
        model, vocab, _, extra = load_checkpoint(args.checkpoint)
        config_fingerprint = extra.get("plan_fingerprint", "")
        seed = args.seed or 0
    else:
        # Randomly initialized encoder: the untrained baseline
        plan = load_plan(args)
        vocab = resolve_vocab(args, plan, [data_path])
        plan = plan_with_vocab(plan, vocab)
        model = init_siamese_model(plan.encoder, pooling or plan.pooling, TaskKind.REGRESSION, plan.num_classes,
                                   plan.seed)
        config_fingerprint, seed = plan.fingerprint(), plan.seed
    task = TaskKind(args.task or TaskKind.REGRESSION)
    pairs = load_pairs(data_path, task)
    report = evaluate_model(model, vocab, pairs, task, seed, config_fingerprint, results_log(args), pooling,
                            split=args.split)
    print(json.dumps(report.payload(), sort_keys=True))


def cmd_gradcheck(args) -> None:
    seeds = parse_list(args.seeds, int) or [args.seed or 0]
    failed = []
    for seed in seeds:
        report = run_gradcheck(seed=seed, max_coords=args.max_coords)
        print("\n".join(report.lines()))
        if not report.passed:
            failed.append((seed, report.max_error))
    if failed:
        raise NumericalError("gradcheck failed: " + ", ".join(f"seed {s} max error {e:.3e}" for s, e in failed))


# ---------- parser ----------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--plan", help="JSON TrainPlan file")
    common.add_argument("--data", nargs="+", help="Pair file(s)")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="Output directory (or file for build-vocab / cache-teachers)")
    common.add_argument("--task", choices=[t.value for t in TaskKind])
    common.add_argument("--mode", choices=[m.value for m in ScheduleMode])
    common.add_argument("--alpha", type=float)
    common.add_argument("--teachers", help="Comma-separated teacher cache files")
    common.add_argument("--init", help="Checkpoint to warm-start the encoder from")
    common.add_argument("--vocab", help="Vocabulary file (built from --data when absent)")
    common.add_argument("--eval-data", help="Held-out pair file")
    common.add_argument("--eval-task", choices=[t.value for t in TaskKind])
    common.add_argument("--results", help="JSONL results log (default: DVD_RESULTS_LOG)")
    common.add_argument("--log-level", help="Logging level (default: DVD_LOG_LEVEL)")

    parser = _Parser(prog="dvd", description="Dual-view distilled sentence matching")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", parents=[common], help="Write synthetic Jaccard pair files")
    p.add_argument("--vocab-size", type=int, default=200)
    p.add_argument("--train-pairs", type=int, default=5000)
    p.add_argument("--dev-pairs", type=int, default=0)
    p.add_argument("--test-pairs", type=int, default=1000)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("build-vocab", parents=[common], help="Build a vocabulary from corpus files")
    p.add_argument("--min-freq", type=int, default=1)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("train-teacher", parents=[common], help="Train one cross-encoder teacher")
    p.add_argument("--teacher", help="Teacher name from the plan (default: the first)")
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("cache-teachers", parents=[common], help="Cache teacher predictions over a dataset")
    p.add_argument("--checkpoints", required=True, help="Comma-separated teacher checkpoints")
    p.set_defaults(func=cmd_cache_teachers)

    p = sub.add_parser("train-student", parents=[common], help="Train the siamese student")
    p.set_defaults(func=cmd_train_student)

    p = sub.add_parser("alpha-sweep", parents=[common], help="Compare loss weighting against annealing")
    p.add_argument("--alphas", default="0,0.25,0.5,0.75,1")
    p.add_argument("--seeds", help="Comma-separated seeds (default: --seed)")
    p.add_argument("--sts-data", help="Scored pairs for embedding evaluation")
    p.set_defaults(func=cmd_alpha_sweep)

    p = sub.add_parser("experiment", parents=[common], help="Teachers, cache and both students over seeds")
    p.add_argument("--seeds", help="Comma-separated seeds (default: --seed)")
    p.add_argument("--sts-data", help="Scored pairs for embedding evaluation")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("evaluate", parents=[common], help="Score a checkpoint on a pair file")
    p.add_argument("--checkpoint", help="Checkpoint to evaluate (random encoder when absent)")
    p.add_argument("--pooling", choices=[s.value for s in PoolingStrategy])
    p.add_argument("--split", default="test")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", parents=[common], help="Finite-difference check of every loss path")
    p.add_argument("--seeds", help="Comma-separated seeds (default: --seed)")
    p.add_argument("--max-coords", type=int, default=16, help="Coordinates checked per parameter tensor")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    try:
        args.func(args)
    except ValidationError as e:
        logger.error("Invalid configuration: %s", e)
        return ConfigError.exit_code
    except DvdError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
