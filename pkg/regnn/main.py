"""
Command-line entry point.
Ties graph generation, training, evaluation, weight inspection, the lambda
sweep and the verification suite together. Files in, files out.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from pydantic import ValidationError

from regnn.config import settings
from regnn.core.checkpoint import load_checkpoint, save_checkpoint
from regnn.core.hgraph import add_reverse_relations, generate_synthetic, load_graph, save_graph
from regnn.core.metrics import clustering_metrics, evaluate_f1, kmeans_cluster
from regnn.core.train import (
    TrainedModel,
    TrainResult,
    config_payload,
    extract_embeddings,
    predict_logits,
    sweep_lambda,
    train_runs,
)
from regnn.core.verification_runner import run_verification
from regnn.schemas.graph_schemas import SyntheticSpec, skewed_homophily_spec
from regnn.schemas.reports import EvalReport
from regnn.schemas.run_schemas import (
    Backbone,
    ModelConfig,
    NormMode,
    RunConfig,
    SelfLoopMode,
    TrainConfig,
    resolve_model_config,
)
from regnn.utils.io import (
    calculate_file_hash,
    read_json,
    reproducibility_header,
    write_csv,
    write_json,
)
from regnn.utils.logging_config import setup_logging


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_USAGE = 2

CLUSTER_RESTARTS = 10


class UsageError(ValueError):
    """Flags are missing or inconsistent for the chosen subcommand."""


# ============================================================================
# Argument parsing
# ============================================================================

def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--graph", type=Path, required=True, help="graph JSON file")
    p.add_argument("--config", type=Path, help='JSON file {"model": ..., "train": ...}')
    p.add_argument("--backbone", choices=[b.value for b in Backbone])
    p.add_argument("--lambda", dest="lam", type=float, help="gradient scaling factor")
    p.add_argument("--norm", choices=[m.value for m in NormMode])
    p.add_argument("--selfloop", choices=[m.value for m in SelfLoopMode])
    p.add_argument("--freeze-relations", action="store_true", help="keep every relation weight at 1")
    p.add_argument("--freeze-selfloops", action="store_true", help="keep every self-loop weight at 1")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regnn", description=settings.APP_NAME)
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--log-format", choices=["json", "text"])
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (u64)")
    common.add_argument("--out", type=Path, default=None, help="output directory")

    gen = sub.add_parser("gen", parents=[common], help="write a synthetic graph")
    gen.add_argument("--config", type=Path, help="SyntheticSpec JSON; default is the skewed preset")

    tr = sub.add_parser("train", parents=[common], help="train and write checkpoint + report")
    _add_model_flags(tr)
    tr.add_argument("--runs", type=int, default=1, help="train seeds seed .. seed+runs-1")

    ev = sub.add_parser("eval", parents=[common], help="F1 and clustering scores of a checkpoint")
    ev.add_argument("--graph", type=Path, required=True)
    ev.add_argument("--checkpoint", type=Path, required=True)

    ver = sub.add_parser("verify", parents=[common], help="run every numeric check")
    ver.add_argument("--traces", type=int, default=None)
    ver.add_argument("--steps", type=int, default=None)
    ver.add_argument("--sequential", action="store_true")

    ins = sub.add_parser("inspect-weights", parents=[common], help="per-layer relation weights CSV")
    ins.add_argument("--checkpoint", type=Path, required=True)
    ins.add_argument("--min-weight", type=float, default=None,
                     help="drop rows whose weight is below this value")

    sw = sub.add_parser("sweep", parents=[common], help="train over several lambda values")
    _add_model_flags(sw)
    sw.add_argument("--lams", type=float, nargs="+", required=True)
    return parser


def resolve_run_config(args: argparse.Namespace) -> RunConfig:
    """Config file values, then CLI flags on top."""
    run = RunConfig()
    if getattr(args, "config", None) is not None:
        if not args.config.exists():
            raise FileNotFoundError(f"Config not found: {args.config}")
        run = RunConfig.model_validate(read_json(args.config))

    model_updates = {}
    train_updates = {}
    if args.backbone is not None:
        model_updates["backbone"] = args.backbone
    if args.lam is not None:
        model_updates["lam"] = args.lam
        train_updates["lam"] = None
    if args.norm is not None:
        model_updates["norm"] = args.norm
    if args.selfloop is not None:
        model_updates["selfloop"] = args.selfloop
    if args.freeze_relations:
        model_updates["freeze_relations"] = True
    if args.freeze_selfloops:
        model_updates["freeze_selfloops"] = True
    if args.seed is not None:
        train_updates["seed"] = args.seed

    # re-validate so combined values (e.g. resgc + sym) are still checked
    model = ModelConfig.model_validate({**run.model.model_dump(), **model_updates})
    train = TrainConfig.model_validate({**run.train.model_dump(), **train_updates})
    return RunConfig(model=model, train=train)


def _out_dir(args: argparse.Namespace) -> Path:
    out = args.out or settings.OUTPUT_ROOT
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seed(args: argparse.Namespace) -> int:
    return settings.DEFAULT_SEED if args.seed is None else args.seed


def _load_training_graph(path: Path):
    return add_reverse_relations(load_graph(path))


# ============================================================================
# Subcommands
# ============================================================================

def cmd_gen(args: argparse.Namespace) -> int:
    seed = args.seed
    if args.config is not None:
        if not args.config.exists():
            raise FileNotFoundError(f"Config not found: {args.config}")
        spec = SyntheticSpec.model_validate(read_json(args.config))
    else:
        spec = skewed_homophily_spec(seed=_seed(args))
    g = generate_synthetic(spec, seed=seed)
    path = save_graph(g, _out_dir(args) / "graph.json")
    print(path)
    return EXIT_OK


def _write_run_artifacts(out: Path, result: TrainResult, graph_sha: str) -> None:
    report = result.report
    save_checkpoint(result.model, out / "checkpoint.json", graph_sha256=graph_sha)
    write_json(out / "train_report.json", report.model_dump(mode="json"))
    write_json(out / "timing.json", {
        "seed": report.seed,
        "config": report.config,
        "wall_clock_seconds": result.wall_clock_seconds,
    })
    write_csv(
        out / "curve.csv",
        ["epoch", "train_loss", "valid_micro_f1"],
        [(e, loss, f1) for e, (loss, f1) in enumerate(zip(report.train_loss, report.valid_micro_f1))],
        header_lines=reproducibility_header(report.seed, report.config),
    )


def cmd_train(args: argparse.Namespace) -> int:
    if args.runs < 1:
        raise UsageError(f"--runs must be >= 1, got {args.runs}")
    run = resolve_run_config(args)
    logger.info("Resolved config: %s", config_payload(resolve_model_config(run.model, run.train), run.train))
    g = _load_training_graph(args.graph)
    graph_sha = calculate_file_hash(args.graph)
    out = _out_dir(args)

    multi, results = train_runs(run.model, g, run.train, args.runs)
    if args.runs == 1:
        _write_run_artifacts(out, results[0], graph_sha)
    else:
        for result in results:
            _write_run_artifacts(out / f"seed_{result.report.seed}", result, graph_sha)
        write_json(out / "multi_run_report.json", multi.model_dump(mode="json"))

    print(
        f"test micro-F1 {multi.test_micro_f1_mean:.4f} +- {multi.test_micro_f1_std:.4f}, "
        f"macro-F1 {multi.test_macro_f1_mean:.4f} +- {multi.test_macro_f1_std:.4f}"
    )
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    model = load_checkpoint(args.checkpoint)
    g = _load_training_graph(args.graph)
    if g.splits is None or g.labels is None:
        raise UsageError("evaluation needs a graph with labels and splits")
    seed = model.train_config.seed if args.seed is None else args.seed
    test = g.splits.test

    macro, micro = evaluate_f1(predict_logits(model, g), g.labels, test, model.num_classes)
    embeddings = extract_embeddings(model, g)[test]
    assignments = kmeans_cluster(embeddings, model.num_classes, restarts=CLUSTER_RESTARTS, seed=seed)
    nmi, ari = clustering_metrics(assignments, g.labels[test])

    report = EvalReport(
        checkpoint=str(args.checkpoint),
        seed=seed,
        test_macro_f1=macro,
        test_micro_f1=micro,
        nmi=nmi,
        ari=ari,
        clustering_restarts=CLUSTER_RESTARTS,
    )
    if args.out is not None:
        write_json(_out_dir(args) / "eval_report.json", report.model_dump(mode="json"))
    print(f"macro-F1 {macro:.4f} micro-F1 {micro:.4f} NMI {nmi:.4f} ARI {ari:.4f}")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    seed = _seed(args)
    concurrent = False if args.sequential else None
    summary = run_verification(seed, concurrent=concurrent, traces=args.traces, steps=args.steps)
    payload = summary.model_dump(mode="json")
    if args.out is not None:
        write_json(_out_dir(args) / "verify_summary.json", payload)
    for check in summary.checks:
        print(f"{check.status:8s} {check.name} ({check.execution_time_seconds:.2f}s)")
    print(f"{summary.total - summary.failed}/{summary.total} checks ok")
    return EXIT_OK if summary.passed else EXIT_VERIFY_FAILED


def weight_rows(model: TrainedModel, min_weight: Optional[float] = None) -> List[tuple]:
    """
    (layer, kind, name, alpha, weight) rows with the raw embedding and its
    edge weight tau(.), optionally dropping rows whose weight is below min_weight.
    """
    rows = []
    for lw in model.layer_weights():
        for name, value in lw.relations.items():
            rows.append((lw.layer, "relation", name, lw.alpha[name], value))
        for name, value in lw.selfloops.items():
            rows.append((lw.layer, "selfloop", name, lw.beta[name], value))
    if min_weight is not None:
        rows = [r for r in rows if r[4] >= min_weight]
    return rows


def cmd_inspect_weights(args: argparse.Namespace) -> int:
    model = load_checkpoint(args.checkpoint)
    if model.embeddings is None:
        raise UsageError(f"checkpoint backbone '{model.config.backbone}' has no relation embeddings")
    rows = weight_rows(model, args.min_weight)
    config = config_payload(model.config, model.train_config)
    path = write_csv(
        _out_dir(args) / "weights.csv",
        ["layer", "kind", "name", "alpha", "weight"],
        rows,
        header_lines=reproducibility_header(model.train_config.seed, config),
    )
    logger.info("Wrote %d weight rows to %s", len(rows), path)
    print(path)
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    run = resolve_run_config(args)
    g = _load_training_graph(args.graph)
    report = sweep_lambda(run.model, g, run.train, args.lams)
    path = write_json(_out_dir(args) / "sweep_report.json", report.model_dump(mode="json"))
    for point in report.points:
        stds = " ".join(f"{s:.4g}" for s in point.alpha_std_per_layer)
        print(f"lambda={point.lam:g} micro-F1 {point.test_micro_f1:.4f} alpha std [{stds}]")
    logger.info("Wrote sweep report %s", path)
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "verify": cmd_verify,
    "inspect-weights": cmd_inspect_weights,
    "sweep": cmd_sweep,
}


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse argv, run one subcommand and map failures to exit codes.

    Returns:
        0 on success, 1 when verification fails, 2 on usage errors, invalid
        input files or missing files
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    setup_logging(args.log_level, args.log_format)
    try:
        return COMMANDS[args.command](args)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ValidationError as e:
        print(f"error: invalid configuration: {e.error_count()} validation error(s)\n{e}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
