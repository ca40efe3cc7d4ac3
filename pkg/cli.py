"""Command-line entry: manifests, pipeline stages, ablations and reports."""
import argparse
import json
import logging
import sys
import time

from pydantic import ValidationError

from src.errors import ConfigError, InvalidRecord, MaxSimError
from src.logging_conf import setup_logging
from src.schemas import ChoiceSet, Protocol, Role, SplitMode, Strategy
from src.services import describer, manifest as manifests, metrics, pipeline
from src.services.taxonomy import INTRA_PAIR_COUNTS
from src.utils.jsonl import iter_jsonl, read_json

logger = logging.getLogger("maxsim.cli")

_STRATEGIES = {"general": Strategy.GENERAL, "task-aware": Strategy.TASK_AWARE}
_SPLITS = {"split-max": SplitMode.SPLIT_MAX, "whole-text": SplitMode.WHOLE_TEXT}
_PROTOCOLS = {"inter-pair": Protocol.INTER_PAIR, "intra-pair": Protocol.INTRA_PAIR,
              "classification": Protocol.CLASSIFICATION}


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, default=str))


def _clock(args):
    """Wall clock, or a constant one so replayed runs write identical timings."""
    return (lambda: 0.0) if args.frozen_clock else time.time


def _run_config(args):
    return pipeline.load_run_config(
        args.config,
        manifest=getattr(args, "manifest", None),
        protocol=_PROTOCOLS[args.protocol] if getattr(args, "protocol", None) else None,
        cache_dir=args.cache_dir,
        out_dir=args.out_dir,
        workers=args.workers,
        fps=args.fps,
        strategy=_STRATEGIES[args.strategy] if args.strategy else None,
        split_mode=_SPLITS[args.split] if args.split else None,
        constrained=True if args.constrained else None,
    )


# ---------------- subcommands ----------------
def cmd_build_manifest(args) -> None:
    protocol = _PROTOCOLS[args.protocol]
    if protocol == Protocol.INTRA_PAIR and args.synthesize:
        m = manifests.build_intra_pair_manifest(manifests.synthesize_intra_queries(INTRA_PAIR_COUNTS))
    elif protocol == Protocol.CLASSIFICATION:
        if not (args.samples and args.choices):
            raise ConfigError("classification manifests need --samples and --choices")
        try:
            raw_choices = read_json(args.choices)
            samples = [manifests.sample_from_record(r) for r in iter_jsonl(args.samples)]
            choices = {k: ChoiceSet(**v) for k, v in raw_choices.items()}
        except (InvalidRecord, ValidationError, KeyError, TypeError, ValueError, AttributeError) as e:
            raise ConfigError(f"invalid classification input: {e}") from e
        m = manifests.build_classification_manifest(samples, choices)
    else:
        if not args.annotations:
            raise ConfigError("--annotations is required")
        queries = manifests.ingest(manifests.read_annotations(args.annotations), Role.QUERY,
                                   fps=args.source_fps, pad_ratio=args.pad_ratio)
        if protocol == Protocol.INTRA_PAIR:
            if args.distractors:
                raise ConfigError("intra-pair manifests take no distractors")
            m = manifests.build_intra_pair_manifest(queries)
        else:
            distractors = []
            if args.distractors:
                distractors = manifests.ingest(manifests.read_annotations(args.distractors), Role.DISTRACTOR,
                                               fps=args.source_fps, pad_ratio=args.pad_ratio)
            m = manifests.build_inter_pair_manifest(queries, distractors)
    manifests.write_manifest(m, args.output)
    _emit(manifests.manifest_stats(m).model_dump(mode="json"))


def cmd_plan_extract(args) -> None:
    plan = manifests.emit_extraction_plan(manifests.read_manifest(args.manifest), args.clips_dir)
    manifests.write_plan(plan, args.output)
    _emit({"rows": len(plan.rows), "output": args.output})


def cmd_stats(args) -> None:
    _emit(manifests.manifest_stats(manifests.read_manifest(args.manifest)).model_dump(mode="json"))


def cmd_throughput(args) -> None:
    log = describer.read_run_log(args.run_log)
    _emit({"samples": len(log), "instances_per_second": describer.measure_throughput(log)})


def cmd_describe(args) -> None:
    cfg = _run_config(args)
    path = pipeline.stage_describe(cfg, manifests.read_manifest(cfg.manifest), clock=_clock(args))
    _emit({"descriptions": str(path)})


def cmd_embed(args) -> None:
    cfg = _run_config(args)
    _emit({"embeddings": str(pipeline.stage_embed(cfg, manifests.read_manifest(cfg.manifest)))})


def cmd_simmatrix(args) -> None:
    cfg = _run_config(args)
    path = pipeline.stage_simmatrix(cfg, manifests.read_manifest(cfg.manifest))
    _emit({"matrix": str(path) if path else None})


def cmd_evaluate(args) -> None:
    cfg = _run_config(args)
    report = pipeline.stage_evaluate(cfg, manifests.read_manifest(cfg.manifest))
    _emit(metrics.report_to_dict(report))


def cmd_run(args) -> None:
    _emit(metrics.report_to_dict(pipeline.run(_run_config(args), clock=_clock(args))))


def cmd_ablate(args) -> None:
    table = pipeline.ablate(_run_config(args), args.sweep, args.values, clock=_clock(args))
    _emit(table.to_dict(orient="records"))


def cmd_baseline(args) -> None:
    m = manifests.read_manifest(args.manifest)
    constrained = True if args.constrained else None
    simulated = metrics.random_baseline(m, trials=args.trials, seed=args.seed, constrained=constrained)
    _emit({
        "simulated": simulated.model_dump(),
        "expected_ap": metrics.analytic_baseline(m, constrained=constrained, kind="expected_ap"),
        "prevalence": metrics.analytic_baseline(m, constrained=constrained, kind="prevalence"),
    })


# ---------------- parser ----------------
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Run config JSON")
    common.add_argument("--cache-dir")
    common.add_argument("--out-dir")
    common.add_argument("--workers", type=int)
    common.add_argument("--fps", type=float)
    common.add_argument("--strategy", choices=sorted(_STRATEGIES))
    common.add_argument("--split", choices=sorted(_SPLITS))
    common.add_argument("--constrained", action="store_true")
    common.add_argument("--log-level")
    common.add_argument("--frozen-clock", action="store_true", help="Record zero timings (byte-identical reruns)")

    parser = argparse.ArgumentParser(prog="maxsim", description="MLLM description embedding evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-manifest", parents=[common], help="Build a benchmark manifest")
    p.add_argument("--protocol", required=True, choices=list(_PROTOCOLS))
    p.add_argument("--annotations", help="Normalized activity annotations (JSONL)")
    p.add_argument("--distractors", help="Annotations of distractor clips (JSONL)")
    p.add_argument("--source-fps", type=float, help="Fallback fps for records without one")
    p.add_argument("--pad-ratio", type=float)
    p.add_argument("--synthesize", action="store_true", help="Intra-pair placeholders from published counts")
    p.add_argument("--samples", help="Classification samples in manifest JSONL format")
    p.add_argument("--choices", help="Classification choices JSON {sample_id: {sentences, correct}}")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_build_manifest)

    p = sub.add_parser("plan-extract", parents=[common], help="Emit a clip extraction plan")
    p.add_argument("--manifest", required=True)
    p.add_argument("--clips-dir", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_plan_extract)

    for name, func, text in (
        ("describe", cmd_describe, "Describe every sample"),
        ("embed", cmd_embed, "Embed the descriptions"),
        ("simmatrix", cmd_simmatrix, "Compute the similarity matrix"),
        ("evaluate", cmd_evaluate, "Score the similarity matrix"),
        ("run", cmd_run, "Run every stage"),
    ):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--manifest")
        p.add_argument("--protocol", choices=list(_PROTOCOLS), help="Defaults to the manifest's protocol")
        p.set_defaults(func=func)

    p = sub.add_parser("ablate", parents=[common], help="Sweep one design factor")
    p.add_argument("--manifest")
    p.add_argument("--protocol", choices=list(_PROTOCOLS), help="Defaults to the manifest's protocol")
    p.add_argument("--sweep", required=True, choices=list(pipeline.SWEEPS))
    p.add_argument("--values", nargs="*", help="fps values or embedder ids")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("stats", parents=[common], help="Manifest statistics")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("throughput", parents=[common], help="Instances per second of a run log")
    p.add_argument("--run-log", required=True)
    p.set_defaults(func=cmd_throughput)

    p = sub.add_parser("baseline", parents=[common], help="Random-score baselines of a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_baseline)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        args.func(args)
    except MaxSimError as e:
        logger.error("cli.failed", extra={"command": args.command, "error": type(e).__name__, "detail": str(e)})
        return e.exit_code
    except OSError as e:
        logger.error("cli.failed", extra={"command": args.command, "error": type(e).__name__, "detail": str(e)})
        return ConfigError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
