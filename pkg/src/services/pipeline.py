"""
End-to-end runs: describe -> embed -> similarity matrix -> evaluate.

Every stage writes one artifact under out_dir named by a fingerprint of everything that
affects it, and is skipped when that artifact already exists. Runs and ablation sweeps
therefore share whatever their inputs have in common.
"""
import logging
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import pandas as pd
from pydantic import BaseModel

from ..errors import ConfigError, NoData
from ..schemas import (
    BenchmarkManifest,
    DecodeParams,
    DescriptionRecord,
    EvaluationReport,
    MediaInput,
    Protocol,
    RunConfig,
    SampleKind,
    SampleRecord,
    SplitMode,
)
from ..utils.hashing import canonical_json, fingerprint, sha256_file
from ..utils.jsonl import write_text
from . import describer, embedder, metrics, simkernel
from .endpoints import EmbedEndpoint, ModelEndpoint, OpenAIChatEndpoint, OpenAIEmbedEndpoint
from .manifest import read_manifest

logger = logging.getLogger(__name__)

ChatFactory = Callable[[str], ModelEndpoint]
EmbedFactory = Callable[[str], EmbedEndpoint]

# Fields that never change an artifact.
_NON_ARTIFACT_FIELDS = {"workers", "cache_dir", "out_dir", "manifest"}


class StagePaths(BaseModel):
    descriptions: Path
    run_log: Path
    embeddings: Path
    matrix: Path
    report: Path
    config: Path


def resolve_protocol(cfg: RunConfig, manifest: Optional[BenchmarkManifest] = None) -> RunConfig:
    """Fill a missing protocol from the manifest."""
    if cfg.protocol is not None:
        return cfg
    manifest = manifest or read_manifest(cfg.manifest)
    return cfg.model_copy(update={"protocol": manifest.protocol})


def config_fingerprint(cfg: RunConfig) -> str:
    """Digest of the artifact-affecting config, with the manifest taken by content."""
    cfg = resolve_protocol(cfg)
    body = cfg.model_dump(mode="json", exclude=_NON_ARTIFACT_FIELDS)
    body["manifest_sha256"] = sha256_file(cfg.manifest)
    return fingerprint(body)


def stage_fingerprints(cfg: RunConfig) -> Dict[str, str]:
    cfg = resolve_protocol(cfg)
    manifest_fp = sha256_file(cfg.manifest)
    describe_fp = fingerprint({
        "stage": "describe",
        "manifest": manifest_fp,
        "model_id": cfg.model_id,
        "strategy": cfg.strategy.value,
        "dataset_key": cfg.dataset_key.value,
        "instruction": cfg.instruction,
        "system_prompt": cfg.system_prompt,
        "fps": cfg.fps,
        "max_frames": cfg.max_frames,
        "max_output_tokens": cfg.max_output_tokens,
    })
    embed_fp = fingerprint({"stage": "embed", "describe": describe_fp,
                            "embedder_id": cfg.embedder_id, "split_mode": cfg.split_mode.value})
    matrix_fp = fingerprint({"stage": "simmatrix", "embed": embed_fp})
    report_fp = fingerprint({"stage": "evaluate", "matrix": matrix_fp, "protocol": cfg.protocol.value,
                             "constrained": cfg.constrained})
    return {"describe": describe_fp, "embed": embed_fp, "simmatrix": matrix_fp, "evaluate": report_fp}


def stage_paths(cfg: RunConfig) -> StagePaths:
    fps = stage_fingerprints(cfg)
    out = Path(cfg.out_dir)
    return StagePaths(
        descriptions=out / "descriptions" / f"{fps['describe']}.jsonl",
        run_log=out / "runlogs" / f"{fps['describe']}.jsonl",
        embeddings=out / "embeddings" / f"{fps['embed']}.jsonl",
        matrix=out / "matrices" / f"{fps['simmatrix']}.f32",
        report=out / "reports" / f"{fps['evaluate']}.json",
        config=out / "configs" / f"{fps['evaluate']}.json",
    )


def load_run_config(path, **overrides) -> RunConfig:
    """RunConfig from a JSON file; non-None overrides win."""
    try:
        raw = Path(path).read_text(encoding="utf-8") if path else "{}"
        base = RunConfig.model_validate_json(raw) if path else None
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except ValueError as e:
        raise ConfigError(f"invalid config {path}: {e}") from e
    data = base.model_dump() if base else {}
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        cfg = RunConfig(**data)
    except ValueError as e:
        raise ConfigError(f"invalid config: {e}") from e
    return resolve_protocol(cfg)


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise ConfigError(f"{path} not found; run the {stage} stage first")
    return path


# ---------------- stages ----------------
def stage_describe(
    cfg: RunConfig,
    manifest: BenchmarkManifest,
    chat_factory: Optional[ChatFactory] = None,
    media_loader: Optional[Callable[[SampleRecord], MediaInput]] = None,
    clock: Callable[[], float] = time.time,
    retry_delay: Optional[float] = None,
) -> Path:
    cfg = resolve_protocol(cfg, manifest)
    paths = stage_paths(cfg)
    if paths.descriptions.exists():
        logger.info("stage.skip", extra={"stage": "describe", "artifact": str(paths.descriptions)})
        return paths.descriptions

    endpoint = (chat_factory or OpenAIChatEndpoint)(cfg.model_id)
    cache = describer.DescriptionCache(Path(cfg.cache_dir) / "descriptions" / "cache.jsonl")

    def prompt_for(kind: SampleKind):
        return describer.resolve_prompt(cfg.dataset_key, cfg.strategy, kind,
                                        instruction=cfg.instruction, system_prompt=cfg.system_prompt)

    records, run_log = describer.describe_samples(
        manifest.samples, endpoint, prompt_for,
        DecodeParams(max_output_tokens=cfg.max_output_tokens),
        cache=cache, fps=cfg.fps, max_frames=cfg.max_frames, workers=cfg.workers,
        media_loader=media_loader, media_root=Path(cfg.manifest).parent,
        clock=clock, retry_delay=retry_delay,
    )
    if run_log or not paths.run_log.exists():
        describer.write_run_log(paths.run_log, run_log)
    describer.write_descriptions(paths.descriptions, records)
    logger.info("stage.done", extra={"stage": "describe", "artifact": str(paths.descriptions)})
    return paths.descriptions


def _choice_records(manifest: BenchmarkManifest) -> List[DescriptionRecord]:
    return [
        DescriptionRecord(sample_id=choice_id(sid, k), model_id="", prompt_fingerprint="", text=sentence)
        for sid, choice in sorted(manifest.choices.items())
        for k, sentence in enumerate(choice.sentences)
    ]


def choice_id(sample_id: str, k: int) -> str:
    return f"{sample_id}::choice{k:02d}"


def stage_embed(
    cfg: RunConfig,
    manifest: BenchmarkManifest,
    embed_factory: Optional[EmbedFactory] = None,
    retry_delay: Optional[float] = None,
) -> Path:
    cfg = resolve_protocol(cfg, manifest)
    paths = stage_paths(cfg)
    if paths.embeddings.exists():
        logger.info("stage.skip", extra={"stage": "embed", "artifact": str(paths.embeddings)})
        return paths.embeddings
    descriptions = describer.read_descriptions(_require(paths.descriptions, "describe"))

    endpoint = (embed_factory or OpenAIEmbedEndpoint)(cfg.embedder_id)
    cache = embedder.VectorCache.for_model(cfg.cache_dir, cfg.embedder_id)
    records = embedder.embed_corpus(descriptions, endpoint, cache, split_mode=cfg.split_mode,
                                    workers=cfg.workers, retry_delay=retry_delay)
    if manifest.protocol == Protocol.CLASSIFICATION:
        # Each choice is a one-sentence set whatever the split mode.
        records += embedder.embed_corpus(_choice_records(manifest), endpoint, cache,
                                         split_mode=SplitMode.WHOLE_TEXT, workers=cfg.workers,
                                         retry_delay=retry_delay)
    embedder.write_embeddings(paths.embeddings, records)
    logger.info("stage.done", extra={"stage": "embed", "artifact": str(paths.embeddings)})
    return paths.embeddings


def _load_sets(cfg: RunConfig, paths: StagePaths):
    cache = embedder.VectorCache.for_model(cfg.cache_dir, cfg.embedder_id)
    return embedder.load_embedding_sets(_require(paths.embeddings, "embed"), cache)


def stage_simmatrix(cfg: RunConfig, manifest: BenchmarkManifest) -> Optional[Path]:
    """Queries x all samples. Classification runs score choices directly and have no matrix."""
    if manifest.protocol == Protocol.CLASSIFICATION:
        return None
    cfg = resolve_protocol(cfg, manifest)
    paths = stage_paths(cfg)
    if paths.matrix.exists():
        logger.info("stage.skip", extra={"stage": "simmatrix", "artifact": str(paths.matrix)})
        return paths.matrix
    sets = _load_sets(cfg, paths)
    query_ids = sorted(q.sample_id for q in manifest.queries)
    db_ids = sorted(s.sample_id for s in manifest.samples)
    missing = [i for i in db_ids if i not in sets]
    if missing:
        raise ConfigError(f"embeddings lack samples {missing[:5]}; the artifact does not match the manifest")
    matrix = simkernel.similarity_matrix([sets[i] for i in query_ids], [sets[i] for i in db_ids],
                                         workers=cfg.workers)
    simkernel.save_matrix(matrix, paths.matrix)
    logger.info("stage.done", extra={"stage": "simmatrix", "artifact": str(paths.matrix)})
    return paths.matrix


def _throughput(paths: StagePaths) -> Optional[float]:
    if not paths.run_log.exists():
        return None
    try:
        return describer.measure_throughput(describer.read_run_log(paths.run_log))
    except NoData:
        return None


def stage_evaluate(cfg: RunConfig, manifest: BenchmarkManifest) -> EvaluationReport:
    cfg = resolve_protocol(cfg, manifest)
    paths = stage_paths(cfg)
    if paths.report.exists():
        logger.info("stage.skip", extra={"stage": "evaluate", "artifact": str(paths.report)})
        return EvaluationReport.model_validate_json(paths.report.read_text(encoding="utf-8"))

    if manifest.protocol == Protocol.CLASSIFICATION:
        sets = _load_sets(cfg, paths)
        predictions = {
            sid: simkernel.classify(sets[sid], [sets[choice_id(sid, k)] for k in range(len(c.sentences))])
            for sid, c in sorted(manifest.choices.items())
        }
        report = metrics.classification_report(manifest, predictions)
    else:
        matrix = simkernel.load_matrix(_require(paths.matrix, "simmatrix"))
        if manifest.protocol == Protocol.INTRA_PAIR:
            report = metrics.pair_map(manifest, matrix)
        else:
            report = metrics.inter_pair_map(manifest, matrix, constrained=cfg.constrained or manifest.constrained)

    report.config_fingerprint = config_fingerprint(cfg)
    report.throughput = _throughput(paths)
    write_text(paths.config, canonical_json(cfg.model_dump(mode="json", exclude={"workers", "cache_dir", "out_dir"})) + "\n")
    metrics.write_report(report, paths.report)
    logger.info("stage.done", extra={"stage": "evaluate", "metric": report.metric, "score": report.score})
    return report


def _check_protocol(cfg: RunConfig, manifest: BenchmarkManifest) -> None:
    if manifest.protocol != cfg.protocol:
        raise ConfigError(f"config protocol {cfg.protocol.value} but manifest is {manifest.protocol.value}")


def run(
    cfg: RunConfig,
    chat_factory: Optional[ChatFactory] = None,
    embed_factory: Optional[EmbedFactory] = None,
    media_loader: Optional[Callable[[SampleRecord], MediaInput]] = None,
    clock: Callable[[], float] = time.time,
    retry_delay: Optional[float] = None,
) -> EvaluationReport:
    """Run every stage, skipping those whose artifact is already on disk."""
    manifest = read_manifest(cfg.manifest)
    cfg = resolve_protocol(cfg, manifest)
    _check_protocol(cfg, manifest)
    paths = stage_paths(cfg)
    if paths.report.exists():
        return stage_evaluate(cfg, manifest)
    if not paths.matrix.exists() or manifest.protocol == Protocol.CLASSIFICATION:
        if not paths.embeddings.exists():
            stage_describe(cfg, manifest, chat_factory, media_loader, clock, retry_delay)
            stage_embed(cfg, manifest, embed_factory, retry_delay)
        stage_simmatrix(cfg, manifest)
    return stage_evaluate(cfg, manifest)


# ---------------- ablations ----------------
SWEEPS = ("fps", "embedder", "split_mode")


def sweep_configs(cfg: RunConfig, kind: str, values: Optional[Sequence] = None) -> List[RunConfig]:
    if kind == "fps":
        if not values:
            raise ConfigError("fps sweep needs values")
        return [cfg.model_copy(update={"fps": float(v)}) for v in values]
    if kind == "embedder":
        if not values:
            raise ConfigError("embedder sweep needs values")
        return [cfg.model_copy(update={"embedder_id": str(v)}) for v in values]
    if kind == "split_mode":
        return [cfg.model_copy(update={"split_mode": mode}) for mode in (SplitMode.SPLIT_MAX, SplitMode.WHOLE_TEXT)]
    raise ConfigError(f"unknown sweep {kind!r}; expected one of {SWEEPS}")


def ablate(
    cfg: RunConfig,
    kind: str,
    values: Optional[Sequence] = None,
    chat_factory: Optional[ChatFactory] = None,
    embed_factory: Optional[EmbedFactory] = None,
    media_loader: Optional[Callable[[SampleRecord], MediaInput]] = None,
    clock: Callable[[], float] = time.time,
    retry_delay: Optional[float] = None,
) -> pd.DataFrame:
    """One report per sweep point; the summary table lands in out_dir/ablation_<kind>.csv."""
    rows = []
    for point in sweep_configs(cfg, kind, values):
        report = run(point, chat_factory, embed_factory, media_loader, clock, retry_delay)
        value = {"fps": point.fps, "embedder": point.embedder_id, "split_mode": point.split_mode.value}[kind]
        rows.append({
            kind: value,
            "metric": report.metric,
            "score": report.score,
            "evaluated_queries": report.evaluated_queries,
            "config_fingerprint": report.config_fingerprint,
            "report": str(stage_paths(point).report),
        })
    table = pd.DataFrame(rows)
    write_text(Path(cfg.out_dir) / f"ablation_{kind}.csv", table.to_csv(index=False, lineterminator="\n"))
    logger.info("ablate.done", extra={"sweep": kind, "points": len(rows)})
    return table
