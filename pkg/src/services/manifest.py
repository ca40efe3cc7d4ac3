"""
Benchmark manifests: annotation ingestion, ROI/time-span clip specs, protocol
builders, statistics, extraction plans and the on-disk manifest format.
"""
import logging
import math
import re
import sys
import os
from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

from pydantic import ValidationError

from ..errors import (
    ConfigError,
    DistractorNotAllowed,
    DuplicateOutput,
    ExcludedPair,
    IncompleteSpec,
    InvalidManifest,
    InvalidRecord,
    MissingGeometry,
)
from ..schemas import (
    ActivityAnnotation,
    ActorTrack,
    BenchmarkManifest,
    Box,
    ChoiceSet,
    ExtractionPlan,
    PlanRow,
    Protocol,
    Role,
    SampleKind,
    SampleRecord,
    StatsReport,
    TrackBox,
)
from ..utils.hashing import canonical_json
from ..utils.jsonl import dumps_jsonl, iter_jsonl, write_jsonl, write_text
from .taxonomy import ACTIONS, INTER_PAIR_EXCLUDED, PAIRS, resolve_action

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))))
import config

logger = logging.getLogger(__name__)

DURATION_BUCKETS = ["<1s"] + [f"{i}-{i + 1}s" for i in range(1, 10)] + [">=10s", "unknown"]
RESOLUTION_BUCKETS = ["<64", "64-127", "128-255", "256-511", "512-1023", ">=1024", "uncropped"]


# ---------------- annotation ingestion ----------------
def _parse_annotation(obj: dict) -> ActivityAnnotation:
    actors = []
    for actor in obj.get("actors", []):
        boxes = [
            TrackBox(frame=int(b[0]), box=Box(x0=b[1], y0=b[2], x1=b[3], y1=b[4]))
            for b in actor.get("boxes", [])
        ]
        actors.append(ActorTrack(actor_id=str(actor["actor_id"]), boxes=boxes))
    return ActivityAnnotation(**{**obj, "actors": actors})


def read_annotations(path) -> List[ActivityAnnotation]:
    """Parse the normalized annotation file (one activity per line)."""
    out = []
    for lineno, obj in enumerate(iter_jsonl(path), 1):
        try:
            out.append(_parse_annotation(obj))
        except (ValidationError, KeyError, IndexError, TypeError) as e:
            raise InvalidManifest(f"{path}:{lineno}: bad annotation ({e})") from e
    return out


def compute_clip_spec(
    a: ActivityAnnotation,
    fps_of_source: float,
    pad_ratio: Optional[float] = None,
    role: Role = Role.QUERY,
) -> SampleRecord:
    """
    Build the clip spec of one activity.

    The crop is the union of every actor box inside [start_frame, end_frame], padded by
    pad_ratio of its width/height per side, rounded outward and clamped to the frame.
    """
    if fps_of_source <= 0:
        raise ConfigError(f"{a.activity_id}: fps_of_source must be > 0")
    pad_ratio = config.CROP_PAD_RATIO if pad_ratio is None else pad_ratio

    boxes = [
        tb.box
        for actor in a.actors
        for tb in actor.boxes
        if a.start_frame <= tb.frame <= a.end_frame
    ]
    if not boxes:
        raise MissingGeometry(f"{a.activity_id}: no actor boxes inside frames {a.start_frame}-{a.end_frame}")

    x0 = min(b.x0 for b in boxes)
    y0 = min(b.y0 for b in boxes)
    x1 = max(b.x1 for b in boxes)
    y1 = max(b.y1 for b in boxes)
    pw, ph = (x1 - x0) * pad_ratio, (y1 - y0) * pad_ratio

    x0, y0 = max(0, math.floor(x0 - pw)), max(0, math.floor(y0 - ph))
    x1, y1 = math.ceil(x1 + pw), math.ceil(y1 + ph)
    if a.frame_width:
        x1 = min(x1, a.frame_width)
    if a.frame_height:
        y1 = min(y1, a.frame_height)
    if x1 <= x0 or y1 <= y0:
        raise MissingGeometry(f"{a.activity_id}: actor boxes fall outside the frame")

    return SampleRecord(
        sample_id=a.activity_id,
        media=a.video or a.scene_id,
        kind=SampleKind.VIDEO,
        action=resolve_action(a.action_label) if role == Role.QUERY else None,
        role=role,
        crop=Box(x0=x0, y0=y0, x1=x1, y1=y1),
        span=(a.start_frame / fps_of_source, a.end_frame / fps_of_source),
    )


def ingest(
    annotations: Iterable[ActivityAnnotation],
    role: Role = Role.QUERY,
    fps: Optional[float] = None,
    pad_ratio: Optional[float] = None,
) -> List[SampleRecord]:
    """Clip specs for a batch of annotations; per-record fps wins over the fallback."""
    samples = []
    for a in annotations:
        fps_of_source = a.fps or fps
        if not fps_of_source:
            raise ConfigError(f"{a.activity_id}: no fps in the record and no fallback given")
        samples.append(compute_clip_spec(a, fps_of_source, pad_ratio=pad_ratio, role=role))
    return samples


# ---------------- builders ----------------
def validate_manifest(m: BenchmarkManifest) -> BenchmarkManifest:
    ids = [s.sample_id for s in m.samples]
    dupes = sorted(k for k, v in Counter(ids).items() if v > 1)
    if dupes:
        raise InvalidManifest(f"duplicate sample ids: {dupes[:5]}")

    if m.protocol in (Protocol.INTER_PAIR, Protocol.INTRA_PAIR):
        missing = [s.sample_id for s in m.queries if s.action is None]
        if missing:
            raise InvalidManifest(f"queries without a class: {missing[:5]}")
    if m.protocol == Protocol.INTER_PAIR:
        bad = [s.sample_id for s in m.queries if s.action.pair_id == INTER_PAIR_EXCLUDED]
        if bad:
            raise ExcludedPair(f"{PAIRS[INTER_PAIR_EXCLUDED]} is excluded from inter-pair: {bad[:5]}")
    if m.protocol == Protocol.INTRA_PAIR and m.distractors:
        raise DistractorNotAllowed(f"intra-pair manifests take no distractors ({len(m.distractors)} given)")
    if m.protocol == Protocol.CLASSIFICATION:
        missing = [s.sample_id for s in m.samples if s.sample_id not in m.choices]
        if missing:
            raise InvalidManifest(f"samples without choices: {missing[:5]}")
        extra = sorted(set(m.choices) - set(ids))
        if extra:
            raise InvalidManifest(f"choices for unknown samples: {extra[:5]}")
    return m


def build_inter_pair_manifest(
    queries: List[SampleRecord], distractors: List[SampleRecord]
) -> BenchmarkManifest:
    """One-versus-all manifest over the six retained pairs plus class-less distractors."""
    for q in queries:
        if q.action is None:
            raise InvalidManifest(f"{q.sample_id}: inter-pair query needs a class")
        if q.action.pair_id == INTER_PAIR_EXCLUDED:
            raise ExcludedPair(f"{q.sample_id}: {q.action.name} belongs to an excluded pair")
    for d in distractors:
        if d.action is not None or d.role != Role.DISTRACTOR:
            raise InvalidManifest(f"{d.sample_id}: distractors carry no class")
    m = BenchmarkManifest(
        protocol=Protocol.INTER_PAIR,
        samples=list(queries) + list(distractors),
        constrained=not distractors,
    )
    logger.info("manifest.built", extra={"protocol": m.protocol.value,
                                         "queries": len(queries), "distractors": len(distractors)})
    return validate_manifest(m)


def build_intra_pair_manifest(queries: List[SampleRecord]) -> BenchmarkManifest:
    """Binary retrieval sets, one per opposite pair; every sample is a query."""
    for q in queries:
        if q.role == Role.DISTRACTOR:
            raise DistractorNotAllowed(f"{q.sample_id}: intra-pair manifests take no distractors")
        if q.action is None:
            raise InvalidManifest(f"{q.sample_id}: intra-pair query needs a class")
    m = BenchmarkManifest(protocol=Protocol.INTRA_PAIR, samples=list(queries), constrained=True)
    logger.info("manifest.built", extra={"protocol": m.protocol.value, "queries": len(queries)})
    return validate_manifest(m)


def build_classification_manifest(
    samples: List[SampleRecord], choices: Dict[str, ChoiceSet]
) -> BenchmarkManifest:
    m = BenchmarkManifest(
        protocol=Protocol.CLASSIFICATION, samples=list(samples), choices=dict(choices), constrained=True
    )
    return validate_manifest(m)


def synthesize_intra_queries(counts: Dict[str, int]) -> List[SampleRecord]:
    """Placeholder query samples with the given per-class counts."""
    samples = []
    for name, n in counts.items():
        action = ACTIONS[name]
        slug = re.sub(r"[^a-z0-9]+", "_", name.lower()).strip("_")
        for i in range(n):
            samples.append(SampleRecord(
                sample_id=f"{slug}_{i:04d}",
                media=f"synthetic://{slug}/{i:04d}",
                action=action,
                role=Role.QUERY,
            ))
    return samples


# ---------------- statistics ----------------
def _duration_bucket(seconds: Optional[float]) -> str:
    if seconds is None:
        return "unknown"
    if seconds < 1:
        return "<1s"
    if seconds >= 10:
        return ">=10s"
    i = int(seconds)
    return f"{i}-{i + 1}s"


def _resolution_bucket(crop: Optional[Box]) -> str:
    if crop is None:
        return "uncropped"
    side = max(crop.width, crop.height)
    for bound, label in ((64, "<64"), (128, "64-127"), (256, "128-255"), (512, "256-511"), (1024, "512-1023")):
        if side < bound:
            return label
    return ">=1024"


def manifest_stats(m: BenchmarkManifest) -> StatsReport:
    """Per-class counts, clip durations and crop sizes of a manifest."""
    queries = m.queries
    per_class = Counter(q.action.name for q in queries if q.action is not None)
    per_pair = Counter(q.action.pair_id for q in queries if q.action is not None)

    durations = dict.fromkeys(DURATION_BUCKETS, 0)
    resolutions = dict.fromkeys(RESOLUTION_BUCKETS, 0)
    for s in m.samples:
        durations[_duration_bucket(s.duration)] += 1
        resolutions[_resolution_bucket(s.crop)] += 1

    return StatsReport(
        protocol=m.protocol,
        total_samples=len(m.samples),
        queries=len(queries),
        distractors=len(m.distractors),
        classes=len(per_class),
        pairs=len(per_pair),
        per_class=dict(sorted(per_class.items())),
        per_pair=dict(sorted(per_pair.items())),
        duration_histogram=durations,
        resolution_histogram=resolutions,
    )


# ---------------- extraction plan ----------------
def _safe_name(sample_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", sample_id)


def emit_extraction_plan(m: BenchmarkManifest, out_dir) -> ExtractionPlan:
    """Declarative (source, crop, span, output) rows for an external clip extractor."""
    rows = []
    seen: Dict[str, str] = {}
    for s in m.samples:
        if s.kind != SampleKind.VIDEO:
            continue
        if s.crop is None or s.span is None:
            raise IncompleteSpec(f"{s.sample_id}: video sample needs both crop and span")
        output = str(Path(out_dir) / f"{_safe_name(s.sample_id)}.mp4")
        if output in seen:
            raise DuplicateOutput(f"{s.sample_id} and {seen[output]} both map to {output}")
        seen[output] = s.sample_id
        rows.append(PlanRow(
            source=s.media,
            crop=[int(v) for v in s.crop.as_list()],
            span=s.span,
            output=output,
        ))
    rows.sort(key=lambda r: (r.source, r.output))
    return ExtractionPlan(rows=rows)


def write_plan(plan: ExtractionPlan, path) -> Path:
    return write_jsonl(path, (r.model_dump(mode="json") for r in plan.rows))


def read_plan(path) -> ExtractionPlan:
    return ExtractionPlan(rows=[PlanRow(**r) for r in iter_jsonl(path)])


# ---------------- on-disk format ----------------
def _num(v: float):
    return int(v) if float(v).is_integer() else v


def sample_to_record(s: SampleRecord) -> dict:
    return {
        "sample_id": s.sample_id,
        "kind": s.kind.value,
        "media": s.media,
        "class": s.action.name if s.action else None,
        "pair_id": s.action.pair_id if s.action else None,
        "role": s.role.value,
        "crop": [_num(v) for v in s.crop.as_list()] if s.crop else None,
        "span": list(s.span) if s.span else None,
    }


def sample_from_record(r: dict) -> SampleRecord:
    action = None
    if r.get("class") is not None:
        action = ACTIONS.get(r["class"])
        if action is None:
            action = resolve_action(r["class"])
        if r.get("pair_id") not in (None, action.pair_id):
            raise InvalidManifest(f"{r['sample_id']}: pair_id {r['pair_id']} does not match {action.name}")
    crop = r.get("crop")
    return SampleRecord(
        sample_id=str(r["sample_id"]),
        kind=SampleKind(r.get("kind", "VIDEO")),
        media=r["media"],
        action=action,
        role=Role(r.get("role", "QUERY")),
        crop=Box(x0=crop[0], y0=crop[1], x1=crop[2], y1=crop[3]) if crop else None,
        span=tuple(r["span"]) if r.get("span") else None,
    )


def _meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def dumps_manifest(m: BenchmarkManifest) -> Tuple[str, str]:
    """(sample lines, sidecar meta) in canonical form."""
    samples = dumps_jsonl(sample_to_record(s) for s in m.samples)
    meta = canonical_json({
        "protocol": m.protocol.value,
        "constrained": m.constrained,
        "choices": {k: v.model_dump() for k, v in sorted(m.choices.items())},
    }) + "\n"
    return samples, meta


def write_manifest(m: BenchmarkManifest, path) -> Path:
    samples, meta = dumps_manifest(m)
    write_text(path, samples)
    write_text(_meta_path(path), meta)
    return Path(path)


def read_manifest(path) -> BenchmarkManifest:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"manifest not found: {path}")
    meta_path = _meta_path(path)
    if not meta_path.exists():
        raise InvalidManifest(f"manifest sidecar not found: {meta_path}")
    meta = next(iter_jsonl(meta_path))
    try:
        samples = [sample_from_record(r) for r in iter_jsonl(path)]
        m = BenchmarkManifest(
            protocol=Protocol(meta["protocol"]),
            samples=samples,
            choices={k: ChoiceSet(**v) for k, v in meta.get("choices", {}).items()},
            constrained=bool(meta.get("constrained", False)),
        )
    except (ValidationError, KeyError, TypeError, ValueError, InvalidRecord) as e:
        raise InvalidManifest(f"{path}: {e}") from e
    return validate_manifest(m)
