"""
Turn a sample's pixels into text: prompt resolution, frame sampling, cached endpoint
calls with retries, batch description of a manifest and throughput measurement.
"""
import base64
import logging
import re
import sys
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Tuple

from tqdm import tqdm

from ..errors import MissingInstruction, NoData, RefusedDescription
from ..schemas import (
    Box,
    DatasetKey,
    DecodeParams,
    DescriptionRecord,
    Frame,
    MediaInput,
    MediaKind,
    PromptConfig,
    RunLogEntry,
    SampleKind,
    SampleRecord,
    Strategy,
)
from ..utils.hashing import canonical_json, fingerprint, sha256_bytes
from ..utils.jsonl import iter_jsonl, write_jsonl
from ..utils.video import crop_image, encode_jpeg, frame_timestamps, load_image, read_frames, video_duration
from .endpoints import ModelEndpoint, call_with_retry

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))))
import config

logger = logging.getLogger(__name__)

SPATIAL_PAIRWISE = "List all pairwise spatial relations between objects in the image."
COUNT_CAPTION = (
    "Describe the image in a short caption that accurately states the number of main "
    "objects (in words) and includes a brief descriptive phrase."
)

# dataset -> (instruction, system prompt)
TASK_AWARE_PROMPTS: Dict[DatasetKey, Tuple[str, Optional[str]]] = {
    DatasetKey.SPATIALBENCH: (
        "List all spatial relationships between objects (e.g., position, size, distance, "
        "or orientation) in short sentences.",
        None,
    ),
    DatasetKey.VSR: (SPATIAL_PAIRWISE, None),
    DatasetKey.WHATSUP: (SPATIAL_PAIRWISE, None),
    DatasetKey.COUNTBENCH: (COUNT_CAPTION, None),
    DatasetKey.VISUAL7W_COUNT: (COUNT_CAPTION, None),
    DatasetKey.SOVABENCH: (
        "Briefly classify the actions occurring in this video.",
        "You are an expert video analysis model specialized in action recognition. Focus on "
        "how subjects and objects change and move over time rather than on static appearances "
        "or backgrounds. Infer the actions by reasoning about motion, temporal progression, "
        "and interactions across the video frames.",
    ),
}


def resolve_prompt(
    dataset_key: DatasetKey,
    strategy: Strategy,
    kind: SampleKind,
    instruction: Optional[str] = None,
    system_prompt: Optional[str] = None,
) -> PromptConfig:
    """Instruction (and system prompt) for a dataset, strategy and sample kind.

    `instruction`/`system_prompt` are only read for CUSTOM datasets.
    """
    if strategy == Strategy.GENERAL:
        text = "Describe the image" if kind == SampleKind.IMAGE else "Describe the video"
        return PromptConfig(strategy=strategy, dataset_key=dataset_key, instruction=text)
    if dataset_key == DatasetKey.CUSTOM:
        if not instruction or not instruction.strip():
            raise MissingInstruction("CUSTOM dataset needs an instruction text")
        return PromptConfig(strategy=strategy, dataset_key=dataset_key,
                            instruction=instruction, system_prompt=system_prompt)
    text, system = TASK_AWARE_PROMPTS[dataset_key]
    return PromptConfig(strategy=strategy, dataset_key=dataset_key, instruction=text, system_prompt=system)


def prompt_fingerprint(prompt: PromptConfig, decode: DecodeParams) -> str:
    return fingerprint({"prompt": prompt.model_dump(mode="json"), "decode": decode.model_dump(mode="json")})


# ---------------- media ----------------
def sample_frames(
    clip: str,
    span: Tuple[float, float],
    fps: float,
    max_frames: int,
    crop: Optional[Box] = None,
    quality: Optional[int] = None,
    max_side: Optional[int] = None,
) -> MediaInput:
    """Frames of `clip` at span.start + k/fps, cropped and JPEG-encoded."""
    quality = config.FRAME_JPEG_QUALITY if quality is None else quality
    max_side = config.FRAME_MAX_SIDE if max_side is None else max_side
    timestamps = frame_timestamps(span, fps, max_frames)
    images = read_frames(clip, timestamps)
    frames = [
        Frame(timestamp=t, data=encode_jpeg(crop_image(img, crop), quality, max_side))
        for t, img in zip(timestamps, images)
    ]
    return MediaInput(kind=MediaKind.FRAME_SEQUENCE, frames=frames)


def load_still(path: str, crop: Optional[Box] = None) -> MediaInput:
    img = crop_image(load_image(path), crop)
    data = encode_jpeg(img, config.FRAME_JPEG_QUALITY, config.FRAME_MAX_SIDE)
    return MediaInput(kind=MediaKind.IMAGE, frames=[Frame(timestamp=0.0, data=data)])


def sample_media(sample: SampleRecord, fps: float, max_frames: int, media_root=None) -> MediaInput:
    """Load the visual input of one manifest sample."""
    path = Path(sample.media)
    if media_root is not None and not path.is_absolute():
        path = Path(media_root) / path
    if sample.kind == SampleKind.IMAGE:
        return load_still(str(path), sample.crop)
    span = sample.span or (0.0, video_duration(str(path)))
    return sample_frames(str(path), span, fps, max_frames, crop=sample.crop)


def media_digest(media: MediaInput) -> str:
    return fingerprint({
        "kind": media.kind.value,
        "frames": [[f.timestamp, sha256_bytes(f.data)] for f in media.frames],
    })


def build_messages(media: MediaInput, prompt: PromptConfig) -> List[dict]:
    """One user message: every frame as an image part in timestamp order, then the instruction."""
    content = [
        {"type": "image_url",
         "image_url": {"url": "data:image/jpeg;base64," + base64.b64encode(f.data).decode("ascii")}}
        for f in media.frames
    ]
    content.append({"type": "text", "text": prompt.instruction})
    messages = []
    if prompt.system_prompt:
        messages.append({"role": "system", "content": prompt.system_prompt})
    messages.append({"role": "user", "content": content})
    return messages


# ---------------- output hygiene ----------------
_SEGMENT_RE = re.compile(r"[^.!?\n]+[.!?\n]*")


def truncate_degenerate(text: str, repeats: int = 3) -> str:
    """Cut a looping response at the `repeats`-th consecutive copy of the same segment."""
    prev, run, first_end = None, 0, 0
    for m in _SEGMENT_RE.finditer(text):
        seg = m.group().strip()
        if not seg:
            continue
        if seg == prev:
            run += 1
            if run >= repeats:
                return text[:first_end].rstrip()
        else:
            prev, run, first_end = seg, 1, m.end()
    return text


# ---------------- cache ----------------
class DescriptionCache:
    """Append-only JSONL of endpoint responses keyed by (model, prompt, decode, media)."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: Dict[str, dict] = {}
        if self.path.exists():
            for rec in iter_jsonl(self.path):
                self._entries[rec["key"]] = rec

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, key: str) -> Optional[dict]:
        return self._entries.get(key)

    def put(self, key: str, record: dict) -> None:
        record = {**record, "key": key}
        with self._lock:
            if key in self._entries:
                return
            self._entries[key] = record
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8", newline="\n") as f:
                f.write(canonical_json(record) + "\n")
                f.flush()

    def compact(self) -> None:
        """Rewrite sorted by key so the file does not depend on completion order."""
        with self._lock:
            write_jsonl(self.path, (self._entries[k] for k in sorted(self._entries)))


def description_cache_key(model_id: str, prompt_fp: str, media: MediaInput) -> str:
    return fingerprint({"model": model_id, "prompt": prompt_fp, "media": media_digest(media)})


# ---------------- describe ----------------
def _describe(
    media: MediaInput,
    prompt: PromptConfig,
    decode: DecodeParams,
    endpoint: ModelEndpoint,
    sample_id: str,
    cache: Optional[DescriptionCache],
    clock: Callable[[], float],
    retry_delay: Optional[float],
) -> Tuple[DescriptionRecord, bool]:
    pfp = prompt_fingerprint(prompt, decode)
    key = description_cache_key(endpoint.model_id, pfp, media)
    hit = cache.get(key) if cache is not None else None
    if hit is not None:
        logger.debug("describe.cache.hit", extra={"sample_id": sample_id})
        return DescriptionRecord(sample_id=sample_id, model_id=endpoint.model_id, prompt_fingerprint=pfp,
                                 text=hit["text"], latency_ms=hit["latency_ms"],
                                 created_at=hit.get("created_at", 0.0)), True

    messages = build_messages(media, prompt)
    t0 = clock()
    refused = False
    try:
        text = call_with_retry(endpoint.complete, messages, decode.max_output_tokens, delay=retry_delay)
    except RefusedDescription as e:
        logger.warning("describe.refused", extra={"sample_id": sample_id, "reason": str(e)})
        text, refused = "", True
    t1 = clock()
    latency_ms = int(round((t1 - t0) * 1000))

    cleaned = truncate_degenerate(text)
    if cleaned != text:
        logger.info("describe.truncated", extra={"sample_id": sample_id, "chars": len(text) - len(cleaned)})
    if cache is not None:
        cache.put(key, {"model_id": endpoint.model_id, "prompt_fingerprint": pfp,
                        "text": cleaned, "latency_ms": latency_ms, "created_at": t1, "refused": refused})
    return DescriptionRecord(sample_id=sample_id, model_id=endpoint.model_id, prompt_fingerprint=pfp,
                             text=cleaned, latency_ms=latency_ms, created_at=t1), False


def describe(
    media: MediaInput,
    prompt: PromptConfig,
    decode: DecodeParams,
    endpoint: ModelEndpoint,
    sample_id: str = "",
    cache: Optional[DescriptionCache] = None,
    clock: Callable[[], float] = time.time,
    retry_delay: Optional[float] = None,
) -> DescriptionRecord:
    """Describe one visual input; refusals come back as empty text."""
    record, _ = _describe(media, prompt, decode, endpoint, sample_id, cache, clock, retry_delay)
    return record


def describe_samples(
    samples: Iterable[SampleRecord],
    endpoint: ModelEndpoint,
    prompt_for: Callable[[SampleKind], PromptConfig],
    decode: DecodeParams,
    cache: Optional[DescriptionCache] = None,
    fps: float = None,
    max_frames: int = None,
    workers: int = 1,
    media_loader: Optional[Callable[[SampleRecord], MediaInput]] = None,
    media_root=None,
    clock: Callable[[], float] = time.time,
    retry_delay: Optional[float] = None,
) -> Tuple[List[DescriptionRecord], List[RunLogEntry]]:
    """
    Describe every sample with bounded parallelism.

    Returns records sorted by sample_id and a run log holding one entry per endpoint call
    (cache hits are not logged).
    """
    fps = config.DEFAULT_FPS if fps is None else fps
    max_frames = config.DEFAULT_MAX_FRAMES if max_frames is None else max_frames
    loader = media_loader or (lambda s: sample_media(s, fps, max_frames, media_root=media_root))
    ordered = sorted(samples, key=lambda s: s.sample_id)

    def one(sample: SampleRecord):
        started = clock()
        record, hit = _describe(loader(sample), prompt_for(sample.kind), decode, endpoint,
                                sample.sample_id, cache, clock, retry_delay)
        entry = None if hit else RunLogEntry(sample_id=sample.sample_id, started_at=started, finished_at=clock())
        return record, entry

    records, run_log = [], []
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for record, entry in tqdm(pool.map(one, ordered), total=len(ordered), desc="describe", disable=None):
            records.append(record)
            if entry is not None:
                run_log.append(entry)
    if cache is not None:
        cache.compact()
    logger.info("describe.done", extra={"samples": len(records), "endpoint_calls": len(run_log)})
    return records, run_log


def write_descriptions(path, records: Iterable[DescriptionRecord]) -> Path:
    return write_jsonl(path, (r.model_dump(mode="json") for r in sorted(records, key=lambda r: r.sample_id)))


def read_descriptions(path) -> List[DescriptionRecord]:
    return [DescriptionRecord(**r) for r in iter_jsonl(path)]


def write_run_log(path, entries: Iterable[RunLogEntry]) -> Path:
    return write_jsonl(path, (e.model_dump(mode="json") for e in sorted(entries, key=lambda e: e.sample_id)))


def read_run_log(path) -> List[RunLogEntry]:
    return [RunLogEntry(**r) for r in iter_jsonl(path)]


def measure_throughput(run_log: List[RunLogEntry]) -> float:
    """Completed samples per second of wall-clock time spanned by the log."""
    if not run_log:
        raise NoData("run log is empty")
    span = max(e.finished_at for e in run_log) - min(e.started_at for e in run_log)
    if span <= 0:
        raise NoData("run log spans no wall-clock time")
    return len(run_log) / span
