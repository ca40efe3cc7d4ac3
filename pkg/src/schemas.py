from enum import Enum
from typing import Dict, List, Optional, Tuple
import sys
import os

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
import config

# Similarity assigned when either embedding set is empty; ranks below any cosine.
SENTINEL = -2.0


class Source(str, Enum):
    MEVA = "MEVA"
    VIRAT = "VIRAT"
    OTHER = "OTHER"


class Polarity(str, Enum):
    FIRST = "FIRST"
    SECOND = "SECOND"


class SampleKind(str, Enum):
    VIDEO = "VIDEO"
    IMAGE = "IMAGE"


class Role(str, Enum):
    QUERY = "QUERY"
    DISTRACTOR = "DISTRACTOR"


class Protocol(str, Enum):
    INTER_PAIR = "INTER_PAIR"
    INTRA_PAIR = "INTRA_PAIR"
    CLASSIFICATION = "CLASSIFICATION"


class Strategy(str, Enum):
    GENERAL = "GENERAL"
    TASK_AWARE = "TASK_AWARE"


class DatasetKey(str, Enum):
    SPATIALBENCH = "SPATIALBENCH"
    VSR = "VSR"
    WHATSUP = "WHATSUP"
    COUNTBENCH = "COUNTBENCH"
    VISUAL7W_COUNT = "VISUAL7W_COUNT"
    SOVABENCH = "SOVABENCH"
    CUSTOM = "CUSTOM"


class DecodeMode(str, Enum):
    GREEDY = "GREEDY"


class MediaKind(str, Enum):
    IMAGE = "IMAGE"
    FRAME_SEQUENCE = "FRAME_SEQUENCE"


class SplitMode(str, Enum):
    SPLIT_MAX = "SPLIT_MAX"
    WHOLE_TEXT = "WHOLE_TEXT"


# ---------------- manifest ----------------
class Box(BaseModel):
    model_config = ConfigDict(frozen=True)

    x0: float
    y0: float
    x1: float
    y1: float

    @model_validator(mode="after")
    def _ordered(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"degenerate box {self.as_list()}")
        return self

    def as_list(self) -> List[float]:
        return [self.x0, self.y0, self.x1, self.y1]

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0


class TrackBox(BaseModel):
    frame: int = Field(ge=0)
    box: Box


class ActorTrack(BaseModel):
    actor_id: str
    boxes: List[TrackBox] = Field(default_factory=list)

    @field_validator("boxes")
    @classmethod
    def _increasing(cls, boxes):
        frames = [b.frame for b in boxes]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise ValueError("track frame indices must be strictly increasing")
        return boxes


class ActivityAnnotation(BaseModel):
    activity_id: str
    source: Source = Source.OTHER
    action_label: str
    start_frame: int
    end_frame: int
    fps: Optional[float] = None
    scene_id: str = ""
    actors: List[ActorTrack]
    video: Optional[str] = None
    frame_width: Optional[int] = None
    frame_height: Optional[int] = None

    @model_validator(mode="after")
    def _valid(self):
        if self.start_frame >= self.end_frame:
            raise ValueError(f"{self.activity_id}: start_frame must be < end_frame")
        if not self.actors:
            raise ValueError(f"{self.activity_id}: at least one actor required")
        return self


class ActionClass(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    pair_id: str
    polarity: Polarity


class SampleRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    sample_id: str
    media: str
    kind: SampleKind = SampleKind.VIDEO
    action: Optional[ActionClass] = None
    role: Role = Role.QUERY
    crop: Optional[Box] = None
    span: Optional[Tuple[float, float]] = None

    @model_validator(mode="after")
    def _role_matches_class(self):
        # Queries without a class only occur in CLASSIFICATION manifests, whose gold
        # label lives in the choice set; manifest validation enforces the rest.
        if self.role == Role.DISTRACTOR and self.action is not None:
            raise ValueError(f"{self.sample_id}: distractor must not carry a class")
        if self.span is not None and not self.span[0] < self.span[1]:
            raise ValueError(f"{self.sample_id}: span start must be < end")
        return self

    @property
    def duration(self) -> Optional[float]:
        return None if self.span is None else self.span[1] - self.span[0]


class ChoiceSet(BaseModel):
    sentences: List[str]
    correct: int

    @model_validator(mode="after")
    def _valid(self):
        if len(self.sentences) < 2:
            raise ValueError("classification needs at least two choices")
        if not 0 <= self.correct < len(self.sentences):
            raise ValueError("correct choice index out of range")
        return self


class BenchmarkManifest(BaseModel):
    model_config = ConfigDict(frozen=True)

    protocol: Protocol
    samples: List[SampleRecord] = Field(default_factory=list)
    choices: Dict[str, ChoiceSet] = Field(default_factory=dict)
    constrained: bool = False

    @property
    def queries(self) -> List[SampleRecord]:
        return [s for s in self.samples if s.role == Role.QUERY]

    @property
    def distractors(self) -> List[SampleRecord]:
        return [s for s in self.samples if s.role == Role.DISTRACTOR]

    def by_id(self) -> Dict[str, SampleRecord]:
        return {s.sample_id: s for s in self.samples}


class StatsReport(BaseModel):
    protocol: Protocol
    total_samples: int = 0
    queries: int = 0
    distractors: int = 0
    classes: int = 0
    pairs: int = 0
    per_class: Dict[str, int] = Field(default_factory=dict)
    per_pair: Dict[str, int] = Field(default_factory=dict)
    duration_histogram: Dict[str, int] = Field(default_factory=dict)
    resolution_histogram: Dict[str, int] = Field(default_factory=dict)


class PlanRow(BaseModel):
    source: str
    crop: List[int]
    span: Tuple[float, float]
    output: str


class ExtractionPlan(BaseModel):
    rows: List[PlanRow] = Field(default_factory=list)


# ---------------- describer ----------------
class PromptConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    strategy: Strategy
    dataset_key: DatasetKey
    instruction: str
    system_prompt: Optional[str] = None


class DecodeParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    mode: DecodeMode = DecodeMode.GREEDY
    max_output_tokens: int = Field(default=512, gt=0)


class Frame(BaseModel):
    timestamp: float
    data: bytes  # encoded JPEG


class MediaInput(BaseModel):
    kind: MediaKind
    frames: List[Frame]

    @field_validator("frames")
    @classmethod
    def _ordered(cls, frames):
        if not frames:
            raise ValueError("media input needs at least one frame")
        ts = [f.timestamp for f in frames]
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise ValueError("frame timestamps must be non-decreasing")
        return frames


class DescriptionRecord(BaseModel):
    sample_id: str
    model_id: str
    prompt_fingerprint: str
    text: str
    latency_ms: int = 0
    # Epoch seconds from the run clock; zero under a frozen clock.
    created_at: float = 0.0


class RunLogEntry(BaseModel):
    sample_id: str
    started_at: float
    finished_at: float


# ---------------- embedder ----------------
class EmbeddingSet(BaseModel):
    """Sentence vectors of one sample, one row per sentence, unit-norm float32."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    sample_id: str = ""
    model_id: str = ""
    vectors: np.ndarray = Field(default_factory=lambda: np.zeros((0, 0), dtype=np.float32))

    @field_validator("vectors", mode="before")
    @classmethod
    def _matrix(cls, v):
        v = np.asarray(v, dtype=np.float32)
        if v.ndim == 1:
            v = v.reshape(1, -1) if v.size else v.reshape(0, 0)
        if v.ndim != 2:
            raise ValueError("vectors must be a 2-D array")
        if not np.all(np.isfinite(v)):
            raise ValueError("vectors must be finite")
        return v

    def __len__(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])


# ---------------- simkernel ----------------
class SimilarityMatrix(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    query_ids: List[str]
    db_ids: List[str]
    values: np.ndarray
    sentinel: float = SENTINEL

    @model_validator(mode="after")
    def _shape(self):
        if self.values.shape != (len(self.query_ids), len(self.db_ids)):
            raise ValueError(
                f"matrix shape {self.values.shape} does not match "
                f"{len(self.query_ids)}x{len(self.db_ids)} ids"
            )
        return self

    def row(self, query_id: str) -> np.ndarray:
        return self.values[self.query_ids.index(query_id)]


class Classification(BaseModel):
    index: int
    score: float
    unscored: bool = False  # empty description; every choice scored the sentinel


# ---------------- metrics ----------------
class QueryResult(BaseModel):
    sample_id: str
    label: str
    ap: Optional[float] = None  # None when the query had no relevant item
    n_relevant: int = 0
    n_database: int = 0


class EvaluationReport(BaseModel):
    protocol: Protocol
    metric: str
    score: float = 0.0  # percentage, one decimal
    score_raw: float = 0.0  # percentage, unrounded
    per_class_ap: Dict[str, float] = Field(default_factory=dict)
    per_pair_map: Dict[str, float] = Field(default_factory=dict)
    evaluated_queries: int = 0
    skipped_queries: int = 0
    unscored: int = 0
    constrained: bool = False
    config_fingerprint: str = ""
    throughput: Optional[float] = None
    per_query: List[QueryResult] = Field(default_factory=list, exclude=True)


class Baseline(BaseModel):
    mean: float
    stderr: float = 0.0
    trials: int = 0


# ---------------- cli ----------------
class RunConfig(BaseModel):
    manifest: str
    # None: taken from the manifest.
    protocol: Optional[Protocol] = None
    strategy: Strategy = Strategy.TASK_AWARE
    dataset_key: DatasetKey = DatasetKey.SOVABENCH
    instruction: Optional[str] = None
    system_prompt: Optional[str] = None
    model_id: str = config.DEFAULT_MODEL_ID
    embedder_id: str = config.DEFAULT_EMBEDDER_ID
    fps: float = Field(default=config.DEFAULT_FPS, gt=0)
    max_frames: int = Field(default=config.DEFAULT_MAX_FRAMES, gt=0)
    max_output_tokens: int = Field(default=config.MAX_OUTPUT_TOKENS, gt=0)
    split_mode: SplitMode = SplitMode.SPLIT_MAX
    constrained: bool = False
    cache_dir: str = config.CACHE_DIR
    out_dir: str = config.OUT_DIR
    workers: int = Field(default=config.WORKERS, ge=1)
