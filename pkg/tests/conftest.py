import base64
import threading

import pytest

from src.schemas import Frame, MediaInput, MediaKind, Role, SampleRecord
from src.services.manifest import (
    build_inter_pair_manifest,
    build_intra_pair_manifest,
    synthesize_intra_queries,
    write_manifest,
)
from src.services.stub import stub_completion, stub_embedding


class StubChat:
    """Deterministic chat endpoint that counts its calls."""

    def __init__(self, model_id="mock-mllm", reply=None):
        self.model_id = model_id
        self.reply = reply
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, messages, max_tokens):
        with self._lock:
            self.calls += 1
        return self.reply if self.reply is not None else stub_completion(messages)


class ScriptedChat:
    """Plays back a script of replies and exceptions, one per call."""

    def __init__(self, script, model_id="scripted-mllm"):
        self.model_id = model_id
        self.script = list(script)
        self.calls = 0

    def complete(self, messages, max_tokens):
        self.calls += 1
        step = self.script.pop(0)
        if isinstance(step, Exception):
            raise step
        return step


class LookupChat:
    """Answers with the text registered for the frame bytes it is shown."""

    def __init__(self, answers, model_id="lookup-mllm"):
        self.model_id = model_id
        self.answers = answers
        self.calls = 0

    def complete(self, messages, max_tokens):
        self.calls += 1
        user = messages[-1]["content"]
        url = next(p["image_url"]["url"] for p in user if p["type"] == "image_url")
        key = base64.b64decode(url.split(",", 1)[1]).decode("utf-8")
        return self.answers[key]


class HashEmbed:
    """Hashed bag-of-words encoder that counts calls and texts."""

    def __init__(self, model_id="mock-encoder", dim=64):
        self.model_id = model_id
        self.dim = dim
        self.calls = 0
        self.texts = []
        self._lock = threading.Lock()

    def embed(self, texts):
        with self._lock:
            self.calls += 1
            self.texts.extend(texts)
        return [stub_embedding(t, self.dim) for t in texts]


class OneHotEmbed:
    """Every distinct text gets its own basis vector."""

    def __init__(self, model_id="onehot-encoder", dim=64):
        self.model_id = model_id
        self.dim = dim
        self.index = {}
        self.calls = 0

    def embed(self, texts):
        self.calls += 1
        out = []
        for t in texts:
            i = self.index.setdefault(t, len(self.index))
            vec = [0.0] * self.dim
            vec[i] = 1.0
            out.append(vec)
        return out


class TableEmbed:
    """Returns the raw vector registered for each text."""

    def __init__(self, table, model_id="table-encoder"):
        self.model_id = model_id
        self.table = table
        self.calls = 0

    def embed(self, texts):
        self.calls += 1
        return [list(self.table[t]) for t in texts]


def fake_media(sample):
    """One frame whose bytes are the sample id."""
    return MediaInput(kind=MediaKind.IMAGE, frames=[Frame(timestamp=0.0, data=sample.sample_id.encode("utf-8"))])


def frozen_clock():
    return 0.0


@pytest.fixture
def intra_manifest_path(tmp_path):
    queries = synthesize_intra_queries({
        "Open trunk": 4, "Close trunk": 3,
        "Turn left": 3, "Turn right": 4,
        "Start": 3, "Stop": 3,
    })
    path = tmp_path / "data" / "intra.jsonl"
    write_manifest(build_intra_pair_manifest(queries), path)
    return path


@pytest.fixture
def inter_manifest_path(tmp_path):
    queries = synthesize_intra_queries({
        "Open trunk": 3, "Close trunk": 2, "Enter vehicle": 3, "Exit vehicle": 2,
    })
    distractors = [
        SampleRecord(sample_id=f"walk_{i:02d}", media=f"synthetic://walk/{i:02d}", role=Role.DISTRACTOR)
        for i in range(4)
    ]
    path = tmp_path / "data" / "inter.jsonl"
    write_manifest(build_inter_pair_manifest(queries, distractors), path)
    return path

