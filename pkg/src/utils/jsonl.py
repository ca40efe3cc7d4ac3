"""Line-delimited JSON records, written canonically so reruns are byte-identical."""
import json
import os
from pathlib import Path
from typing import Iterable, Iterator, List

from ..errors import InvalidRecord, MissingInput
from .hashing import canonical_json


def iter_jsonl(path) -> Iterator[dict]:
    try:
        f = open(path, "r", encoding="utf-8")
    except OSError as e:
        raise MissingInput(f"cannot read {path}: {e.strerror or e}") from e
    with f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as e:
                raise InvalidRecord(f"{path}:{lineno}: invalid JSON ({e.msg})") from e


def read_json(path):
    """One JSON document from an input file."""
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise MissingInput(f"cannot read {path}: {e.strerror or e}") from e
    try:
        return json.loads(raw)
    except json.JSONDecodeError as e:
        raise InvalidRecord(f"{path}: invalid JSON ({e.msg})") from e


def read_jsonl(path) -> List[dict]:
    return list(iter_jsonl(path))


def dumps_jsonl(records: Iterable[dict]) -> str:
    return "".join(canonical_json(r) + "\n" for r in records)


def write_jsonl(path, records: Iterable[dict]) -> Path:
    """Write atomically: a half-written artifact never carries the final name."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as f:
        f.write(dumps_jsonl(records))
    os.replace(tmp, path)
    return path


def write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    os.replace(tmp, path)
    return path
