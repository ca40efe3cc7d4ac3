"""
Sentence sets to unit-norm vectors, through an embeddings endpoint and a persistent
content-addressed vector cache.
"""
import json
import logging
import os
import re
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from ..errors import CacheMismatch, DataError, DimensionMismatch
from ..schemas import DescriptionRecord, EmbeddingSet, SplitMode
from ..utils.hashing import fingerprint
from ..utils.jsonl import iter_jsonl, write_jsonl, write_text
from .endpoints import EmbedEndpoint, call_with_retry
from .textproc import split

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))))
import config

logger = logging.getLogger(__name__)

_DTYPE = np.dtype("<f4")


def cache_key(model_id: str, text: str) -> str:
    """Digest over (model_id, exact text)."""
    return fingerprint([model_id, text])


def normalize(raw) -> np.ndarray:
    """L2-normalize rows in float64, return float32."""
    v = np.asarray(raw, dtype=np.float64)
    if v.ndim != 2:
        raise DimensionMismatch(f"expected a batch of vectors, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise DataError("endpoint returned non-finite vector entries")
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise DataError("endpoint returned a zero vector")
    return (v / norms).astype(np.float32)


class VectorCache:
    """
    index.tsv (digest<TAB>byte offset) over an append-only blob of little-endian float32
    vectors, plus manifest.json recording model_id and dim.

    An index line is appended only after its vector bytes are flushed to the blob, so a
    crash leaves at worst an orphaned vector, never a dangling index entry.
    """

    def __init__(self, root, model_id: str, dim: Optional[int] = None):
        self.root = Path(root)
        self.model_id = model_id
        self.dim = dim
        self._lock = threading.Lock()
        self._vectors: Dict[str, np.ndarray] = {}
        self.root.mkdir(parents=True, exist_ok=True)
        self._index_path = self.root / "index.tsv"
        self._blob_path = self.root / "vectors.f32"
        self._manifest_path = self.root / "manifest.json"
        self._load()

    @classmethod
    def for_model(cls, cache_dir, model_id: str, dim: Optional[int] = None) -> "VectorCache":
        slug = re.sub(r"[^A-Za-z0-9._-]+", "_", model_id)
        return cls(Path(cache_dir) / "embeddings" / slug, model_id, dim)

    def _load(self) -> None:
        if self._manifest_path.exists():
            meta = json.loads(self._manifest_path.read_text(encoding="utf-8"))
            if meta.get("model_id") != self.model_id:
                raise CacheMismatch(f"{self.root} holds vectors of {meta.get('model_id')}, not {self.model_id}")
            if self.dim is not None and meta.get("dim") not in (None, self.dim):
                raise CacheMismatch(f"{self.root} holds {meta.get('dim')}-dim vectors, run expects {self.dim}")
            self.dim = meta.get("dim") or self.dim
        if not self._index_path.exists() or self.dim is None:
            return
        blob = np.fromfile(self._blob_path, dtype=_DTYPE) if self._blob_path.exists() else np.zeros(0, _DTYPE)
        row_bytes = self.dim * _DTYPE.itemsize
        with open(self._index_path, "r", encoding="utf-8") as f:
            for line in f:
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 2:
                    continue
                key, offset = parts[0], int(parts[1])
                if offset % row_bytes or (offset + row_bytes) // _DTYPE.itemsize > blob.size:
                    continue
                start = offset // _DTYPE.itemsize
                self._vectors[key] = blob[start:start + self.dim].copy()
        logger.debug("embed.cache.loaded", extra={"root": str(self.root), "vectors": len(self._vectors)})

    def __contains__(self, key: str) -> bool:
        return key in self._vectors

    def __len__(self) -> int:
        return len(self._vectors)

    def get(self, key: str) -> Optional[np.ndarray]:
        return self._vectors.get(key)

    def put_many(self, keys: Sequence[str], vectors: np.ndarray) -> None:
        vectors = np.ascontiguousarray(vectors, dtype=_DTYPE)
        if len(keys) != len(vectors):
            raise DimensionMismatch(f"{len(keys)} keys for {len(vectors)} vectors")
        if len(keys) == 0:
            return
        with self._lock:
            dim = vectors.shape[1]
            if self.dim is None:
                self.dim = dim
                write_text(self._manifest_path, json.dumps({"model_id": self.model_id, "dim": dim},
                                                           sort_keys=True) + "\n")
            elif dim != self.dim:
                raise DimensionMismatch(f"{dim}-dim vectors for a {self.dim}-dim cache")
            elif not self._manifest_path.exists():
                write_text(self._manifest_path, json.dumps({"model_id": self.model_id, "dim": dim},
                                                           sort_keys=True) + "\n")
            fresh = [(k, v) for k, v in zip(keys, vectors) if k not in self._vectors]
            if not fresh:
                return
            with open(self._blob_path, "ab") as blob:
                offset = blob.tell()
                for _, v in fresh:
                    blob.write(v.tobytes())
                blob.flush()
                os.fsync(blob.fileno())
            row_bytes = dim * _DTYPE.itemsize
            with open(self._index_path, "a", encoding="utf-8", newline="\n") as index:
                for i, (k, _) in enumerate(fresh):
                    index.write(f"{k}\t{offset + i * row_bytes}\n")
                index.flush()
            for k, v in fresh:
                self._vectors[k] = v.copy()


def _check_dim(dim: int, expected_dim: Optional[int], cache: Optional[VectorCache]) -> None:
    if expected_dim is not None and dim != expected_dim:
        raise DimensionMismatch(f"endpoint returned {dim}-dim vectors, run expects {expected_dim}")
    if cache is not None and cache.dim is not None and dim != cache.dim:
        raise DimensionMismatch(f"endpoint returned {dim}-dim vectors, cache holds {cache.dim}")


def _ensure_vectors(
    texts: Iterable[str],
    endpoint: EmbedEndpoint,
    cache: Optional[VectorCache],
    batch_size: Optional[int] = None,
    workers: int = 1,
    expected_dim: Optional[int] = None,
    retry_delay: Optional[float] = None,
    progress: bool = False,
) -> Dict[str, np.ndarray]:
    """Vectors for every text, fetching only what the cache lacks."""
    batch_size = batch_size or config.EMBED_BATCH_SIZE
    found: Dict[str, np.ndarray] = {}
    missing: Dict[str, str] = {}
    for text in texts:
        key = cache_key(endpoint.model_id, text)
        if key in found or key in missing:
            continue
        hit = cache.get(key) if cache is not None else None
        if hit is not None:
            found[key] = hit
        else:
            missing[key] = text
    if not missing:
        return found

    items = list(missing.items())
    batches = [items[i:i + batch_size] for i in range(0, len(items), batch_size)]

    def fetch(batch):
        raw = call_with_retry(endpoint.embed, [t for _, t in batch], delay=retry_delay)
        if len(raw) != len(batch):
            raise DimensionMismatch(f"asked for {len(batch)} vectors, got {len(raw)}")
        dims = {len(r) for r in raw}
        if len(dims) != 1:
            raise DimensionMismatch(f"endpoint returned mixed dims {sorted(dims)}")
        return normalize(raw)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = pool.map(fetch, batches)
        for batch, vectors in tqdm(zip(batches, results), total=len(batches), desc="embed",
                                   disable=None if progress else True):
            _check_dim(vectors.shape[1], expected_dim, cache)
            keys = [k for k, _ in batch]
            # Writes happen in batch order, so the cache files do not depend on scheduling.
            if cache is not None:
                cache.put_many(keys, vectors)
            found.update(zip(keys, vectors))
            logger.debug("embed.batch", extra={"size": len(batch)})
    return found


def _assemble(sample_id: str, model_id: str, keys: List[str], vectors: Dict[str, np.ndarray],
              dim: Optional[int]) -> EmbeddingSet:
    if not keys:
        return EmbeddingSet(sample_id=sample_id, model_id=model_id,
                            vectors=np.zeros((0, dim or 0), dtype=np.float32))
    return EmbeddingSet(sample_id=sample_id, model_id=model_id, vectors=np.stack([vectors[k] for k in keys]))


def embed_sentences(
    sentences: List[str],
    endpoint: EmbedEndpoint,
    cache: Optional[VectorCache] = None,
    sample_id: str = "",
    expected_dim: Optional[int] = None,
    retry_delay: Optional[float] = None,
) -> EmbeddingSet:
    """One unit vector per sentence, in sentence order."""
    vectors = _ensure_vectors(sentences, endpoint, cache, expected_dim=expected_dim, retry_delay=retry_delay)
    keys = [cache_key(endpoint.model_id, s) for s in sentences]
    dim = expected_dim or (cache.dim if cache is not None else None)
    return _assemble(sample_id, endpoint.model_id, keys, vectors, dim)


def embed_whole_text(
    text: str,
    endpoint: EmbedEndpoint,
    cache: Optional[VectorCache] = None,
    sample_id: str = "",
    expected_dim: Optional[int] = None,
    retry_delay: Optional[float] = None,
) -> EmbeddingSet:
    """The full response as one vector; no sentence split."""
    body = text.strip()
    return embed_sentences([body] if body else [], endpoint, cache, sample_id=sample_id,
                           expected_dim=expected_dim, retry_delay=retry_delay)


def units_for(text: str, split_mode: SplitMode) -> List[str]:
    """The strings that get embedded for one description."""
    if split_mode == SplitMode.WHOLE_TEXT:
        body = text.strip()
        return [body] if body else []
    return split(text)


def embed_corpus(
    descriptions: List[DescriptionRecord],
    endpoint: EmbedEndpoint,
    cache: VectorCache,
    split_mode: SplitMode = SplitMode.SPLIT_MAX,
    workers: int = 1,
    batch_size: Optional[int] = None,
    expected_dim: Optional[int] = None,
    retry_delay: Optional[float] = None,
) -> List[dict]:
    """
    Embed every description in sample_id order.

    Returns artifact records {sample_id, model_id, keys}; the vectors live in the cache.
    """
    ordered = sorted(descriptions, key=lambda d: d.sample_id)
    units = {d.sample_id: units_for(d.text, split_mode) for d in ordered}
    all_texts = [t for d in ordered for t in units[d.sample_id]]
    _ensure_vectors(all_texts, endpoint, cache, batch_size=batch_size, workers=workers,
                    expected_dim=expected_dim, retry_delay=retry_delay, progress=True)
    records = [
        {"sample_id": d.sample_id, "model_id": endpoint.model_id,
         "keys": [cache_key(endpoint.model_id, t) for t in units[d.sample_id]]}
        for d in ordered
    ]
    logger.info("embed.done", extra={"samples": len(records), "sentences": len(all_texts),
                                     "split_mode": split_mode.value})
    return records


def write_embeddings(path, records: Iterable[dict]) -> Path:
    return write_jsonl(path, sorted(records, key=lambda r: r["sample_id"]))


def load_embedding_sets(path, cache: VectorCache) -> Dict[str, EmbeddingSet]:
    """Re-materialize embedding sets from an embeddings artifact and its cache."""
    sets = {}
    for rec in iter_jsonl(path):
        keys = rec["keys"]
        missing = [k for k in keys if k not in cache]
        if missing:
            raise CacheMismatch(f"{rec['sample_id']}: {len(missing)} vectors missing from {cache.root}")
        sets[rec["sample_id"]] = _assemble(rec["sample_id"], rec["model_id"], keys,
                                           {k: cache.get(k) for k in keys}, cache.dim)
    return sets
