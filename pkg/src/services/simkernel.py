"""Max-over-pairs cosine between sentence sets, similarity matrices and choice scoring."""
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Sequence

import numpy as np

from ..errors import DimensionMismatch, InconsistentInputs, InvalidManifest
from ..schemas import SENTINEL, Classification, EmbeddingSet, SimilarityMatrix

logger = logging.getLogger(__name__)

_DTYPE = np.dtype("<f4")
QUERY_BLOCK = 256


def _as_vector(v) -> np.ndarray:
    return np.asarray(v, dtype=np.float64).reshape(-1)


def cosine(a, b) -> float:
    """Dot product of two unit vectors, clamped to [-1, 1]."""
    a, b = _as_vector(a), _as_vector(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"cannot compare {a.shape[0]}-dim and {b.shape[0]}-dim vectors")
    return float(np.clip(np.dot(a, b), -1.0, 1.0))


def set_similarity(a: EmbeddingSet, b: EmbeddingSet) -> float:
    """
    Max cosine over all sentence pairs; SENTINEL if either set is empty.

    Products are formed elementwise and summed along the same axis for both argument
    orders, so the value is exactly symmetric and independent of sentence order.
    """
    if len(a) == 0 or len(b) == 0:
        return SENTINEL
    if a.dim != b.dim:
        raise DimensionMismatch(f"cannot compare {a.dim}-dim and {b.dim}-dim sets")
    x = a.vectors.astype(np.float64)
    y = b.vectors.astype(np.float64)
    dots = (x[:, None, :] * y[None, :, :]).sum(axis=-1)
    return float(np.clip(dots.max(), -1.0, 1.0))


def _stack(sets: Sequence[EmbeddingSet]):
    """Concatenated vectors of the non-empty sets, their segment starts and column indices."""
    cols = [i for i, s in enumerate(sets) if len(s)]
    if not cols:
        return None, np.zeros(0, dtype=np.int64), cols
    sizes = np.array([len(sets[i]) for i in cols])
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    return np.vstack([sets[i].vectors for i in cols]).astype(np.float32), starts, cols


def similarity_matrix(
    queries: List[EmbeddingSet], db: List[EmbeddingSet], workers: int = 1
) -> SimilarityMatrix:
    """
    values[i][j] = set_similarity(queries[i], db[j]).

    Query blocks run in parallel and write into preallocated storage. When the query and
    database id lists are identical the upper triangle is mirrored, so the result is
    exactly symmetric.
    """
    dims = {s.dim for s in list(queries) + list(db) if len(s)}
    if len(dims) > 1:
        raise DimensionMismatch(f"embedding sets disagree on dim: {sorted(dims)}")

    query_ids = [s.sample_id for s in queries]
    db_ids = [s.sample_id for s in db]
    values = np.full((len(queries), len(db)), SENTINEL, dtype=np.float32)

    d_vecs, d_starts, d_cols = _stack(db)
    q_cols = [i for i, s in enumerate(queries) if len(s)]
    if d_vecs is not None and q_cols:
        d_cols_arr = np.asarray(d_cols)
        d_t = np.ascontiguousarray(d_vecs.T)

        def run_block(block: List[int]) -> None:
            q_vecs, q_starts, _ = _stack([queries[i] for i in block])
            sims = q_vecs @ d_t
            per_db = np.maximum.reduceat(sims, d_starts, axis=1)
            per_pair = np.maximum.reduceat(per_db, q_starts, axis=0)
            values[np.ix_(block, d_cols_arr)] = np.clip(per_pair, -1.0, 1.0)

        blocks = [q_cols[i:i + QUERY_BLOCK] for i in range(0, len(q_cols), QUERY_BLOCK)]
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            list(pool.map(run_block, blocks))

    if query_ids == db_ids:
        upper = np.triu(values)
        values = upper + np.triu(values, 1).T
    logger.debug("simmatrix.done", extra={"queries": len(queries), "db": len(db)})
    return SimilarityMatrix(query_ids=query_ids, db_ids=db_ids, values=values)


def classify(description: EmbeddingSet, choices: List[EmbeddingSet]) -> Classification:
    """Choice with the highest set similarity; ties go to the lowest index."""
    if len(choices) < 2:
        raise InconsistentInputs(f"classification needs at least two choices, got {len(choices)}")
    if len(description) == 0:
        return Classification(index=0, score=SENTINEL, unscored=True)
    scores = [set_similarity(description, c) for c in choices]
    best = int(np.argmax(scores))
    return Classification(index=best, score=scores[best])


# ---------------- persistence ----------------
def save_matrix(m: SimilarityMatrix, path) -> Path:
    """One JSON header line, then row-major little-endian float32 values."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "query_ids": m.query_ids,
        "db_ids": m.db_ids,
        "rows": len(m.query_ids),
        "cols": len(m.db_ids),
        "dtype": _DTYPE.str,
        "sentinel": m.sentinel,
    }
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write((json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8"))
        f.write(np.ascontiguousarray(m.values, dtype=_DTYPE).tobytes())
    os.replace(tmp, path)
    return path


def load_matrix(path) -> SimilarityMatrix:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        body = f.read()
    rows, cols = header["rows"], header["cols"]
    if len(body) != rows * cols * _DTYPE.itemsize:
        raise InvalidManifest(f"{path}: expected {rows}x{cols} values, found {len(body)} bytes")
    values = np.frombuffer(body, dtype=np.dtype(header["dtype"])).reshape(rows, cols).astype(np.float32)
    return SimilarityMatrix(query_ids=header["query_ids"], db_ids=header["db_ids"], values=values,
                            sentinel=header.get("sentinel", SENTINEL))
