import math

import numpy as np
import pytest

from src.errors import DimensionMismatch, InconsistentInputs
from src.schemas import SENTINEL, EmbeddingSet, SimilarityMatrix
from src.services.simkernel import (
    classify,
    cosine,
    load_matrix,
    save_matrix,
    set_similarity,
    similarity_matrix,
)


def _set(rows, sample_id=""):
    return EmbeddingSet(sample_id=sample_id, vectors=np.asarray(rows, dtype=np.float32).reshape(-1, 2)
                        if len(rows) else np.zeros((0, 2), dtype=np.float32))


def _random_set(rng, n, dim=8, sample_id=""):
    v = rng.normal(size=(n, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return EmbeddingSet(sample_id=sample_id, vectors=v.astype(np.float32).reshape(n, dim))


def _empty(sample_id="", dim=8):
    return EmbeddingSet(sample_id=sample_id, vectors=np.zeros((0, dim), dtype=np.float32))


def test_cosine_examples():
    """Dot products of unit vectors."""
    assert cosine([1, 0], [1, 0]) == 1.0
    assert cosine([1, 0], [0, 1]) == 0.0
    h = math.sqrt(2) / 2
    assert cosine([1, 0], [h, h]) == pytest.approx(0.70710678, abs=1e-8)


def test_cosine_dim_mismatch():
    """Vectors of different length cannot be compared."""
    with pytest.raises(DimensionMismatch):
        cosine([1, 0], [1, 0, 0])


def test_set_similarity_examples():
    """Max over all sentence pairs."""
    assert set_similarity(_set([[1, 0]]), _set([[1, 0]])) == 1.0
    assert set_similarity(_set([[1, 0]]), _set([[0, 1], [1, 0]])) == 1.0
    assert set_similarity(_set([[1, 0]]), _set([[0, 1], [0.6, 0.8]])) == pytest.approx(0.6, abs=1e-7)


def test_set_similarity_empty_is_sentinel():
    """Either side empty gives the sentinel."""
    assert set_similarity(_set([]), _set([[1, 0]])) == SENTINEL
    assert set_similarity(_set([[1, 0]]), _set([])) == SENTINEL


def test_set_similarity_dim_mismatch():
    """Sets of different dim raise."""
    rng = np.random.default_rng(0)
    with pytest.raises(DimensionMismatch):
        set_similarity(_random_set(rng, 2, dim=4), _random_set(rng, 2, dim=8))


def test_set_similarity_properties():
    """Symmetry, reflexivity, union monotonicity, order invariance and range on random sets."""
    rng = np.random.default_rng(42)
    for _ in range(10000):
        dim = int(rng.integers(2, 9))
        a = _random_set(rng, int(rng.integers(1, 5)), dim)
        b = _random_set(rng, int(rng.integers(1, 5)), dim)
        c = _random_set(rng, int(rng.integers(1, 4)), dim)
        s = set_similarity(a, b)

        assert s == set_similarity(b, a)
        assert -1.0 <= s <= 1.0
        assert set_similarity(a, a) == pytest.approx(1.0, abs=1e-6)

        union = EmbeddingSet(vectors=np.vstack([a.vectors, c.vectors]))
        assert set_similarity(union, b) >= s

        perm = EmbeddingSet(vectors=a.vectors[rng.permutation(len(a))])
        assert set_similarity(perm, b) == s


def test_similarity_matrix_matches_double_loop():
    """Batched matrix equals set_similarity entry by entry."""
    rng = np.random.default_rng(1)
    for case in range(200):
        n_q, n_d = int(rng.integers(1, 6)), int(rng.integers(1, 7))
        queries = [_random_set(rng, int(rng.integers(0, 4)), sample_id=f"q{i}") for i in range(n_q)]
        db = [_random_set(rng, int(rng.integers(0, 4)), sample_id=f"d{j}") for j in range(n_d)]
        m = similarity_matrix(queries, db, workers=1 + case % 3)
        assert m.values.shape == (n_q, n_d)
        for i, q in enumerate(queries):
            for j, d in enumerate(db):
                assert m.values[i, j] == pytest.approx(set_similarity(q, d), abs=1e-5)


def test_similarity_matrix_self_is_symmetric_with_unit_diagonal():
    """Queries equal to the database give a symmetric matrix with ones on the diagonal."""
    rng = np.random.default_rng(2)
    sets = [_random_set(rng, int(rng.integers(1, 5)), sample_id=f"s{i:02d}") for i in range(30)]
    m = similarity_matrix(sets, sets, workers=4)
    assert np.array_equal(m.values, m.values.T)
    assert np.allclose(np.diag(m.values), 1.0, atol=1e-6)


def test_similarity_matrix_empty_row():
    """An empty query set fills its row with the sentinel."""
    rng = np.random.default_rng(3)
    queries = [_random_set(rng, 2, sample_id="a"), _empty("b")]
    db = [_random_set(rng, 3, sample_id=f"d{j}") for j in range(4)]
    m = similarity_matrix(queries, db)
    assert np.all(m.values[1] == SENTINEL)
    assert np.all(m.values[0] >= -1.0)


def test_similarity_matrix_independent_of_workers():
    """Parallel blocks give bitwise identical values."""
    rng = np.random.default_rng(4)
    queries = [_random_set(rng, int(rng.integers(0, 4)), sample_id=f"q{i}") for i in range(600)]
    db = [_random_set(rng, int(rng.integers(0, 4)), sample_id=f"d{j}") for j in range(50)]
    one = similarity_matrix(queries, db, workers=1)
    many = similarity_matrix(queries, db, workers=4)
    assert np.array_equal(one.values, many.values)


def test_classify_examples():
    """Best choice wins; ties go to the first."""
    desc = _set([[0.6, 0.8]])
    choices = [_set([[1, 0]]), _set([[0, 1]]), _set([[0.6, 0.8]])]
    assert classify(desc, choices).index == 2
    same = [_set([[0, 1]]), _set([[0, 1]])]
    assert classify(_set([[0, 1]]), same).index == 0


def test_classify_matches_exhaustive_scoring():
    """Index of the highest set similarity over random 3-choice instances."""
    rng = np.random.default_rng(5)
    for _ in range(300):
        desc = _random_set(rng, int(rng.integers(1, 5)))
        choices = [_random_set(rng, 1) for _ in range(3)]
        scores = [set_similarity(desc, c) for c in choices]
        result = classify(desc, choices)
        assert result.index == scores.index(max(scores))
        assert result.score == max(scores)


def test_classify_empty_description():
    """No sentences: index 0, flagged as unscored."""
    result = classify(_set([]), [_set([[1, 0]]), _set([[0, 1]])])
    assert result.index == 0 and result.unscored and result.score == SENTINEL


def test_classify_needs_two_choices():
    """A single choice is not a classification."""
    with pytest.raises(InconsistentInputs):
        classify(_set([[1, 0]]), [_set([[1, 0]])])


def test_matrix_file(tmp_path):
    """Saved matrices load back with the same ids and values."""
    values = np.array([[1.0, 0.25, SENTINEL], [-0.5, 0.125, 1.0]], dtype=np.float32)
    m = SimilarityMatrix(query_ids=["a", "b"], db_ids=["a", "b", "c"], values=values)
    path = save_matrix(m, tmp_path / "m.f32")
    loaded = load_matrix(path)
    assert loaded.query_ids == ["a", "b"] and loaded.db_ids == ["a", "b", "c"]
    assert np.array_equal(loaded.values, values)
    assert loaded.sentinel == SENTINEL
