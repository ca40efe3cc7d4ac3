import os
from pathlib import Path

import pytest

from src.schemas import Role
from src.services.manifest import (
    build_inter_pair_manifest,
    build_intra_pair_manifest,
    ingest,
    manifest_stats,
    read_annotations,
)

ANNOTATIONS = os.getenv("MAXSIM_SOVABENCH_ANNOTATIONS")

pytestmark = [
    pytest.mark.integration,
    pytest.mark.skipif(not ANNOTATIONS, reason="MAXSIM_SOVABENCH_ANNOTATIONS not set"),
]


def _load(name, role=Role.QUERY):
    return ingest(read_annotations(Path(ANNOTATIONS) / name), role)


def test_inter_pair_counts():
    """The licensed annotations rebuild the published inter-pair benchmark."""
    m = build_inter_pair_manifest(_load("inter_queries.jsonl"), _load("distractors.jsonl", Role.DISTRACTOR))
    assert len(m.queries) == 1423
    assert len(m.samples) == 9882


def test_intra_pair_counts():
    """The licensed annotations rebuild the published intra-pair benchmark."""
    stats = manifest_stats(build_intra_pair_manifest(_load("intra_queries.jsonl")))
    assert stats.queries == 2300
    assert stats.classes == 14
    assert stats.per_class["Open vehicle door"] == 303
