import json
import random

import pytest

from src.errors import (
    ConfigError,
    DistractorNotAllowed,
    DuplicateOutput,
    ExcludedPair,
    IncompleteSpec,
    InvalidManifest,
    InvalidRecord,
    MissingGeometry,
    MissingInput,
    UnknownActionLabel,
)
from src.schemas import ActivityAnnotation, ActorTrack, Box, Protocol, Role, SampleRecord, TrackBox
from src.services.manifest import (
    build_inter_pair_manifest,
    build_intra_pair_manifest,
    compute_clip_spec,
    dumps_manifest,
    emit_extraction_plan,
    ingest,
    manifest_stats,
    read_annotations,
    read_manifest,
    read_plan,
    synthesize_intra_queries,
    write_manifest,
    write_plan,
)
from src.services.taxonomy import ACTIONS, INTRA_PAIR_COUNTS, PAIRS, resolve_action


def _annotation(boxes_by_actor, start=0, end=100, label="Open trunk", **kwargs):
    actors = [
        ActorTrack(actor_id=f"a{i}", boxes=[TrackBox(frame=f, box=Box(x0=b[0], y0=b[1], x1=b[2], y1=b[3]))
                                            for f, b in boxes])
        for i, boxes in enumerate(boxes_by_actor)
    ]
    return ActivityAnnotation(activity_id=kwargs.pop("activity_id", "act1"), action_label=label,
                              start_frame=start, end_frame=end, actors=actors, **kwargs)


def _q(sample_id, action, **kwargs):
    return SampleRecord(sample_id=sample_id, media=kwargs.pop("media", "scene.mp4"), action=ACTIONS[action], **kwargs)


def _d(sample_id):
    return SampleRecord(sample_id=sample_id, media="scene.mp4", role=Role.DISTRACTOR)


# ---------------- taxonomy ----------------
def test_taxonomy_shape():
    """Seven pairs, fourteen actions, opposite polarities."""
    assert len(PAIRS) == 7
    assert len(ACTIONS) == 14
    for pair_id in PAIRS:
        polarities = sorted(a.polarity.value for a in ACTIONS.values() if a.pair_id == pair_id)
        assert polarities == ["FIRST", "SECOND"]


def test_resolve_action_aliases():
    """Source activity names map onto the closed vocabulary."""
    assert resolve_action("person_opens_trunk").name == "Open trunk"
    assert resolve_action("  turn  LEFT ").name == "Turn left"
    assert resolve_action("vehicle_turning_right").name == "Turn right"
    with pytest.raises(UnknownActionLabel):
        resolve_action("person_rides_bicycle")


# ---------------- clip specs ----------------
def test_clip_spec_single_box():
    """One box is its own union."""
    s = compute_clip_spec(_annotation([[(0, (10, 10, 20, 30))]]), 30.0, pad_ratio=0.0)
    assert s.crop.as_list() == [10, 10, 20, 30]


def test_clip_spec_union_of_actors():
    """Coordinate-wise min and max over all actors."""
    a = _annotation([[(0, (0, 0, 10, 10))], [(5, (5, 5, 20, 20))]])
    assert compute_clip_spec(a, 30.0, pad_ratio=0.0).crop.as_list() == [0, 0, 20, 20]


def test_clip_spec_span():
    """Frames 60 to 210 of a 30 fps source."""
    s = compute_clip_spec(_annotation([[(100, (0, 0, 10, 10))]], start=60, end=210), 30.0)
    assert s.span == (2.0, 7.0)
    assert s.kind.value == "VIDEO"


def test_clip_spec_padding_and_clamping():
    """Five percent per side, rounded outward, clamped to the frame."""
    a = _annotation([[(0, (2, 10, 102, 60))]], frame_width=100, frame_height=200)
    s = compute_clip_spec(a, 30.0, pad_ratio=0.05)
    # pad is 5.0 horizontally and 2.5 vertically
    assert s.crop.as_list() == [0, 7, 100, 63]


def test_clip_spec_ignores_boxes_outside_span():
    """Only boxes inside the activity frames count."""
    a = _annotation([[(10, (0, 0, 5, 5)), (50, (40, 40, 50, 50)), (500, (0, 0, 300, 300))]], start=20, end=100)
    assert compute_clip_spec(a, 30.0, pad_ratio=0.0).crop.as_list() == [40, 40, 50, 50]


def test_clip_spec_without_boxes():
    """No geometry inside the span."""
    a = _annotation([[(500, (0, 0, 5, 5))]], start=0, end=100)
    with pytest.raises(MissingGeometry):
        compute_clip_spec(a, 30.0)


def test_union_box_property():
    """Random box sets: the crop contains every box and equals the min/max union."""
    rng = random.Random(0)
    for _ in range(300):
        actors = []
        for _ in range(rng.randint(1, 4)):
            boxes = []
            for f in sorted(rng.sample(range(100), rng.randint(1, 5))):
                x0, y0 = rng.uniform(0, 500), rng.uniform(0, 500)
                boxes.append((f, (x0, y0, x0 + rng.uniform(1, 200), y0 + rng.uniform(1, 200))))
            actors.append(boxes)
        crop = compute_clip_spec(_annotation(actors, start=0, end=100), 25.0, pad_ratio=0.0).crop
        flat = [b for boxes in actors for _, b in boxes]
        assert crop.x0 == int(min(b[0] for b in flat)) and crop.y0 == int(min(b[1] for b in flat))
        assert crop.x1 >= max(b[2] for b in flat) > crop.x1 - 1
        assert crop.y1 >= max(b[3] for b in flat) > crop.y1 - 1
        assert all(crop.x0 <= b[0] and crop.y0 <= b[1] and b[2] <= crop.x1 and b[3] <= crop.y1 for b in flat)


def test_ingest_uses_record_fps(tmp_path):
    """Per-record fps wins; records without fps need a fallback."""
    path = tmp_path / "ann.jsonl"
    rows = [
        {"activity_id": "v1", "source": "VIRAT", "action_label": "opening_trunk", "start_frame": 30,
         "end_frame": 90, "fps": 30, "scene_id": "s1.mp4", "actors": [{"actor_id": "p", "boxes": [[40, 1, 2, 3, 4]]}]},
        {"activity_id": "m1", "source": "MEVA", "action_label": "vehicle_stops", "start_frame": 10,
         "end_frame": 20, "scene_id": "s2.mp4", "actors": [{"actor_id": "c", "boxes": [[15, 0, 0, 8, 8]]}]},
    ]
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    annotations = read_annotations(path)
    samples = ingest(annotations, fps=10.0)
    assert [s.span for s in samples] == [(1.0, 3.0), (1.0, 2.0)]
    assert [s.action.name for s in samples] == ["Open trunk", "Stop"]
    with pytest.raises(ConfigError):
        ingest(annotations)


def test_bad_annotation_line(tmp_path):
    """Invalid records name the offending line."""
    path = tmp_path / "ann.jsonl"
    path.write_text(json.dumps({"activity_id": "x", "action_label": "Stop", "start_frame": 5,
                                "end_frame": 1, "actors": []}) + "\n")
    with pytest.raises(InvalidManifest, match=":1:"):
        read_annotations(path)


def test_unreadable_annotations(tmp_path):
    """A missing file is a config error; a broken line is a data error naming the line."""
    with pytest.raises(MissingInput):
        read_annotations(tmp_path / "missing.jsonl")
    path = tmp_path / "ann.jsonl"
    path.write_text("\n{not json\n")
    with pytest.raises(InvalidRecord, match=":2:"):
        read_annotations(path)
    assert issubclass(MissingInput, ConfigError)


# ---------------- builders ----------------
def test_inter_pair_builder():
    """Three queries of two pairs plus a distractor: four samples, two unified classes."""
    m = build_inter_pair_manifest(
        [_q("q1", "Open trunk"), _q("q2", "Close trunk"), _q("q3", "Start")], [_d("d1")]
    )
    stats = manifest_stats(m)
    assert stats.total_samples == 4
    assert stats.pairs == 2
    assert not m.constrained


def test_inter_pair_without_distractors_is_constrained():
    """Queries only."""
    m = build_inter_pair_manifest([_q("q1", "Open trunk"), _q("q2", "Close trunk")], [])
    assert m.constrained
    assert m.distractors == []


def test_inter_pair_excludes_drive_reverse():
    """Drive forward / Reverse cannot enter the inter-pair benchmark."""
    with pytest.raises(ExcludedPair):
        build_inter_pair_manifest([_q("q1", "Reverse")], [])


def test_intra_pair_rejects_distractors():
    """Intra-pair sets hold queries only."""
    with pytest.raises(DistractorNotAllowed):
        build_intra_pair_manifest([_q("q1", "Start"), _d("d1")])


def test_duplicate_ids_rejected():
    """Sample ids are unique."""
    with pytest.raises(InvalidManifest):
        build_intra_pair_manifest([_q("q1", "Start"), _q("q1", "Stop")])


def test_degenerate_pair_builds():
    """One sample per action still builds."""
    m = build_intra_pair_manifest([_q("q1", "Start"), _q("q2", "Stop")])
    assert len(m.queries) == 2


def test_published_intra_counts():
    """Rebuilding from the published class counts gives 2,300 queries over 14 classes and 7 pairs."""
    m = build_intra_pair_manifest(synthesize_intra_queries(INTRA_PAIR_COUNTS))
    stats = manifest_stats(m)
    assert stats.queries == 2300 == stats.total_samples
    assert stats.classes == 14
    assert stats.pairs == 7
    assert stats.per_class["Open vehicle door"] == 303
    assert stats.per_class["Close vehicle door"] == 301
    assert stats.per_class["Load vehicle"] == 54
    assert stats.per_class["Unload vehicle"] == 61
    assert stats.per_pair["open_close_vehicle_door"] == 604


# ---------------- stats ----------------
def test_empty_manifest_stats():
    """All zeros."""
    m = build_inter_pair_manifest([], [])
    stats = manifest_stats(m)
    assert stats.total_samples == stats.queries == stats.distractors == 0
    assert sum(stats.duration_histogram.values()) == 0
    assert stats.per_class == {}


def test_stats_match_a_plain_tally():
    """Ten random samples counted independently."""
    rng = random.Random(1)
    names = [n for n, a in ACTIONS.items() if a.pair_id != "drive_reverse"]
    queries = []
    for i in range(7):
        start = rng.uniform(0, 50)
        side = rng.choice([30, 100, 300, 700, 1500])
        queries.append(_q(f"q{i}", rng.choice(names), span=(start, start + rng.uniform(0.2, 14)),
                          crop=Box(x0=0, y0=0, x1=side, y1=side / 2)))
    distractors = [_d(f"d{i}") for i in range(3)]
    stats = manifest_stats(build_inter_pair_manifest(queries, distractors))

    tally = {}
    for q in queries:
        tally[q.action.name] = tally.get(q.action.name, 0) + 1
    assert stats.per_class == dict(sorted(tally.items()))
    assert stats.queries == 7 and stats.distractors == 3
    assert stats.duration_histogram["unknown"] == 3
    assert stats.resolution_histogram["uncropped"] == 3
    assert sum(stats.duration_histogram.values()) == 10
    assert sum(stats.resolution_histogram.values()) == 10


# ---------------- extraction plan ----------------
def _clip(sample_id, media, crop=(0, 0, 10, 10), span=(0.0, 1.0)):
    return _q(sample_id, "Open trunk", media=media, crop=Box(x0=crop[0], y0=crop[1], x1=crop[2], y1=crop[3]),
              span=span)


def test_plan_single_row(tmp_path):
    """One clip gives one row with its crop and span."""
    m = build_intra_pair_manifest([_clip("c1", "src/a.mp4", crop=(4, 5, 60, 70), span=(1.5, 4.0))])
    plan = emit_extraction_plan(m, tmp_path / "clips")
    assert len(plan.rows) == 1
    row = plan.rows[0]
    assert row.source == "src/a.mp4" and row.crop == [4, 5, 60, 70] and row.span == (1.5, 4.0)


def test_plan_groups_by_source(tmp_path):
    """Rows come out grouped by source file and survive a write/read."""
    m = build_intra_pair_manifest([_clip("c1", "b.mp4"), _clip("c2", "a.mp4"), _clip("c3", "b.mp4")])
    plan = emit_extraction_plan(m, tmp_path / "clips")
    assert [r.source for r in plan.rows] == ["a.mp4", "b.mp4", "b.mp4"]
    write_plan(plan, tmp_path / "plan.jsonl")
    assert read_plan(tmp_path / "plan.jsonl") == plan


def test_plan_needs_crop_and_span(tmp_path):
    """Video samples without geometry cannot be extracted."""
    m = build_intra_pair_manifest([_q("c1", "Start")])
    with pytest.raises(IncompleteSpec):
        emit_extraction_plan(m, tmp_path)


def test_plan_duplicate_outputs(tmp_path):
    """Two ids that sanitize to the same file name collide."""
    m = build_intra_pair_manifest([_clip("a/b", "x.mp4"), _clip("a b", "x.mp4")])
    with pytest.raises(DuplicateOutput):
        emit_extraction_plan(m, tmp_path)


# ---------------- files ----------------
def test_manifest_file_is_stable(tmp_path):
    """Written manifests read back to the same canonical text."""
    queries = [_clip("c1", "a.mp4", crop=(1, 2, 30.5, 40), span=(0.5, 2.25)), _q("c2", "Close trunk")]
    m = build_inter_pair_manifest(queries, [_d("d1")])
    path = write_manifest(m, tmp_path / "m.jsonl")
    loaded = read_manifest(path)
    assert loaded.protocol == Protocol.INTER_PAIR
    assert dumps_manifest(loaded) == dumps_manifest(m)
    first = json.loads(path.read_text().splitlines()[0])
    assert set(first) == {"sample_id", "kind", "media", "class", "pair_id", "role", "crop", "span"}


def test_read_manifest_missing(tmp_path):
    """A missing manifest is a configuration error."""
    with pytest.raises(ConfigError):
        read_manifest(tmp_path / "none.jsonl")
