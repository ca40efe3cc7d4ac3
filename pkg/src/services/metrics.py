"""
Ranking and retrieval metrics: uninterpolated AP, inter-pair mAP, intra-pair Pair-mAP,
classification accuracy and random baselines (simulated and exact).
"""
import logging
import math
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from ..errors import InconsistentInputs, UndefinedAP
from ..schemas import (
    SENTINEL,
    Baseline,
    BenchmarkManifest,
    Classification,
    EvaluationReport,
    Protocol,
    QueryResult,
    Role,
    SimilarityMatrix,
)
from ..utils.hashing import canonical_json
from ..utils.jsonl import write_text

logger = logging.getLogger(__name__)


class RelevanceSpec(BaseModel):
    """
    Per-query relevance: each query ranks the ids of its pool minus itself; items whose
    label equals the query's label are relevant. Distractors carry the empty label.
    """
    protocol: Protocol
    query_ids: List[str] = Field(default_factory=list)
    query_labels: List[str] = Field(default_factory=list)
    query_groups: List[str] = Field(default_factory=list)
    query_pools: List[str] = Field(default_factory=list)
    pools: Dict[str, List[str]] = Field(default_factory=dict)
    labels: Dict[str, str] = Field(default_factory=dict)


def relevance_spec(m: BenchmarkManifest, protocol: Optional[Protocol] = None,
                   constrained: Optional[bool] = None) -> RelevanceSpec:
    protocol = protocol or m.protocol
    constrained = m.constrained if constrained is None else constrained
    queries = sorted((q for q in m.queries if q.action is not None), key=lambda q: q.sample_id)

    if protocol == Protocol.INTER_PAIR:
        pool = [s.sample_id for s in (queries if constrained else m.samples)]
        labels = {s.sample_id: (s.action.pair_id if s.action and s.role == Role.QUERY else "")
                  for s in m.samples}
        return RelevanceSpec(
            protocol=protocol,
            query_ids=[q.sample_id for q in queries],
            query_labels=[q.action.pair_id for q in queries],
            query_groups=[q.action.pair_id for q in queries],
            query_pools=["all"] * len(queries),
            pools={"all": pool},
            labels=labels,
        )
    if protocol == Protocol.INTRA_PAIR:
        pools: Dict[str, List[str]] = {}
        for q in queries:
            pools.setdefault(q.action.pair_id, []).append(q.sample_id)
        return RelevanceSpec(
            protocol=protocol,
            query_ids=[q.sample_id for q in queries],
            query_labels=[q.action.name for q in queries],
            query_groups=[q.action.pair_id for q in queries],
            query_pools=[q.action.pair_id for q in queries],
            pools=pools,
            labels={q.sample_id: q.action.name for q in queries},
        )
    raise InconsistentInputs(f"no retrieval relevance for protocol {protocol.value}")


# ---------------- ranking ----------------
def _id_ranks(ids: Sequence[str]) -> np.ndarray:
    order = sorted(range(len(ids)), key=lambda i: ids[i])
    ranks = np.empty(len(ids), dtype=np.int64)
    ranks[order] = np.arange(len(ids))
    return ranks


def _order(scores: np.ndarray, id_ranks: np.ndarray, sentinel: float) -> np.ndarray:
    # lexsort: last key is primary -> sentinel last, then descending score, then ascending id
    scores = np.asarray(scores, dtype=np.float64)
    return np.lexsort((id_ranks, -scores, scores == sentinel))


def rank(query_row, db_ids: Sequence[str], sentinel: float = SENTINEL) -> List[str]:
    """Database ids by descending similarity; ties by ascending id; sentinel entries last."""
    row = np.asarray(query_row)
    if row.shape[0] != len(db_ids):
        raise InconsistentInputs(f"row of length {row.shape[0]} for {len(db_ids)} database ids")
    return [db_ids[i] for i in _order(row, _id_ranks(db_ids), sentinel)]


def _ap_from_hits(hits: np.ndarray) -> Optional[float]:
    positions = np.flatnonzero(hits) + 1
    r = positions.size
    if r == 0:
        return None
    return float(np.sum(np.arange(1, r + 1) / positions) / r)


def average_precision(ranking: Sequence[str], relevant_ids: Iterable[str]) -> float:
    """(1/R) * sum over relevant ranks k of precision@k."""
    relevant = set(relevant_ids)
    if not relevant:
        raise UndefinedAP("no relevant item")
    hits = np.fromiter((i in relevant for i in ranking), dtype=bool, count=len(ranking))
    if hits.sum() != len(relevant):
        raise InconsistentInputs("relevant ids missing from the ranking")
    return _ap_from_hits(hits)


def expected_random_ap(n: int, r: int) -> float:
    """Exact E[AP] when n items with r relevant are uniformly shuffled."""
    if r < 1 or n < r:
        raise UndefinedAP(f"need 1 <= r <= n, got n={n}, r={r}")
    if n == 1:
        return 1.0
    h = math.fsum(1.0 / k for k in range(1, n + 1))
    return h / n + (r - 1) * (n - h) / (n * (n - 1))


# ---------------- retrieval protocols ----------------
def _score_queries(spec: RelevanceSpec, matrix: SimilarityMatrix) -> List[QueryResult]:
    row_of = {q: i for i, q in enumerate(matrix.query_ids)}
    col_of = {d: j for j, d in enumerate(matrix.db_ids)}
    missing_rows = [q for q in spec.query_ids if q not in row_of]
    if missing_rows:
        raise InconsistentInputs(f"matrix lacks rows for queries {missing_rows[:5]}")
    id_ranks = _id_ranks(matrix.db_ids)

    pool_cols, pool_labels = {}, {}
    for name, ids in spec.pools.items():
        missing = [i for i in ids if i not in col_of]
        if missing:
            raise InconsistentInputs(f"matrix lacks columns for {missing[:5]}")
        pool_cols[name] = np.array([col_of[i] for i in ids], dtype=np.int64)
        pool_labels[name] = np.array([spec.labels.get(i, "") for i in ids], dtype=object)

    results = []
    for qid, label, pool in zip(spec.query_ids, spec.query_labels, spec.query_pools):
        cols, labels = pool_cols[pool], pool_labels[pool]
        keep = cols != col_of.get(qid, -1)
        cols, hits_by_col = cols[keep], labels[keep] == label
        order = _order(matrix.values[row_of[qid], cols], id_ranks[cols], matrix.sentinel)
        hits = hits_by_col[order].astype(bool)
        results.append(QueryResult(sample_id=qid, label=label, ap=_ap_from_hits(hits),
                                   n_relevant=int(hits.sum()), n_database=int(cols.size)))
    return results


def _mean_pct(values: List[float]) -> float:
    return 100.0 * math.fsum(values) / len(values) if values else 0.0


def _report(spec: RelevanceSpec, results: List[QueryResult], constrained: bool) -> EvaluationReport:
    scored = [(r, g) for r, g in zip(results, spec.query_groups) if r.ap is not None]
    skipped = len(results) - len(scored)
    if skipped:
        logger.warning("metrics.skipped", extra={"queries": skipped, "reason": "no relevant item"})

    by_label: Dict[str, List[float]] = {}
    by_group: Dict[str, List[float]] = {}
    for r, g in scored:
        by_label.setdefault(r.label, []).append(r.ap)
        by_group.setdefault(g, []).append(r.ap)
    per_class = {k: _mean_pct(v) for k, v in sorted(by_label.items())}

    if spec.protocol == Protocol.INTRA_PAIR:
        per_pair = {k: _mean_pct(v) for k, v in sorted(by_group.items())}
        raw = math.fsum(per_pair.values()) / len(per_pair) if per_pair else 0.0
        metric = "Pair-mAP"
    else:
        per_pair = {}
        raw = _mean_pct([r.ap for r, _ in scored])
        metric = "mAP"
    return EvaluationReport(
        protocol=spec.protocol,
        metric=metric,
        score=round(raw, 1),
        score_raw=raw,
        per_class_ap=per_class,
        per_pair_map=per_pair,
        evaluated_queries=len(scored),
        skipped_queries=skipped,
        constrained=constrained,
        per_query=results,
    )


def inter_pair_map(m: BenchmarkManifest, matrix: SimilarityMatrix,
                   constrained: Optional[bool] = None) -> EvaluationReport:
    """One-versus-all mAP over unified pair classes; each query's database excludes itself."""
    constrained = m.constrained if constrained is None else constrained
    spec = relevance_spec(m, Protocol.INTER_PAIR, constrained)
    return _report(spec, _score_queries(spec, matrix), constrained)


def pair_map(m: BenchmarkManifest, matrix: SimilarityMatrix) -> EvaluationReport:
    """Mean over opposite pairs of the mAP of binary retrieval within each pair."""
    spec = relevance_spec(m, Protocol.INTRA_PAIR)
    return _report(spec, _score_queries(spec, matrix), True)


# ---------------- classification ----------------
def accuracy(predictions: Sequence[int], gold: Sequence[int]) -> float:
    """Percentage of exact matches, one decimal."""
    if len(predictions) != len(gold):
        raise InconsistentInputs(f"{len(predictions)} predictions for {len(gold)} gold labels")
    if not gold:
        raise InconsistentInputs("accuracy of an empty set")
    hits = sum(int(p == g) for p, g in zip(predictions, gold))
    return round(100.0 * hits / len(gold), 1)


def classification_report(m: BenchmarkManifest, predictions: Dict[str, Classification]) -> EvaluationReport:
    ids = sorted(m.choices)
    missing = [i for i in ids if i not in predictions]
    if missing:
        raise InconsistentInputs(f"no prediction for {missing[:5]}")
    preds = [predictions[i].index for i in ids]
    gold = [m.choices[i].correct for i in ids]
    per_query = [QueryResult(sample_id=i, label=str(g), ap=float(p == g), n_relevant=1,
                             n_database=len(m.choices[i].sentences))
                 for i, p, g in zip(ids, preds, gold)]
    raw = 100.0 * sum(int(p == g) for p, g in zip(preds, gold)) / len(gold)
    return EvaluationReport(
        protocol=Protocol.CLASSIFICATION,
        metric="accuracy",
        score=accuracy(preds, gold),
        score_raw=raw,
        evaluated_queries=len(ids),
        unscored=sum(int(predictions[i].unscored) for i in ids),
        constrained=True,
        per_query=per_query,
    )


# ---------------- baselines ----------------
def _random_matrix(spec: RelevanceSpec, rng: np.random.Generator) -> SimilarityMatrix:
    db_ids = sorted({i for ids in spec.pools.values() for i in ids})
    values = rng.random((len(spec.query_ids), len(db_ids)))
    return SimilarityMatrix(query_ids=list(spec.query_ids), db_ids=db_ids, values=values)


def random_baseline(
    m: BenchmarkManifest,
    protocol: Optional[Protocol] = None,
    trials: int = 50,
    seed: int = 0,
    constrained: Optional[bool] = None,
) -> Baseline:
    """Monte-Carlo mean (and standard error) of the protocol metric under i.i.d. uniform scores."""
    if trials < 1:
        raise InconsistentInputs("trials must be >= 1")
    protocol = protocol or m.protocol
    rng = np.random.default_rng(seed)
    scores = []
    if protocol == Protocol.CLASSIFICATION:
        ids = sorted(m.choices)
        for _ in range(trials):
            picks = [int(np.argmax(rng.random(len(m.choices[i].sentences)))) for i in ids]
            scores.append(100.0 * np.mean([p == m.choices[i].correct for p, i in zip(picks, ids)]))
    else:
        constrained = m.constrained if constrained is None else constrained
        spec = relevance_spec(m, protocol, constrained)
        for _ in range(trials):
            scores.append(_report(spec, _score_queries(spec, _random_matrix(spec, rng)), constrained).score_raw)
    mean = float(np.mean(scores))
    stderr = float(np.std(scores, ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    logger.info("metrics.random_baseline", extra={"protocol": protocol.value, "trials": trials,
                                                  "mean": mean, "stderr": stderr})
    return Baseline(mean=mean, stderr=stderr, trials=trials)


def analytic_baseline(
    m: BenchmarkManifest,
    protocol: Optional[Protocol] = None,
    constrained: Optional[bool] = None,
    kind: str = "expected_ap",
) -> float:
    """
    Closed-form random baseline, in percent.

    kind="expected_ap": exact expectation of what random_baseline simulates.
    kind="prevalence": per query, the share of its own class in its pool, the query included.
    Both are aggregated the way the protocol aggregates AP.
    """
    if kind not in ("expected_ap", "prevalence"):
        raise ValueError(f"unknown baseline kind: {kind}")
    protocol = protocol or m.protocol
    if protocol == Protocol.CLASSIFICATION:
        return 100.0 * float(np.mean([1.0 / len(c.sentences) for c in m.choices.values()]))
    constrained = m.constrained if constrained is None else constrained
    spec = relevance_spec(m, protocol, constrained)

    results = []
    for qid, label, pool in zip(spec.query_ids, spec.query_labels, spec.query_pools):
        db = [i for i in spec.pools[pool] if i != qid]
        r = sum(1 for i in db if spec.labels.get(i, "") == label)
        value = None
        if r:
            value = expected_random_ap(len(db), r) if kind == "expected_ap" else (r + 1) / (len(db) + 1)
        results.append(QueryResult(sample_id=qid, label=label, ap=value, n_relevant=r, n_database=len(db)))
    return _report(spec, results, constrained).score_raw


# ---------------- report files ----------------
def report_to_dict(report: EvaluationReport) -> dict:
    return report.model_dump(mode="json")


def write_report(report: EvaluationReport, path) -> Path:
    """Report JSON at `path` and per-query rows at the same stem with a .csv suffix."""
    path = Path(path)
    write_text(path, canonical_json(report_to_dict(report)) + "\n")
    frame = pd.DataFrame(
        [q.model_dump() for q in report.per_query],
        columns=["sample_id", "label", "ap", "n_relevant", "n_database"],
    )
    csv_path = path.with_suffix(".csv")
    write_text(csv_path, frame.to_csv(index=False, float_format="%.10f", lineterminator="\n"))
    return path
