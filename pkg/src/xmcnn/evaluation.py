"""Cross-modal retrieval evaluation and the k-fold protocol."""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .data import Dataset, make_folds
from .metrics import (
    average_precision,
    break_even_point,
    precision_at,
    rank,
    relevance_in_order,
)
from .objective import Hyperparams, ModelParams
from .relevance import relevance_from_labels
from .solver import SolverConfig, TrainingData, embed_samples, solve

logger = logging.getLogger(__name__)


@dataclass
class QueryResult:
    direction: str
    query: int
    n_relevant: int
    precision: Dict[int, float]
    map_database: float
    map_standard: float
    beprp: Optional[float]


@dataclass
class DirectionSummary:
    direction: str
    n_queries: int = 0
    n_undefined: int = 0
    precision: Dict[int, float] = field(default_factory=dict)
    map_database: float = 0.0
    map_standard: float = 0.0
    beprp: float = 0.0


def retrieve(query_emb, query_cls, db_emb, db_cls, k_list, direction, query_ids=None):
    """Per-query metrics for one query set against one database.

    Relevance is class equality. Queries without any relevant database item
    get ``n_relevant == 0`` and no mAP/BEPRP contribution.
    """
    query_ids = range(len(query_emb)) if query_ids is None else query_ids
    db_cls = np.asarray(db_cls)
    results = []
    for qid, q, c in zip(query_ids, query_emb, query_cls):
        ranked = rank(q, db_emb, qid)
        judg = db_cls == c
        delta = relevance_in_order(ranked, judg)
        n_rel = int(delta.sum())
        prec = {k: precision_at(ranked, judg, k) for k in k_list if k <= len(ranked)}
        if n_rel:
            results.append(QueryResult(direction, int(qid), n_rel, prec,
                                       average_precision(delta), average_precision(delta, True),
                                       break_even_point(ranked, judg)))
        else:
            results.append(QueryResult(direction, int(qid), 0, prec, float("nan"), float("nan"), None))
    return results


def summarize(direction, results: List[QueryResult]) -> DirectionSummary:
    out = DirectionSummary(direction, len(results))
    defined = [r for r in results if r.n_relevant]
    out.n_undefined = len(results) - len(defined)
    ks = sorted({k for r in results for k in r.precision})
    out.precision = {k: float(np.mean([r.precision[k] for r in results if k in r.precision])) for k in ks}
    if defined:
        out.map_database = float(np.mean([r.map_database for r in defined]))
        out.map_standard = float(np.mean([r.map_standard for r in defined]))
        out.beprp = float(np.mean([r.beprp for r in defined]))
    return out


def cross_modal_results(emb, modalities, classes, k_list=(1, 5), query_mask=None, ids=None):
    """Run every ordered modality pair ``a -> b``.

    With ``query_mask`` given, masked-in rows are queries and the rest form the
    database; otherwise every row serves as a query against the other
    modality's rows.
    """
    emb = np.asarray(emb)
    modalities = np.asarray(modalities)
    classes = np.asarray(classes)
    ids = np.arange(len(emb)) if ids is None else np.asarray(ids)
    if query_mask is None:
        qmask = np.ones(len(emb), bool)
        dmask = np.ones(len(emb), bool)
    else:
        qmask = np.asarray(query_mask, bool)
        dmask = ~qmask
    results = {}
    mods = sorted(set(modalities.tolist()))
    for a in mods:
        for b in mods:
            if a == b:
                continue
            qa = qmask & (modalities == a)
            db = dmask & (modalities == b)
            if not qa.any() or not db.any():
                continue
            key = f"{a}->{b}"
            results[key] = retrieve(emb[qa], classes[qa], emb[db], classes[db], k_list, key, ids[qa])
    return results


def summarize_all(results: Dict[str, List[QueryResult]]):
    """Per-direction summaries plus their unweighted average under ``"mean"``."""
    summaries = {d: summarize(d, r) for d, r in results.items()}
    if summaries:
        summaries["mean"] = average_summaries("mean", list(summaries.values()))
    return summaries


def average_summaries(name, summaries) -> DirectionSummary:
    out = DirectionSummary(name, sum(s.n_queries for s in summaries),
                           sum(s.n_undefined for s in summaries))
    ks = sorted(set.intersection(*(set(s.precision) for s in summaries)))
    out.precision = {k: float(np.mean([s.precision[k] for s in summaries])) for k in ks}
    out.map_database = float(np.mean([s.map_database for s in summaries]))
    out.map_standard = float(np.mean([s.map_standard for s in summaries]))
    out.beprp = float(np.mean([s.beprp for s in summaries]))
    return out


def train(dataset: Dataset, hp: Hyperparams, config: SolverConfig, relevance=None):
    data = TrainingData(dataset.samples, hp, dataset.modalities)
    S = relevance if relevance is not None else relevance_from_labels(dataset.classes)
    return solve(data, S, hp, config)


def k_fold(dataset: Dataset, hp: Hyperparams, config: SolverConfig, positive_classes=None,
           k_list=(1, 5), n_folds=10, fold_seed=0, model: Optional[ModelParams] = None):
    """Fold ``r`` queries the database made of the remaining folds.

    Without ``model`` a fresh model is trained on the remaining folds each
    round, labelled with ``positive_classes``. Returns the per-direction
    query results pooled over rounds.
    """
    split = make_folds(dataset, n_folds, fold_seed)
    pooled: Dict[str, List[QueryResult]] = {}
    classes = dataset.classes
    mods = dataset.modality_ids
    for r in range(split.n_folds):
        query, rest = split.round(r)
        if model is None:
            train_set = dataset.subset(rest).with_binary_labels(positive_classes)
            params, report = train(train_set, hp, config)
            logger.info("fold %d: %d iterations, %s", r, report.iterations, report.reason)
        else:
            params = model
        idx = np.concatenate([query, rest])
        emb = embed_samples([dataset.samples[i] for i in idx], params)
        qmask = np.zeros(len(idx), bool)
        qmask[: len(query)] = True
        res = cross_modal_results(emb, mods[idx], classes[idx], k_list, qmask, idx)
        for d, lst in res.items():
            pooled.setdefault(d, []).extend(lst)
    return pooled


def chance_map(n_relevant, n_database) -> float:
    """Expected database-normalised AP of a uniformly random ranking.

    ``E[delta_k c_k / k] = (R/D) (1 + (k-1)(R-1)/(D-1)) / k``, summed and
    divided by ``D``.
    """
    R, D = n_relevant, n_database
    if D == 0:
        return 0.0
    total = 0.0
    for k in range(1, D + 1):
        extra = (k - 1) * (R - 1) / (D - 1) if D > 1 else 0.0
        total += (R / D) * (1.0 + extra) / k
    return total / D
