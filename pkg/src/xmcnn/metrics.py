"""Ranking by squared l2 distance and retrieval metrics.

Judgments are boolean arrays indexed by database id; a :class:`RankedList`
orders those ids. The mean average precision follows the evaluation
protocol's own definition, dividing by the database size ``D``; the usual
variant dividing by the number of relevant items is available as
``standard=True``.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, UndefinedMetricError


@dataclass(frozen=True, eq=False)
class RankedList:
    query_id: object
    order: np.ndarray  # database ids, nearest first
    distances: np.ndarray  # squared distances in the same order

    def __len__(self):
        return self.order.shape[0]


def rank(query, database, query_id=None) -> RankedList:
    """Sort database rows by squared distance to ``query``; ties go to the lower id."""
    q = np.asarray(query, dtype=np.float64).ravel()
    db = np.atleast_2d(np.asarray(database, dtype=np.float64))
    if db.shape[1] != q.shape[0]:
        raise InvalidArgumentError(f"query has dimension {q.shape[0]}, database {db.shape[1]}")
    diff = db - q
    dist = np.einsum("ij,ij->i", diff, diff)
    order = np.lexsort((np.arange(db.shape[0]), dist))
    return RankedList(query_id, order, dist[order])


def relevance_in_order(ranked: RankedList, judgments) -> np.ndarray:
    """``delta[k-1]`` is 1 when the item ranked ``k`` is relevant."""
    j = np.asarray(judgments, dtype=bool)
    if j.shape[0] != len(ranked):
        raise InvalidArgumentError(f"{j.shape[0]} judgments for {len(ranked)} ranked items")
    return j[ranked.order]


def _check_k(k, n):
    if not 1 <= k <= n:
        raise InvalidArgumentError(f"k = {k} outside 1..{n}")


def precision_at(ranked, judgments, k) -> float:
    delta = relevance_in_order(ranked, judgments)
    _check_k(k, delta.shape[0])
    return np.count_nonzero(delta[:k]) / k


def recall_at(ranked, judgments, k) -> float:
    delta = relevance_in_order(ranked, judgments)
    _check_k(k, delta.shape[0])
    total = np.count_nonzero(delta)
    if total == 0:
        raise UndefinedMetricError("recall is undefined for a query with no relevant items")
    return np.count_nonzero(delta[:k]) / total


def average_precision(delta, standard=False) -> float:
    """``sum_k Prec@k * delta_k`` divided by ``D`` (or by #relevant if ``standard``).

    Summed exactly over a common integer denominator and rounded once by the
    final integer division, so the result is the float nearest the true value.
    """
    delta = np.asarray(delta, dtype=bool)
    ranks = (np.flatnonzero(delta) + 1).tolist()
    denom = len(ranks) if standard else delta.shape[0]
    if not ranks:
        return 0.0
    common = math.lcm(*ranks)
    numer = sum(c * (common // k) for c, k in enumerate(ranks, 1))
    return numer / (common * denom)


def mean_average_precision(ranked_lists, judgments, standard=False) -> float:
    """Mean AP over queries that have at least one relevant item.

    Queries without relevant items are skipped (see :func:`undefined_queries`);
    if none remain the result is 0.
    """
    aps = []
    for ranked, judg in zip(ranked_lists, judgments):
        delta = relevance_in_order(ranked, judg)
        if delta.any():
            aps.append(average_precision(delta, standard))
    return math.fsum(aps) / len(aps) if aps else 0.0


def undefined_queries(ranked_lists, judgments):
    """Ids of queries with no relevant database item."""
    return [r.query_id for r, j in zip(ranked_lists, judgments) if not np.any(j)]


def break_even_k(delta) -> int:
    """Smallest ``k`` minimising ``|Prec@k - Reca@k|``, compared exactly."""
    delta = np.asarray(delta, dtype=bool)
    total = int(np.count_nonzero(delta))
    if total == 0:
        raise UndefinedMetricError("break-even point is undefined for a query with no relevant items")
    # Prec - Reca = c (R - k) / (k R); R is constant so compare |c (R - k)| / k
    # by cross-multiplying integers
    best_gap, best_k = None, 0
    for k, c in enumerate(np.cumsum(delta).tolist(), 1):
        gap = abs(c * (total - k))
        if best_gap is None or gap * best_k < best_gap * k:
            best_gap, best_k = gap, k
    return best_k


def break_even_point(ranked, judgments) -> float:
    delta = relevance_in_order(ranked, judgments)
    k = break_even_k(delta)
    return np.count_nonzero(delta[:k]) / k
