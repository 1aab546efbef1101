"""Cross-modal relevance matrix and its graph operator."""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import InconsistentRelevanceError, InvalidArgumentError

# above this many samples, triple-built matrices are stored sparse
DENSE_LIMIT = 5000


@dataclass(frozen=True, eq=False)
class RelevanceMatrix:
    """Symmetric ``theta x theta`` matrix over {-1, 0, +1} with zero diagonal.

    ``entries`` is a dense ndarray or a scipy CSR matrix.
    """

    entries: object

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.entries)

    def toarray(self) -> np.ndarray:
        if self.is_sparse:
            return self.entries.toarray()
        return np.asarray(self.entries, dtype=np.float64)

    def without_negatives(self):
        """Copy with every -1 entry zeroed (ablation switch)."""
        if self.is_sparse:
            e = self.entries.copy()
            e.data[e.data < 0] = 0
            e.eliminate_zeros()
            return RelevanceMatrix(e)
        return RelevanceMatrix(np.where(self.entries < 0, 0, self.entries).astype(self.entries.dtype))


@dataclass(frozen=True, eq=False)
class GraphOperator:
    """``diag(1^T S) - S``; every row sums to zero."""

    matrix: object

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


def global_index(counts, modality_pos, i):
    """Column of the ``i``-th sample of the modality at position ``modality_pos``.

    Samples are laid out modality after modality; both positions are 0-based.
    """
    return int(sum(counts[:modality_pos])) + i


def relevance_from_labels(classes) -> RelevanceMatrix:
    """Same class -> +1, different class -> -1, diagonal 0."""
    c = np.asarray(classes)
    if c.ndim != 1:
        raise InvalidArgumentError("classes must be a flat sequence")
    s = np.where(c[:, None] == c[None, :], 1, -1).astype(np.int8)
    np.fill_diagonal(s, 0)
    return RelevanceMatrix(s)


def relevance_from_triples(triples, theta) -> RelevanceMatrix:
    """Build S from ``(a, b, value)`` triples with 0-based indices.

    Unlisted pairs get 0. A pair listed with both signs is rejected;
    self-pairs are dropped since they never contribute.
    """
    pairs = {}
    for a, b, value in triples:
        a, b, value = int(a), int(b), int(value)
        if not (0 <= a < theta and 0 <= b < theta):
            raise InvalidArgumentError(f"pair ({a}, {b}) out of range for {theta} samples")
        if value not in (-1, 1):
            raise InvalidArgumentError(f"relevance value must be -1 or +1, got {value}")
        if a == b:
            continue
        key = (min(a, b), max(a, b))
        prev = pairs.setdefault(key, value)
        if prev != value:
            raise InconsistentRelevanceError(*key)
    if theta > DENSE_LIMIT:
        rows, cols, vals = [], [], []
        for (a, b), value in pairs.items():
            rows += [a, b]
            cols += [b, a]
            vals += [value, value]
        mat = sp.csr_matrix((np.array(vals, dtype=np.float64), (rows, cols)), shape=(theta, theta))
        return RelevanceMatrix(mat)
    s = np.zeros((theta, theta), dtype=np.int8)
    for (a, b), value in pairs.items():
        s[a, b] = s[b, a] = value
    return RelevanceMatrix(s)


def read_triples(path):
    """Parse a triples file: ``a b value`` per line, 1-based, ``#`` comments."""
    triples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise InvalidArgumentError(f"{path}:{lineno}: expected 'a b value', got {line!r}")
            try:
                a, b, value = (int(p) for p in parts)
            except ValueError:
                raise InvalidArgumentError(f"{path}:{lineno}: non-integer field in {line!r}") from None
            if a < 1 or b < 1:
                raise InvalidArgumentError(f"{path}:{lineno}: indices are 1-based")
            triples.append((a - 1, b - 1, value))
    return triples


def write_triples(path, triples):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# a b value (1-based global sample indices)\n")
        for a, b, value in triples:
            fh.write(f"{a + 1} {b + 1} {int(value)}\n")


def _is_symmetric(m) -> bool:
    if sp.issparse(m):
        return (abs(m - m.T) > 0).nnz == 0
    return np.array_equal(m, m.T)


def laplacian(S) -> GraphOperator:
    m = S.entries if isinstance(S, RelevanceMatrix) else S
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidArgumentError("relevance matrix must be square")
    if not _is_symmetric(m):
        raise InvalidArgumentError("relevance matrix must be symmetric")
    if sp.issparse(m):
        m = m.astype(np.float64).tocsr()
        deg = np.asarray(m.sum(axis=0)).ravel()
        return GraphOperator((sp.diags(deg) - m).tocsr())
    m = np.asarray(m, dtype=np.float64)
    return GraphOperator(np.diag(m.sum(axis=0)) - m)


def right_multiply(Z, L: GraphOperator) -> np.ndarray:
    """``Z @ L`` for dense or sparse ``L``."""
    if sp.issparse(L.matrix):
        return np.asarray((L.matrix.T @ Z.T).T)
    return Z @ L.matrix


def penalty_value(Z, L: GraphOperator) -> float:
    """``sum_ab S_ab ||z_a - z_b||^2`` evaluated as ``2 tr(Z L Z^T)``."""
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    if Z.shape[1] != L.size:
        raise InvalidArgumentError(f"Z has {Z.shape[1]} columns, operator expects {L.size}")
    return float(2.0 * np.sum(right_multiply(Z, L) * Z))
