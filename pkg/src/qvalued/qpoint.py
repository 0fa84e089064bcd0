"""Unordered Q-tuples of points in R^k and the matching metric between them.

A :class:`QPoint` is a multiset of Q points, stored canonically (lexicographic
sort of coordinate vectors) so that multiset equality and hashing are exact.
The distance between two Q-points is the square root of the optimal value of
the assignment problem with squared Euclidean costs, solved exactly by a
polynomial-time algorithm; an independent factorial-enumeration oracle is kept
for cross-checking.

When a Q-point is not concentrated on a single value its support splits into
well separated clusters, and on a neighborhood of it the metric decomposes as
a sum of squares over the clusters.  :func:`separation_split` constructs such
a splitting, :func:`project_split` applies it.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import squareform

from .errors import DimensionMismatch, PreconditionError

__all__ = [
    "QPoint",
    "Splitting",
    "qdist",
    "qdist_bruteforce",
    "optimal_matching",
    "separation_split",
    "in_neighborhood",
    "project_split",
    "is_diagonal",
]

_BRUTE_Q_MAX = 8
_ENUM_Q_MAX = 6  # vectorized permutation enumeration cutoff for batch helpers


def canonical_sort(points: np.ndarray) -> np.ndarray:
    """Rows of `points` in lexicographic order (first coordinate primary)."""
    order = np.lexsort(points.T[::-1])
    return points[order]


def canonical_sort_batch(values: np.ndarray) -> np.ndarray:
    """Canonicalize a (n, q, k) batch: each row's q points sorted lexicographically."""
    out = values
    n, q, k = values.shape
    for col in range(k - 1, -1, -1):
        idx = np.argsort(out[:, :, col], axis=1, kind="stable")
        out = np.take_along_axis(out, idx[:, :, None], axis=1)
    return out


class QPoint:
    """An unordered Q-tuple of points of R^k, in canonical order.

    Equality is componentwise equality of the canonical lists; duplicates are
    allowed.  Instances are immutable.
    """

    __slots__ = ("points",)

    def __init__(self, points):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise PreconditionError("a QPoint needs a nonempty (q, k) array of points")
        if not np.all(np.isfinite(pts)):
            raise PreconditionError("QPoint coordinates must be finite")
        pts = canonical_sort(np.ascontiguousarray(pts))
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __setattr__(self, name, value):
        raise AttributeError("QPoint is immutable")

    @property
    def q(self) -> int:
        return self.points.shape[0]

    @property
    def k(self) -> int:
        return self.points.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, QPoint):
            return NotImplemented
        return self.points.shape == other.points.shape and bool(
            np.array_equal(self.points, other.points)
        )

    def __hash__(self) -> int:
        # +0.0 collapses -0.0 and 0.0, keeping hash consistent with ==.
        return hash((self.points.shape, (self.points + 0.0).tobytes()))

    def __repr__(self) -> str:
        return f"QPoint(q={self.q}, k={self.k}, {self.points.tolist()!r})"

    def _key(self) -> bytes:
        return (self.points + 0.0).tobytes()


def _check_compatible(a: QPoint, b: QPoint) -> None:
    if a.q != b.q:
        raise DimensionMismatch(f"Q mismatch: {a.q} vs {b.q}")
    if a.k != b.k:
        raise DimensionMismatch(f"value dimension mismatch: {a.k} vs {b.k}")


def _cost_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def qdist(a: QPoint, b: QPoint) -> float:
    """Matching metric: min over pairings of sqrt(sum of squared distances).

    Solved as a minimum-cost assignment on squared costs.  Symmetric bitwise:
    the operands are put in a canonical order before solving.
    """
    _check_compatible(a, b)
    if a._key() > b._key():
        a, b = b, a
    cost = _cost_matrix(a.points, b.points)
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(cost[rows, cols].sum()))


@lru_cache(maxsize=16)
def _perms(q: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(q))), dtype=np.int64)


def qdist_bruteforce(a: QPoint, b: QPoint) -> float:
    """Exhaustive-enumeration oracle for :func:`qdist` (Q <= 8 only)."""
    _check_compatible(a, b)
    if a.q > _BRUTE_Q_MAX:
        raise PreconditionError(f"brute force limited to Q <= {_BRUTE_Q_MAX}")
    if a._key() > b._key():
        a, b = b, a
    cost = _cost_matrix(a.points, b.points)
    perms = _perms(a.q)
    totals = cost[np.arange(a.q)[None, :], perms].sum(axis=1)
    return float(np.sqrt(totals.min()))


def optimal_matching(a: QPoint, b: QPoint) -> np.ndarray:
    """A permutation sigma realizing qdist, with sigma[i] the b-index matched
    to a's i-th point; among optima, the lexicographically smallest sigma."""
    _check_compatible(a, b)
    q = a.q
    cost = _cost_matrix(a.points, b.points)
    rows, cols = linear_sum_assignment(cost)
    target = cost[rows, cols].sum()  # remaining budget for rows i..q-1
    tol = 1e-12 * (1.0 + target)
    sigma = np.empty(q, dtype=np.int64)
    available = list(range(q))
    for i in range(q):
        chosen = None
        for j in available:
            remaining = [c for c in available if c != j]
            if remaining:
                sub = cost[np.ix_(range(i + 1, q), remaining)]
                r, c = linear_sum_assignment(sub)
                rest = sub[r, c].sum()
            else:
                rest = 0.0
            if cost[i, j] + rest <= target + tol:
                chosen = j
                target = rest
                break
        if chosen is None:  # numerical safety net: take the cheapest completion
            chosen = available[0]
            target = target - cost[i, chosen]
        sigma[i] = chosen
        available.remove(chosen)
    return sigma


def qdist_one_to_many(base: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Matching distances from one (q, k) tuple to a (n, q, k) batch.

    Enumerates permutations for small Q (vectorized), falls back to the
    assignment solver per row otherwise.
    """
    n, q, k = values.shape
    if q <= _ENUM_Q_MAX:
        perms = _perms(q)
        out = np.empty(n, dtype=np.float64)
        chunk = max(1, int(4e6) // max(1, perms.shape[0]))
        rows = np.arange(q)[None, :]
        for s in range(0, n, chunk):
            v = values[s:s + chunk]
            diff = base[None, :, None, :] - v[:, None, :, :]
            cost = np.einsum("nijk,nijk->nij", diff, diff)
            totals = cost[:, rows, perms].sum(axis=2)
            out[s:s + chunk] = totals.min(axis=1)
        return np.sqrt(out)
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        cost = _cost_matrix(base, values[i])
        r, c = linear_sum_assignment(cost)
        out[i] = cost[r, c].sum()
    return np.sqrt(out)


def optimal_matching_batch(base: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Optimal matchings of one (q, k) tuple against a (n, q, k) batch.

    Row r of the result is the permutation matching base to values[r]; for
    small Q the permutations are enumerated in lexicographic order, so exact
    ties resolve to the lexicographically smallest optimum.
    """
    n, q, k = values.shape
    if q <= _ENUM_Q_MAX:
        perms = _perms(q)
        out = np.empty((n, q), dtype=np.int64)
        chunk = max(1, int(4e6) // max(1, perms.shape[0]))
        rows = np.arange(q)[None, :]
        for s in range(0, n, chunk):
            v = values[s:s + chunk]
            diff = base[None, :, None, :] - v[:, None, :, :]
            cost = np.einsum("nijk,nijk->nij", diff, diff)
            totals = cost[:, rows, perms].sum(axis=2)
            out[s:s + chunk] = perms[totals.argmin(axis=1)]
        return out
    out = np.empty((n, q), dtype=np.int64)
    for i in range(n):
        cost = _cost_matrix(base, values[i])
        _, cols = linear_sum_assignment(cost)
        out[i] = cols
    return out


def qdist_rowwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matching distances between aligned rows of two (n, q, k) batches."""
    n, q, k = a.shape
    if q <= _ENUM_Q_MAX:
        perms = _perms(q)
        out = np.empty(n, dtype=np.float64)
        chunk = max(1, int(4e6) // max(1, perms.shape[0]))
        rows = np.arange(q)[None, :]
        for s in range(0, n, chunk):
            diff = a[s:s + chunk][:, :, None, :] - b[s:s + chunk][:, None, :, :]
            cost = np.einsum("nijk,nijk->nij", diff, diff)
            totals = cost[:, rows, perms].sum(axis=2)
            out[s:s + chunk] = totals.min(axis=1)
        return np.sqrt(out)
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        cost = _cost_matrix(a[i], b[i])
        r, c = linear_sum_assignment(cost)
        out[i] = cost[r, c].sum()
    return np.sqrt(out)


def is_diagonal(a: QPoint, tol: float) -> np.ndarray | None:
    """The common value (centroid) if all of `a`'s points coincide within
    `tol` (max pairwise distance), else None."""
    if tol < 0:
        raise PreconditionError("tolerance must be nonnegative")
    pts = a.points
    if a.q > 1:
        d2 = _cost_matrix(pts, pts)
        if float(d2.max()) > tol * tol:
            return None
    return pts.mean(axis=0)


# ---------------------------------------------------------------------------
# Local splittings
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Splitting:
    """A separation of a Q-point's support into clusters at scale epsilon.

    Cluster labels are 0-based and ordered by first occurrence in canonical
    order, so cluster 0 contains the lexicographically smallest point; `r` is
    its size.  Every cluster has diameter < epsilon/3 and distinct clusters
    are >= epsilon apart.  The binary view used by the projection maps is
    cluster 0 versus the union of the rest.
    """

    base: QPoint
    labels: np.ndarray
    r: int
    epsilon: float
    representatives: np.ndarray

    def cluster_points(self, label: int) -> np.ndarray:
        return self.base.points[self.labels == label]

    @property
    def n_clusters(self) -> int:
        return int(self.labels.max()) + 1


def separation_split(p: QPoint) -> Splitting | None:
    """Split `p`'s support by single linkage at the largest dendrogram gap.

    Returns None iff all points coincide exactly.  The chosen cut is
    re-validated (intra-cluster diameter < epsilon/3, inter-cluster distance
    >= epsilon); failing cuts are discarded in decreasing-gap order.  The
    all-singletons cut (duplicates grouped) is always valid, so a splitting
    exists whenever the support is nontrivial.
    """
    pts = p.points
    q = p.q
    if q < 2:
        return None
    d2 = _cost_matrix(pts, pts)
    dmat = np.sqrt(np.maximum(d2, 0.0))
    if float(dmat.max()) == 0.0:
        return None

    z = linkage(squareform(dmat, checks=False), method="single")
    heights = np.unique(z[:, 2])
    # Candidate cut levels: below the smallest merge, and between merges.
    cuts = np.concatenate(([0.0], heights[:-1]))
    gaps = np.concatenate((heights[:1], np.diff(heights)))
    # Largest gap first; ties resolved toward the coarser cut.
    order = sorted(range(len(cuts)), key=lambda i: (-gaps[i], -cuts[i]))

    for ci in order:
        labels_raw = fcluster(z, t=cuts[ci], criterion="distance")
        labels = _relabel_by_first_occurrence(labels_raw)
        inter, diam = _cluster_geometry(dmat, labels)
        if diam < inter / 3.0:
            eps = inter
            reps = np.stack([pts[labels == c][0] for c in range(labels.max() + 1)])
            return Splitting(
                base=p,
                labels=labels,
                r=int(np.count_nonzero(labels == 0)),
                epsilon=float(eps),
                representatives=reps,
            )
    raise AssertionError("unreachable: the finest cut is always valid")


def _relabel_by_first_occurrence(labels: np.ndarray) -> np.ndarray:
    out = np.empty(len(labels), dtype=np.int64)
    seen: dict[int, int] = {}
    for i, lab in enumerate(labels):
        if lab not in seen:
            seen[lab] = len(seen)
        out[i] = seen[lab]
    return out


def _cluster_geometry(dmat: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """(min inter-cluster distance, max intra-cluster diameter)."""
    same = labels[:, None] == labels[None, :]
    off = ~np.eye(len(labels), dtype=bool)
    inter = float(dmat[~same].min()) if np.any(~same) else np.inf
    intra = dmat[same & off]
    diam = float(intra.max()) if intra.size else 0.0
    return inter, diam


def in_neighborhood(split: Splitting, a: QPoint) -> bool:
    """Membership in the splitting's neighborhood U.

    True iff some assignment places each point of `a` within epsilon/3 of its
    assigned base point (a perfect matching in the proximity graph, which
    forces the per-cluster cardinalities to agree).
    """
    base = split.base
    if a.q != base.q or a.k != base.k:
        raise DimensionMismatch("incompatible Q or k for neighborhood test")
    thresh2 = (split.epsilon / 3.0) ** 2
    cost = _cost_matrix(base.points, a.points)
    feasible = cost < thresh2
    if not feasible.any(axis=0).all() or not feasible.any(axis=1).all():
        return False
    rows, cols = linear_sum_assignment(np.where(feasible, 0.0, 1.0))
    return bool(np.where(feasible, 0.0, 1.0)[rows, cols].sum() == 0.0)


def _assign_to_clusters(split: Splitting, a: QPoint) -> np.ndarray:
    """Nearest-cluster label per point of `a` (distance to the cluster's points)."""
    n_clusters = split.n_clusters
    dist2 = np.empty((a.q, n_clusters))
    for c in range(n_clusters):
        dist2[:, c] = _cost_matrix(a.points, split.cluster_points(c)).min(axis=1)
    return np.argmin(dist2, axis=1)


def project_split(split: Splitting, a: QPoint) -> tuple[QPoint, QPoint]:
    """The two projection maps: `a`'s points split by nearest cluster into a
    size-R part (cluster 0) and a size-(Q-R) part (the rest).

    Inside the neighborhood the assignment is forced by the epsilon/3 vs
    epsilon gap, and the matching metric satisfies
    dist(A, B)^2 = dist(pi1 A, pi1 B)^2 + dist(pi2 A, pi2 B)^2.
    """
    if not in_neighborhood(split, a):
        raise PreconditionError("Q-point lies outside the splitting neighborhood")
    labels = _assign_to_clusters(split, a)
    first = labels == 0
    counts = np.bincount(labels, minlength=split.n_clusters)
    expected = np.bincount(split.labels, minlength=split.n_clusters)
    if not np.array_equal(counts, expected):
        raise PreconditionError("cluster cardinalities inconsistent inside U")
    return QPoint(a.points[first]), QPoint(a.points[~first])
