"""Finite weighted point clouds standing in for metric measure spaces.

A :class:`PointCloudSpace` is a finite sample of a metric measure space:
either coordinate vectors in R^n with the Euclidean metric, or an explicit
symmetric distance table for non-embedded spaces, plus strictly positive
per-point measure weights.  The measure of a sampled set is the sum of its
weights.

Every limit r -> 0+ in the continuous theory is replaced by evaluation along
a geometric :class:`RadiiSchedule`, with decisions taken on the finest third
of the scheduled scales.  Balls are open (strict inequality); on generic
clouds distance ties have measure zero, so this choice is immaterial.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionError, ResolutionError

__all__ = [
    "PointCloudSpace",
    "RadiiSchedule",
    "as_index_set",
    "complement",
    "ball",
    "measure",
    "doubling_constant",
    "ball_comparison_bound",
    "density_ratio",
    "classify_mu_interior",
    "is_isolated",
    "retraction",
    "full_delta",
    "is_full",
]

_TRIANGLE_TOL = 1e-9


def as_index_set(indices, n: int | None = None) -> np.ndarray:
    """Normalize `indices` to a sorted, unique int64 array (an index set).

    If `n` is given, every index must lie in [0, n).
    """
    arr = np.unique(np.asarray(indices, dtype=np.int64))
    if n is not None and arr.size and (arr[0] < 0 or arr[-1] >= n):
        raise PreconditionError(f"index out of range [0, {n})")
    return arr


def complement(space: "PointCloudSpace", s) -> np.ndarray:
    """Indices of `space` not in the index set `s`."""
    mask = np.ones(len(space), dtype=bool)
    mask[as_index_set(s, len(space))] = False
    return np.flatnonzero(mask).astype(np.int64)


class PointCloudSpace:
    """A finite sampled metric measure space.

    Construct with :meth:`from_points` (embedded, Euclidean metric) or
    :meth:`from_distance_matrix` (explicit table).  Instances are immutable
    after construction; all operations on them are pure reads.
    """

    def __init__(self, points, weights, dim, distance_matrix=None, _validate=True):
        self.points = points
        self.weights = weights
        self.dim = dim
        self.distance_matrix = distance_matrix
        self._min_pos_dist: float | None = None
        if _validate:
            self._validate()

    # -- constructors ------------------------------------------------------

    @classmethod
    def from_points(cls, points, weights=None) -> "PointCloudSpace":
        pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64))
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise PreconditionError("points must be a nonempty (n, dim) array")
        w = _as_weights(weights, pts.shape[0])
        return cls(pts, w, pts.shape[1])

    @classmethod
    def from_distance_matrix(cls, matrix, weights=None, dim: int = 0) -> "PointCloudSpace":
        d = np.asarray(matrix, dtype=np.float64)
        if d.ndim != 2 or d.shape[0] != d.shape[1] or d.shape[0] == 0:
            raise PreconditionError("distance matrix must be square and nonempty")
        w = _as_weights(weights, d.shape[0])
        return cls(None, w, dim, distance_matrix=d)

    def _validate(self) -> None:
        if np.any(self.weights <= 0) or not np.all(np.isfinite(self.weights)):
            raise PreconditionError("weights must be strictly positive and finite")
        d = self.distance_matrix
        if d is None:
            return
        if np.any(np.abs(np.diagonal(d)) > 0):
            raise PreconditionError("distance matrix has a nonzero diagonal entry")
        if np.any(np.abs(d - d.T) > _TRIANGLE_TOL):
            raise PreconditionError("distance matrix is not symmetric")
        if np.any(d < 0):
            raise PreconditionError("distance matrix has negative entries")
        off = d + np.diag(np.full(len(d), np.inf))
        if np.any(off <= 0):
            raise PreconditionError("distance matrix vanishes off the diagonal")
        # Triangle inequality on every sampled triple, checked one pivot at a time.
        for k in range(d.shape[0]):
            if np.any(d > d[:, k, None] + d[None, k, :] + _TRIANGLE_TOL):
                raise PreconditionError("distance matrix violates the triangle inequality")

    # -- basic queries -----------------------------------------------------

    def __len__(self) -> int:
        return int(self.weights.shape[0])

    def _check_index(self, x: int) -> int:
        x = int(x)
        if not 0 <= x < len(self):
            raise PreconditionError(f"point index {x} out of range [0, {len(self)})")
        return x

    def distances_from(self, x: int) -> np.ndarray:
        """Distance from point `x` to every sample point, as an (n,) array."""
        x = self._check_index(x)
        if self.distance_matrix is not None:
            return self.distance_matrix[x]
        diff = self.points - self.points[x]
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))

    def distance(self, x: int, y: int) -> float:
        if self.distance_matrix is not None:
            return float(self.distance_matrix[self._check_index(x), self._check_index(y)])
        return float(np.linalg.norm(self.points[self._check_index(x)] - self.points[self._check_index(y)]))

    def diameter(self) -> float:
        """Exact for tables and axis-aligned grids (bounding-box diagonal)."""
        if self.distance_matrix is not None:
            return float(self.distance_matrix.max())
        span = self.points.max(axis=0) - self.points.min(axis=0)
        return float(np.linalg.norm(span))

    def min_positive_distance(self) -> float:
        """Smallest nonzero pairwise distance (cached)."""
        if self._min_pos_dist is None:
            self._min_pos_dist = self._compute_min_pos_dist()
        return self._min_pos_dist

    def _compute_min_pos_dist(self) -> float:
        if len(self) < 2:
            return math.inf
        if self.distance_matrix is not None:
            off = self.distance_matrix[self.distance_matrix > 0]
            return float(off.min()) if off.size else math.inf
        from scipy.spatial import cKDTree

        tree = cKDTree(self.points)
        k = min(len(self), 2)
        dists, _ = tree.query(self.points, k=k)
        pos = dists[:, 1][dists[:, 1] > 0]
        if pos.size:
            return float(pos.min())
        # All nearest neighbours coincide (duplicate-heavy cloud): brute force.
        best = math.inf
        for i in range(len(self)):
            row = self.distances_from(i)
            p = row[row > 0]
            if p.size:
                best = min(best, float(p.min()))
        return best


def _as_weights(weights, n: int) -> np.ndarray:
    if weights is None:
        return np.ones(n, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n,):
        raise PreconditionError(f"weights must have shape ({n},)")
    return w


@dataclass(frozen=True)
class RadiiSchedule:
    """Geometric sequence of scales r0 * theta^i, i = 0..m-1 (descending).

    Discretizes every limit r -> 0+: quantities are evaluated per annulus
    (r*theta, r] and decisions are taken on the finest third of scales.
    """

    r0: float
    theta: float
    m: int

    def __post_init__(self):
        if not (self.r0 > 0):
            raise PreconditionError("r0 must be positive")
        if not (0 < self.theta < 1):
            raise PreconditionError("theta must lie in (0, 1)")
        if self.m < 2:
            raise PreconditionError("m must be at least 2")

    def radii(self) -> np.ndarray:
        return self.r0 * self.theta ** np.arange(self.m)

    def finest_third(self) -> np.ndarray:
        """Indices (into radii()) of the finest third of scales."""
        k = max(1, math.ceil(self.m / 3))
        return np.arange(self.m - k, self.m)


# ---------------------------------------------------------------------------
# Ball and measure primitives
# ---------------------------------------------------------------------------

def ball(space: PointCloudSpace, x: int, r: float) -> np.ndarray:
    """Open ball: indices y with dist(x, y) < r (strict)."""
    if not r > 0:
        raise PreconditionError("radius must be positive")
    return np.flatnonzero(space.distances_from(x) < r).astype(np.int64)


def measure(space: PointCloudSpace, s) -> float:
    """Weight sum of the index set `s`; additive over disjoint sets."""
    idx = as_index_set(s, len(space))
    return float(space.weights[idx].sum())


def doubling_constant(space: PointCloudSpace, schedule: RadiiSchedule, centers) -> float:
    """Max over tested (x, r) of measure(B_2r(x)) / measure(B_r(x)).

    A lower estimate of the doubling constant of the underlying continuous
    space, valid at the sampled scales.
    """
    centers = as_index_set(centers, len(space))
    if centers.size == 0:
        raise PreconditionError("centers must be nonempty")
    best = 1.0
    for x in centers:
        dists = space.distances_from(int(x))
        for r in schedule.radii():
            inner = float(space.weights[dists < r].sum())
            if inner <= 0.0:
                raise ResolutionError(f"empty ball at center {x}, radius {r}")
            outer = float(space.weights[dists < 2 * r].sum())
            best = max(best, outer / inner)
    return best


def ball_comparison_bound(K: float, t: float) -> float:
    """K raised to max(0, ceil(log2 t)): how much a ball can grow under scaling by t."""
    if K < 1:
        raise PreconditionError("K must be at least 1")
    if not t > 0:
        raise PreconditionError("t must be positive")
    p = max(0, math.ceil(math.log2(t)))
    return float(K) ** p


def density_ratio(space: PointCloudSpace, B, x: int, r: float) -> float:
    """measure(ball(x, r) \\ B) / measure(ball(x, r)), in [0, 1]."""
    b = ball(space, x, r)
    total = float(space.weights[b].sum())
    if total <= 0.0:
        raise ResolutionError(f"empty ball at {x}, radius {r}")
    mask = np.zeros(len(space), dtype=bool)
    mask[as_index_set(B, len(space))] = True
    outside = b[~mask[b]]
    return float(space.weights[outside].sum()) / total


def classify_mu_interior(space: PointCloudSpace, B, x: int, schedule: RadiiSchedule,
                         tol: float) -> bool:
    """Discrete surrogate for `x` being a density (interior) point of `B`.

    True iff the density ratio stays <= tol on the finest third of the
    scheduled scales.  Raises ResolutionError when one of those scales has
    no sample point other than `x` itself.
    """
    x = space._check_index(x)
    dists = space.distances_from(x)
    mask = np.zeros(len(space), dtype=bool)
    mask[as_index_set(B, len(space))] = True
    radii = schedule.radii()
    for i in schedule.finest_third():
        r = radii[i]
        in_ball = dists < r
        if np.count_nonzero(in_ball) < 2:
            raise ResolutionError(f"scale {r} unresolvable at point {x}")
        total = float(space.weights[in_ball].sum())
        outside = float(space.weights[in_ball & ~mask].sum())
        if outside / total > tol:
            return False
    return True


def is_isolated(space: PointCloudSpace, x: int, atom_radius: float | None = None) -> bool:
    """True iff no other sample point lies within `atom_radius` of `x`.

    Default atom radius is half the minimum positive pairwise distance, the
    only scale-free notion available in a finite sample.
    """
    x = space._check_index(x)
    if atom_radius is None:
        atom_radius = 0.5 * space.min_positive_distance()
        if not math.isfinite(atom_radius):
            return True
    dists = space.distances_from(x)
    dists = np.delete(dists, x)
    if dists.size == 0:
        return True
    return bool(dists.min() > atom_radius)


def retraction(space: PointCloudSpace, U, x: int | None = None) -> np.ndarray:
    """Nearest-point map onto the index set `U` (ties to the smallest index).

    Returns an (n,) array `rmap` with `rmap[y]` in `U` and `rmap[y] == y` for
    y in U.  The map itself does not depend on `x`; the vanishing-ratio decay
    dist(y, rmap[y]) = o(dist(y, x)) is a property verified downstream at
    density points `x` of `U`.
    """
    u = as_index_set(U, len(space))
    if u.size == 0:
        raise PreconditionError("U must be nonempty")
    if x is not None:
        space._check_index(x)
    rmap = np.empty(len(space), dtype=np.int64)
    rmap[u] = u
    mask = np.ones(len(space), dtype=bool)
    mask[u] = False
    outside = np.flatnonzero(mask)
    if outside.size == 0:
        return rmap
    if space.distance_matrix is not None:
        sub = space.distance_matrix[np.ix_(outside, u)]
        rmap[outside] = u[np.argmin(sub, axis=1)]
        return rmap
    upts = space.points[u]
    chunk = max(1, int(2e7) // max(1, u.size))
    for s in range(0, outside.size, chunk):
        ys = outside[s:s + chunk]
        diff = space.points[ys][:, None, :] - upts[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        rmap[ys] = u[np.argmin(d2, axis=1)]  # argmin takes the first minimum
    return rmap


def full_delta(K: float) -> float:
    """Admissible density-defect level for fullness arguments at doubling constant K.

    Half of the threshold 1 / (1 + L(K, 4)), strictly inside the valid range
    with margin for discretization error.
    """
    return 1.0 / (2.0 * (1.0 + ball_comparison_bound(K, 4.0)))


def is_full(space: PointCloudSpace, B, y: int, delta: float, eta: float,
            schedule: RadiiSchedule) -> bool:
    """True iff `B` has density defect <= delta around `y` at every scheduled
    scale below `eta` that the sampling resolves."""
    y = space._check_index(y)
    b = as_index_set(B, len(space))
    if not np.isin(y, b, assume_unique=True):
        raise PreconditionError(f"point {y} does not belong to B")
    mask = np.zeros(len(space), dtype=bool)
    mask[b] = True
    dists = space.distances_from(y)
    for r in schedule.radii():
        if r >= eta:
            continue
        in_ball = dists < r
        if np.count_nonzero(in_ball) < 2:
            continue  # unresolvable at this scale
        total = float(space.weights[in_ball].sum())
        outside = float(space.weights[in_ball & ~mask].sum())
        if outside / total > delta:
            return False
    return True
