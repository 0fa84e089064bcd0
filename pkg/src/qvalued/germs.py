"""Affine differential germs over chart coordinates.

A :class:`Chart` assigns R^N coordinates to (part of) a sampled space; an
:class:`AffineQGerm` is a Q-tuple of affine maps p_i + L_i (Phi(y) - Phi(x))
anchored at a base point x, evaluating to a Q-point at every chart point.
Components whose base values coincide are grouped, and grouped components
share one matrix bitwise -- the coincidence constraint that makes germs of
multiple-valued functions well behaved.

Distances between germs with a common base are first-order: the maximum of
dist(F(y), G(y)) / dist(y, x) over sample points in the finest scheduled
annuli around x.  This is the affine-representative surrogate for the germ
pseudometric; its resolution dependence is inherited from the schedule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, PreconditionError, ResolutionError
from .qpoint import QPoint, canonical_sort_batch, qdist_rowwise
from .space import PointCloudSpace, RadiiSchedule, as_index_set

__all__ = [
    "Chart",
    "AffineGerm",
    "AffineQGerm",
    "eval_germ",
    "eval_germ_many",
    "germ_distance",
    "germ_norm",
    "enforce_eqty",
    "default_group_tol",
]


class Chart:
    """Lipschitz coordinates Phi: domain -> R^N on a subset of a space.

    The sampled Lipschitz constant max |Phi(y)-Phi(z)| / dist(y,z) is computed
    and stored at construction.  For the identity chart of an embedded space
    the ratio is identically 1 and the pairwise scan is skipped.
    """

    def __init__(self, space: PointCloudSpace, domain, values, lip: float | None = None):
        self.space = space
        self.domain = as_index_set(domain, len(space))
        vals = np.asarray(values, dtype=np.float64)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape[0] != self.domain.size:
            raise PreconditionError("chart needs one value per domain point")
        self.values = vals
        self.chart_dim = vals.shape[1]
        self._pos = {int(i): p for p, i in enumerate(self.domain)}
        self.lip = self._sampled_lip() if lip is None else float(lip)

    @classmethod
    def identity(cls, space: PointCloudSpace, domain=None) -> "Chart":
        if space.points is None:
            raise PreconditionError("identity chart requires an embedded space")
        dom = np.arange(len(space), dtype=np.int64) if domain is None else as_index_set(domain, len(space))
        return cls(space, dom, space.points[dom], lip=1.0)

    def _sampled_lip(self) -> float:
        n = self.domain.size
        if n < 2:
            return 0.0
        best = 0.0
        for a, i in enumerate(self.domain):
            d = self.space.distances_from(int(i))[self.domain]
            num = np.linalg.norm(self.values - self.values[a], axis=1)
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(d > 0, num / d, 0.0)
            best = max(best, float(ratio.max()))
        return best

    def position(self, index: int) -> int:
        try:
            return self._pos[int(index)]
        except KeyError:
            raise PreconditionError(f"point {index} outside chart domain") from None

    def positions(self, indices) -> np.ndarray:
        idx = np.asarray(indices, dtype=np.int64)
        pos = np.searchsorted(self.domain, idx)
        ok = (pos < self.domain.size) & (self.domain[np.minimum(pos, self.domain.size - 1)] == idx)
        if not ok.all():
            raise PreconditionError("some points lie outside the chart domain")
        return pos

    def value_at(self, index: int) -> np.ndarray:
        return self.values[self.position(index)]


@dataclass(frozen=True)
class AffineGerm:
    """One affine component: y -> p + l (Phi(y) - Phi(x))."""

    chart: Chart
    x: int
    p: np.ndarray  # (k,)
    l: np.ndarray  # (k, N)

    def __call__(self, y: int) -> np.ndarray:
        phi = self.chart.value_at(y) - self.chart.value_at(self.x)
        return self.p + self.l @ phi


class AffineQGerm:
    """Q affine components over a shared chart and base point.

    `groups` partitions component indices by coincident base values; within a
    group the matrices are bitwise identical (use :func:`enforce_eqty` to
    construct germs satisfying this).
    """

    def __init__(self, chart: Chart, x: int, p: np.ndarray, l: np.ndarray,
                 groups: tuple[tuple[int, ...], ...]):
        p = np.asarray(p, dtype=np.float64)
        l = np.asarray(l, dtype=np.float64)
        if p.ndim != 2 or l.ndim != 3 or p.shape[0] != l.shape[0] or p.shape[1] != l.shape[1]:
            raise PreconditionError("need p of shape (q, k) and l of shape (q, k, N)")
        if l.shape[2] != chart.chart_dim:
            raise DimensionMismatch("matrix width disagrees with chart dimension")
        chart.position(x)  # base point must lie in the chart domain
        seen = sorted(i for g in groups for i in g)
        if seen != list(range(p.shape[0])):
            raise PreconditionError("groups must partition the component indices")
        for g in groups:
            for i in g[1:]:
                if l[i].tobytes() != l[g[0]].tobytes():
                    raise PreconditionError("grouped components must share their matrix bitwise")
        self.chart = chart
        self.x = int(x)
        self.p = p
        self.l = l
        self.groups = tuple(tuple(int(i) for i in g) for g in groups)

    @property
    def q(self) -> int:
        return self.p.shape[0]

    @property
    def k(self) -> int:
        return self.p.shape[1]

    def base_qpoint(self) -> QPoint:
        return QPoint(self.p)

    def zero_like(self) -> "AffineQGerm":
        """The constant germ at the same base (all matrices zero)."""
        return AffineQGerm(self.chart, self.x, self.p, np.zeros_like(self.l), self.groups)


def default_group_tol(p: np.ndarray) -> float:
    """Scale-aware coincidence tolerance: 1e-8 * (diameter of the base tuple + 1)."""
    diff = p[:, None, :] - p[None, :, :]
    diam = float(np.sqrt(np.einsum("ijk,ijk->ij", diff, diff).max())) if p.shape[0] > 1 else 0.0
    return 1e-8 * (diam + 1.0)


def enforce_eqty(components, tol: float, chart: Chart, x: int) -> AffineQGerm:
    """Build an AffineQGerm from (p_i, l_i) pairs, pooling coincident bases.

    Indices whose base values coincide within `tol` (transitive closure) form
    one group; each group's matrices and base values are replaced by their
    arithmetic means, so grouped matrices are bitwise identical.  With a
    shared regression design this mean equals the pooled least-squares
    solution.
    """
    p = np.stack([np.asarray(c[0], dtype=np.float64).ravel() for c in components])
    l = np.stack([np.atleast_2d(np.asarray(c[1], dtype=np.float64)) for c in components])
    q = p.shape[0]

    parent = list(range(q))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(q):
        for j in range(i + 1, q):
            if np.linalg.norm(p[i] - p[j]) <= tol:
                parent[find(i)] = find(j)

    roots: dict[int, list[int]] = {}
    for i in range(q):
        roots.setdefault(find(i), []).append(i)
    groups = tuple(tuple(sorted(g)) for g in sorted(roots.values(), key=min))

    p_out = p.copy()
    l_out = l.copy()
    for g in groups:
        idx = list(g)
        p_mean = p[idx].mean(axis=0)
        l_mean = l[idx].mean(axis=0)
        for i in idx:
            p_out[i] = p_mean
            l_out[i] = l_mean
    return AffineQGerm(chart, x, p_out, l_out, groups)


def eval_germ(g: AffineQGerm, y: int) -> QPoint:
    """Evaluate the germ at one chart point: the Q-point of component values."""
    phi = g.chart.value_at(y) - g.chart.value_at(g.x)
    return QPoint(g.p + np.einsum("qkn,n->qk", g.l, phi))


def eval_germ_many(g: AffineQGerm, ys) -> np.ndarray:
    """Evaluate at many chart points; returns canonicalized (n, q, k) values."""
    pos = g.chart.positions(ys)
    phi = g.chart.values[pos] - g.chart.value_at(g.x)
    vals = g.p[None, :, :] + np.einsum("qkn,mn->mqk", g.l, phi)
    return canonical_sort_batch(vals)


def _annulus_points(g: AffineQGerm, schedule: RadiiSchedule):
    """Chart-domain points in the finest third of nonempty annuli around the base."""
    dists = g.chart.space.distances_from(g.x)[g.chart.domain]
    radii = schedule.radii()
    nonempty = []
    members = []
    for i, r in enumerate(radii):
        mask = (dists > r * schedule.theta) & (dists <= r)
        if mask.any():
            nonempty.append(i)
            members.append(mask)
    if not nonempty:
        raise ResolutionError("no sample points in any scheduled annulus")
    keep = max(1, int(np.ceil(len(nonempty) / 3)))
    mask = np.zeros(g.chart.domain.size, dtype=bool)
    for m in members[-keep:]:
        mask |= m
    idx = np.flatnonzero(mask)
    return g.chart.domain[idx], dists[idx]


def germ_distance(g1: AffineQGerm, g2: AffineQGerm, schedule: RadiiSchedule) -> float:
    """First-order distance between two germs with a common base.

    max over sample points y in the finest third of scheduled annuli of
    dist(F1(y), F2(y)) / dist(y, x).
    """
    if g1.chart is not g2.chart:
        raise PreconditionError("germs must share a chart")
    if g1.x != g2.x:
        raise PreconditionError("germs must share their base point")
    if g1.q != g2.q or g1.k != g2.k:
        raise DimensionMismatch("germs must share Q and k")
    if g1.base_qpoint() != g2.base_qpoint():
        raise PreconditionError("germs must share their base value")
    ys, dists = _annulus_points(g1, schedule)
    v1 = eval_germ_many(g1, ys)
    v2 = eval_germ_many(g2, ys)
    quotients = qdist_rowwise(v1, v2) / dists
    return float(quotients.max())


def germ_norm(g: AffineQGerm, schedule: RadiiSchedule) -> float:
    """Distance to the constant germ at the same base value."""
    return germ_distance(g, g.zero_like(), schedule)
