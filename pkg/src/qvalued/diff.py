"""Numerical differentiation of sampled multiple-valued functions.

A :class:`SampledQFunction` maps sample points of a space to Q-points.  Around
a base point we measure difference quotients dist(f(y), f(x)) / dist(y, x) per
scheduled annulus (:func:`abgr`, with a density-trimmed variant
:func:`abgr_approx`), fit an affine Q-germ by branch-matched weighted least
squares (:func:`fit_differential`), and decide differentiability from the
decay of the residual curve (:func:`residual`, :func:`is_differentiable`).
:func:`differentiability_report` runs the full pipeline over every domain
point; :func:`split_function` factors a function locally through a splitting
of its value.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (DegenerateFitError, DimensionMismatch, PreconditionError,
                     ResolutionError)
from .germs import AffineQGerm, Chart, default_group_tol, enforce_eqty, eval_germ_many
from .qpoint import (QPoint, Splitting, canonical_sort_batch, in_neighborhood,
                     optimal_matching_batch, project_split, qdist_one_to_many,
                     qdist_rowwise, separation_split)
from .space import PointCloudSpace, RadiiSchedule, as_index_set

__all__ = [
    "SampledQFunction",
    "QuotientCurve",
    "DecisionRule",
    "DiffVerdict",
    "abgr",
    "abgr_approx",
    "fit_differential",
    "residual",
    "is_differentiable",
    "split_function",
    "differentiability_report",
    "global_lipschitz",
]


class SampledQFunction:
    """A map from sample points of a space to Q-points.

    `values[i]` holds the canonicalized (q, k) value at `domain[i]`.
    Immutable after construction.
    """

    def __init__(self, space: PointCloudSpace, domain, values):
        self.space = space
        self.domain = as_index_set(domain, len(space))
        vals = np.asarray(values, dtype=np.float64)
        if vals.ndim != 3 or vals.shape[0] != self.domain.size:
            raise PreconditionError("values must be a (len(domain), q, k) array")
        if not np.all(np.isfinite(vals)):
            raise PreconditionError("function values must be finite")
        self.values = canonical_sort_batch(np.ascontiguousarray(vals))
        self.q = vals.shape[1]
        self.k = vals.shape[2]

    def __len__(self) -> int:
        return int(self.domain.size)

    def position(self, index: int) -> int:
        pos = int(np.searchsorted(self.domain, int(index)))
        if pos >= self.domain.size or self.domain[pos] != int(index):
            raise PreconditionError(f"point {index} not in the function domain")
        return pos

    def positions(self, indices) -> np.ndarray:
        idx = np.asarray(indices, dtype=np.int64)
        pos = np.searchsorted(self.domain, idx)
        ok = (pos < self.domain.size) & (self.domain[np.minimum(pos, self.domain.size - 1)] == idx)
        if not ok.all():
            raise PreconditionError("some points lie outside the function domain")
        return pos

    def value_at(self, index: int) -> QPoint:
        return QPoint(self.values[self.position(index)])

    def restrict(self, indices) -> "SampledQFunction":
        idx = as_index_set(indices, len(self.space))
        return SampledQFunction(self.space, idx, self.values[self.positions(idx)])


@dataclass(frozen=True)
class QuotientCurve:
    """Per-annulus suprema of a difference quotient, with sample counts.

    `values[i]` is the quotient supremum over the annulus (radii[i]*theta,
    radii[i]] (NaN where the annulus holds no sample; `counts` distinguishes
    empty annuli from zero quotients).  Radii are strictly decreasing.
    """

    radii: np.ndarray
    values: np.ndarray
    counts: np.ndarray

    def nonempty(self) -> np.ndarray:
        return self.counts > 0

    def n_nonempty(self) -> int:
        return int(np.count_nonzero(self.counts > 0))

    def headline(self) -> float:
        """Max over the finest third of nonempty annuli."""
        pos = np.flatnonzero(self.counts > 0)
        if pos.size == 0:
            raise ResolutionError("all annuli are empty")
        keep = max(1, math.ceil(pos.size / 3))
        return float(np.nanmax(self.values[pos[-keep:]]))

    def rows(self) -> list[tuple[float, float | None, int]]:
        return [
            (float(r), (None if c == 0 else float(v)), int(c))
            for r, v, c in zip(self.radii, self.values, self.counts)
        ]


@dataclass(frozen=True)
class DecisionRule:
    """Discrete rule for 'the residual curve tends to zero'.

    Accept when the finest nonempty residual is at most `floor`, or the
    best-fit log-log slope of the curve is at least `ratio_drop`.
    """

    ratio_drop: float = 0.5
    floor: float = 1e-6


@dataclass
class DiffVerdict:
    """Per-point outcome of the differentiability pipeline."""

    index: int
    in_af: bool
    abgr_estimate: float
    abgr_curve: QuotientCurve | None = None
    germ: AffineQGerm | None = None
    residual_curve: QuotientCurve | None = None
    differentiable: bool = False
    boundary: bool = False
    error: str | None = None


# ---------------------------------------------------------------------------
# Difference quotients
# ---------------------------------------------------------------------------

def _quotients_around(f: SampledQFunction, x: int):
    """(distances, quotients, weights) of f against f(x) over domain \\ {x}."""
    pos = f.position(x)
    dists = f.space.distances_from(x)[f.domain]
    keep = np.ones(f.domain.size, dtype=bool)
    keep[pos] = False
    dists = dists[keep]
    vals = f.values[keep]
    weights = f.space.weights[f.domain[keep]]
    if np.any(dists <= 0):
        sel = dists > 0  # coincident sample points carry no quotient information
        dists, vals, weights = dists[sel], vals[sel], weights[sel]
    qd = qdist_one_to_many(f.values[pos], vals)
    return dists, qd / dists, weights


def _curve(schedule: RadiiSchedule, dists, quotients, weights=None, delta=None) -> QuotientCurve:
    radii = schedule.radii()
    values = np.full(schedule.m, np.nan)
    counts = np.zeros(schedule.m, dtype=np.int64)
    for i, r in enumerate(radii):
        mask = (dists > r * schedule.theta) & (dists <= r)
        c = int(np.count_nonzero(mask))
        counts[i] = c
        if c == 0:
            continue
        if delta is None:
            values[i] = float(quotients[mask].max())
        else:
            values[i] = _trimmed_sup(quotients[mask], weights[mask], delta)
    return QuotientCurve(radii=radii, values=values, counts=counts)


def _trimmed_sup(quotients: np.ndarray, weights: np.ndarray, delta: float) -> float:
    """Smallest level whose strict exceedance set has relative weight <= delta."""
    order = np.argsort(quotients, kind="stable")
    qs = quotients[order]
    ws = weights[order]
    total = float(ws.sum())
    suffix = np.concatenate((np.cumsum(ws[::-1])[::-1], [0.0]))  # suffix[j] = sum ws[j:]
    exceed = suffix[np.searchsorted(qs, qs, side="right")]  # weight of {q > qs[i]}
    # exceed is nonincreasing, and the last entry is 0, so a level always exists.
    return float(qs[int(np.argmax(exceed <= delta * total))])


def abgr(f: SampledQFunction, x: int, schedule: RadiiSchedule) -> QuotientCurve:
    """Per-annulus difference-quotient suprema of f around x.

    The headline estimate (curve.headline()) approximates the pointwise
    Lipschitz number of f at x; raises ResolutionError when every scheduled
    annulus is empty (x isolated at schedule resolution).
    """
    dists, quotients, _ = _quotients_around(f, x)
    curve = _curve(schedule, dists, quotients)
    if curve.n_nonempty() == 0:
        raise ResolutionError(f"point {x} is isolated at the schedule's resolution")
    return curve


def abgr_approx(f: SampledQFunction, x: int, schedule: RadiiSchedule,
                delta: float) -> QuotientCurve:
    """Density-trimmed variant of :func:`abgr`.

    Per annulus, the smallest level whose exceedance set has relative measure
    at most `delta`: a finite-sample version of the quotient limsup in the
    density topology.  Never exceeds the plain curve.
    """
    dists, quotients, weights = _quotients_around(f, x)
    curve = _curve(schedule, dists, quotients, weights, delta)
    if curve.n_nonempty() == 0:
        raise ResolutionError(f"point {x} is isolated at the schedule's resolution")
    return curve


def global_lipschitz(f: SampledQFunction) -> float:
    """Max pairwise difference quotient over the whole domain (inf if some
    coincident sample points carry distinct values)."""
    n = len(f)
    best = 0.0
    for i in range(n - 1):
        d = f.space.distances_from(int(f.domain[i]))[f.domain[i + 1:]]
        qd = qdist_one_to_many(f.values[i], f.values[i + 1:])
        zero = d <= 0
        if np.any(zero):
            if np.any(qd[zero] > 0):
                return math.inf
            d, qd = d[~zero], qd[~zero]
        if d.size:
            best = max(best, float((qd / d).max()))
    return best


# ---------------------------------------------------------------------------
# Differential fitting
# ---------------------------------------------------------------------------

def _branch_groups(base: np.ndarray, tol: float) -> list[list[int]]:
    """Partition branch indices of a (q, k) base tuple by value coincidence."""
    q = base.shape[0]
    parent = list(range(q))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(q):
        for j in range(i + 1, q):
            if np.linalg.norm(base[i] - base[j]) <= tol:
                parent[find(i)] = find(j)
    groups: dict[int, list[int]] = {}
    for i in range(q):
        groups.setdefault(find(i), []).append(i)
    return sorted((sorted(g) for g in groups.values()), key=min)


def fit_differential(f: SampledQFunction, x: int, fit_radius: float, chart: Chart,
                     eqty_tol: float | None = None) -> AffineQGerm:
    """Fit an affine Q-germ to f at x by branch-matched weighted least squares.

    Every sample in the fit ball is matched optimally against f(x) (star
    pattern), each branch is regressed on chart increments with weights
    1/dist^2, and branches with coincident base values are pooled into one
    regression, so the group constraint holds bitwise.
    """
    pos = f.position(x)
    base = f.values[pos]
    if eqty_tol is None:
        eqty_tol = default_group_tol(base)
    groups = _branch_groups(base, eqty_tol)

    dists_all = f.space.distances_from(x)[f.domain]
    sel = (dists_all > 0) & (dists_all < fit_radius)
    sel[pos] = False
    sample_pos = np.flatnonzero(sel)
    n_needed = (chart.chart_dim + 1) * len(groups)
    if sample_pos.size < n_needed:
        raise PreconditionError(
            f"need at least {n_needed} samples within radius {fit_radius}, got {sample_pos.size}"
        )

    ys = f.domain[sample_pos]
    phi = chart.values[chart.positions(ys)] - chart.value_at(x)
    dists = dists_all[sample_pos]
    sqrt_w = 1.0 / dists

    # Star matching: assign each sample's value points to branches of f(x).
    sigmas = optimal_matching_batch(base, f.values[sample_pos])
    matched = np.take_along_axis(f.values[sample_pos], sigmas[:, :, None], axis=1)

    design = phi * sqrt_w[:, None]
    l_by_group: dict[int, np.ndarray] = {}
    for gi, g in enumerate(groups):
        targets = np.concatenate([(matched[:, i, :] - base[i]) * sqrt_w[:, None] for i in g])
        a = np.concatenate([design] * len(g))
        sol, _, rank, _ = np.linalg.lstsq(a, targets, rcond=None)
        if rank < chart.chart_dim:
            raise DegenerateFitError(
                f"rank-deficient fit at {x}: rank {rank} < {chart.chart_dim}"
            )
        l_by_group[gi] = sol.T
    components = []
    for i in range(f.q):
        gi = next(j for j, g in enumerate(groups) if i in g)
        components.append((base[i], l_by_group[gi]))
    return enforce_eqty(components, eqty_tol, chart, x)


def residual(f: SampledQFunction, g: AffineQGerm, x: int,
             schedule: RadiiSchedule) -> QuotientCurve:
    """Per-annulus suprema of dist(f(y), F(y)) / dist(y, x) for the germ's
    affine evaluation F."""
    pos = f.position(x)
    base_gap = qdist_one_to_many(g.p, f.values[pos][None, :, :])[0]
    scale = 1.0 + float(np.abs(f.values[pos]).max())
    if base_gap > 1e-8 * scale:
        raise PreconditionError("germ base value does not match f(x)")
    dom_dists = f.space.distances_from(x)[f.domain]
    sel = dom_dists > 0
    sel[pos] = False
    ys = f.domain[sel]
    in_chart = np.isin(ys, g.chart.domain, assume_unique=True)
    ys = ys[in_chart]
    dists = dom_dists[sel][in_chart]
    fvals = f.values[np.flatnonzero(sel)[in_chart]]
    gvals = eval_germ_many(g, ys)
    quotients = qdist_rowwise(fvals, gvals) / dists
    return _curve(schedule, dists, quotients)


def is_differentiable(curve: QuotientCurve, decision: DecisionRule = DecisionRule()) -> bool:
    """Decide 'residual tends to zero' from a sampled curve.

    True when the finest nonempty value is at most decision.floor, or the
    log-log slope fitted over positive nonempty annuli reaches
    decision.ratio_drop.  Needs at least 3 nonempty annuli.
    """
    pos = np.flatnonzero(curve.counts > 0)
    if pos.size < 3:
        raise PreconditionError("need at least 3 nonempty annuli to decide")
    if curve.values[pos[-1]] <= decision.floor:
        return True
    fit = pos[curve.values[pos] > 0]
    if fit.size < 2:
        return False
    slope = np.polyfit(np.log(curve.radii[fit]), np.log(curve.values[fit]), 1)[0]
    return bool(slope >= decision.ratio_drop)


# ---------------------------------------------------------------------------
# Local splitting of functions
# ---------------------------------------------------------------------------

def split_function(f: SampledQFunction, x: int, tol: float,
                   schedule: RadiiSchedule):
    """Factor f locally through the splitting of f(x).

    Returns (g, h, neighborhood): the two projected functions on the largest
    scheduled ball around x whose values all lie in the splitting
    neighborhood.  Raises PreconditionError when f(x) is diagonal at `tol` or
    no nontrivial ball stays inside the neighborhood.
    """
    fx = f.value_at(x)
    split = separation_split(fx)
    if split is None or _max_support_spread(fx) <= tol:
        raise PreconditionError(f"f({x}) is diagonal at tolerance {tol}")
    dists = f.space.distances_from(x)[f.domain]
    for r in schedule.radii():
        sel = dists < r
        members = f.domain[sel]
        if members.size < 2:
            continue
        vals = f.values[np.flatnonzero(sel)]
        if all(in_neighborhood(split, QPoint(v)) for v in vals):
            g_vals, h_vals = [], []
            for v in vals:
                gq, hq = project_split(split, QPoint(v))
                g_vals.append(gq.points)
                h_vals.append(hq.points)
            g = SampledQFunction(f.space, members, np.stack(g_vals))
            h = SampledQFunction(f.space, members, np.stack(h_vals))
            return g, h, members
    raise PreconditionError(
        f"no scheduled ball around {x} stays inside the splitting neighborhood"
    )


def _max_support_spread(p: QPoint) -> float:
    if p.q < 2:
        return 0.0
    diff = p.points[:, None, :] - p.points[None, :, :]
    return float(np.sqrt(np.einsum("ijk,ijk->ij", diff, diff).max()))


# ---------------------------------------------------------------------------
# Full report
# ---------------------------------------------------------------------------

def _interior_at_resolvable_scales(space: PointCloudSpace, set_mask: np.ndarray,
                                   x: int, schedule: RadiiSchedule, tol: float) -> bool:
    """Density-point test at the finest third of scales the sampling resolves.

    Unlike the strict schedule-wide classifier this never raises: points with
    no resolvable scale count as boundary.
    """
    dists = space.distances_from(x)
    resolvable = [r for r in schedule.radii() if np.count_nonzero(dists < r) >= 2]
    if not resolvable:
        return False
    keep = max(1, math.ceil(len(resolvable) / 3))
    for r in resolvable[-keep:]:
        in_ball = dists < r
        total = float(space.weights[in_ball].sum())
        outside = float(space.weights[in_ball & ~set_mask].sum())
        if outside / total > tol:
            return False
    return True


def default_fit_radius(f: SampledQFunction, x: int, schedule: RadiiSchedule,
                       chart: Chart, n_groups: int) -> float:
    """Smallest scheduled radius holding a comfortable sample for the fit."""
    needed = max(3 * (chart.chart_dim + 1) * n_groups, 8)
    dists = f.space.distances_from(x)[f.domain]
    for r in schedule.radii()[::-1]:
        if np.count_nonzero((dists > 0) & (dists < r)) >= needed:
            return float(r)
    return float(schedule.r0)


def differentiability_report(f: SampledQFunction, schedule: RadiiSchedule, chart: Chart,
                             decision: DecisionRule = DecisionRule(), *,
                             eqty_tol: float | None = None,
                             fit_radius: float | None = None,
                             infinity_threshold: float | None = None,
                             interior_tol: float = 0.1,
                             threads: int = 1) -> list[DiffVerdict]:
    """Run the full pipeline at every domain point.

    Deterministic given inputs and configuration: per-point work is pure and
    the result list is ordered by point index, so the parallelism degree
    never changes the output.
    """
    if infinity_threshold is None:
        glip = global_lipschitz(f)
        infinity_threshold = 10.0 * glip if math.isfinite(glip) and glip > 0 else 1e6

    domain_mask = np.zeros(len(f.space), dtype=bool)
    domain_mask[f.domain] = True

    def verdict_for(x: int) -> DiffVerdict:
        x = int(x)
        v = DiffVerdict(index=x, in_af=False, abgr_estimate=math.inf)
        v.boundary = not _interior_at_resolvable_scales(
            f.space, domain_mask, x, schedule, interior_tol
        )
        try:
            curve = abgr(f, x, schedule)
        except ResolutionError as exc:
            v.error = str(exc)
            return v
        v.abgr_curve = curve
        v.abgr_estimate = curve.headline()
        v.in_af = v.abgr_estimate <= infinity_threshold
        if not v.in_af:
            return v
        base = f.values[f.position(x)]
        tol = default_group_tol(base) if eqty_tol is None else eqty_tol
        radius = fit_radius
        if radius is None:
            radius = default_fit_radius(f, x, schedule, chart, len(_branch_groups(base, tol)))
        try:
            v.germ = fit_differential(f, x, radius, chart, tol)
            v.residual_curve = residual(f, v.germ, x, schedule)
            v.differentiable = is_differentiable(v.residual_curve, decision)
        except (PreconditionError, DegenerateFitError, ResolutionError) as exc:
            v.error = str(exc)
            v.differentiable = False
        return v

    points = [int(i) for i in f.domain]
    if threads <= 1:
        verdicts = [verdict_for(x) for x in points]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            verdicts = list(pool.map(verdict_for, points))
    return verdicts
