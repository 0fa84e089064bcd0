"""Stratification of sampled functions into locally Lipschitz pieces.

A point belongs to the (i, j) stratum around a reference value P when its
value is within i/(2j) of P and the function is i-Lipschitz against it across
the ball of radius 3/j (or, in the density variant, outside an exceptional
set of relative measure at most delta per ball).  Far-apart member pairs are
controlled through the reference value, close pairs through the local
condition, which caps the Lipschitz constant of the restriction by 6i; the
measured constant is recorded as a certificate per stratum.

The union of strata over a grid of (i, j) and a net of reference values is
compared against the direct finite-quotient set, giving an empirical cover
check.  A nearest-point extension operator and its quotient-inflation bound
complete the toolkit.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .diff import QuotientCurve, SampledQFunction, abgr, global_lipschitz
from .errors import PreconditionError, ResolutionError
from .qpoint import QPoint, qdist_one_to_many
from .space import PointCloudSpace, RadiiSchedule, as_index_set

__all__ = [
    "Stratum",
    "StratificationReport",
    "stratify",
    "lipschitz_certificate",
    "stepanov_cover",
    "greedy_value_net",
    "local_lipschitz",
    "headline_estimates",
    "extend",
    "extension_bound_check",
    "diagonal_set",
]


@dataclass(frozen=True)
class Stratum:
    """Members of one (i, j) stratum around a reference value, with the
    measured Lipschitz constant of the restriction (None if < 2 members)."""

    i: int
    j: int
    base_point: QPoint
    members: np.ndarray
    lip_certificate: float | None
    variant: str = "metric"


@dataclass
class StratificationReport:
    strata: list[Stratum]
    union: np.ndarray
    direct_af: np.ndarray
    uncovered: np.ndarray
    config: dict = field(default_factory=dict)


def _ordered_parallel(fn, n: int, threads: int) -> None:
    """Run fn(position) for 0..n-1, optionally across a thread pool.

    fn must write its own output slot, so the execution order is immaterial
    and results are identical at any parallelism degree.
    """
    if threads <= 1:
        for pos in range(n):
            fn(pos)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(fn, range(n)))


def local_lipschitz(f: SampledQFunction, radii, threads: int = 1) -> np.ndarray:
    """Per-point local Lipschitz quotients at several ball radii.

    Returns an array (len(f), len(radii)) whose (x, r)-entry is the max of
    dist(f(y), f(x)) / dist(y, x) over domain points y with 0 < dist < r
    (0 when the ball holds no other point).  One pass per point serves every
    radius.
    """
    requested = np.asarray(list(radii), dtype=np.float64)
    desc = np.sort(np.unique(requested))[::-1]
    out = np.zeros((len(f), desc.size))
    rmax = float(desc[0])

    def row(pos: int) -> None:
        dists = f.space.distances_from(int(f.domain[pos]))[f.domain]
        sel = (dists > 0) & (dists < rmax)
        sel[pos] = False
        d = dists[sel]
        if d.size == 0:
            return
        quot = qdist_one_to_many(f.values[pos], f.values[sel]) / d
        order = np.argsort(d, kind="stable")
        d_sorted = d[order]
        prefix = np.maximum.accumulate(quot[order])
        for ri, r in enumerate(desc):
            hi = int(np.searchsorted(d_sorted, r, side="left"))  # strict: d < r
            if hi > 0:
                out[pos, ri] = prefix[hi - 1]

    _ordered_parallel(row, len(f), threads)
    col_of = {float(r): i for i, r in enumerate(desc)}
    return out[:, [col_of[float(r)] for r in requested]]


def headline_estimates(f: SampledQFunction, schedule: RadiiSchedule,
                       threads: int = 1) -> np.ndarray:
    """Headline quotient estimate per domain point (inf where every annulus
    is empty).

    Equivalent to abgr(f, x, schedule).headline() pointwise, but computes
    quotients only inside the finest third of nonempty annuli, which is what
    the headline reads; annulus emptiness needs distances alone.
    """
    radii = schedule.radii()
    theta = schedule.theta
    out = np.full(len(f), np.inf)

    def row(pos: int) -> None:
        dists = f.space.distances_from(int(f.domain[pos]))[f.domain]
        live = (dists > radii[-1] * theta) & (dists <= radii[0])
        live[pos] = False
        sel = np.flatnonzero(live)
        d = dists[sel]
        if d.size == 0:
            return
        nonempty = [i for i, r in enumerate(radii)
                    if bool(np.any((d > r * theta) & (d <= r)))]
        if not nonempty:
            return
        keep = max(1, math.ceil(len(nonempty) / 3))
        chosen = nonempty[-keep:]
        # Scheduled annuli tile contiguously, and annuli between chosen ones
        # are empty, so one interval covers exactly the chosen members.
        r_hi = radii[min(chosen)]
        r_lo = radii[max(chosen)] * theta
        mask = (d > r_lo) & (d <= r_hi)
        quot = qdist_one_to_many(f.values[pos], f.values[sel[mask]]) / d[mask]
        out[pos] = float(quot.max())

    _ordered_parallel(row, len(f), threads)
    return out


def _values_vs_target(f: SampledQFunction, p: QPoint) -> np.ndarray:
    if p.q != f.q or p.k != f.k:
        raise PreconditionError("reference value has incompatible Q or k")
    return qdist_one_to_many(p.points, f.values)


def _approx_cond2(f: SampledQFunction, i: int, j: int, delta: float,
                  schedule: RadiiSchedule) -> np.ndarray:
    """Density-variant local condition per point: in every resolvable
    scheduled ball of radius < 3/j, the set violating the i-Lipschitz bound
    has relative measure <= delta."""
    out = np.ones(len(f), dtype=bool)
    radius_cap = 3.0 / j
    radii = [float(r) for r in schedule.radii() if r < radius_cap]
    weights = f.space.weights[f.domain]
    for pos, x in enumerate(f.domain):
        dists = f.space.distances_from(int(x))[f.domain]
        sel = dists > 0
        sel[pos] = False
        d = dists[sel]
        if d.size == 0:
            continue
        w = weights[sel]
        quot = qdist_one_to_many(f.values[pos], f.values[sel]) / d
        violates = quot > i
        self_w = float(f.space.weights[int(x)])
        for r in radii:
            in_ball = d < r
            if not in_ball.any():
                continue  # unresolvable at this scale
            total = float(w[in_ball].sum()) + self_w
            bad = float(w[in_ball & violates].sum())
            if bad / total > delta:
                out[pos] = False
                break
    return out


def stratify(f: SampledQFunction, p, i: int, j: int, *, variant: str = "metric",
             delta: float | None = None, schedule: RadiiSchedule | None = None,
             with_certificate: bool = True) -> Stratum:
    """Compute one stratum.

    Metric variant: members x satisfy dist(f(x), P) < i/(2j) and
    dist(f(y), f(x)) <= i dist(y, x) for every domain y in ball(x, 3/j).
    Density variant ("approx"): the second condition may fail on a set of
    relative measure <= delta inside each scheduled ball of radius < 3/j.
    """
    if i < 1 or j < 1:
        raise PreconditionError("i and j must be >= 1")
    p = p if isinstance(p, QPoint) else QPoint(p)
    cond1 = _values_vs_target(f, p) < i / (2.0 * j)
    if variant == "metric":
        cond2 = local_lipschitz(f, [3.0 / j])[:, 0] <= i
    elif variant == "approx":
        if delta is None or schedule is None:
            raise PreconditionError("the density variant needs delta and a schedule")
        cond2 = _approx_cond2(f, i, j, delta, schedule)
    else:
        raise PreconditionError(f"unknown variant {variant!r}")
    members = f.domain[cond1 & cond2]
    cert = None
    if with_certificate and members.size >= 2:
        cert = lipschitz_certificate(f, members)
    return Stratum(i=i, j=j, base_point=p, members=members,
                   lip_certificate=cert, variant=variant)


def lipschitz_certificate(f: SampledQFunction, members) -> float:
    """Measured Lipschitz constant of f restricted to `members`:
    max over member pairs of dist(f(y), f(z)) / dist(y, z)."""
    members = as_index_set(members, len(f.space))
    if members.size < 2:
        raise PreconditionError("need at least 2 members for a certificate")
    pos = f.positions(members)
    best = 0.0
    for a in range(members.size - 1):
        d = f.space.distances_from(int(members[a]))[members[a + 1:]]
        qd = qdist_one_to_many(f.values[pos[a]], f.values[pos[a + 1:]])
        ok = d > 0
        if ok.any():
            best = max(best, float((qd[ok] / d[ok]).max()))
    return best


def greedy_value_net(f: SampledQFunction, spacing: float) -> list[QPoint]:
    """Greedy net of observed values: scan in domain order, keep a value when
    it is farther than `spacing` from every kept value."""
    net_vals: list[np.ndarray] = []
    for row in f.values:
        if not net_vals:
            net_vals.append(row)
            continue
        d = qdist_one_to_many(row, np.stack(net_vals))
        if float(d.min()) > spacing:
            net_vals.append(row)
    return [QPoint(v) for v in net_vals]


def stepanov_cover(f: SampledQFunction, i_max: int, j_max: int, base_points=None, *,
                   schedule: RadiiSchedule, i_values=None, j_values=None,
                   variant: str = "metric", delta: float | None = None,
                   infinity_threshold: float | None = None,
                   with_certificates: bool = True, threads: int = 1) -> StratificationReport:
    """Strata for a grid of (i, j) and reference values, with a cover check.

    By default i and j range over 1..i_max and 1..j_max and the reference
    values are a greedy net of observed values at spacing 1/(2*j_max);
    `i_values`/`j_values` restrict the grid for large instances.  The union
    of strata is compared against the direct finite-quotient set (headline
    quotient <= `infinity_threshold`, auto-derived when omitted); the
    `uncovered` field is their difference.  Empty strata are retained.
    """
    if i_max < 1 or j_max < 1:
        raise PreconditionError("i_max and j_max must be >= 1")
    i_list = sorted(set(int(i) for i in (i_values if i_values is not None else range(1, i_max + 1))))
    j_list = sorted(set(int(j) for j in (j_values if j_values is not None else range(1, j_max + 1))))
    if any(i < 1 or i > i_max for i in i_list) or any(j < 1 or j > j_max for j in j_list):
        raise PreconditionError("i_values/j_values must lie within [1, i_max]/[1, j_max]")
    if base_points is None:
        base_points = greedy_value_net(f, 1.0 / (2.0 * j_max))
    base_points = [p if isinstance(p, QPoint) else QPoint(p) for p in base_points]

    if variant == "metric":
        lloc = local_lipschitz(f, [3.0 / j for j in j_list], threads=threads)
        lloc_by_j = {j: lloc[:, idx] for idx, j in enumerate(j_list)}
        cond2_by_ij = {(i, j): lloc_by_j[j] <= i for j in j_list for i in i_list}
    elif variant == "approx":
        if delta is None:
            raise PreconditionError("the density variant needs delta")
        cond2_by_ij = {(i, j): _approx_cond2(f, i, j, delta, schedule)
                       for j in j_list for i in i_list}
    else:
        raise PreconditionError(f"unknown variant {variant!r}")

    dist_to_base = {bi: _values_vs_target(f, p) for bi, p in enumerate(base_points)}

    strata: list[Stratum] = []
    union_mask = np.zeros(len(f), dtype=bool)
    for i in i_list:
        for j in j_list:
            cond2 = cond2_by_ij[(i, j)]
            for bi, p in enumerate(base_points):
                member_mask = (dist_to_base[bi] < i / (2.0 * j)) & cond2
                members = f.domain[member_mask]
                union_mask |= member_mask
                cert = None
                if with_certificates and members.size >= 2:
                    cert = lipschitz_certificate(f, members)
                strata.append(Stratum(i=i, j=j, base_point=p, members=members,
                                      lip_certificate=cert, variant=variant))

    if infinity_threshold is None:
        glip = global_lipschitz(f)
        infinity_threshold = 10.0 * glip if math.isfinite(glip) and glip > 0 else 1e6
    direct_mask = headline_estimates(f, schedule, threads=threads) <= infinity_threshold

    union = f.domain[union_mask]
    direct_af = f.domain[direct_mask]
    uncovered = f.domain[direct_mask & ~union_mask]
    config = {
        "i_max": i_max, "j_max": j_max, "i_values": i_list, "j_values": j_list,
        "variant": variant, "delta": delta,
        "n_base_points": len(base_points),
        "infinity_threshold": infinity_threshold,
        "schedule": {"r0": schedule.r0, "theta": schedule.theta, "m": schedule.m},
        "with_certificates": with_certificates,
    }
    return StratificationReport(strata=strata, union=union, direct_af=direct_af,
                                uncovered=uncovered, config=config)


# ---------------------------------------------------------------------------
# Extension
# ---------------------------------------------------------------------------

def extend(f: SampledQFunction, c) -> SampledQFunction:
    """Extend f from the index set `c` to the whole space by the exact
    nearest point of `c` (ties to the smallest index).  The restriction of
    the result to `c` reproduces f's values bitwise."""
    c = as_index_set(c, len(f.space))
    if c.size == 0:
        raise PreconditionError("C must be nonempty")
    cpos = f.positions(c)  # also checks C is inside the domain
    space = f.space
    nearest = np.empty(len(space), dtype=np.int64)
    nearest[c] = np.arange(c.size)
    mask = np.ones(len(space), dtype=bool)
    mask[c] = False
    outside = np.flatnonzero(mask)
    if outside.size:
        if space.distance_matrix is not None:
            sub = space.distance_matrix[np.ix_(outside, c)]
            nearest[outside] = np.argmin(sub, axis=1)
        else:
            cpts = space.points[c]
            chunk = max(1, int(2e7) // max(1, c.size))
            for s in range(0, outside.size, chunk):
                ys = outside[s:s + chunk]
                diff = space.points[ys][:, None, :] - cpts[None, :, :]
                d2 = np.einsum("ijk,ijk->ij", diff, diff)
                nearest[ys] = np.argmin(d2, axis=1)
    values = f.values[cpos[nearest]]
    return SampledQFunction(space, np.arange(len(space)), values)


def extension_bound_check(f: SampledQFunction, c, f_ext: SampledQFunction, x: int,
                          schedule: RadiiSchedule, slack: float = 1e-6):
    """Compare the extension's quotient estimate at x against three times the
    estimate of f along `c`.  Returns (lhs, rhs, ok)."""
    c = as_index_set(c, len(f.space))
    if int(np.searchsorted(c, x)) >= c.size or c[np.searchsorted(c, x)] != x:
        raise PreconditionError(f"point {x} does not belong to C")
    f_on_c = f.restrict(c)
    lhs = abgr(f_ext, x, schedule).headline()
    rhs = 3.0 * abgr(f_on_c, x, schedule).headline() + slack
    return lhs, rhs, bool(lhs <= rhs)


def diagonal_set(f: SampledQFunction, tol: float) -> np.ndarray:
    """Domain points whose value is concentrated at one point up to `tol`
    (max pairwise spread of the Q values)."""
    if tol < 0:
        raise PreconditionError("tolerance must be nonnegative")
    vals = f.values
    diff = vals[:, :, None, :] - vals[:, None, :, :]
    spread = np.sqrt(np.einsum("nijk,nijk->nij", diff, diff).max(axis=(1, 2)))
    return f.domain[spread <= tol]
