"""Acceptance suite: every analytic identity the library claims, checked end to end.

Each criterion is a self-contained function returning a
:class:`CriterionResult`; the registry drives both ``qvalued verify`` and the
pytest acceptance module.  Criteria pin their own instance configuration
(seeds, schedules, thresholds) so a fresh checkout runs deterministically.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .diff import (DecisionRule, SampledQFunction, abgr, differentiability_report,
                   fit_differential, is_differentiable, residual)
from .germs import Chart
from .qpoint import (QPoint, canonical_sort, in_neighborhood, project_split,
                     qdist, qdist_bruteforce, separation_split)
from .space import (RadiiSchedule, ball_comparison_bound, classify_mu_interior,
                    doubling_constant, retraction)
from .stepanov import extend, extension_bound_check, stepanov_cover
from .synth import SyntheticSpec, generate, unit_grid_space

__all__ = ["CriterionResult", "CRITERIA", "run_criterion", "run_all"]

METRIC_EQ = 1e-9


@dataclass
class CriterionResult:
    cid: str
    family: str
    name: str
    passed: bool
    details: str
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.cid} {self.name} ({self.seconds:.1f}s) {self.details}"


def _random_qpoint(rng, q, k, scale=5.0) -> QPoint:
    return QPoint(rng.uniform(-scale, scale, size=(q, k)))


# -- 1: metric oracle equivalence ---------------------------------------------

def _c01_metric_oracle():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        q = int(rng.integers(2, 7))
        k = int(rng.integers(1, 4))
        a, b = _random_qpoint(rng, q, k), _random_qpoint(rng, q, k)
        worst = max(worst, abs(qdist(a, b) - qdist_bruteforce(a, b)))
    elapsed = time.perf_counter() - t0
    ok = worst <= METRIC_EQ and elapsed < 10.0
    return ok, f"worst |solver - enumeration| = {worst:.2e}, runtime {elapsed:.2f}s"


# -- 2: metric axioms ----------------------------------------------------------

def _c02_metric_axioms():
    rng = np.random.default_rng(102)
    worst_tri = 0.0
    for trial in range(1000):
        q = int(rng.integers(1, 7))
        k = int(rng.integers(1, 4))
        a, b, c = (_random_qpoint(rng, q, k) for _ in range(3))
        dab, dba = qdist(a, b), qdist(b, a)
        if dab != dba:
            return False, f"symmetry broken at trial {trial}: {dab} vs {dba}"
        dac, dbc = qdist(a, c), qdist(b, c)
        worst_tri = max(worst_tri, dac - (dab + dbc))
        # identity of indiscernibles on canonical multisets
        shuffled = QPoint(a.points[rng.permutation(q)])
        if qdist(a, shuffled) != 0.0 or shuffled != a:
            return False, f"reordered copy not at distance zero (trial {trial})"
        if a != b and qdist(a, b) <= 0.0:
            return False, f"distinct multisets at distance zero (trial {trial})"
    ok = worst_tri <= METRIC_EQ
    return ok, f"worst triangle defect = {worst_tri:.2e}"


# -- 3: splitting additivity ---------------------------------------------------

def _random_clustered_base(rng) -> QPoint:
    n_clusters = int(rng.integers(2, 4))
    k = int(rng.integers(1, 3))
    sizes = rng.multinomial(int(rng.integers(n_clusters, 7)) - n_clusters,
                            np.ones(n_clusters) / n_clusters) + 1
    direction = rng.normal(size=k)
    direction /= np.linalg.norm(direction)
    pts = []
    for ci, size in enumerate(sizes):
        center = 6.0 * ci * direction + rng.uniform(-0.3, 0.3, size=k)
        pts.extend(center + rng.uniform(-0.15, 0.15, size=(size, k)))
    return QPoint(np.asarray(pts))


def _c03_splitting_additivity():
    rng = np.random.default_rng(103)
    worst = 0.0
    for si in range(20):
        base = _random_clustered_base(rng)
        split = separation_split(base)
        if split is None:
            return False, f"splitting {si}: no separation found"
        eta = split.epsilon / (6.0 * math.sqrt(base.k))
        for _ in range(200):
            a = QPoint(base.points + rng.uniform(-eta, eta, size=base.points.shape))
            b = QPoint(base.points + rng.uniform(-eta, eta, size=base.points.shape))
            if not (in_neighborhood(split, a) and in_neighborhood(split, b)):
                return False, f"splitting {si}: perturbation left the neighborhood"
            a1, a2 = project_split(split, a)
            b1, b2 = project_split(split, b)
            dev = abs(qdist(a, b) ** 2 - qdist(a1, b1) ** 2 - qdist(a2, b2) ** 2)
            worst = max(worst, dev)
            recomposed = canonical_sort(np.vstack([a1.points, a2.points]))
            if not np.array_equal(recomposed, a.points):
                return False, f"splitting {si}: recomposition not exact"
    ok = worst <= METRIC_EQ
    return ok, f"worst additivity defect over 4000 pairs = {worst:.2e}"


# -- 4: affine exact recovery --------------------------------------------------

def _c04_affine_recovery():
    cases = [
        dict(q=2, dim=2, k=2, grid=17, seed=41, fit_radius=0.35),
        dict(q=3, dim=2, k=1, grid=17, seed=42, fit_radius=0.35),
        dict(q=4, dim=3, k=3, grid=13, seed=43, fit_radius=0.45),
        dict(q=2, dim=1, k=1, grid=65, seed=44, fit_radius=0.2),
    ]
    worst_entry, worst_res = 0.0, 0.0
    for case in cases:
        spec = SyntheticSpec("affine", grid=case["grid"], q=case["q"], k=case["k"],
                             dim=case["dim"], seed=case["seed"])
        f, info = generate(spec)
        chart = Chart.identity(f.space)
        x0 = info["center_index"]
        germ = fit_differential(f, x0, case["fit_radius"], chart)
        for i in range(f.q):
            gen = int(np.argmin(np.linalg.norm(info["p"] - germ.p[i], axis=1)))
            worst_entry = max(worst_entry, float(np.abs(germ.l[i] - info["matrices"][gen]).max()))
        sched = RadiiSchedule(0.25 * f.space.diameter(), 0.5, 8)
        curve = residual(f, germ, x0, sched)
        worst_res = max(worst_res, float(np.nanmax(curve.values)))
    ok = worst_entry <= 1e-8 and worst_res <= 1e-8
    return ok, f"max matrix entry error = {worst_entry:.2e}, max residual = {worst_res:.2e}"


# -- 5: coincident-branch grouping on diagonal functions ------------------------

def _c05_eqty_diagonal():
    worst_id = 0.0
    for q in (2, 3):
        spec = SyntheticSpec("diagonal", grid=17, q=q, k=2)
        f, info = generate(spec)
        chart = Chart.identity(f.space)
        sched = RadiiSchedule(0.25 * f.space.diameter(), 0.5, 6)
        verdicts = differentiability_report(f, sched, chart)
        for v in verdicts:
            if v.germ is None:
                return False, f"Q={q}: no germ at point {v.index} ({v.error})"
            if len(v.germ.groups) != 1:
                return False, f"Q={q}: germ at {v.index} has {len(v.germ.groups)} groups"
            blobs = {v.germ.l[i].tobytes() for i in range(q)}
            if len(blobs) != 1:
                return False, f"Q={q}: matrices not bitwise identical at {v.index}"
        # metric identity on the diagonal: dist(f(y), Q copies of P) = sqrt(Q) d(f_a(y), P)
        rng = np.random.default_rng(105)
        for pos in rng.choice(len(f), size=min(len(f), 400), replace=False):
            fa = f.values[pos][0]
            target = fa + rng.normal(size=fa.shape)
            lhs = qdist(QPoint(f.values[pos]), QPoint(np.tile(target, (q, 1))))
            rhs = math.sqrt(q) * float(np.linalg.norm(fa - target))
            worst_id = max(worst_id, abs(lhs - rhs))
    ok = worst_id <= METRIC_EQ
    return ok, f"single-group germs everywhere; worst diagonal identity defect = {worst_id:.2e}"


# -- 6: branch-point function at the origin --------------------------------------

def _c06_branchpoint():
    f, info = generate(SyntheticSpec("branchpoint", grid=129))
    x0 = info["center_index"]
    chart = Chart.identity(f.space)
    germ = fit_differential(f, x0, 0.5, chart)
    mat_norm = float(np.abs(germ.l).max())
    sched = RadiiSchedule(0.25 * f.space.diameter(), 0.5, 8)
    curve = residual(f, germ, x0, sched)
    pos = np.flatnonzero(curve.counts > 0)
    slope = float(np.polyfit(np.log(curve.radii[pos]), np.log(curve.values[pos]), 1)[0])
    verdict = is_differentiable(curve, DecisionRule(ratio_drop=0.45, floor=1e-6))
    ok = mat_norm <= 0.1 and slope >= 0.45 and verdict
    return ok, f"matrix norm = {mat_norm:.2e}, residual slope = {slope:.3f}, differentiable = {verdict}"


# -- 7: 6i Lipschitz certificates -------------------------------------------------

def _certificate_corpus():
    """Instances exercising both pair regimes (distances above and below 1/j)
    and both stratification variants."""
    out = []

    sp = unit_grid_space(101, 1, 0.0, 1.0)
    identity = SampledQFunction(sp, np.arange(101), sp.points[:, :, None])
    out.append(("identity-1d", identity, QPoint([[0.5]]),
                [(1, 1), (1, 2), (2, 2), (2, 3)], "metric", None, None))

    f_sep, info_sep = generate(SyntheticSpec("separated_smooth", grid=17))
    p_sep = QPoint(f_sep.values[f_sep.position(info_sep["center_index"])])
    out.append(("separated-2d", f_sep, p_sep,
                [(2, 1), (6, 1), (6, 2)], "metric", None, None))

    f_mix, _ = generate(SyntheticSpec("weierstrass_mix", grid=33))
    p_mix = QPoint(f_mix.values[f_mix.position(0)])
    out.append(("mix-2d", f_mix, p_mix,
                [(1, 6), (2, 6), (2, 20)], "metric", None, None))

    vals = np.zeros((101, 1, 1))
    vals[70, 0, 0] = 1.0
    spiky = SampledQFunction(sp, np.arange(101), vals)
    sched = RadiiSchedule(0.5, 0.5, 4)
    out.append(("spiky-approx", spiky, QPoint([[0.0]]),
                [(1, 2), (1, 4)], "approx", 0.05, sched))
    return out


def _c07_certificates():
    from .stepanov import lipschitz_certificate, stratify

    n_strata = 0
    regimes = {"far": False, "near": False}
    for name, f, p, ij_list, variant, delta, sched in _certificate_corpus():
        for i, j in ij_list:
            stratum = stratify(f, p, i, j, variant=variant, delta=delta, schedule=sched)
            members = stratum.members
            if members.size < 2:
                continue
            n_strata += 1
            cert = lipschitz_certificate(f, members)
            if cert > 6 * i + METRIC_EQ:
                return False, f"{name} (i={i}, j={j}): certificate {cert:.3f} > 6i = {6*i}"
            pts_dists = [f.space.distance(int(members[0]), int(m)) for m in members[1:]]
            if any(d >= 1.0 / j for d in pts_dists):
                regimes["far"] = True
            if any(0 < d < 1.0 / j for d in pts_dists):
                regimes["near"] = True
    ok = n_strata > 0 and regimes["far"] and regimes["near"]
    return ok, f"{n_strata} nonempty strata, all certificates <= 6i; both pair regimes present = {regimes}"


# -- 8: cover of the rough/smooth mix ---------------------------------------------

MIX_MARGIN = 0.05
MIX_THRESHOLD = 5.0


def _c08_stepanov_cover():
    details = []
    for grid, m in ((64, 6), (128, 7)):
        f, info = generate(SyntheticSpec("weierstrass_mix", grid=grid))
        rough = info["rough_mask"]
        u = f.space.points[:, 0]
        margin = np.abs(u - info["cut"]) <= MIX_MARGIN
        sched = RadiiSchedule(0.4, 0.5, m)
        report = stepanov_cover(f, 2, 60, schedule=sched, i_values=[2], j_values=[60],
                                infinity_threshold=MIX_THRESHOLD)
        covered = np.zeros(len(f), dtype=bool)
        covered[np.searchsorted(f.domain, report.union)] = True
        correct = np.where(rough, ~covered, covered)[~margin]
        rate = float(correct.mean())
        uncovered_mask = np.zeros(len(f), dtype=bool)
        uncovered_mask[np.searchsorted(f.domain, report.uncovered)] = True
        leak = int(np.count_nonzero(uncovered_mask & ~margin))
        details.append(f"{grid}x{grid}: correct = {100*rate:.2f}%, uncovered off-margin = {leak}")
        if rate < 0.95 or leak != 0:
            return False, "; ".join(details)
    return True, "; ".join(details)


# -- 9: extension bounds ------------------------------------------------------------

def _extension_corpus():
    """(name, f, C) instances; boundary points are derived per instance."""
    out = []

    def grid1d(n, lo, hi):
        return unit_grid_space(n, 1, lo, hi)

    sp = grid1d(201, -1.0, 1.0)
    u = sp.points[:, 0]
    dom = np.arange(len(sp))
    out.append(("identity-right-half", SampledQFunction(sp, dom, u[:, None, None]),
                np.flatnonzero(u >= 0)))
    out.append(("square-right-half", SampledQFunction(sp, dom, (u ** 2)[:, None, None]),
                np.flatnonzero(u >= 0)))

    sp2 = grid1d(201, 0.0, 1.0)
    u2 = sp2.points[:, 0]
    dom2 = np.arange(len(sp2))
    out.append(("constant-gap", SampledQFunction(sp2, dom2, np.ones((201, 1, 1))),
                np.flatnonzero((u2 <= 0.4) | (u2 >= 0.6))))
    out.append(("sine-left-half", SampledQFunction(sp2, dom2, np.sin(2 * np.pi * u2)[:, None, None]),
                np.flatnonzero(u2 <= 0.5)))
    out.append(("kink-right-half", SampledQFunction(sp, dom, np.abs(u)[:, None, None]),
                np.flatnonzero(u >= 0)))

    sp3 = unit_grid_space(41, 2, -1.0, 1.0)
    pts = sp3.points
    dom3 = np.arange(len(sp3))
    out.append(("plane-half", SampledQFunction(sp3, dom3, (0.25 * (pts[:, 0] + pts[:, 1]))[:, None, None]),
                np.flatnonzero(pts[:, 0] >= 0)))
    out.append(("product-quarter", SampledQFunction(sp3, dom3, (pts[:, 0] * pts[:, 1])[:, None, None]),
                np.flatnonzero((pts[:, 0] >= 0) & (pts[:, 1] >= 0))))

    f_sep, _ = generate(SyntheticSpec("separated_smooth", grid=41))
    out.append(("separated-disk", f_sep,
                np.flatnonzero((pts ** 2).sum(axis=1) <= 0.5)))

    f_diag, _ = generate(SyntheticSpec("diagonal", grid=33, q=2, k=2))
    pts_d = f_diag.space.points
    out.append(("diagonal-top-half", f_diag, np.flatnonzero(pts_d[:, 1] >= 0)))

    n = 101
    line = np.linspace(0.0, 1.0, n)
    table = np.abs(line[:, None] - line[None, :])
    from .space import PointCloudSpace
    sp_t = PointCloudSpace.from_distance_matrix(table, dim=1)
    out.append(("table-identity", SampledQFunction(sp_t, np.arange(n), line[:, None, None]),
                np.arange(n // 2, n)))
    return out


def _boundary_points(f: SampledQFunction, c: np.ndarray, limit: int = 12) -> list[int]:
    inside = np.zeros(len(f.space), dtype=bool)
    inside[c] = True
    spacing = f.space.min_positive_distance()
    picks = []
    for x in c:
        d = f.space.distances_from(int(x))
        near = d <= 2.05 * spacing
        if np.any(near & ~inside):
            picks.append(int(x))
    step = max(1, len(picks) // limit)
    return picks[::step][:limit]


def _c09_extension():
    slack = 1e-6
    worst_gap = -math.inf
    n_checked = 0
    for name, f, c in _extension_corpus():
        fe = extend(f, c)
        if not np.array_equal(fe.values[fe.positions(c)], f.values[f.positions(c)]):
            return False, f"{name}: restriction to C not bitwise equal"
        sched = RadiiSchedule(0.25 * f.space.diameter(), 0.5, 6)
        for x in _boundary_points(f, c):
            lhs, rhs, ok = extension_bound_check(f, c, fe, x, sched, slack=slack)
            n_checked += 1
            worst_gap = max(worst_gap, lhs - rhs)
            if not ok:
                return False, f"{name}: bound fails at {x}: lhs = {lhs:.4f} > rhs = {rhs:.4f}"
    return True, f"{n_checked} boundary points on 10 instances; worst lhs - rhs = {worst_gap:.2e}"


# -- 10: retraction decay at the cusp ------------------------------------------------

def _c10_retraction_decay():
    sp = unit_grid_space(257, 2, -1.0, 1.0)
    pts = sp.points
    in_cusp = (pts[:, 0] > 0) & (np.abs(pts[:, 1]) <= pts[:, 0] ** 2)
    e_set = np.flatnonzero(~in_cusp)
    origin = int(np.flatnonzero((pts[:, 0] == 0) & (pts[:, 1] == 0))[0])
    sched = RadiiSchedule(0.8, 0.5, 4)
    if not classify_mu_interior(sp, e_set, origin, sched, tol=0.1):
        return False, "origin not recognized as a density point of the cusp complement"
    rmap = retraction(sp, e_set, origin)
    d0 = sp.distances_from(origin)
    gap = np.linalg.norm(pts - pts[rmap], axis=1)
    ratios = []
    for r in sched.radii():
        annulus = (d0 > r * sched.theta) & (d0 <= r)
        ratios.append(float((gap[annulus] / d0[annulus]).max()))
    monotone = all(a > b for a, b in zip(ratios, ratios[1:]))
    ok = monotone and ratios[-1] <= 0.2
    return ok, f"annulus ratios = {[round(r, 4) for r in ratios]}, finest <= 0.2: {ratios[-1] <= 0.2}"


# -- 11: doubling estimates -----------------------------------------------------------

def _c11_doubling():
    sched = RadiiSchedule(0.1, 0.7, 3)

    sp1 = unit_grid_space(1025, 1, 0.0, 1.0)
    centers1 = np.flatnonzero(np.abs(sp1.points[:, 0] - 0.5) <= 0.25)[::64]
    k1 = doubling_constant(sp1, sched, centers1)

    sp2 = unit_grid_space(256, 2, 0.0, 1.0)
    inside = np.all(np.abs(sp2.points - 0.5) <= 0.25, axis=1)
    centers2 = np.flatnonzero(inside)[::997]
    k2 = doubling_constant(sp2, sched, centers2)

    hand = (ball_comparison_bound(2, 4) == 4.0 and ball_comparison_bound(3, 5) == 27.0)
    ok = (1.6 <= k1 <= 2.4) and (3.2 <= k2 <= 4.8) and hand
    return ok, f"1-D estimate = {k1:.3f} (target 2 +-20%), 2-D estimate = {k2:.3f} (target 4 +-20%), hand values exact = {hand}"


# -- 12: determinism across thread counts ----------------------------------------------

def _c12_determinism():
    import os
    import tempfile

    from . import cli

    with tempfile.TemporaryDirectory() as tmp:
        func_bp = os.path.join(tmp, "bp.json")
        rc = cli.main(["synth", "--generator", "branchpoint", "--grid", "33",
                       "--out", func_bp, "--seed", "7"])
        if rc != 0:
            return False, f"synth exited {rc}"
        rep = {}
        for th in ("1", "8"):
            out = os.path.join(tmp, f"rep{th}.json")
            rc = cli.main(["report", func_bp, "--out", out, "--threads", th])
            if rc != 0:
                return False, f"report --threads {th} exited {rc}"
            with open(out, "rb") as fh:
                rep[th] = fh.read()
        func_mix = os.path.join(tmp, "mix.json")
        rc = cli.main(["synth", "--generator", "weierstrass_mix", "--grid", "33",
                       "--out", func_mix, "--seed", "7"])
        if rc != 0:
            return False, f"synth exited {rc}"
        strat = {}
        for th in ("1", "8"):
            out = os.path.join(tmp, f"strat{th}.json")
            rc = cli.main(["stratify", func_mix, "--i-max", "2", "--j-max", "12",
                           "--j-values", "6", "12", "--out", out, "--threads", th])
            if rc != 0:
                return False, f"stratify --threads {th} exited {rc}"
            with open(out, "rb") as fh:
                strat[th] = fh.read()
    rep_ok = rep["1"] == rep["8"]
    strat_ok = strat["1"] == strat["8"]
    ok = rep_ok and strat_ok
    return ok, f"report bitwise identical = {rep_ok}, stratification bitwise identical = {strat_ok}"


# -- registry ---------------------------------------------------------------------------

CRITERIA = [
    ("C01", "metric", "matching metric equals the enumeration oracle", _c01_metric_oracle),
    ("C02", "metric", "metric axioms on random triples", _c02_metric_axioms),
    ("C03", "splitting", "splitting additivity and exact recomposition", _c03_splitting_additivity),
    ("C04", "fit", "exact recovery of affine branches", _c04_affine_recovery),
    ("C05", "eqty", "coincident branches share one matrix bitwise", _c05_eqty_diagonal),
    ("C06", "branchpoint", "zero differential and half-power residual at the origin", _c06_branchpoint),
    ("C07", "stratify", "stratum certificates stay below 6i", _c07_certificates),
    ("C08", "stratify", "rough/smooth cover classification", _c08_stepanov_cover),
    ("C09", "extension", "nearest-point extension keeps the factor-3 bound", _c09_extension),
    ("C10", "retraction", "retraction ratios decay at the cusp", _c10_retraction_decay),
    ("C11", "doubling", "doubling estimates on uniform grids", _c11_doubling),
    ("C12", "determinism", "bitwise identical outputs across thread counts", _c12_determinism),
]


def run_criterion(cid: str) -> CriterionResult:
    for c, family, name, fn in CRITERIA:
        if c == cid:
            t0 = time.perf_counter()
            try:
                passed, details = fn()
            except Exception as exc:  # a crash is a failure, not an abort
                passed, details = False, f"raised {type(exc).__name__}: {exc}"
            return CriterionResult(cid=c, family=family, name=name, passed=passed,
                                   details=details, seconds=time.perf_counter() - t0)
    raise KeyError(f"unknown criterion {cid}")


def run_all(family_filter: str | None = None) -> list[CriterionResult]:
    results = []
    for cid, family, _, _ in CRITERIA:
        if family_filter and family_filter not in family and family_filter not in cid.lower():
            continue
        results.append(run_criterion(cid))
    return results
