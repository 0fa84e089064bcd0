"""Command-line driver: ingestion, synthetic generators, reports, verification.

Exit-code contract: 0 success, 2 malformed file or payload, 3 dimension or
precondition violation, 4 acceptance failure (verify only).
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import fileio
from .config import ExperimentConfig
from .diff import differentiability_report
from .errors import (DegenerateFitError, DimensionMismatch, FormatError,
                     PreconditionError, QValuedError, ResolutionError)
from .germs import Chart
from .qpoint import qdist, qdist_bruteforce
from .space import as_index_set
from .stepanov import extend, extension_bound_check, stepanov_cover
from .synth import GENERATORS, SyntheticSpec, generate

__all__ = ["main"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qvalued",
        description="Numerical analysis of multiple-valued functions on sampled metric spaces.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("qdist", help="matching distance between two Q-point files")
    p.add_argument("file_a")
    p.add_argument("file_b")
    p.add_argument("--oracle", action="store_true",
                   help="also run the enumeration oracle (Q <= 8) and print the gap")

    p = sub.add_parser("synth", help="write a synthetic function file")
    p.add_argument("--generator", required=True, choices=sorted(GENERATORS))
    p.add_argument("--out", required=True)
    p.add_argument("--grid", type=int, default=33)
    p.add_argument("--q", type=int, default=2)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--amplitude", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("report", help="differentiability report for a function file")
    p.add_argument("function")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("stratify", help="stratification report for a function file")
    p.add_argument("function")
    p.add_argument("--i-max", type=int, required=True)
    p.add_argument("--j-max", type=int, required=True)
    p.add_argument("--i-values", type=int, nargs="+", default=None)
    p.add_argument("--j-values", type=int, nargs="+", default=None)
    p.add_argument("--variant", choices=("metric", "approx"), default="metric")
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--threads", type=int, default=None)

    p = sub.add_parser("extend", help="nearest-point extension from an index set")
    p.add_argument("function")
    p.add_argument("indices", help="JSON file holding the index list C")
    p.add_argument("--out", required=True)
    p.add_argument("--bounds-out", default=None)
    p.add_argument("--config", default=None)

    p = sub.add_parser("verify", help="run the acceptance suite")
    p.add_argument("--filter", default=None, help="restrict to a criterion family")
    p.add_argument("--out", default=None, help="write the JSON ledger here")
    p.add_argument("--config", default=None)
    return parser


def _load_config(path: str | None) -> ExperimentConfig:
    return ExperimentConfig() if path is None else ExperimentConfig.from_json(path)


def _cmd_qdist(args) -> int:
    a = fileio.load_qpoint(args.file_a)
    b = fileio.load_qpoint(args.file_b)
    d = qdist(a, b)
    print(f"distance: {d!r}")
    if args.oracle:
        oracle = qdist_bruteforce(a, b)
        print(f"oracle:   {oracle!r}")
        print(f"gap:      {abs(d - oracle):.3e}")
    return 0


def _cmd_synth(args) -> int:
    spec = SyntheticSpec(generator=args.generator, grid=args.grid, q=args.q, k=args.k,
                         dim=args.dim, amplitude=args.amplitude, noise=args.noise,
                         seed=args.seed)
    f, _ = generate(spec)
    fileio.save_function(f, args.out)
    print(f"wrote {args.out}: {args.generator}, {len(f)} points, Q={f.q}, k={f.k}")
    return 0


def _cmd_report(args) -> int:
    cfg = _load_config(args.config)
    if args.threads is not None:
        cfg.threads = args.threads
    if args.seed is not None:
        cfg.seed = args.seed
    f = fileio.load_function(args.function)
    if f.space.points is None:
        raise PreconditionError("reports need an embedded space (identity chart)")
    chart = Chart.identity(f.space)
    sched = cfg.schedule_for(f.space)
    verdicts = differentiability_report(
        f, sched, chart, cfg.decision(),
        eqty_tol=cfg.eqty_tol, fit_radius=cfg.fit_radius,
        infinity_threshold=cfg.infinity_threshold,
        interior_tol=cfg.interior_tol, threads=cfg.threads,
    )
    out = args.out or (args.function + ".report." + args.format)
    if args.format == "json":
        fileio.save_report_json(verdicts, out, config=cfg.echo())
    else:
        fileio.save_report_csv(verdicts, out)
    n_interior = sum(1 for v in verdicts if not v.boundary)
    n_diff = sum(1 for v in verdicts if v.differentiable and not v.boundary)
    pct = 100.0 * n_diff / n_interior if n_interior else 0.0
    print(f"differentiable: {pct:.1f}% of interior ({n_diff}/{n_interior}); wrote {out}")
    return 0


def _cmd_stratify(args) -> int:
    cfg = _load_config(args.config)
    if args.threads is not None:
        cfg.threads = args.threads
    f = fileio.load_function(args.function)
    sched = cfg.schedule_for(f.space)
    report = stepanov_cover(
        f, args.i_max, args.j_max,
        schedule=sched, i_values=args.i_values, j_values=args.j_values,
        variant=args.variant, delta=args.delta,
        infinity_threshold=cfg.infinity_threshold, threads=cfg.threads,
    )
    out = args.out or (args.function + ".strata." + args.format)
    if args.format == "json":
        fileio.save_stratification_json(report, out)
    else:
        fileio.save_stratification_csv(report, out)
    print(f"strata: {len(report.strata)}, union {report.union.size} of "
          f"{report.direct_af.size} finite-quotient points, "
          f"uncovered {report.uncovered.size}; wrote {out}")
    return 0


def _cmd_extend(args) -> int:
    cfg = _load_config(args.config)
    f = fileio.load_function(args.function)
    try:
        with open(args.indices, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise FormatError(f"no such file: {args.indices}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON in {args.indices}: {exc}") from None
    if not isinstance(raw, list) or not raw:
        raise FormatError("index file must hold a nonempty JSON list")
    c = as_index_set(raw, len(f.space))
    fe = extend(f, c)
    fileio.save_function(fe, args.out)
    sched = cfg.schedule_for(f.space)
    spacing = f.space.min_positive_distance()
    inside = np.zeros(len(f.space), dtype=bool)
    inside[c] = True
    rows = []
    for x in c:
        d = f.space.distances_from(int(x))
        if not np.any((d <= 2.05 * spacing) & ~inside):
            continue
        lhs, rhs, ok = extension_bound_check(f, c, fe, int(x), sched)
        rows.append({"index": int(x), "lhs": lhs, "rhs": rhs, "ok": ok})
    bounds_out = args.bounds_out or (args.out + ".bounds.json")
    fileio.write_json({"checks": rows, "all_ok": all(r["ok"] for r in rows)}, bounds_out)
    n_ok = sum(1 for r in rows if r["ok"])
    print(f"extension written to {args.out}; bound checks {n_ok}/{len(rows)} ok -> {bounds_out}")
    return 0


def _cmd_verify(args) -> int:
    from .acceptance import run_all

    results = run_all(family_filter=args.filter)
    for r in results:
        print(r.line())
    passed = all(r.passed for r in results)
    ledger = {
        "passed": passed,
        "criteria": [
            {"id": r.cid, "family": r.family, "name": r.name, "passed": r.passed,
             "details": r.details, "seconds": round(r.seconds, 3)}
            for r in results
        ],
    }
    if args.out:
        fileio.write_json(ledger, args.out)
    total = sum(r.seconds for r in results)
    print(f"{'PASS' if passed else 'FAIL'}: {sum(r.passed for r in results)}/{len(results)} "
          f"criteria in {total:.1f}s")
    return 0 if passed else 4


_HANDLERS = {
    "qdist": _cmd_qdist,
    "synth": _cmd_synth,
    "report": _cmd_report,
    "stratify": _cmd_stratify,
    "extend": _cmd_extend,
    "verify": _cmd_verify,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return 2
    except DimensionMismatch as exc:
        print(f"dimension mismatch: {exc}", file=sys.stderr)
        return 3
    except (PreconditionError, ResolutionError, DegenerateFitError) as exc:
        print(f"precondition violated: {exc}", file=sys.stderr)
        return 3
    except QValuedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
