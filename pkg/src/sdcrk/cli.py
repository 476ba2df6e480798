"""Command-line front end: order tables, convergence, stability, relaxation.

Exit codes: 0 success, 1 usage error, 2 golden-check mismatch, 3 numerical
failure.  The default working precision comes from the SDCRK_PRECISION
environment variable (bits, default 256).

Schedule DSL (also accepted by :func:`sdcrk.tableau.parse_schedule`):
comma-separated entries ``name[(params)][*count]``; the first expanded entry
is the initializer A_delta^0 and the last entry repeats to fill K+1 slots.

=========  =====================================  =======================
name       matrix                                 parameters
=========  =====================================  =======================
zero       0 (copied initial guess)
ie / ee    implicit / explicit Euler
trap       node-interval trapezoid weights
lu         transposed U of LU(A^T)
minsrns    diag(c)/s   (alias: ns)
flex       diag(c)/k   (alias: minsrflex)         auto-indexed
jumper     diag(c)/(2k)                           auto-indexed
jshift     diag(c)/(2k - v)                       v=<int>, auto-indexed
diag       alpha * diag(c)                        scale, e.g. diag(1/3)
minsrs     optimized stiff diagonal               seed=<int>
exact      A itself (collocation recovery)
=========  =====================================  =======================

Auto-indexed kinds receive consecutive indices 1, 2, ... in order of
appearance, so ``zero,jumper`` gives diag(c)/(2k) at iteration k and
``flex*3,jshift(v=3)`` continues with k = 4.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import mp
from .errors import (
    CheckMismatchError,
    PoleError,
    NewtonConvergenceError,
    SdcError,
    SingularEedError,
)
from .integrate import (
    NewtonOptions,
    convergence_study,
    dahlquist_problem,
    long_time_error_growth,
    reference_solution,
    rigid_body_problem,
)
from .order import jump_condition_check, order_table, table_mode
from .stability import (
    ComplexGrid,
    GridSpec,
    certify_stiff_nilpotency,
    contour_polylines,
    growth_rate_grid,
    stability_region,
)
from .tableau import (
    NodeFamily,
    SdcMethod,
    assemble_sdc,
    check_simplifying,
    collocation_method,
    parse_schedule,
    tableau_from_json,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CHECK_MISMATCH = 2
EXIT_NUMERICAL = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        raise UsageError(message)


def _parse_int_range(text: str) -> list[int]:
    """'1..6' -> [1..6]; '4' -> [4]; '1,3,5' -> [1, 3, 5]."""
    if ".." in text:
        lo, hi = text.split("..", 1)
        lo, hi = int(lo), int(hi)
        if hi < lo:
            raise UsageError(f"empty range {text!r}")
        return list(range(lo, hi + 1))
    return [int(tok) for tok in text.split(",") if tok]


def _parse_dts(text: str) -> list[float]:
    """'2^-2..2^-8' -> dyadic steps; otherwise comma-separated floats."""
    if "^" in text:
        lo, hi = text.split("..", 1)

        def expo(tok: str) -> int:
            base, e = tok.split("^", 1)
            if base.strip() != "2":
                raise UsageError("dyadic ranges must use base 2, e.g. 2^-2..2^-8")
            return int(e)

        e_lo, e_hi = expo(lo), expo(hi)
        step = 1 if e_hi >= e_lo else -1
        return [2.0**e for e in range(e_lo, e_hi + step, step)]
    return [float(tok) for tok in text.split(",") if tok]


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _build_method(args, iterations: int) -> SdcMethod:
    for name in ("nodes", "s", "schedule"):
        if getattr(args, name, None) is None:
            raise UsageError(f"--{name} is required here")
    family = NodeFamily(args.nodes, int(args.s))
    tableau = collocation_method(family, args.precision)
    mode = table_mode(family, args.mode)
    return SdcMethod(tableau, parse_schedule(args.schedule, tableau, iterations), mode)


# ---------------------------------------------------------------------------
# subcommands


def cmd_order_table(args) -> int:
    s_values = _parse_int_range(args.s)
    k_values = _parse_int_range(args.k)
    digits = mp.decimal_digits(args.precision)
    max_order = max(NodeFamily(args.nodes, s).order or 2 * s for s in s_values)
    if digits < 3 * max_order:
        raise UsageError(
            f"{args.precision} bits (~{digits} digits) cannot verify order "
            f"{max_order}; pass --precision {int(3.5 * max_order / 0.30103)} or higher"
        )
    table = order_table(
        args.nodes, s_values, k_values, args.schedule, mode=args.mode, precision=args.precision
    )
    csv_text = table.to_csv()
    if args.out:
        _write(Path(args.out + ".csv"), csv_text)
        _write(Path(args.out + ".json"), json.dumps(table.to_json_dict(), indent=2) + "\n")
    else:
        sys.stdout.write(csv_text)
    if args.check:
        golden = Path(args.check).read_text()
        mismatches = _compare_tables(csv_text, golden)
        if mismatches:
            for line in mismatches:
                print(f"check mismatch: {line}", file=sys.stderr)
            raise CheckMismatchError(f"{len(mismatches)} cells differ from {args.check}")
        print(f"check ok: matches {args.check}")
    return EXIT_OK


def _parse_table_csv(text: str) -> dict:
    rows = [line.strip() for line in text.strip().splitlines() if line.strip()]
    header = rows[0].split(",")
    ks = [int(tok) for tok in header[1:]]
    out = {}
    for line in rows[1:]:
        cells = line.split(",")
        s = int(cells[0])
        for k, val in zip(ks, cells[1:]):
            out[(s, k)] = int(val)
    return out


def _compare_tables(got_text: str, want_text: str) -> list[str]:
    got = _parse_table_csv(got_text)
    want = _parse_table_csv(want_text)
    problems = []
    for key in sorted(want):
        if key not in got:
            problems.append(f"missing cell s={key[0]}, k={key[1]}")
        elif got[key] != want[key]:
            problems.append(
                f"s={key[0]}, k={key[1]}: computed {got[key]}, golden {want[key]}"
            )
    return problems


def cmd_convergence(args) -> int:
    k_values = _parse_int_range(args.k)
    dts = _parse_dts(args.dts)
    if args.problem == "dahlquist":
        problem = dahlquist_problem(complex(args.lam))
    else:
        problem = rigid_body_problem()
    if args.t_end is not None:
        problem = dataclasses.replace(problem, t_span=(problem.t_span[0], args.t_end))
    reference = None
    if problem.exact is None:
        reference = reference_solution(problem, min(dts) / 20.0)
    slopes = {}
    for k in k_values:
        method = _build_method(args, k)
        result = convergence_study(
            problem, method, dts, reference=reference, floor=args.floor
        )
        slopes[k] = {
            "slope": result.slope,
            "saturated": result.saturated,
            "floor": result.floor,
            "points": [list(p) for p in result.points],
        }
        csv_lines = ["dt,error"] + [f"{dt!r},{err!r}" for dt, err in result.points]
        if args.out:
            _write(Path(f"{args.out}_k{k}.csv"), "\n".join(csv_lines) + "\n")
        else:
            print(f"# k = {k}, slope = {result.slope}")
            print("\n".join(csv_lines))
    if args.out:
        _write(Path(args.out + "_slopes.json"), json.dumps(slopes, indent=2) + "\n")
    else:
        print(json.dumps(slopes, indent=2))
    return EXIT_OK


def _grid_from_arg(text: str | None) -> GridSpec:
    if not text:
        return GridSpec()
    parts = [tok.strip() for tok in text.split(",")]
    if len(parts) != 6:
        raise UsageError("--grid wants re_min,re_max,im_min,im_max,n_re,n_im")
    return GridSpec(
        float(parts[0]), float(parts[1]), float(parts[2]), float(parts[3]),
        int(parts[4]), int(parts[5]),
    )


def cmd_stability(args) -> int:
    spec = _grid_from_arg(args.grid)
    if args.tableau_json:
        tableau = tableau_from_json(Path(args.tableau_json).read_text(), args.precision)
        grid = stability_region(tableau, spec)
    elif args.rho:
        if args.k is None:
            raise UsageError("--k is required here")
        method = _build_method(args, args.k)
        grid = growth_rate_grid(method.tableau, method.schedule, spec)
    else:
        if args.k is None:
            raise UsageError("--k is required here")
        method = _build_method(args, args.k)
        grid = stability_region(assemble_sdc(method), spec)
    csv_text = grid.to_csv()
    if args.out:
        _write(Path(args.out + ".csv"), csv_text)
        _write(Path(args.out + ".json"), json.dumps(grid.to_json_dict()) + "\n")
        if args.contour:
            polys = contour_polylines(grid, level=1.0)
            payload = [poly.tolist() for poly in polys]
            _write(Path(args.out + "_contour.json"), json.dumps(payload) + "\n")
    else:
        sys.stdout.write(csv_text)
    if args.check:
        _compare_grids(csv_text, Path(args.check).read_text(), args.check_tol)
        print(f"check ok: matches {args.check} within {args.check_tol}")
    return EXIT_OK


def _compare_grids(got_text: str, want_text: str, tol: float) -> None:
    def rows(text):
        return [
            line.split(",")
            for line in text.strip().splitlines()
            if line and not line.startswith("#") and not line.startswith("re,")
        ]

    got, want = rows(got_text), rows(want_text)
    if len(got) != len(want):
        raise CheckMismatchError(f"grid sizes differ: {len(got)} vs {len(want)}")
    for g, w in zip(got, want):
        gv, wv = float(g[2]), float(w[2])
        if np.isinf(gv) and np.isinf(wv):
            continue
        if abs(gv - wv) > tol:
            raise CheckMismatchError(
                f"grid value at re={g[0]}, im={g[1]}: {gv!r} vs golden {wv!r}"
            )


def cmd_relaxation(args) -> int:
    problem = rigid_body_problem()
    method = _build_method(args, args.k)
    result = long_time_error_growth(
        problem, method, args.t_end, args.dt, with_error=args.with_error
    )
    for label, series in (("raw", result.raw), ("relaxed", result.relaxed)):
        lines = ["t,u_1,u_2,u_3,H,drift,error,gamma"]
        for i, t in enumerate(series.times):
            u = series.states[i]
            err = "" if series.errors is None else repr(float(series.errors[i]))
            gam = ""
            if series.gammas is not None and i > 0:
                gam = repr(float(series.gammas[i - 1]))
            h = problem.quadratic_invariant(u)
            cells = [float(t), *(float(x) for x in u), h, float(series.invariant_drift[i])]
            lines.append(",".join(repr(v) for v in cells) + f",{err},{gam}")
        if args.out:
            _write(Path(f"{args.out}_{label}.csv"), "\n".join(lines) + "\n")
        else:
            print(f"# {label}: max drift {series.invariant_drift.max():.3e}")
    if not args.out:
        return EXIT_OK
    summary = {
        "raw_max_drift": float(result.raw.invariant_drift.max()),
        "relaxed_max_drift": float(result.relaxed.invariant_drift.max()),
    }
    _write(Path(args.out + "_summary.json"), json.dumps(summary, indent=2) + "\n")
    return EXIT_OK


def cmd_certify(args) -> int:
    method = _build_method(args, args.k)
    report: dict = {
        "family": args.nodes,
        "s": method.s,
        "k": method.k,
        "schedule": list(method.schedule.labels()),
        "final_update": method.final_update,
    }
    try:
        nil = certify_stiff_nilpotency(method.tableau, method.schedule, tol=args.nilpotency_tol)
        report["stiff_nilpotency"] = {
            "norm": nil.norm,
            "passed": nil.passed,
            "tolerance": nil.tolerance,
        }
    except (SingularEedError, PoleError) as exc:
        report["stiff_nilpotency"] = {"error": str(exc), "passed": False}
    jumps = {}
    for k in range(1, method.k + 1):
        jumps[str(k)] = jump_condition_check(
            method, method.schedule.mats[k], block=k - 1
        )
    report["jump_condition"] = jumps
    base = check_simplifying(method.tableau)
    report["simplifying_assumptions"] = {
        "tableau": {"B": base.p_b, "C": base.eta_c, "D": base.zeta_d},
        "eeds": [],
    }
    for k in range(1, method.k + 1):
        eed = method.schedule.mats[k]
        rep = check_simplifying(method.tableau, eed)
        report["simplifying_assumptions"]["eeds"].append(
            {
                "k": k,
                "label": eed.label,
                "C_W": rep.eta_cw,
                "D_Y": rep.zeta_dy,
                "W": [float(w) for w in rep.w_constants],
                "Y": [float(y) for y in rep.y_constants],
            }
        )
    text = json.dumps(report, indent=2) + "\n"
    if args.out:
        _write(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument wiring


def _add_method_args(sub, *, with_k=True, required=True):
    sub.add_argument("--nodes", required=required, choices=("gauss", "radau", "lobatto", "equidistant"))
    sub.add_argument("--s", type=int, required=required, help="stage count")
    sub.add_argument("--schedule", required=required, help="schedule DSL, e.g. zero,jumper")
    sub.add_argument(
        "--mode",
        default="auto",
        choices=("auto", "quadrature", "last-stage", "extrapolation"),
        help="final update; auto = last-stage when c_s = 1, else quadrature",
    )
    if with_k:
        sub.add_argument("--k", type=int, required=required, help="number of sweeps K")


def build_parser(default_precision: int) -> _Parser:
    parser = _Parser(prog="sdcrk", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument(
        "--precision", type=int, default=default_precision,
        help=f"working precision in bits (default {default_precision}, env {mp.PRECISION_ENV_VAR})",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("order-table", help="detected-order tables over (s, k)")
    p.add_argument("--nodes", required=True, choices=("gauss", "radau", "lobatto", "equidistant"))
    p.add_argument("--s", required=True, help="stage counts, e.g. 1..6")
    p.add_argument("--k", required=True, help="iteration counts, e.g. 1..8")
    p.add_argument("--schedule", required=True)
    p.add_argument("--mode", default="auto", choices=("auto", "quadrature", "last-stage", "extrapolation"))
    p.add_argument("--out", help="output prefix (writes .csv and .json)")
    p.add_argument("--check", help="golden CSV; exit 2 on mismatch")
    p.set_defaults(fn=cmd_order_table)

    p = subs.add_parser("convergence", help="error-vs-dt study with fitted slopes")
    p.add_argument("--problem", default="dahlquist", choices=("dahlquist", "rigid-body"))
    p.add_argument("--lam", default="-1", help="lambda for the dahlquist problem")
    _add_method_args(p, with_k=False)
    p.add_argument("--k", required=True, help="iteration counts, e.g. 1..5")
    p.add_argument("--dts", default="2^-2..2^-8", help="step sizes, dyadic range or comma list")
    p.add_argument("--t-end", type=float, default=None)
    p.add_argument("--floor", type=float, default=None, help="error floor for the slope fit")
    p.add_argument("--out", help="output prefix")
    p.set_defaults(fn=cmd_convergence)

    p = subs.add_parser("stability", help="|R(z)| or growth-rate grids")
    _add_method_args(p, required=False)  # superseded by --tableau-json
    p.add_argument("--rho", action="store_true", help="sample the growth rate instead of |R|")
    p.add_argument("--grid", help="re_min,re_max,im_min,im_max,n_re,n_im")
    p.add_argument("--contour", action="store_true", help="also emit level-1 polylines (needs scikit-image)")
    p.add_argument("--tableau-json", help="sample a tableau loaded from JSON instead")
    p.add_argument("--out", help="output prefix")
    p.add_argument("--check", help="golden grid CSV")
    p.add_argument("--check-tol", type=float, default=1e-9)
    p.set_defaults(fn=cmd_stability)

    p = subs.add_parser("relaxation", help="invariant drift with and without relaxation")
    _add_method_args(p)
    p.add_argument("--dt", type=float, required=True)
    p.add_argument("--t-end", type=float, required=True)
    p.add_argument("--with-error", action="store_true", help="also track global error (slow)")
    p.add_argument("--out", help="output prefix")
    p.set_defaults(fn=cmd_relaxation)

    p = subs.add_parser("certify", help="stiff nilpotency, jump conditions, assumptions")
    _add_method_args(p)
    p.add_argument("--nilpotency-tol", type=float, default=1e-8)
    p.add_argument("--out", help="report path (JSON)")
    p.set_defaults(fn=cmd_certify)

    return parser


def main(argv=None) -> int:
    try:
        default_precision = mp.default_precision()
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    parser = build_parser(default_precision)
    try:
        args = parser.parse_args(argv)
        if args.precision < 64:
            raise UsageError("precision must be at least 64 bits")
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CheckMismatchError as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK_MISMATCH
    except (NewtonConvergenceError, PoleError, SingularEedError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SdcError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
