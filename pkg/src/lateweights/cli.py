"""Command-line interface: estimate, simulate, and oracle subcommands.

Exit codes: 0 success, 2 data/validation error, 3 solver failure. Data goes
to stdout (or ``--out``); diagnostics go to stderr. Every run emits a
manifest (resolved configuration plus library version) alongside its
results, and identical invocations produce identical output bytes.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from . import __version__, inference
from .data import load_csv, validate
from .errors import EstimationError, MethodMismatch
from .estimators import (
    EstimatorKind,
    LateEstimate,
    estimate,
    linear_iv,
    parse_kind,
)
from .ips import fit_cb, fit_ml
from .simulation import (
    DESIGN_NAMES,
    ORACLE_SEED,
    SimDesign,
    export,
    mc_true_late,
    run_mc,
    true_late,
)

RESULT_COLUMNS = (
    "estimator", "tau", "se", "denom_kappa", "denom_kappa1", "denom_kappa0",
    "denom_hajek", "denom_first_stage", "warnings",
)

_DENOM_KEYS = {
    "denom_kappa": "K",
    "denom_kappa1": "K1",
    "denom_kappa0": "K0",
    "denom_hajek": "HAJEK_D",
    "denom_first_stage": "FIRST_STAGE",
}

_FMT = "%.17g"


def _fmt(v) -> str:
    if v is None:
        return ""
    return _FMT % v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lateweights",
        description="Weighting estimators of the local average treatment effect",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    pe = sub.add_parser("estimate", help="estimate treatment effects from a CSV sample")
    pe.add_argument("--data", required=True, help="input CSV file")
    pe.add_argument("--y", required=True, help="outcome column")
    pe.add_argument("--d", required=True, help="treatment column (0/1)")
    pe.add_argument("--z", required=True, help="instrument column (0/1)")
    pe.add_argument("--x", default="", help="comma-separated covariate columns")
    pe.add_argument("--estimators", default="iv,cb,tnorm,a10,a,t,a0",
                    help="comma-separated estimator names")
    pe.add_argument("--ips", default="auto", choices=["auto", "ml", "cb", "known"],
                    help="propensity source; 'auto' pairs each estimator with its "
                         "natural fit (balancing for cb, likelihood otherwise)")
    pe.add_argument("--p", default=None,
                    help="column of known propensities (required with --ips known)")
    pe.add_argument("--out", default=None, help="output file (default: stdout)")
    pe.add_argument("--format", default="csv", choices=["csv", "json"])
    pe.add_argument("--manifest-only", action="store_true",
                    help="echo the resolved configuration and exit")

    ps = sub.add_parser("simulate", help="run one Monte Carlo cell and export results")
    ps.add_argument("--design", required=True, help=f"one of {', '.join(DESIGN_NAMES)}")
    ps.add_argument("--delta", type=float, default=0.05, help="overlap bound in (0, 0.5)")
    ps.add_argument("--n", type=int, default=1000, help="sample size per replication")
    ps.add_argument("--reps", type=int, default=None,
                    help="replications (default: 2000, or 500 when delta < 0.02)")
    ps.add_argument("--full", action="store_true", help="run the full 10,000 replications")
    ps.add_argument("--seed", type=int, default=0, help="base seed")
    ps.add_argument("--threads", type=int, default=None,
                    help="worker cap (default: available cores)")
    ps.add_argument("--estimators", default="iv,cb,tnorm,a10,a,t,a0")
    ps.add_argument("--ips", default="fitted", choices=["fitted", "known"],
                    help="use fitted propensities (tables) or the true ones")
    ps.add_argument("--out", default=".", help="output directory")
    ps.add_argument("--format", default="csv", choices=["csv", "json"])
    ps.add_argument("--no-figures", action="store_true",
                    help="skip rendering the box plot and histogram figures")
    ps.add_argument("--manifest-only", action="store_true")

    po = sub.add_parser("oracle", help="print ground-truth effects with a simulation cross-check")
    po.add_argument("--design", default=None, help="one design (default: all)")
    po.add_argument("--delta", type=float, default=0.05,
                    help="overlap bound (does not affect the value)")
    po.add_argument("--draws", type=int, default=10_000_000,
                    help="cross-check simulation draws")
    po.add_argument("--seed", type=int, default=ORACLE_SEED)
    po.add_argument("--out", default=None, help="JSON cache file for the oracle values")
    po.add_argument("--manifest-only", action="store_true")
    return parser


def _manifest(args: argparse.Namespace, extra: dict | None = None) -> dict:
    config = {k: v for k, v in sorted(vars(args).items()) if k != "manifest_only"}
    out = {"package": "lateweights", "version": __version__, "config": config}
    if extra:
        out.update(extra)
    return out


def _write_manifest(args, path=None, extra: dict | None = None) -> str:
    text = json.dumps(_manifest(args, extra), indent=2, sort_keys=True) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def _fit_record(fit) -> dict:
    return {
        "method": fit.method,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "max_moment_norm": fit.max_moment_norm,
        "p_min": fit.p_min,
        "p_max": fit.p_max,
        "alpha": [float(a) for a in fit.alpha],
    }


def _read_column(path: str, name: str) -> np.ndarray:
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        if name not in header:
            raise EstimationError(f"column {name!r} not found in {path}")
        j = header.index(name)
        vals = [float(row[j]) for row in reader if row and row[0].strip() != ""]
    return np.array(vals)


def _result_row(est: LateEstimate) -> dict[str, str]:
    row = {
        "estimator": est.kind.value,
        "tau": _fmt(est.tau),
        "se": _fmt(est.se),
        "warnings": ";".join(est.warnings),
    }
    for col, key in _DENOM_KEYS.items():
        row[col] = _fmt(est.denominators.get(key))
    return row


def _emit_rows(rows: list[dict[str, str]], fmt: str, out: str | None) -> None:
    buf = io.StringIO()
    if fmt == "csv":
        writer = csv.DictWriter(buf, fieldnames=RESULT_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    else:
        for row in rows:
            buf.write(json.dumps(row, sort_keys=True) + "\n")
    if out is None:
        sys.stdout.write(buf.getvalue())
    else:
        with open(out, "w", newline="") as fh:
            fh.write(buf.getvalue())


def cmd_estimate(args: argparse.Namespace) -> int:
    if args.manifest_only:
        sys.stdout.write(_write_manifest(args))
        return 0
    kinds = [parse_kind(s) for s in args.estimators.split(",") if s.strip()]
    if args.ips == "known" and not args.p:
        raise EstimationError("--ips known requires --p <column>")
    if args.ips in ("ml", "known") and EstimatorKind.CB in kinds:
        raise MethodMismatch(
            "estimator 'cb' requires balancing-fitted propensities; "
            f"drop it or use --ips auto/cb (got --ips {args.ips})"
        )
    x_cols = [c.strip() for c in args.x.split(",") if c.strip()]
    ds = load_csv(args.data, y=args.y, d=args.d, z=args.z, x=x_cols)
    for diag in validate(ds):
        print(f"estimate: {diag}", file=sys.stderr)

    needs_ml = args.ips in ("auto", "ml") and any(
        k not in (EstimatorKind.CB, EstimatorKind.LINEAR_IV) for k in kinds
    )
    needs_cb = args.ips == "cb" or (args.ips == "auto" and EstimatorKind.CB in kinds)
    fit_m = fit_ml(ds) if needs_ml or needs_cb else None
    fit_c = fit_cb(ds, init=fit_m.alpha if fit_m else None) if needs_cb else None
    p_known = _read_column(args.data, args.p) if args.ips == "known" else None
    for fit in (fit_m, fit_c):
        if fit is not None:
            print(
                f"estimate: {fit.method} fit converged in {fit.iterations} iterations, "
                f"moment sup-norm {fit.max_moment_norm:.2e}, "
                f"fitted p range [{fit.p_min:.4g}, {fit.p_max:.4g}]",
                file=sys.stderr,
            )

    rows = []
    for kind in kinds:
        if kind is EstimatorKind.LINEAR_IV:
            rows.append(_result_row(linear_iv(ds)))
            continue
        if kind is EstimatorKind.CB:
            est = estimate(ds, kind, fit_c.p, method="cb")
            est = inference.standard_error(ds, est, fit=fit_c)
        elif args.ips == "known":
            est = estimate(ds, kind, p_known, method="known")
            est = inference.standard_error(ds, est, p=p_known)
        elif args.ips == "cb":
            est = estimate(ds, kind, fit_c.p, method="cb")
            est = inference.standard_error(ds, est, fit=fit_c)
        else:
            est = estimate(ds, kind, fit_m.p, method="ml")
            est = inference.standard_error(ds, est, fit=fit_m)
        rows.append(_result_row(est))

    _emit_rows(rows, args.format, args.out)
    fits = {fit.method: _fit_record(fit) for fit in (fit_m, fit_c) if fit is not None}
    extra = {"fits": fits, "diagnostics": [str(d) for d in validate(ds)]}
    if args.out is not None:
        _write_manifest(args, args.out + ".manifest.json", extra=extra)
    else:
        print(_write_manifest(args, extra=extra), file=sys.stderr, end="")
    return 0


def _default_reps(delta: float) -> int:
    return 500 if delta < 0.02 else 2000


def cmd_simulate(args: argparse.Namespace) -> int:
    if args.design not in DESIGN_NAMES:
        raise EstimationError(
            f"unknown design {args.design!r}; valid designs: {', '.join(DESIGN_NAMES)}"
        )
    if args.manifest_only:
        sys.stdout.write(_write_manifest(args))
        return 0
    design = SimDesign(args.design, args.delta)
    reps = 10_000 if args.full else (args.reps or _default_reps(args.delta))
    kinds = tuple(parse_kind(s) for s in args.estimators.split(",") if s.strip())
    summary = run_mc(design, n=args.n, reps=reps, base_seed=args.seed,
                     kinds=kinds, threads=args.threads, ips=args.ips)

    os.makedirs(args.out, exist_ok=True)
    prefix = f"{args.design}_delta{args.delta:g}_n{args.n}_seed{args.seed}"
    ext = "jsonl" if args.format == "json" else "csv"
    paths = {}
    for what in ("TABLE", "SHARES", "ESTIMATES"):
        paths[what] = os.path.join(args.out, f"{prefix}_{what.lower()}.{ext}")
        export(summary, what, paths[what], fmt=args.format)
    _write_manifest(args, os.path.join(args.out, f"{prefix}_manifest.json"))
    if not args.no_figures:
        from . import figures  # deferred: pulls in matplotlib

        figures.render_shares_boxplot(
            summary, os.path.join(args.out, f"{prefix}_shares_boxplot.png"))
        figures.render_estimates_hist(
            summary, os.path.join(args.out, f"{prefix}_estimates_hist.png"))
    failed = summary.n_failed
    print(
        f"simulate: {args.design} delta={args.delta:g} n={args.n} reps={reps} "
        f"true_late={summary.true_late:.6f} failures={failed}",
        file=sys.stderr,
    )
    for where, causes in summary.failures.items():
        for cause, count in causes.items():
            print(f"simulate: failure [{where}] x{count}: {cause}", file=sys.stderr)
    return 0


def cmd_oracle(args: argparse.Namespace) -> int:
    if args.manifest_only:
        sys.stdout.write(_write_manifest(args))
        return 0
    names = [args.design] if args.design else list(DESIGN_NAMES)
    for name in names:
        if name not in DESIGN_NAMES:
            raise EstimationError(
                f"unknown design {name!r}; valid designs: {', '.join(DESIGN_NAMES)}"
            )
    records = {}
    for name in names:
        design = SimDesign(name, args.delta)
        value = true_late(design)
        approx = mc_true_late(design, draws=args.draws, seed=args.seed)
        method = "closed_form" if name in ("A1", "A2") else "quadrature"
        records[name] = {
            "true_late": value,
            "method": method,
            "mc_value": approx,
            "mc_draws": args.draws,
            "mc_seed": args.seed,
            "discrepancy": abs(value - approx),
        }
        print(f"{name} true_late={value:.10f} method={method} "
              f"mc={approx:.10f} draws={args.draws} seed={args.seed} "
              f"discrepancy={abs(value - approx):.3e}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(records, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "estimate":
            return cmd_estimate(args)
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "oracle":
            return cmd_oracle(args)
        parser.error(f"unknown command {args.command!r}")
    except EstimationError as exc:
        print(f"{args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"{args.command}: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"{args.command}: i/o error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
