"""Monte Carlo designs, ground-truth oracle, and the replication harness.

Five data-generating designs share one latent system: a uniform covariate, a
logistic instrument-assignment probability whose steepness is controlled by
an overlap parameter, a threshold-crossing treatment equation, and normal
outcome errors correlated with the treatment error. The overlap parameter
bounds the instrument probability inside [delta, 1 - delta], so small values
of delta produce the near-zero-denominator pathology on purpose.

The true effect among compliers is computed by an independent oracle:
closed-form truncated-normal means where the compliance interval is free of
the covariate, one-dimensional adaptive quadrature otherwise. A long
simulation cross-check of the oracle is available and surfaced by the CLI.
"""

from __future__ import annotations

import concurrent.futures
import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.stats import norm

from . import inference
from .data import Dataset
from .errors import EstimationError
from .estimators import DEFAULT_KINDS, EstimatorKind, estimate, linear_iv
from .ips import fit_cb, fit_ml, logistic
from .kappa import compute as kappa_compute

DESIGN_NAMES = ("A1", "A2", "B", "C", "D")

#: Fixed seed for the oracle's simulation cross-check.
ORACLE_SEED = 20230324

#: Quadrature tolerance for covariate-dependent compliance intervals.
QUAD_TOL = 1e-10

#: Column order of the SHARES export: the seven complier-share estimators,
#: with the balancing-fit kappa share reported through both weight vectors
#: (the two columns agree whenever the balancing fit converged).
SHARE_COLUMNS = (
    "iv_first_stage",
    "hajek_denom_ml",
    "kappa1_ml",
    "kappa0_ml",
    "kappa_ml",
    "cb_denom",
    "kappa1_cb",
    "kappa0_cb",
)

_CHOL_V = np.sqrt(0.75)  # v = 0.5 eps1 + sqrt(0.75) * independent normal


@dataclass(frozen=True)
class SimDesign:
    """One simulation design: a name from DESIGN_NAMES plus an overlap delta."""

    name: str
    delta: float

    def __post_init__(self):
        if self.name not in DESIGN_NAMES:
            raise ValueError(f"unknown design {self.name!r}; expected one of {DESIGN_NAMES}")
        if not 0.0 < self.delta < 0.5:
            raise ValueError(f"delta must lie in (0, 0.5), got {self.delta}")

    @property
    def theta0(self) -> float:
        """Steepness of the instrument-assignment index, ln((1-delta)/delta)."""
        return float(np.log((1.0 - self.delta) / self.delta))

    def mu_d(self, x, z: int):
        """Treatment-equation index for instrument arm z."""
        x = np.asarray(x, dtype=float)
        if self.name == "A1":
            return np.full_like(x, 4.0 * z)
        if self.name == "A2":
            return np.full_like(x, 4.0 * (z - 1.0))
        return -1.0 + 2.0 * x + 2.122 * z

    def mu_y1(self, x):
        """Treated-outcome mean."""
        x = np.asarray(x, dtype=float)
        if self.name in ("A1", "A2", "B"):
            return np.full_like(x, 0.3989)
        return 9.0 * (x + 3.0) ** 2

    def mu_z(self, x):
        """Instrument-assignment index before scaling by theta0."""
        x = np.asarray(x, dtype=float)
        if self.name == "D":
            return x + x ** 2 - 1.0
        return 2.0 * x - 1.0

    def pi(self, x):
        """True instrument propensity, bounded inside [delta, 1 - delta]."""
        return logistic(self.mu_z(x) * self.theta0)


@dataclass(frozen=True)
class LatentRecord:
    """Latent quantities retained per generated sample."""

    d1: np.ndarray
    d0: np.ndarray
    complier: np.ndarray
    p_true: np.ndarray
    y1: np.ndarray
    y0: np.ndarray


def replication_rng(base_seed: int, rep: int | None = None) -> np.random.Generator:
    """PCG64 generator; per-replication streams derive from (base_seed, rep)."""
    if rep is None:
        return np.random.default_rng(base_seed)
    return np.random.default_rng((int(base_seed), int(rep)))


def generate(design: SimDesign, n: int, seed) -> tuple[Dataset, LatentRecord]:
    """Draw one sample of size n from a design.

    ``seed`` may be an integer or anything accepted by numpy's default_rng.
    The covariate enters the returned Dataset linearly, which under design D
    deliberately omits the quadratic instrument term.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x = rng.random(n)
    u = rng.random(n)
    normals = rng.standard_normal((n, 3))
    eps1 = normals[:, 0]
    eps0 = normals[:, 1]
    v = 0.5 * normals[:, 0] + _CHOL_V * normals[:, 2]

    p_true = design.pi(x)
    z = (u < p_true).astype(float)
    d1 = (design.mu_d(x, 1) > v).astype(float)
    d0 = (design.mu_d(x, 0) > v).astype(float)
    d = z * d1 + (1.0 - z) * d0
    y1 = design.mu_y1(x) + eps1
    y0 = eps0
    y = d * y1 + (1.0 - d) * y0

    ds = Dataset.from_arrays(y, d, z, covariates=x, names=("x",))
    latent = LatentRecord(d1=d1, d0=d0, complier=(d1 > d0), p_true=p_true,
                          y1=y1, y0=y0)
    return ds, latent


_TRUE_LATE_CACHE: dict[str, float] = {}


def true_late(design: SimDesign) -> float:
    """Ground-truth mean treatment effect among compliers.

    Depends only on the treatment and outcome equations, never on the
    instrument process or delta. Compliance is the event that the latent
    treatment error falls in [mu_d(x, 0), mu_d(x, 1)); the conditional mean
    of the correlated outcome error follows from truncated-normal algebra.
    Values are cached per design name.
    """
    cached = _TRUE_LATE_CACHE.get(design.name)
    if cached is not None:
        return cached

    if design.name in ("A1", "A2"):
        a, b = (0.0, 4.0) if design.name == "A1" else (-4.0, 0.0)
        mean_v = (norm.pdf(a) - norm.pdf(b)) / (norm.cdf(b) - norm.cdf(a))
        value = 0.3989 + 0.5 * mean_v
    else:
        def complier_prob(x):
            return norm.cdf(design.mu_d(x, 1)) - norm.cdf(design.mu_d(x, 0))

        def weighted_effect(x):
            a = design.mu_d(x, 0)
            b = design.mu_d(x, 1)
            return (design.mu_y1(x) * (norm.cdf(b) - norm.cdf(a))
                    + 0.5 * (norm.pdf(a) - norm.pdf(b)))

        num, _ = integrate.quad(weighted_effect, 0.0, 1.0,
                                epsabs=QUAD_TOL, epsrel=QUAD_TOL)
        den, _ = integrate.quad(complier_prob, 0.0, 1.0,
                                epsabs=QUAD_TOL, epsrel=QUAD_TOL)
        value = num / den
    _TRUE_LATE_CACHE[design.name] = float(value)
    return float(value)


def mc_true_late(design: SimDesign, draws: int = 10_000_000,
                 seed: int = ORACLE_SEED, chunk: int = 1_000_000,
                 rao_blackwell: bool = True) -> float:
    """Simulation cross-check of :func:`true_late` (mean effect on compliers).

    Draws the latent system directly and averages the treatment effect over
    flagged compliers. With ``rao_blackwell`` the outcome errors are replaced
    by their conditional mean given the latent treatment error (0.5 v), which
    removes pure outcome noise without touching the compliance algebra the
    oracle is being checked against; pass False for the raw effect draws.
    """
    rng = np.random.default_rng((seed, DESIGN_NAMES.index(design.name)))
    total = 0.0
    count = 0
    remaining = draws
    while remaining > 0:
        m = min(chunk, remaining)
        remaining -= m
        x = rng.random(m)
        normals = rng.standard_normal((m, 3))
        eps1 = normals[:, 0]
        eps0 = normals[:, 1]
        v = 0.5 * normals[:, 0] + _CHOL_V * normals[:, 2]
        complier = (design.mu_d(x, 1) > v) & (design.mu_d(x, 0) <= v)
        if rao_blackwell:
            effect = design.mu_y1(x) + 0.5 * v
        else:
            effect = design.mu_y1(x) + eps1 - eps0
        total += float(np.sum(effect[complier]))
        count += int(np.sum(complier))
    return total / count


# ---------------------------------------------------------------------------
# Replication harness
# ---------------------------------------------------------------------------

_WEIGHTING_KINDS = (
    EstimatorKind.CB, EstimatorKind.T_NORM, EstimatorKind.A10,
    EstimatorKind.A, EstimatorKind.T_UNNORM, EstimatorKind.A0,
)


def _hajek_treatment_contrast(ds: Dataset, p: np.ndarray) -> float:
    w1 = ds.z / p
    w0 = (1.0 - ds.z) / (1.0 - p)
    return float(w1 @ ds.d / np.sum(w1) - w0 @ ds.d / np.sum(w0))


def _one_replication(design: SimDesign, n: int, base_seed: int, rep: int,
                     kinds: tuple[EstimatorKind, ...], ips: str) -> dict:
    ds, latent = generate(design, n, replication_rng(base_seed, rep))
    z_int = ds.z.astype(bool)
    d_int = ds.d.astype(bool)
    cells = (int(np.sum(z_int & ~d_int)), int(np.sum(~z_int & d_int)))

    estimates: dict[str, float] = {}
    ses: dict[str, float] = {}
    shares: dict[str, float] = dict.fromkeys(SHARE_COLUMNS, np.nan)
    failures: dict[str, str] = {}

    fit_m = None
    fit_c = None
    try:
        fit_m = fit_ml(ds)
    except (EstimationError, np.linalg.LinAlgError) as exc:
        failures["ml_fit"] = f"{type(exc).__name__}: {exc}"
    try:
        fit_c = fit_cb(ds, init=None if fit_m is None else fit_m.alpha)
    except (EstimationError, np.linalg.LinAlgError) as exc:
        failures["cb_fit"] = f"{type(exc).__name__}: {exc}"

    if fit_m is not None:
        kw = kappa_compute(ds.d, ds.z, fit_m.p)
        shares["kappa_ml"] = float(np.mean(kw.kappa))
        shares["kappa1_ml"] = float(np.mean(kw.kappa1))
        shares["kappa0_ml"] = float(np.mean(kw.kappa0))
        shares["hajek_denom_ml"] = _hajek_treatment_contrast(ds, fit_m.p)
    if fit_c is not None:
        shares["cb_denom"] = _hajek_treatment_contrast(ds, fit_c.p)
        kw_cb = kappa_compute(ds.d, ds.z, fit_c.p)
        shares["kappa1_cb"] = float(np.mean(kw_cb.kappa1))
        shares["kappa0_cb"] = float(np.mean(kw_cb.kappa0))

    for kind in kinds:
        key = kind.value
        try:
            if kind is EstimatorKind.LINEAR_IV:
                est = linear_iv(ds)
                shares["iv_first_stage"] = est.denominators["FIRST_STAGE"]
                estimates[key] = est.tau
                ses[key] = est.se
                continue
            if kind is EstimatorKind.CB:
                if fit_c is None:
                    raise EstimationError("covariate balancing fit unavailable")
                est = estimate(ds, kind, fit_c.p, method="cb")
                est = inference.standard_error(ds, est, fit=fit_c)
            elif ips == "known":
                est = estimate(ds, kind, latent.p_true, method="known")
                est = inference.standard_error(ds, est, p=latent.p_true)
            else:
                if fit_m is None:
                    raise EstimationError("maximum likelihood fit unavailable")
                est = estimate(ds, kind, fit_m.p, method="ml")
                est = inference.standard_error(ds, est, fit=fit_m)
            estimates[key] = est.tau
            ses[key] = est.se
        except (EstimationError, np.linalg.LinAlgError) as exc:
            estimates[key] = np.nan
            ses[key] = np.nan
            failures[key] = f"{type(exc).__name__}: {exc}"
    return {"rep": rep, "estimates": estimates, "ses": ses, "shares": shares,
            "cells": cells, "failures": failures}


def _worker(args):
    name, delta, n, base_seed, rep, kind_values, ips = args
    design = SimDesign(name, delta)
    kinds = tuple(EstimatorKind(v) for v in kind_values)
    return _one_replication(design, n, base_seed, rep, kinds, ips)


@dataclass
class McSummary:
    """Aggregated Monte Carlo results for one (design, delta, n) cell."""

    design: str
    delta: float
    n: int
    reps: int
    base_seed: int
    true_late: float
    kinds: tuple[str, ...]
    estimates: dict[str, np.ndarray]
    ses: dict[str, np.ndarray]
    shares: dict[str, np.ndarray]
    cells: np.ndarray
    failures: dict[str, dict[str, int]] = field(default_factory=dict)
    stats: dict[str, dict[str, float]] = field(default_factory=dict)

    @property
    def n_failed(self) -> int:
        """Replications with at least one recorded failure."""
        bad = np.zeros(self.reps, dtype=bool)
        for key in self.kinds:
            bad |= ~np.isfinite(self.estimates[key])
        return int(np.sum(bad))


def run_mc(design: SimDesign, n: int, reps: int, base_seed: int,
           kinds: tuple[EstimatorKind, ...] = DEFAULT_KINDS,
           threads: int | None = None, ips: str = "fitted") -> McSummary:
    """Run the replication study for one (design, delta, n) cell.

    Every replication draws its own seed from (base_seed, index), so results
    are identical for any worker count. Failed replications are recorded with
    their cause and excluded from an estimator's moments, never dropped
    silently. The linear IV benchmark is always computed, since every MSE is
    reported relative to it.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    if ips not in ("fitted", "known"):
        raise ValueError(f"ips must be 'fitted' or 'known', got {ips!r}")
    kinds = tuple(kinds)
    run_kinds = kinds if EstimatorKind.LINEAR_IV in kinds \
        else (EstimatorKind.LINEAR_IV,) + kinds
    kind_values = tuple(k.value for k in run_kinds)

    tasks = [(design.name, design.delta, n, base_seed, r, kind_values, ips)
             for r in range(reps)]
    threads = threads or (os.cpu_count() or 1)
    if threads > 1 and reps >= 16:
        with concurrent.futures.ProcessPoolExecutor(max_workers=threads) as pool:
            raw = list(pool.map(_worker, tasks,
                                chunksize=max(1, reps // (threads * 8))))
    else:
        raw = [_worker(t) for t in tasks]
    raw.sort(key=lambda r: r["rep"])

    estimates = {v: np.array([r["estimates"].get(v, np.nan) for r in raw])
                 for v in kind_values}
    ses = {v: np.array([np.nan if r["ses"].get(v) is None else r["ses"].get(v, np.nan)
                        for r in raw]) for v in kind_values}
    shares = {c: np.array([r["shares"][c] for r in raw]) for c in SHARE_COLUMNS}
    cells = np.array([r["cells"] for r in raw], dtype=int)
    failures: dict[str, dict[str, int]] = {}
    for r in raw:
        for where, cause in r["failures"].items():
            bucket = failures.setdefault(where, {})
            bucket[cause] = bucket.get(cause, 0) + 1

    truth = true_late(design)
    stats: dict[str, dict[str, float]] = {}
    iv = estimates[EstimatorKind.LINEAR_IV.value]
    iv_ok = np.isfinite(iv)
    mse_iv = float(np.mean((iv[iv_ok] - truth) ** 2)) if iv_ok.any() else np.nan
    for v in kind_values:
        est = estimates[v]
        se = ses[v]
        ok = np.isfinite(est)
        used = int(np.sum(ok))
        if used == 0:
            stats[v] = {"mse": np.nan, "mse_ratio": np.nan, "abs_bias": np.nan,
                        "coverage": np.nan, "n_used": 0}
            continue
        mse = float(np.mean((est[ok] - truth) ** 2))
        abs_bias = float(abs(np.mean(est[ok]) - truth))
        cov_ok = ok & np.isfinite(se)
        coverage = float(np.mean(
            np.abs(est[cov_ok] - truth) <= 1.96 * se[cov_ok]
        )) if cov_ok.any() else np.nan
        stats[v] = {
            "mse": mse,
            "mse_ratio": mse / mse_iv if mse_iv else np.nan,
            "abs_bias": abs_bias,
            "coverage": coverage,
            "n_used": used,
        }
    report_kinds = tuple(k.value for k in run_kinds if k in kinds or k is EstimatorKind.LINEAR_IV)
    return McSummary(design=design.name, delta=design.delta, n=n, reps=reps,
                     base_seed=base_seed, true_late=truth, kinds=report_kinds,
                     estimates=estimates, ses=ses, shares=shares, cells=cells,
                     failures=failures, stats=stats)


def _export_rows(summary: McSummary, what: str):
    fmt = "%.17g"
    if what == "TABLE":
        header = ["estimator", "mse_ratio", "abs_bias", "coverage"]
        rows = [[v] + [fmt % summary.stats[v][k]
                       for k in ("mse_ratio", "abs_bias", "coverage")]
                for v in summary.kinds]
    elif what == "SHARES":
        header = ["rep", *SHARE_COLUMNS, "n_z1d0", "n_z0d1"]
        rows = [[r] + [fmt % summary.shares[c][r] for c in SHARE_COLUMNS]
                + [int(summary.cells[r, 0]), int(summary.cells[r, 1])]
                for r in range(summary.reps)]
    elif what == "ESTIMATES":
        header = ["rep", *summary.kinds]
        rows = [[r] + [fmt % summary.estimates[v][r] for v in summary.kinds]
                for r in range(summary.reps)]
    else:
        raise ValueError(f"unknown export {what!r}; expected TABLE, SHARES, or ESTIMATES")
    return header, rows


def export(summary: McSummary, what: str, path, fmt: str = "csv") -> None:
    """Write one view of a summary: TABLE, SHARES, or ESTIMATES.

    TABLE holds one row per estimator with the relative MSE, absolute bias,
    and coverage. SHARES holds the per-replication complier-share estimates
    of the seven share estimators plus the off-diagonal (Z, D) cell counts.
    ESTIMATES holds per-replication point estimates per estimator. ``fmt``
    is ``"csv"`` or ``"json"`` (line-delimited records mirroring the CSV
    columns).
    """
    header, rows = _export_rows(summary, what.upper())
    with open(path, "w", newline="") as fh:
        if fmt == "json":
            for row in rows:
                fh.write(json.dumps(dict(zip(header, row)), sort_keys=True) + "\n")
        else:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
