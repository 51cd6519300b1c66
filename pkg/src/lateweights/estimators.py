"""Point estimators of the local average treatment effect.

Seven estimators share one dispatch surface: four ratio estimators built on
kappa weights (``A``, ``A1``, ``A0`` and the normalized difference ``A10``),
the unnormalized inverse-probability ratio ``T_UNNORM``, the self-normalized
ratio ``T_NORM`` (identical formula under covariate balancing, tagged ``CB``),
and a two-stage least squares benchmark ``LINEAR_IV``.

``A1`` and ``T_UNNORM`` are algebraically identical estimators computed
through two different groupings of the same sums; keeping the routes separate
lets the test suite verify the identity instead of assuming it.

All outcome sums are evaluated on the internally demeaned outcome, with the
exact closed-form re-centering applied to the unnormalized estimators. This
leaves every estimate algebraically unchanged while keeping the translation
behavior of the estimators meaningful at large outcome offsets, where naive
sums lose it to floating-point cancellation.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from . import kappa
from .data import Dataset
from .errors import (
    MethodMismatch,
    ProbabilityOutOfRange,
    SingularDesign,
    ZeroDenominator,
)

#: A complier-share denominator below this (in absolute value) is an error.
SHARE_EPS = 1e-12

#: Complier-share magnitudes below 1% trigger a NearZeroDenominator warning.
NEAR_ZERO_SHARE = 0.01


class EstimatorKind(Enum):
    """Estimator tags; values double as the command-line names."""

    A = "a"
    A1 = "a1"
    A0 = "a0"
    A10 = "a10"
    T_UNNORM = "t"
    T_NORM = "tnorm"
    CB = "cb"
    LINEAR_IV = "iv"


#: The canonical seven-estimator report order (A1 appears once, as ``t``).
DEFAULT_KINDS = (
    EstimatorKind.LINEAR_IV,
    EstimatorKind.CB,
    EstimatorKind.T_NORM,
    EstimatorKind.A10,
    EstimatorKind.A,
    EstimatorKind.T_UNNORM,
    EstimatorKind.A0,
)


def parse_kind(name: str) -> EstimatorKind:
    try:
        return EstimatorKind(name.strip().lower())
    except ValueError:
        valid = ", ".join(k.value for k in EstimatorKind)
        raise ValueError(f"unknown estimator {name!r}; expected one of: {valid}") from None


@dataclass(frozen=True)
class LateEstimate:
    """One estimator's output.

    ``denominators`` maps denominator tags (``K``, ``K1``, ``K0``,
    ``HAJEK_D``, ``FIRST_STAGE``) to complier-share-scale values (sample
    means, not sums). ``se`` is absent until the inference module fills it,
    except for ``LINEAR_IV`` which carries its own robust standard error.
    """

    kind: EstimatorKind
    tau: float
    numerator: float
    denominators: dict[str, float]
    warnings: tuple[str, ...] = ()
    se: float | None = None
    method: str | None = None

    def with_se(self, se: float) -> "LateEstimate":
        return replace(self, se=float(se))


def _check_p(p: np.ndarray, n: int) -> np.ndarray:
    p = np.asarray(p, dtype=float).ravel()
    if p.shape[0] != n:
        raise ValueError(f"probability vector length {p.shape[0]} != n = {n}")
    if not np.all((p > 0.0) & (p < 1.0)):
        raise ProbabilityOutOfRange("propensities must lie strictly inside (0, 1)")
    return p


def delta_hat(ds: Dataset, p) -> float:
    """Mean of ``y (z - p) / (p (1 - p))``, the shared ratio numerator."""
    p = _check_p(p, ds.n)
    return float(np.mean(ds.y * (ds.z - p) / (p * (1.0 - p))))


def _hajek_blocks(ds: Dataset, p: np.ndarray):
    """Group weights and self-normalized means used by the ratio estimators."""
    w1 = ds.z / p
    w0 = (1.0 - ds.z) / (1.0 - p)
    s1 = float(np.sum(w1))
    s0 = float(np.sum(w0))
    if s1 < SHARE_EPS * ds.n or s0 < SHARE_EPS * ds.n:
        raise ZeroDenominator(
            "empty instrument group: normalizing weight sums are "
            f"{s1:.3e} (z=1) and {s0:.3e} (z=0)"
        )
    return w1, w0, s1, s0


def estimate(ds: Dataset, kind: EstimatorKind, p=None, method: str | None = None) -> LateEstimate:
    """Compute one LATE estimate from known or fitted propensities.

    Parameters
    ----------
    ds : Dataset
    kind : EstimatorKind
    p : array-like, shape (n,)
        Instrument propensities (ignored for ``LINEAR_IV``).
    method : str, optional
        Tag of the fit that produced ``p``: ``"ml"``, ``"cb"``, or ``"known"``.
        ``CB`` estimates refuse anything but ``"cb"`` rather than silently
        recomputing, since its guarantees are specific to balancing fits.
    """
    if kind is EstimatorKind.LINEAR_IV:
        return linear_iv(ds)
    if kind is EstimatorKind.CB and method != "cb":
        raise MethodMismatch(
            f"estimator 'cb' requires balancing-fitted propensities, got method={method!r}"
        )
    if p is None:
        raise ValueError(f"estimator {kind.value!r} needs a propensity vector")
    p = _check_p(p, ds.n)
    y, d, z = ds.y, ds.d, ds.z
    n = ds.n
    ybar = float(np.mean(y))
    yc = y - ybar
    warnings: list[str] = []

    def near_zero(tag: str, value: float):
        if abs(value) < NEAR_ZERO_SHARE:
            warnings.append(f"NearZeroDenominator:{tag}={value:.6g}")

    if kind in (EstimatorKind.A, EstimatorKind.A1, EstimatorKind.A0, EstimatorKind.A10):
        kw = kappa.compute(d, z, p)
        sk = float(np.mean(kw.kappa))
        sk1 = float(np.mean(kw.kappa1))
        sk0 = float(np.mean(kw.kappa0))
        # stable evaluation of mean(y (z-p)/(p(1-p))): demeaned sum plus the
        # exact recentering term ybar * (mean kappa1 - mean kappa0)
        numerator = float(np.mean(yc * (z - p) / (p * (1.0 - p)))) + ybar * (sk1 - sk0)
        denominators = {"K": sk, "K1": sk1, "K0": sk0}
        if kind is EstimatorKind.A10:
            for tag, s in (("K1", sk1), ("K0", sk0)):
                if abs(s) < SHARE_EPS:
                    raise ZeroDenominator(f"kappa share {tag} is {s:.3e}")
                near_zero(tag, s)
            tau = float(np.mean(kw.kappa1 * yc)) / sk1 - float(np.mean(kw.kappa0 * yc)) / sk0
        else:
            tag = {EstimatorKind.A: "K", EstimatorKind.A1: "K1", EstimatorKind.A0: "K0"}[kind]
            share = denominators[tag]
            if abs(share) < SHARE_EPS:
                raise ZeroDenominator(f"kappa share {tag} is {share:.3e}")
            near_zero(tag, share)
            tau = numerator / share
        return LateEstimate(kind=kind, tau=tau, numerator=numerator,
                            denominators=denominators, warnings=tuple(warnings),
                            method=method)

    if kind is EstimatorKind.T_UNNORM:
        # unnormalized inverse-probability ratio, grouped by instrument arm
        w1 = z / p
        w0 = (1.0 - z) / (1.0 - p)
        numerator = (
            float(np.mean(yc * w1)) - float(np.mean(yc * w0))
            + ybar * (float(np.mean(w1)) - float(np.mean(w0)))
        )
        share = float(np.mean(d * w1)) - float(np.mean(d * w0))
        if abs(share) < SHARE_EPS:
            raise ZeroDenominator(f"treatment contrast denominator is {share:.3e}")
        near_zero("K1", share)
        return LateEstimate(kind=kind, tau=numerator / share, numerator=numerator,
                            denominators={"K1": share}, warnings=tuple(warnings),
                            method=method)

    if kind in (EstimatorKind.T_NORM, EstimatorKind.CB):
        w1, w0, s1, s0 = _hajek_blocks(ds, p)
        mu_diff = float(w1 @ yc) / s1 - float(w0 @ yc) / s0
        hajek_d = float(w1 @ d) / s1 - float(w0 @ d) / s0
        if abs(hajek_d) < SHARE_EPS:
            raise ZeroDenominator(f"self-normalized treatment contrast is {hajek_d:.3e}")
        near_zero("HAJEK_D", hajek_d)
        return LateEstimate(kind=kind, tau=mu_diff / hajek_d, numerator=mu_diff,
                            denominators={"HAJEK_D": hajek_d}, warnings=tuple(warnings),
                            method=method)

    raise ValueError(f"unhandled estimator kind {kind!r}")


def _ols(design: np.ndarray, target: np.ndarray, what: str) -> np.ndarray:
    coef, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
    if rank < design.shape[1]:
        raise SingularDesign(f"{what}: design matrix has rank {rank} < {design.shape[1]}")
    return coef


def linear_iv(ds: Dataset) -> LateEstimate:
    """Two-stage least squares of y on (x, d) with instruments (x, z).

    Implemented as two explicit projection steps with one factorization each;
    the standard error is the heteroskedasticity-robust (HC0) sandwich on the
    structural residuals. A first-stage instrument coefficient with |t| < 1
    yields a WeakFirstStage warning.
    """
    q = np.column_stack([ds.x, ds.z])
    w = np.column_stack([ds.x, ds.d])

    gamma = _ols(q, ds.d, "first stage")
    d_hat = q @ gamma
    # HC0 variance of the first stage, for the weak-instrument diagnostic
    res1 = ds.d - d_hat
    qtq_inv = np.linalg.inv(q.T @ q)
    meat1 = (q * (res1 ** 2)[:, None]).T @ q
    var_gamma = qtq_inv @ meat1 @ qtq_inv
    warnings: list[str] = []
    se_gamma_z = float(np.sqrt(max(var_gamma[-1, -1], 0.0)))
    if se_gamma_z > 0 and abs(gamma[-1] / se_gamma_z) < 1.0:
        warnings.append(f"WeakFirstStage:t={gamma[-1] / se_gamma_z:.3f}")

    w_hat = np.column_stack([ds.x, d_hat])
    beta = _ols(w_hat, ds.y, "second stage")
    tau = float(beta[-1])

    u = ds.y - w @ beta
    try:
        bread = np.linalg.inv(w_hat.T @ w)
    except np.linalg.LinAlgError:
        raise SingularDesign("instrument/regressor cross-moment matrix is singular") from None
    meat = (w_hat * (u ** 2)[:, None]).T @ w_hat
    avar = bread @ meat @ bread.T
    se = float(np.sqrt(max(avar[-1, -1], 0.0)))

    reduced = _ols(q, ds.y, "reduced form")
    first_stage = float(gamma[-1])
    if abs(first_stage) < NEAR_ZERO_SHARE:
        warnings.append(f"NearZeroDenominator:FIRST_STAGE={first_stage:.6g}")
    return LateEstimate(
        kind=EstimatorKind.LINEAR_IV, tau=tau, numerator=float(reduced[-1]),
        denominators={"FIRST_STAGE": first_stage}, warnings=tuple(warnings),
        se=se, method="iv",
    )
