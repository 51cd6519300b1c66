"""Stacked M-estimation standard errors.

Each weighting estimator is cast as the solution of a stacked system of
sample moment equations: the propensity-score block (likelihood score or
balancing conditions), the estimator's nuisance components, and a final
ratio-defining coordinate for the treatment effect itself. The asymptotic
covariance is the sandwich A^{-1} V A^{-1}' evaluated at the estimates, with
A the Jacobian of the mean moments (central finite differences) and V the
outer-product matrix.

The analytic derivative blocks of the nuisance moments with respect to the
propensity coefficients are provided separately; they serve as independent
oracles for the numeric Jacobian and are not used in the production path.
"""

from __future__ import annotations

import warnings as _warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import Dataset
from .errors import MethodMismatch
from .estimators import EstimatorKind, LateEstimate
from .ips import IpsFit, cb_jacobian, logistic

#: Relative step for the central-difference Jacobian.
FD_REL_STEP = 1e-6

_KAPPA_KINDS = {
    EstimatorKind.A: ("delta", "gamma"),
    EstimatorKind.A1: ("delta", "gamma1"),
    EstimatorKind.T_UNNORM: ("delta", "gamma1"),
    EstimatorKind.A0: ("delta", "gamma0"),
    EstimatorKind.A10: ("delta1", "delta0", "gamma1", "gamma0"),
    EstimatorKind.T_NORM: ("mu1", "mu0", "m1", "m0"),
    EstimatorKind.CB: ("mu1", "mu0", "m1", "m0"),
}


def nuisance_values(ds: Dataset, p: np.ndarray) -> dict[str, float]:
    """Sample values of every nuisance component at the given propensities."""
    y, d, z = ds.y, ds.d, ds.z
    q = p * (1.0 - p)
    w1 = z / p
    w0 = (1.0 - z) / (1.0 - p)
    return {
        "delta": float(np.mean(y * w1 - y * w0)),
        "gamma": float(np.mean(1.0 - (1.0 - z) * d / (1.0 - p) - z * (1.0 - d) / p)),
        "gamma1": float(np.mean(d * w1 - d * w0)),
        "gamma0": float(np.mean((d - 1.0) * w1 - (d - 1.0) * w0)),
        "delta1": float(np.mean(d * (z - p) / q * y)),
        "delta0": float(np.mean((1.0 - d) * ((1.0 - z) - (1.0 - p)) / q * y)),
        "mu1": float(w1 @ y / np.sum(w1)),
        "mu0": float(w0 @ y / np.sum(w0)),
        "m1": float(w1 @ d / np.sum(w1)),
        "m0": float(w0 @ d / np.sum(w0)),
    }


@dataclass(frozen=True)
class MomentSystem:
    """A stacked moment system evaluated at the estimates.

    ``moments`` maps a full parameter vector to the n-by-dim matrix of
    per-observation moment values; its mean over rows is (numerically) zero
    at ``theta``.
    """

    theta: np.ndarray
    labels: tuple[str, ...]
    kind: EstimatorKind
    method: str
    moments: Callable[[np.ndarray], np.ndarray]

    @property
    def dim(self) -> int:
        return self.theta.shape[0]


def assemble(
    ds: Dataset,
    kind: EstimatorKind,
    est: LateEstimate,
    fit: IpsFit | None = None,
    p=None,
) -> MomentSystem:
    """Build the stacked moment system for one estimator.

    Pass ``fit`` for jointly estimated propensities (the score or balancing
    block is stacked on top) or ``p`` for the known-propensity mode, which
    omits the coefficient block entirely.
    """
    if est.kind is not kind:
        raise ValueError(f"estimate was produced for {est.kind}, not {kind}")
    if kind not in _KAPPA_KINDS:
        raise ValueError(f"no moment system for estimator kind {kind.value!r}")
    if (fit is None) == (p is None):
        raise ValueError("pass exactly one of fit= or p=")
    if kind is EstimatorKind.CB and (fit is None or fit.method != "cb"):
        raise MethodMismatch("estimator 'cb' requires a covariate balancing fit")

    x, y, d, z = ds.x, ds.y, ds.d, ds.z
    k = ds.k
    if fit is not None:
        method = fit.method
        p_hat = fit.p
        alpha = np.asarray(fit.alpha, dtype=float)
        estimated = True
    else:
        method = "known"
        p_hat = np.asarray(p, dtype=float).ravel()
        alpha = np.empty(0)
        estimated = False

    names = _KAPPA_KINDS[kind]
    nuis = nuisance_values(ds, p_hat)
    theta = np.concatenate([alpha, [nuis[nm] for nm in names], [est.tau]])
    labels = tuple(
        [f"alpha_{j}" for j in range(k if estimated else 0)] + list(names) + ["tau"]
    )
    n_alpha = k if estimated else 0

    p_cache: dict = {"key": None, "p": None}

    def moments(th: np.ndarray) -> np.ndarray:
        th = np.asarray(th, dtype=float)
        if estimated:
            key = th[:k].tobytes()  # finite differencing perturbs one block
            if p_cache["key"] != key:
                p_cache["key"] = key
                p_cache["p"] = logistic(x @ th[:k])
            pv = p_cache["p"]
        else:
            pv = p_hat
        rest = th[n_alpha:]
        vals = dict(zip(names, rest[:-1]))
        tau = rest[-1]
        q = pv * (1.0 - pv)
        cols = []
        if estimated:
            if method == "ml":
                cols.append(x * (z - pv)[:, None])
            else:
                cols.append(x * ((z - pv) / q)[:, None])
        for nm in names:
            v = vals[nm]
            if nm == "delta":
                c = z * y / pv - (1.0 - z) * y / (1.0 - pv) - v
            elif nm == "gamma":
                c = 1.0 - (1.0 - z) * d / (1.0 - pv) - z * (1.0 - d) / pv - v
            elif nm == "gamma1":
                c = z * d / pv - (1.0 - z) * d / (1.0 - pv) - v
            elif nm == "gamma0":
                c = z * (d - 1.0) / pv - (1.0 - z) * (d - 1.0) / (1.0 - pv) - v
            elif nm == "delta1":
                c = d * (z - pv) / q * y - v
            elif nm == "delta0":
                c = (1.0 - d) * ((1.0 - z) - (1.0 - pv)) / q * y - v
            elif nm == "mu1":
                c = z * (y - v) / pv
            elif nm == "mu0":
                c = (1.0 - z) * (y - v) / (1.0 - pv)
            elif nm == "m1":
                c = z * (d - v) / pv
            elif nm == "m0":
                c = (1.0 - z) * (d - v) / (1.0 - pv)
            else:  # pragma: no cover
                raise AssertionError(nm)
            cols.append(c[:, None])
        if kind in (EstimatorKind.A, EstimatorKind.A1, EstimatorKind.T_UNNORM,
                    EstimatorKind.A0):
            ratio = vals["delta"] / vals[names[1]]
        elif kind is EstimatorKind.A10:
            ratio = vals["delta1"] / vals["gamma1"] - vals["delta0"] / vals["gamma0"]
        else:
            ratio = (vals["mu1"] - vals["mu0"]) / (vals["m1"] - vals["m0"])
        cols.append(np.full((ds.n, 1), ratio - tau))
        return np.hstack(cols)

    return MomentSystem(theta=theta, labels=labels, kind=kind, method=method,
                        moments=moments)


@dataclass(frozen=True)
class SandwichResult:
    """Sandwich covariance output for one moment system."""

    cov: np.ndarray
    se_tau: float
    a_matrix: np.ndarray
    v_matrix: np.ndarray
    condition: float
    warnings: tuple[str, ...] = ()


def sandwich(ms: MomentSystem) -> SandwichResult:
    """Covariance of the stacked estimates and the standard error of tau.

    A is the central-finite-difference Jacobian of the mean moments with
    per-coordinate step ``FD_REL_STEP * max(1, |theta_j|)``; V is the mean
    outer product of the per-observation moments. A singular A falls back to
    a pseudo-inverse with a loud diagnostic instead of aborting, so that
    near-degenerate replications can still be recorded.
    """
    theta = ms.theta
    dim = ms.dim
    psi = ms.moments(theta)
    n = psi.shape[0]
    v = psi.T @ psi / n

    a = np.empty((dim, dim))
    for j in range(dim):
        h = FD_REL_STEP * max(1.0, abs(theta[j]))
        up = theta.copy()
        dn = theta.copy()
        up[j] += h
        dn[j] -= h
        a[:, j] = (ms.moments(up).mean(axis=0) - ms.moments(dn).mean(axis=0)) / (2.0 * h)

    warns: list[str] = []
    cond = float(np.linalg.cond(a))
    try:
        a_inv = np.linalg.solve(a, np.eye(dim))
        if not np.all(np.isfinite(a_inv)):
            raise np.linalg.LinAlgError("non-finite inverse")
    except np.linalg.LinAlgError:
        msg = f"SingularA: moment Jacobian not invertible (cond={cond:.3e}); using pseudo-inverse"
        warns.append(msg)
        _warnings.warn(msg, RuntimeWarning, stacklevel=2)
        a_inv = np.linalg.pinv(a)
    cov = a_inv @ v @ a_inv.T / n
    se_tau = float(np.sqrt(max(cov[-1, -1], 0.0)))
    return SandwichResult(cov=cov, se_tau=se_tau, a_matrix=a, v_matrix=v,
                          condition=cond, warnings=tuple(warns))


def standard_error(ds: Dataset, est: LateEstimate, fit: IpsFit | None = None,
                   p=None) -> LateEstimate:
    """Convenience wrapper: assemble, run the sandwich, and attach the se."""
    ms = assemble(ds, est.kind, est, fit=fit, p=p)
    res = sandwich(ms)
    out = est.with_se(res.se_tau)
    if res.warnings:
        out = LateEstimate(
            kind=out.kind, tau=out.tau, numerator=out.numerator,
            denominators=out.denominators,
            warnings=out.warnings + res.warnings, se=out.se, method=out.method,
        )
    return out


def analytic_alpha_blocks(ds: Dataset, fit: IpsFit, kind: EstimatorKind) -> dict[str, np.ndarray]:
    """Closed-form derivative blocks of the nuisance moments w.r.t. alpha.

    Returns, for each nuisance coordinate of the estimator's stack, the
    sample mean of the analytic derivative of its moment with respect to the
    propensity coefficients (a length-k vector), plus the coefficient block
    itself under key ``"alpha"``. For balancing fits the outer-product blocks
    between the nuisance moments and the balancing score are included under
    ``v_*`` keys. Test oracles only; the production Jacobian is numeric.
    """
    if kind not in _KAPPA_KINDS:
        raise ValueError(f"no analytic blocks for estimator kind {kind.value!r}")
    x, y, d, z = ds.x, ds.y, ds.d, ds.z
    p = fit.p
    q = p * (1.0 - p)
    grad = q[:, None] * x  # gradient of the logistic link w.r.t. alpha
    nuis = nuisance_values(ds, p)
    mu1, mu0, m1, m0 = nuis["mu1"], nuis["mu0"], nuis["m1"], nuis["m0"]

    def amean(weight: np.ndarray) -> np.ndarray:
        return (weight @ grad) / ds.n

    blocks: dict[str, np.ndarray] = {
        "delta": amean(-(y * z / p ** 2 + y * (1.0 - z) / (1.0 - p) ** 2)),
        "gamma": amean((1.0 - d) * z / p ** 2 - d * (1.0 - z) / (1.0 - p) ** 2),
        "gamma1": amean(-(d * z / p ** 2 + d * (1.0 - z) / (1.0 - p) ** 2)),
        "gamma0": amean(-((d - 1.0) * z / p ** 2 + (d - 1.0) * (1.0 - z) / (1.0 - p) ** 2)),
        "delta1": amean(-(d * y * z / p ** 2 + d * y * (1.0 - z) / (1.0 - p) ** 2)),
        "delta0": amean(-((d - 1.0) * y * z / p ** 2 + (d - 1.0) * y * (1.0 - z) / (1.0 - p) ** 2)),
        "mu1": amean(-z * (y - mu1) / p ** 2),
        "mu0": amean((1.0 - z) * (y - mu0) / (1.0 - p) ** 2),
        "m1": amean(-z * (d - m1) / p ** 2),
        "m0": amean((1.0 - z) * (d - m0) / (1.0 - p) ** 2),
    }
    out = {nm: blocks[nm] for nm in _KAPPA_KINDS[kind]}
    if fit.method == "ml":
        out["alpha"] = -(x * q[:, None]).T @ x / ds.n
    else:
        out["alpha"] = cb_jacobian(x, z, fit.alpha)
        psi_cb = x * ((z - p) / q)[:, None]
        out["v_alpha"] = psi_cb.T @ psi_cb / ds.n
        out["v_mu1"] = (z * (y - mu1) / p) @ psi_cb / ds.n
        out["v_mu0"] = ((1.0 - z) * (y - mu0) / (1.0 - p)) @ psi_cb / ds.n
        out["v_m1"] = (z * (d - m1) / p) @ psi_cb / ds.n
        out["v_m0"] = ((1.0 - z) * (d - m0) / (1.0 - p)) @ psi_cb / ds.n
    return out
