"""Instrument propensity score fitting with a logistic link.

Two fitting criteria are supported:

* maximum likelihood, whose score equations for the logit reduce to
  ``mean(x * (z - p)) = 0``;
* the just-identified covariate balancing conditions
  ``mean(x * (z - p) / (p * (1 - p))) = 0``.

Both are solved by damped Newton iteration with analytic derivatives. The
balancing fit is warm-started from the likelihood solution, which is the
standard stabilization for these harsher equations.

Covariates enter as provided: no standardization is applied, so poorly
scaled columns may slow Newton convergence. The fitted probability range
(``IpsFit.p_min``/``p_max``) is the overlap diagnostic; no thresholding is
performed on it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import (
    DivergedProbabilities,
    NoConvergence,
    SeparationDetected,
    SingularHessian,
    SingularJacobian,
)

#: Sup-norm tolerance on the (1/N-scaled) estimating equations.
TOL = 1e-10

#: Newton iteration cap.
MAX_ITER = 100

#: Maximum number of step halvings in the line search.
MAX_HALVINGS = 30

#: |x·alpha| beyond this at a converged point flags perfect prediction.
SEPARATION_ETA = 30.0

#: Fitted probabilities this close to the observed instrument at convergence
#: also flag perfect prediction (the score tolerance can be met before the
#: linear index passes SEPARATION_ETA).
SEPARATION_PROB_TOL = 1e-9

#: Probability floor used only inside solver linear algebra; reported
#: probabilities use the unclamped link.
P_FLOOR = 1e-12

_TINY = float(np.nextafter(0.0, 1.0))
_ONE_MINUS = float(np.nextafter(1.0, 0.0))


def logistic(eta):
    """Numerically stable logistic link, clamped inside the open (0, 1).

    Returns ``1 / (1 + exp(-eta))`` evaluated without overflow; outputs are
    clamped to the smallest positive double and the largest double below 1,
    so extreme linear indices never produce exact 0 or 1.
    """
    eta = np.asarray(eta, dtype=float)
    e = np.exp(-np.abs(eta))
    out = np.clip(np.where(eta >= 0, 1.0, e) / (1.0 + e), _TINY, _ONE_MINUS)
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class IpsFit:
    """Fitted instrument propensity score.

    Attributes
    ----------
    alpha : ndarray, shape (k,)
        Coefficients of the logistic index.
    p : ndarray, shape (n,)
        Fitted probabilities, strictly inside (0, 1).
    method : str
        ``"ml"`` or ``"cb"``.
    iterations : int
        Newton iterations used.
    converged : bool
    max_moment_norm : float
        Sup-norm of the fitted estimating equations (1/N scale).
    """

    alpha: np.ndarray
    p: np.ndarray
    method: str
    iterations: int
    converged: bool
    max_moment_norm: float

    @property
    def p_min(self) -> float:
        """Smallest fitted probability (overlap diagnostic)."""
        return float(np.min(self.p))

    @property
    def p_max(self) -> float:
        """Largest fitted probability (overlap diagnostic)."""
        return float(np.max(self.p))


def _clamped(p: np.ndarray) -> np.ndarray:
    return np.clip(p, P_FLOOR, 1.0 - P_FLOOR)


def fit_ml(ds: Dataset) -> IpsFit:
    """Fit the propensity score by logistic maximum likelihood.

    Newton iteration on the score equations with step-halving on the squared
    score norm. Raises ``SingularHessian`` for rank-deficient covariates,
    ``SeparationDetected`` for perfect prediction, and ``NoConvergence`` when
    the iteration cap is reached.
    """
    x, z = ds.x, ds.z
    n = ds.n

    def score(a):
        return x.T @ (z - logistic(x @ a)) / n

    alpha = np.zeros(ds.k)
    g = score(alpha)
    crit = 0.5 * float(g @ g)
    norm = float(np.max(np.abs(g)))
    iterations = 0
    for iterations in range(1, MAX_ITER + 1):
        if norm <= TOL:
            break
        p = _clamped(logistic(x @ alpha))
        w = p * (1.0 - p)
        hess = (x * w[:, None]).T @ x / n
        try:
            step = np.linalg.solve(hess, g)
        except np.linalg.LinAlgError:
            raise SingularHessian("log-likelihood Hessian is singular") from None
        t = 1.0
        accepted = False
        for _ in range(MAX_HALVINGS):
            g_new = score(alpha + t * step)
            cand = 0.5 * float(g_new @ g_new)
            if cand < crit:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break  # stalled at the rounding floor; norm check decides below
        alpha = alpha + t * step
        g, crit = g_new, cand
        norm = float(np.max(np.abs(g)))

    eta = x @ alpha
    p = logistic(eta)
    norm = float(np.max(np.abs(x.T @ (z - p) / n)))
    converged = norm <= TOL
    if converged and (
        np.max(np.abs(eta)) > SEPARATION_ETA
        or np.min(np.abs(z - p)) < SEPARATION_PROB_TOL
    ):
        raise SeparationDetected(
            f"instrument perfectly predicted (max |index| {np.max(np.abs(eta)):.1f}, "
            f"min |z - p| {np.min(np.abs(z - p)):.1e})"
        )
    if not converged:
        if np.max(np.abs(eta)) > SEPARATION_ETA:
            raise SeparationDetected(
                f"instrument perfectly predicted (max |index| {np.max(np.abs(eta)):.1f})"
            )
        raise NoConvergence(iterations, norm, what="maximum likelihood fit")
    return IpsFit(alpha=alpha, p=p, method="ml", iterations=iterations,
                  converged=True, max_moment_norm=norm)


def cb_moments(x: np.ndarray, z: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Sample balancing equations ``mean(x * (z - p) / (p (1 - p)))``."""
    p = _clamped(logistic(x @ alpha))
    h = (z - p) / (p * (1.0 - p))
    return x.T @ h / x.shape[0]


def cb_jacobian(x: np.ndarray, z: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Analytic Jacobian of :func:`cb_moments` with respect to alpha.

    Per observation, d/d(eta) of (z - p)/(p(1-p)) equals
    ``-(p(1-p) + (z-p)(1-2p)) / (p(1-p))``, and d(eta)/d(alpha) = x.
    Verified against central finite differences in the test suite.
    """
    p = _clamped(logistic(x @ alpha))
    q = p * (1.0 - p)
    w = -(q + (z - p) * (1.0 - 2.0 * p)) / q
    return (x * w[:, None]).T @ x / x.shape[0]


def fit_cb(ds: Dataset, init: np.ndarray | None = None) -> IpsFit:
    """Fit the propensity score by covariate balancing.

    Solves the just-identified balancing equations by damped Newton with the
    analytic Jacobian. ``init`` defaults to the maximum likelihood solution
    (zeros if that fit fails). Raises ``SingularJacobian``, ``NoConvergence``,
    or ``DivergedProbabilities`` when a damped step still pushes fitted
    probabilities outside the admissible open interval.
    """
    x, z = ds.x, ds.z
    if init is None:
        try:
            init = fit_ml(ds).alpha
        except Exception:
            init = np.zeros(ds.k)
    alpha = np.asarray(init, dtype=float).copy()

    g = cb_moments(x, z, alpha)
    crit = 0.5 * float(g @ g)
    norm = float(np.max(np.abs(g)))
    iterations = 0
    for iterations in range(1, MAX_ITER + 1):
        if norm <= TOL:
            break
        try:
            step = np.linalg.solve(cb_jacobian(x, z, alpha), -g)
        except np.linalg.LinAlgError:
            raise SingularJacobian("balancing-equation Jacobian is singular") from None
        t = 1.0
        accepted = False
        for _ in range(MAX_HALVINGS):
            cand_alpha = alpha + t * step
            g_new = cb_moments(x, z, cand_alpha)
            cand = 0.5 * float(g_new @ g_new)
            if cand < crit:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            raise NoConvergence(iterations, norm, what="covariate balancing fit")
        alpha = cand_alpha
        p_raw = logistic(x @ alpha)
        if np.min(p_raw) <= P_FLOOR or np.max(p_raw) >= 1.0 - P_FLOOR:
            raise DivergedProbabilities(
                f"fitted probabilities left ({P_FLOOR}, {1 - P_FLOOR}) "
                f"after damping (range [{np.min(p_raw):.3e}, {np.max(p_raw):.17g}])"
            )
        g, crit = g_new, cand
        norm = float(np.max(np.abs(g)))
    if norm > TOL:
        raise NoConvergence(iterations, norm, what="covariate balancing fit")
    return IpsFit(alpha=alpha, p=logistic(x @ alpha), method="cb",
                  iterations=iterations, converged=True, max_moment_norm=norm)
