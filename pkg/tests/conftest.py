"""Shared test data builders.

Samples come from a compliance-typed instrumental-variable world: each unit
is a complier, always-taker, or never-taker, the instrument follows known or
logistic-index probabilities, and the outcome loads on treatment and the
covariates. Type shares keep the complier denominators comfortably away from
zero unless a test asks otherwise.
"""

from __future__ import annotations

import numpy as np
import pytest

from lateweights.data import Dataset


def draw_treatment(rng, z, shares=(0.7, 0.15, 0.15)):
    """Treatment from latent compliance types (complier, always, never)."""
    n = z.shape[0]
    u = rng.random(n)
    complier = u < shares[0]
    always = (u >= shares[0]) & (u < shares[0] + shares[1])
    d = np.where(complier, z, 0.0)
    d = np.where(always, 1.0, d)
    return d


def make_known_p_sample(rng, n=200, p_range=(0.05, 0.95), shares=(0.7, 0.15, 0.15),
                        with_cov=True):
    """Dataset plus the true instrument propensities used to draw it."""
    p = rng.uniform(*p_range, size=n)
    z = (rng.random(n) < p).astype(float)
    d = draw_treatment(rng, z, shares)
    x = rng.standard_normal(n)
    y = 1.0 + 2.0 * d + 0.5 * x + rng.standard_normal(n)
    ds = Dataset.from_arrays(y, d, z, covariates=x if with_cov else None,
                             names=("x1",) if with_cov else ())
    return ds, p


def make_logit_sample(rng, n=400, k_cov=2, shares=(0.6, 0.2, 0.2)):
    """Dataset whose instrument truly follows a logistic index in covariates."""
    cov = rng.standard_normal((n, k_cov))
    alpha = np.concatenate([[0.2], np.linspace(0.8, -0.6, k_cov)])
    eta = alpha[0] + cov @ alpha[1:]
    p = 1.0 / (1.0 + np.exp(-eta))
    z = (rng.random(n) < p).astype(float)
    d = draw_treatment(rng, z, shares)
    y = 0.5 + 1.5 * d + cov @ np.linspace(1.0, 0.3, k_cov) + rng.standard_normal(n)
    names = tuple(f"x{j+1}" for j in range(k_cov))
    return Dataset.from_arrays(y, d, z, covariates=cov, names=names)


def fd_jacobian(f, theta, rel=1e-6):
    """Central-difference Jacobian of a vector-valued function."""
    theta = np.asarray(theta, dtype=float)
    base = np.asarray(f(theta), dtype=float)
    jac = np.empty((base.shape[0], theta.shape[0]))
    for j in range(theta.shape[0]):
        h = rel * max(1.0, abs(theta[j]))
        up = theta.copy()
        dn = theta.copy()
        up[j] += h
        dn[j] -= h
        jac[:, j] = (np.asarray(f(up)) - np.asarray(f(dn))) / (2.0 * h)
    return jac


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
