"""Kappa weights, complier shares, and complier covariate means.

The three weight vectors re-weight the observed sample to the complier
subpopulation. ``kappa1`` weights treated observations, ``kappa0`` untreated
ones, and ``kappa`` is their propensity-weighted combination; all three have
the complier share as their common population mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ProbabilityOutOfRange, ZeroDenominator

#: |sum of weights| below DENOM_EPS * n is treated as an exact zero
#: denominator; near-zero values above it are a warning, not an error.
DENOM_EPS = 1e-12

VARIANTS = ("K", "K1", "K0")


@dataclass(frozen=True)
class KappaWeights:
    """Per-observation weights and the probabilities they were built from."""

    kappa: np.ndarray
    kappa1: np.ndarray
    kappa0: np.ndarray
    p: np.ndarray

    def vector(self, variant: str) -> np.ndarray:
        if variant == "K":
            return self.kappa
        if variant == "K1":
            return self.kappa1
        if variant == "K0":
            return self.kappa0
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


def compute(d, z, p) -> KappaWeights:
    """Kappa weights from treatment, instrument, and propensity vectors.

    kappa1 = d (z - p) / (p (1 - p)),
    kappa0 = (1 - d) ((1 - z) - (1 - p)) / (p (1 - p)),
    kappa  = kappa0 (1 - p) + kappa1 p.

    The combination form for ``kappa`` makes the reconstruction identity
    ``kappa == kappa0 (1 - p) + kappa1 p`` hold exactly as computed.
    """
    d = np.asarray(d, dtype=float).ravel()
    z = np.asarray(z, dtype=float).ravel()
    p = np.asarray(p, dtype=float).ravel()
    if not (d.shape == z.shape == p.shape):
        raise ValueError("d, z, p must have matching lengths")
    if not np.all((p > 0.0) & (p < 1.0)):
        raise ProbabilityOutOfRange("propensities must lie strictly inside (0, 1)")
    q = p * (1.0 - p)
    kappa1 = d * (z - p) / q
    kappa0 = (1.0 - d) * ((1.0 - z) - (1.0 - p)) / q
    kappa = kappa0 * (1.0 - p) + kappa1 * p
    return KappaWeights(kappa=kappa, kappa1=kappa1, kappa0=kappa0, p=p)


def complier_share(w: KappaWeights, variant: str = "K") -> float:
    """Sample mean of the chosen weight vector.

    Estimates the proportion of compliers; in finite samples it can be
    positive, negative, or zero for every variant.
    """
    v = w.vector(variant)
    if v.size == 0:
        raise ZeroDenominator("empty weight vector")
    return float(np.mean(v))


def complier_means(x, w: KappaWeights, variant: str = "K") -> np.ndarray:
    """Self-normalized weighted column means of ``x``.

    Returns ``sum(w_i x_i) / sum(w_i)`` for the chosen weight vector; the
    normalized weights sum to one, so a constant column is returned exactly.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    v = w.vector(variant)
    total = float(np.sum(v))
    if abs(total) < DENOM_EPS * v.size:
        raise ZeroDenominator(
            f"weight sum for variant {variant} is {total:.3e}, "
            f"below {DENOM_EPS * v.size:.3e}"
        )
    return (v @ x) / total
