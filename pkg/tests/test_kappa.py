import numpy as np
import pytest

from lateweights import kappa
from lateweights.errors import ProbabilityOutOfRange, ZeroDenominator

from conftest import make_known_p_sample


def cell(z, d, p):
    w = kappa.compute(np.array([d]), np.array([z]), np.array([p]))
    return w.kappa[0], w.kappa1[0], w.kappa0[0]


class TestCellIdentities:
    """Row-wise values in the four (Z, D) subpopulations at p = 0.4."""

    def test_treated_encouraged(self):
        k, k1, k0 = cell(1, 1, 0.4)
        assert (k, k1, k0) == pytest.approx((1.0, 2.5, 0.0), abs=1e-14)

    def test_untreated_encouraged(self):
        k, k1, k0 = cell(1, 0, 0.4)
        assert (k, k1, k0) == pytest.approx((-1.5, 0.0, -2.5), abs=1e-14)

    def test_treated_unencouraged(self):
        k, k1, k0 = cell(0, 1, 0.4)
        assert (k, k1, k0) == pytest.approx((-2.0 / 3.0, -5.0 / 3.0, 0.0), abs=1e-14)

    def test_untreated_unencouraged(self):
        k, k1, k0 = cell(0, 0, 0.4)
        assert (k, k1, k0) == pytest.approx((1.0, 0.0, 5.0 / 3.0), abs=1e-14)

    def test_all_cells_random_p(self, rng):
        p = rng.uniform(0.05, 0.95, size=200)
        z = (rng.random(200) < 0.5).astype(float)
        d = (rng.random(200) < 0.5).astype(float)
        w = kappa.compute(d, z, p)
        both = z * d + (1 - z) * (1 - d)  # diagonal cells
        np.testing.assert_allclose(w.kappa[both == 1], 1.0, atol=1e-12)
        np.testing.assert_allclose(w.kappa1[d == 0], 0.0, atol=0)
        np.testing.assert_allclose(w.kappa0[d == 1], 0.0, atol=0)
        np.testing.assert_allclose(w.kappa1[(z == 1) & (d == 1)],
                                   1.0 / p[(z == 1) & (d == 1)], rtol=1e-14)
        np.testing.assert_allclose(w.kappa0[(z == 0) & (d == 0)],
                                   1.0 / (1.0 - p[(z == 0) & (d == 0)]), rtol=1e-14)

    def test_reconstruction_identity_exact(self, rng):
        p = rng.uniform(0.01, 0.99, size=500)
        z = (rng.random(500) < 0.5).astype(float)
        d = (rng.random(500) < 0.5).astype(float)
        w = kappa.compute(d, z, p)
        resid = w.kappa - (w.kappa0 * (1.0 - p) + w.kappa1 * p)
        assert np.max(np.abs(resid)) <= 1e-14


class TestComplierShare:
    def test_full_compliance_share_is_one(self, rng):
        # every row in a diagonal cell, any valid p
        z = np.array([1, 0, 1, 0, 1], dtype=float)
        d = z.copy()
        p = rng.uniform(0.1, 0.9, size=5)
        w = kappa.compute(d, z, p)
        assert kappa.complier_share(w, "K") == pytest.approx(1.0, abs=1e-15)

    def test_two_row_hand_value(self):
        w = kappa.compute(np.array([1.0, 0.0]), np.array([1.0, 1.0]),
                          np.array([0.5, 0.5]))
        assert kappa.complier_share(w, "K") == pytest.approx(0.0, abs=1e-15)

    def test_no_always_takers_bound(self, rng):
        # Z=0 implies D=0, so mean kappa1 exceeds the treated fraction
        for _ in range(20):
            p = rng.uniform(0.05, 0.95, size=80)
            z = (rng.random(80) < p).astype(float)
            d = z * (rng.random(80) < 0.8)
            w = kappa.compute(d, z, p)
            assert kappa.complier_share(w, "K1") > np.mean(d)

    def test_no_never_takers_bound(self, rng):
        for _ in range(20):
            p = rng.uniform(0.05, 0.95, size=80)
            z = (rng.random(80) < p).astype(float)
            d = np.where(z == 1, 1.0, (rng.random(80) < 0.3).astype(float))
            w = kappa.compute(d, z, p)
            assert kappa.complier_share(w, "K0") > np.mean(1.0 - d)

    def test_population_equality_of_means(self, rng):
        # with true propensities, all three shares estimate the same object
        ds, p = make_known_p_sample(rng, n=200_000, shares=(0.5, 0.25, 0.25))
        w = kappa.compute(ds.d, ds.z, p)
        shares = [kappa.complier_share(w, v) for v in ("K", "K1", "K0")]
        assert np.max(shares) - np.min(shares) < 0.03
        assert all(abs(s - 0.5) < 0.03 for s in shares)


class TestComplierMeans:
    def test_constant_column_passthrough(self, rng):
        ds, p = make_known_p_sample(rng, n=300)
        w = kappa.compute(ds.d, ds.z, p)
        x = np.column_stack([np.full(300, 7.25), rng.standard_normal(300)])
        for variant in ("K", "K1", "K0"):
            out = kappa.complier_means(x, w, variant)
            assert out[0] == pytest.approx(7.25, rel=1e-12)

    def test_matches_brute_force_weighted_means(self, rng):
        # 10-row full-compliance sample: each variant is its own normalized
        # weighted mean (the three coincide only in population, where every
        # unit is a complier and all weights have mean one)
        z = np.array([1, 0, 1, 1, 0, 0, 1, 0, 1, 0], dtype=float)
        d = z.copy()
        p = rng.uniform(0.2, 0.8, size=10)
        x = rng.standard_normal((10, 2))
        w = kappa.compute(d, z, p)
        np.testing.assert_allclose(kappa.complier_means(x, w, "K"),
                                   x.mean(axis=0), atol=1e-12)
        np.testing.assert_allclose(
            kappa.complier_means(x, w, "K1"),
            (z / p) @ x / np.sum(z / p), atol=1e-12)
        np.testing.assert_allclose(
            kappa.complier_means(x, w, "K0"),
            ((1 - z) / (1 - p)) @ x / np.sum((1 - z) / (1 - p)), atol=1e-12)

    def test_full_compliance_variants_converge(self, rng):
        # the population agreement shows up as large-sample convergence
        n = 200_000
        p = rng.uniform(0.2, 0.8, size=n)
        z = (rng.random(n) < p).astype(float)
        d = z.copy()
        x = rng.standard_normal((n, 1))
        w = kappa.compute(d, z, p)
        outs = np.array([kappa.complier_means(x, w, v)[0] for v in ("K", "K1", "K0")])
        assert np.max(outs) - np.min(outs) < 0.02

    def test_zero_denominator(self):
        w = kappa.compute(np.array([1.0, 0.0]), np.array([1.0, 1.0]),
                          np.array([0.5, 0.5]))
        with pytest.raises(ZeroDenominator):
            kappa.complier_means(np.ones((2, 1)), w, "K")


def test_probability_out_of_range():
    with pytest.raises(ProbabilityOutOfRange):
        kappa.compute(np.array([1.0]), np.array([1.0]), np.array([1.0]))
    with pytest.raises(ProbabilityOutOfRange):
        kappa.compute(np.array([1.0, 0.0]), np.array([1.0, 0.0]),
                      np.array([0.5, 0.0]))
