import numpy as np
import pytest

from lateweights.data import Dataset
from lateweights.errors import SeparationDetected, SingularHessian, SingularJacobian
from lateweights.ips import TOL, cb_jacobian, cb_moments, fit_cb, fit_ml, logistic
from lateweights.simulation import SimDesign, generate

from conftest import fd_jacobian, make_logit_sample


class TestLogistic:
    def test_midpoint(self):
        assert logistic(0.0) == 0.5

    def test_inverts_logit(self):
        assert logistic(np.log(0.95 / 0.05)) == pytest.approx(0.95, abs=1e-15)

    def test_overflow_boundary_clamps_open(self):
        tiny = float(np.nextafter(0.0, 1.0))
        assert logistic(-745.0) == tiny
        assert logistic(-1000.0) == tiny
        assert logistic(745.0) < 1.0
        assert logistic(1000.0) == float(np.nextafter(1.0, 0.0))

    def test_symmetry(self):
        eta = np.linspace(-20, 20, 101)
        np.testing.assert_allclose(logistic(-eta), 1.0 - logistic(eta), atol=1e-15)

    def test_monotone(self):
        eta = np.linspace(-30, 30, 301)
        assert np.all(np.diff(logistic(eta)) >= 0)


class TestFitMl:
    def test_intercept_only_matches_sample_mean(self, rng):
        z = np.zeros(100)
        z[:70] = 1.0
        ds = Dataset.from_arrays(rng.standard_normal(100), z.copy(), z)
        fit = fit_ml(ds)
        assert fit.alpha[0] == pytest.approx(np.log(0.7 / 0.3), abs=1e-10)
        np.testing.assert_allclose(fit.p, 0.7, atol=1e-10)
        assert fit.converged and fit.max_moment_norm <= TOL

    def test_perfect_separation_detected(self, rng):
        z = np.repeat([1.0, 0.0], 20)
        d = (rng.random(40) < 0.5).astype(float)
        ds = Dataset.from_arrays(rng.standard_normal(40), d, z,
                                 covariates=z.copy(), names=("w",))
        with pytest.raises(SeparationDetected):
            fit_ml(ds)

    def test_rank_deficient_covariates(self, rng):
        x = rng.standard_normal(60)
        z = (rng.random(60) < 0.5).astype(float)
        cov = np.column_stack([x, 2.0 * x])
        ds = Dataset.from_arrays(rng.standard_normal(60), z.copy(), z,
                                 covariates=cov, names=("a", "b"))
        with pytest.raises(SingularHessian):
            fit_ml(ds)

    def test_recovers_generating_coefficients_design_b(self):
        design = SimDesign("B", 0.05)
        ds, _ = generate(design, 5000, seed=314)
        fit = fit_ml(ds)
        truth = np.array([-design.theta0, 2.0 * design.theta0])
        assert np.max(np.abs(fit.alpha - truth)) < 0.35  # a few standard errors
        assert fit.max_moment_norm <= TOL

    def test_hessian_negative_definite_at_solution(self, rng):
        ds = make_logit_sample(rng, n=300)
        fit = fit_ml(ds)
        w = fit.p * (1.0 - fit.p)
        hess_loglik = -(ds.x * w[:, None]).T @ ds.x / ds.n
        assert np.all(np.linalg.eigvalsh(hess_loglik) < 0)

    def test_row_permutation_invariance(self, rng):
        ds = make_logit_sample(rng, n=250)
        perm = rng.permutation(ds.n)
        ds2 = Dataset.from_arrays(ds.y[perm], ds.d[perm], ds.z[perm],
                                  covariates=ds.x[perm, 1:],
                                  names=ds.covariate_names[1:])
        np.testing.assert_allclose(fit_ml(ds).alpha, fit_ml(ds2).alpha, atol=1e-8)


class TestFitCb:
    def test_intercept_only_balances_exactly(self, rng):
        z = np.zeros(50)
        z[:30] = 1.0
        ds = Dataset.from_arrays(rng.standard_normal(50), z.copy(), z)
        fit = fit_cb(ds)
        np.testing.assert_allclose(fit.p, 0.6, atol=1e-12)

    def test_intercept_moment_holds_on_converged_fit(self, rng):
        ds = make_logit_sample(rng, n=500, k_cov=2)
        fit = fit_cb(ds)
        h = (ds.z - fit.p) / (fit.p * (1.0 - fit.p))
        assert abs(np.mean(h)) <= TOL
        assert fit.max_moment_norm <= TOL

    def test_ml_and_cb_differ_but_both_converge(self):
        ds, _ = generate(SimDesign("A1", 0.05), 1000, seed=99)
        fm = fit_ml(ds)
        fc = fit_cb(ds, init=fm.alpha)
        assert fm.max_moment_norm <= TOL and fc.max_moment_norm <= TOL
        assert np.max(np.abs(fm.alpha - fc.alpha)) > 1e-6

    def test_intercept_only_ml_equals_cb(self, rng):
        z = (rng.random(80) < 0.45).astype(float)
        ds = Dataset.from_arrays(rng.standard_normal(80), z.copy(), z)
        np.testing.assert_allclose(fit_ml(ds).p, fit_cb(ds).p, atol=1e-10)

    def test_row_permutation_invariance(self, rng):
        ds = make_logit_sample(rng, n=250)
        perm = rng.permutation(ds.n)
        ds2 = Dataset.from_arrays(ds.y[perm], ds.d[perm], ds.z[perm],
                                  covariates=ds.x[perm, 1:],
                                  names=ds.covariate_names[1:])
        np.testing.assert_allclose(fit_cb(ds).alpha, fit_cb(ds2).alpha, atol=1e-8)

    def test_rank_deficient_covariates(self, rng):
        x = rng.standard_normal(60)
        z = (rng.random(60) < 0.5).astype(float)
        cov = np.column_stack([x, -x])
        ds = Dataset.from_arrays(rng.standard_normal(60), z.copy(), z,
                                 covariates=cov, names=("a", "b"))
        with pytest.raises(SingularJacobian):
            fit_cb(ds, init=np.zeros(3))

    def test_analytic_jacobian_matches_finite_differences(self, rng):
        # mandated verification of the hand-derived derivative
        ds = make_logit_sample(rng, n=150, k_cov=2)
        for trial in range(5):
            alpha = rng.normal(scale=0.7, size=ds.k)
            jac = cb_jacobian(ds.x, ds.z, alpha)
            num = fd_jacobian(lambda a: cb_moments(ds.x, ds.z, a), alpha)
            scale = np.max(np.abs(jac))
            assert np.max(np.abs(jac - num)) <= 1e-6 * scale
