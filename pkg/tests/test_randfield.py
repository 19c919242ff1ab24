"""Covariance functions, Bessel evaluation, MVN sampling, named RNG streams."""

import json
from importlib import resources

import numpy as np
import pytest

from prefcausal.errors import NumericalError, ValidationError
from prefcausal.randfield import (
    CovarianceFactor,
    LmcSpec,
    MaternParams,
    bessel_k,
    build_covariance,
    cholesky_with_jitter,
    derive_stream,
    lmc_compose,
    lmc_cross_moments,
    matern_correlation,
    sample_mvn,
)


def load_bessel_reference():
    text = (
        resources.files("prefcausal.data")
        .joinpath("bessel_kv_reference.json")
        .read_text()
    )
    return json.loads(text)


class TestBesselK:
    def test_half_integer_closed_form(self):
        # K_{1/2}(x) = sqrt(pi / (2 x)) exp(-x).
        for x in (0.1, 0.5, 1.0, 2.0, 10.0):
            ref = np.sqrt(np.pi / (2.0 * x)) * np.exp(-x)
            assert bessel_k(0.5, x) == pytest.approx(ref, rel=1e-13)
        # Frozen spot value at x = 1.
        assert bessel_k(0.5, 1.0) == pytest.approx(0.46106850444789445, rel=1e-13)

    def test_three_halves_closed_form(self):
        # K_{3/2}(x) = sqrt(pi / (2 x)) exp(-x) (1 + 1/x).
        for x in (0.25, 1.0, 2.0, 5.0):
            ref = np.sqrt(np.pi / (2.0 * x)) * np.exp(-x) * (1.0 + 1.0 / x)
            assert bessel_k(1.5, x) == pytest.approx(ref, rel=1e-13)
        # sqrt(pi) / 2 * exp(-2) * 1.5, evaluated once by hand.
        assert bessel_k(1.5, 2.0) == pytest.approx(0.17990665795209216, rel=1e-10)

    def test_against_high_precision_table(self):
        ref = load_bessel_reference()
        worst = 0.0
        for entry in ref["entries"]:
            got = bessel_k(entry["nu"], entry["x"])
            want = float(entry["kv"])
            rel = abs(got - want) / abs(want)
            worst = max(worst, rel)
        assert worst <= 1e-10

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValidationError):
            bessel_k(-0.5, 1.0)
        with pytest.raises(ValidationError):
            bessel_k(0.5, 0.0)
        with pytest.raises(ValidationError):
            bessel_k(0.5, np.inf)


class TestMaternCorrelation:
    def test_exponential_special_case(self):
        # kappa = 1/2 reduces to exp(-h / rho).
        h = np.linspace(0.0, 20.0, 1000)
        got = matern_correlation(h, rho=1.0, kappa=0.5)
        np.testing.assert_allclose(got, np.exp(-h), rtol=0.0, atol=1e-12)

    def test_three_halves_special_case(self):
        # kappa = 3/2 reduces to (1 + x) exp(-x), x = h / rho.
        h = np.linspace(0.0, 20.0, 1000)
        got = matern_correlation(h, rho=1.0, kappa=1.5)
        np.testing.assert_allclose(got, (1.0 + h) * np.exp(-h), rtol=0.0, atol=1e-10)
        assert matern_correlation(np.array(1.0), 1.0, 1.5) == pytest.approx(
            2.0 / np.e, rel=1e-12
        )

    def test_unit_at_zero_and_monotone(self):
        h = np.linspace(0.0, 3.0, 200)
        for kappa in (0.3, 0.5, 1.0, 1.5, 2.7):
            r = matern_correlation(h, rho=0.4, kappa=kappa)
            assert r[0] == 1.0
            assert np.all(np.diff(r) < 0.0)
            assert np.all((r >= 0.0) & (r <= 1.0))

    def test_large_distance_underflows_to_zero(self):
        val = matern_correlation(np.array(1e6), rho=1.0, kappa=0.5)
        assert val == 0.0

    def test_scale_invariance(self):
        h = np.linspace(0.0, 2.0, 50)
        a = matern_correlation(h, rho=0.1, kappa=1.2)
        b = matern_correlation(h * 7.0, rho=0.7, kappa=1.2)
        np.testing.assert_allclose(a, b, rtol=1e-12)

    def test_rejects_bad_parameters(self):
        with pytest.raises(ValidationError):
            matern_correlation(np.array(1.0), rho=0.0, kappa=0.5)
        with pytest.raises(ValidationError):
            matern_correlation(np.array(1.0), rho=1.0, kappa=0.0)
        with pytest.raises(ValidationError):
            matern_correlation(np.array(1.0), rho=1.0, kappa=11.0)
        with pytest.raises(ValidationError):
            matern_correlation(np.array(-0.5), rho=1.0, kappa=0.5)

    def test_params_container_validates(self):
        MaternParams(rho=0.2, kappa=0.5)
        with pytest.raises(ValidationError):
            MaternParams(rho=-1.0, kappa=0.5)


class TestCholeskyAndFactor:
    def grid_corr(self, n=30, rho=0.2, kappa=1.5):
        side = np.linspace(0.0, 1.0, n)
        pts = np.column_stack([np.tile(side, 1), np.repeat(0.0, n)])
        h = np.abs(side[:, None] - side[None, :])
        return matern_correlation(h, rho=rho, kappa=kappa), pts

    def test_reconstructs_matrix(self):
        corr, _ = self.grid_corr()
        lower, jitter = cholesky_with_jitter(corr, 1e-10)
        np.testing.assert_allclose(
            lower @ lower.T, corr + jitter * np.eye(corr.shape[0]), atol=1e-12
        )

    def test_jitter_ladder_escalates(self):
        # Smallest eigenvalue is -1e-7, so rungs 1e-10 and 1e-8 fail and
        # the ladder settles at 1e-6.
        bad = np.ones((4, 4)) - 1e-7 * np.eye(4)
        lower, jitter = cholesky_with_jitter(bad, 1e-10)
        assert jitter == pytest.approx(1e-6)
        np.testing.assert_allclose(
            lower @ lower.T, bad + jitter * np.eye(4), atol=1e-10
        )

    def test_indefinite_matrix_raises(self):
        bad = np.array([[1.0, 2.0], [2.0, 1.0]])
        with pytest.raises(NumericalError):
            cholesky_with_jitter(bad, 1e-10)

    def test_factor_solve_and_quad_form(self):
        corr, _ = self.grid_corr(n=12)
        fac = CovarianceFactor(
            lower=np.linalg.cholesky(corr + 1e-10 * np.eye(12)),
            variance=2.5,
            jitter=1e-10,
        )
        rng = np.random.default_rng(3)
        b = rng.normal(size=12)
        cov = 2.5 * (corr + 1e-10 * np.eye(12))
        np.testing.assert_allclose(fac.solve(b), np.linalg.solve(cov, b), atol=1e-8)
        assert fac.quad_form(b) == pytest.approx(b @ np.linalg.solve(cov, b), rel=1e-8)
        sign, logdet = np.linalg.slogdet(cov)
        assert sign == 1.0
        assert fac.log_det == pytest.approx(logdet, rel=1e-10)
        np.testing.assert_allclose(fac.matrix(), cov, atol=1e-12)

    def test_build_covariance(self):
        _, pts = self.grid_corr(n=12)
        from prefcausal.geometry import pairwise_distances

        d = pairwise_distances(pts[:12])
        fac = build_covariance(d, variance=1.7, params=MaternParams(0.3, 0.5))
        assert fac.dim == 12
        assert fac.variance == 1.7


class TestSampleMvn:
    def test_moments_match_target(self):
        # Criterion-style check at small G: empirical covariance of many
        # draws approaches sigma2 * R.
        side = np.array([0.0, 0.5, 1.0, 1.5])
        h = np.abs(side[:, None] - side[None, :])
        corr = matern_correlation(h, rho=0.5, kappa=1.5)
        lower, jitter = cholesky_with_jitter(corr, 1e-10)
        fac = CovarianceFactor(lower=lower, variance=2.0, jitter=jitter)
        rng = np.random.default_rng(11)
        mean = np.array([1.0, -1.0, 0.5, 0.0])
        draws = sample_mvn(mean, fac, rng, size=100_000)
        assert draws.shape == (100_000, 4)
        emp_mean = draws.mean(axis=0)
        np.testing.assert_allclose(emp_mean, mean, atol=0.02)
        emp_cov = np.cov(draws.T)
        target = fac.matrix()
        rel = np.linalg.norm(emp_cov - target) / np.linalg.norm(target)
        assert rel < 0.05

    def test_single_draw_shape(self):
        corr = np.eye(3)
        lower, jitter = cholesky_with_jitter(corr, 1e-10)
        fac = CovarianceFactor(lower=lower, variance=1.0, jitter=jitter)
        rng = np.random.default_rng(0)
        out = sample_mvn(np.zeros(3), fac, rng)
        assert out.shape == (3,)


class TestLmc:
    def test_compose(self):
        w0 = np.array([1.0, 2.0])
        w1 = np.array([0.5, -0.5])
        np.testing.assert_allclose(
            lmc_compose(w0, w1, gamma=-0.5), w1 - 0.5 * w0
        )

    def test_cross_moments(self):
        # Equal unit variances with gamma = 1: corr = 1 / sqrt(2).
        m = lmc_cross_moments(LmcSpec(sigma2_0=1.0, sigma2_1=1.0, gamma=1.0))
        assert m["var0"] == pytest.approx(1.0)
        assert m["var1"] == pytest.approx(2.0)
        assert m["cov"] == pytest.approx(1.0)
        assert m["corr"] == pytest.approx(1.0 / np.sqrt(2.0))

    def test_cross_moments_match_simulation(self):
        spec = LmcSpec(sigma2_0=0.8, sigma2_1=1.3, gamma=-0.5)
        rng = np.random.default_rng(5)
        w0 = rng.normal(scale=np.sqrt(spec.sigma2_0), size=200_000)
        w1t = rng.normal(scale=np.sqrt(spec.sigma2_1), size=200_000)
        w1 = lmc_compose(w0, w1t, spec.gamma)
        m = lmc_cross_moments(spec)
        assert np.var(w1) == pytest.approx(m["var1"], rel=0.02)
        assert np.cov(w0, w1)[0, 1] == pytest.approx(m["cov"], rel=0.03)


class TestDeriveStream:
    def test_reproducible(self):
        a = derive_stream(123, "chain", 0, "gibbs_alpha")
        b = derive_stream(123, "chain", 0, "gibbs_alpha")
        np.testing.assert_array_equal(
            a.standard_normal(8), b.standard_normal(8)
        )

    def test_distinct_paths_differ(self):
        draws = {}
        for path in [
            ("chain", 0, "gibbs_alpha"),
            ("chain", 0, "gibbs_beta"),
            ("chain", 1, "gibbs_alpha"),
            ("sim", 0, "gibbs_alpha"),
        ]:
            draws[path] = derive_stream(99, *path).standard_normal(4).tolist()
        vals = list(draws.values())
        for i in range(len(vals)):
            for j in range(i + 1, len(vals)):
                assert vals[i] != vals[j]

    def test_seed_matters(self):
        a = derive_stream(1, "x").standard_normal(4)
        b = derive_stream(2, "x").standard_normal(4)
        assert not np.array_equal(a, b)

    def test_negative_int_component_rejected(self):
        with pytest.raises(ValidationError):
            derive_stream(1, -3)
