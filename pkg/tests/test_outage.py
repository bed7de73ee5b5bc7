"""Outage tests: quadrature oracle for the incomplete gamma, sampling oracle
for the non-central chi-squared CDF, analytic-vs-MC agreement."""

import math

import numpy as np
import pytest
from scipy import integrate, special

from nearfar.channel import (ChannelModelParams, FieldHypothesis, PathParams,
                             ScenarioConfig, draw_scenario, mean_channel)
from nearfar.outage import (OPQuery, dbm_to_watts, lower_incomplete_gamma,
                            mc_outage_curve, noncentral_chi2_cdf,
                            outage_probability_analytic, outage_probability_mc,
                            regularized_lower_gamma)
from nearfar.steering import ArrayGeometry


def ncx2_sampling_oracle(x_grid, k, lam, n_draws, seed, batch=100_000):
    """Empirical CDF of a sum of k squared unit-variance normals whose means
    pack the non-centrality lam (all of it on the first coordinate)."""
    rng = np.random.default_rng(seed)
    mu = np.zeros(k)
    mu[0] = math.sqrt(lam)
    counts = np.zeros(len(x_grid), dtype=np.int64)
    remaining = n_draws
    while remaining > 0:
        b = min(batch, remaining)
        z = rng.standard_normal((b, k)) + mu[None, :]
        q = np.einsum("ij,ij->i", z, z)
        counts += (q[:, None] <= np.asarray(x_grid)[None, :]).sum(axis=0)
        remaining -= b
    return counts / n_draws


class TestLowerIncompleteGamma:
    def test_closed_form_a1(self):
        assert lower_incomplete_gamma(1.0, 1.0) == pytest.approx(1 - math.exp(-1), rel=1e-13)

    def test_zero_argument(self):
        assert lower_incomplete_gamma(2.5, 0.0) == 0.0

    def test_quadrature_oracle(self):
        # the a < 1 integrand is singular at zero, which inflates quad's
        # error estimate; scale the tolerance with it
        cases = [(2.5, 3.0), (0.5, 0.2), (1.0, 5.0), (7.0, 2.0), (10.0, 30.0)]
        for a, x in cases:
            oracle, err = integrate.quad(lambda t: t ** (a - 1) * math.exp(-t), 0.0, x)
            tol = max(1e-10, 1e-12 * oracle, 10 * err)
            assert lower_incomplete_gamma(a, x) == pytest.approx(oracle, abs=tol)

    def test_complement_identity(self):
        # gamma(a,x) + Gamma_upper(a,x) = Gamma(a), checked relative to
        # Gamma(a) (the subtraction form cannot resolve a tiny lower part)
        rng = np.random.default_rng(3)
        for _ in range(50):
            a = rng.uniform(0.3, 60.0)
            x = rng.uniform(0.0, 120.0)
            whole = math.gamma(a)
            upper = whole * float(special.gammaincc(a, x))
            got = lower_incomplete_gamma(a, x)
            assert abs(got + upper - whole) <= 1e-12 * whole

    def test_regularized_range_and_scipy_match(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            a = rng.uniform(0.1, 500.0)
            x = rng.uniform(0.0, 1000.0)
            p = regularized_lower_gamma(a, x)
            assert 0.0 <= p <= 1.0
            assert p == pytest.approx(float(special.gammainc(a, x)), abs=1e-12)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            lower_incomplete_gamma(0.0, 1.0)
        with pytest.raises(ValueError):
            lower_incomplete_gamma(1.0, -1.0)


class TestNoncentralChi2CDF:
    def test_central_closed_form_k2(self):
        # central chi-squared with 2 DoF: F(x) = 1 - exp(-x/2)
        assert noncentral_chi2_cdf(2.0, 2, 0.0) == pytest.approx(1 - math.exp(-1), abs=1e-10)

    def test_limits(self):
        assert noncentral_chi2_cdf(0.0, 8, 5.0) == 0.0
        assert noncentral_chi2_cdf(1e6, 8, 5.0) == pytest.approx(1.0, abs=1e-12)

    def test_sampling_oracle_k8_lam5(self):
        x_grid = np.array([2.0, 5.0, 10.0, 13.0, 20.0, 30.0])
        emp = ncx2_sampling_oracle(x_grid, 8, 5.0, 1_000_000, seed=11)
        for x, e in zip(x_grid, emp):
            assert noncentral_chi2_cdf(x, 8, 5.0) == pytest.approx(e, abs=0.003)

    def test_monotone_in_x(self):
        xs = np.linspace(0.0, 80.0, 40)
        vals = [noncentral_chi2_cdf(x, 10, 7.0) for x in xs]
        assert all(b >= a for a, b in zip(vals, vals[1:]))
        assert all(0.0 <= v <= 1.0 for v in vals)

    def test_nonincreasing_in_lambda(self):
        lams = [0.0, 0.5, 2.0, 5.0, 20.0, 100.0]
        vals = [noncentral_chi2_cdf(12.0, 6, lam) for lam in lams]
        assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))

    def test_large_lambda_against_scipy(self):
        from scipy.stats import ncx2
        for k, lam in [(512, 1600.0), (8192, 80_000.0), (2, 3000.0)]:
            center = k + lam
            for x in [0.8 * center, center, 1.1 * center]:
                assert noncentral_chi2_cdf(x, k, lam) == pytest.approx(
                    float(ncx2.cdf(x, k, lam)), abs=1e-9)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            noncentral_chi2_cdf(-1.0, 2, 0.0)
        with pytest.raises(ValueError):
            noncentral_chi2_cdf(1.0, 0, 0.0)
        with pytest.raises(ValueError):
            noncentral_chi2_cdf(1.0, 2, -0.5)


GEOM = ArrayGeometry(n1=32, n2=8, d=0.005, wavelength=0.01)
P_T = dbm_to_watts(40.0)
NOISE = dbm_to_watts(-96.0)


def desk_scenario(seed, k_factor_db=5.0):
    cfg = ScenarioConfig(geometry=GEOM, num_paths=4, gamma=1.0,
                         k_factor_db=k_factor_db, num_samples=10, seed=seed)
    return draw_scenario(cfg, np.random.default_rng(seed))


def rate_at(fraction_of_power, mean, sigma2, n):
    "Rate whose power threshold sits at the given multiple of E||h||^2."
    e_pow = float(np.vdot(mean, mean).real) + n * sigma2
    return math.log2(1.0 + (P_T / NOISE) * fraction_of_power * e_pow)


class TestOutageAnalytic:
    def test_zero_rate_target(self):
        params, labels = desk_scenario(1)
        mean = mean_channel(GEOM, params, labels)
        q = OPQuery(0.0, P_T, NOISE)
        assert outage_probability_analytic(mean, params.sigma2, q) == 0.0

    def test_central_case_single_element(self):
        # zero mean, N=1: OP = 1 - exp(-(2^R - 1) noise / (P_T sigma2))
        sigma2 = 2.5e-9
        r_th = math.log2(1.0 + P_T * sigma2 / NOISE)  # mid-scale rate
        q = OPQuery(r_th, P_T, NOISE)
        got = outage_probability_analytic(np.zeros(1, dtype=complex), sigma2, q)
        expected = 1 - math.exp(-(2 ** r_th - 1) * NOISE / (P_T * sigma2))
        assert got == pytest.approx(expected, rel=1e-10)

    def test_noncentrality_matches_per_entry_sum(self):
        params, labels = desk_scenario(2)
        mean = mean_channel(GEOM, params, labels)
        sigma2 = params.sigma2
        lam_norm = float(np.vdot(mean, mean).real) / (sigma2 / 2)
        lam_parts = float(np.sum(mean.real**2 + mean.imag**2)) / (sigma2 / 2)
        assert lam_parts == pytest.approx(lam_norm, rel=1e-12)

    def test_monotone_in_rate_and_power(self):
        params, labels = desk_scenario(3)
        mean = mean_channel(GEOM, params, labels)
        base = rate_at(1.0, mean, params.sigma2, GEOM.n_elements)
        rates = np.linspace(base - 0.5, base + 0.5, 9)
        ops = [outage_probability_analytic(mean, params.sigma2, OPQuery(r, P_T, NOISE))
               for r in rates]
        assert all(b >= a - 1e-12 for a, b in zip(ops, ops[1:]))
        powers = [0.5 * P_T, P_T, 2.0 * P_T]
        ops_p = [outage_probability_analytic(mean, params.sigma2, OPQuery(base, p, NOISE))
                 for p in powers]
        assert all(b <= a + 1e-12 for a, b in zip(ops_p, ops_p[1:]))


class TestOutageMonteCarlo:
    def test_deterministic_rate_below_threshold(self):
        params, labels = desk_scenario(4)
        quiet = ChannelModelParams(paths=params.paths, sigma2=1e-30)
        mean = mean_channel(GEOM, quiet, labels)
        det_rate = math.log2(1.0 + (P_T / NOISE) * float(np.vdot(mean, mean).real))
        rng = np.random.default_rng(0)
        assert outage_probability_mc(GEOM, quiet, labels,
                                     OPQuery(det_rate - 0.5, P_T, NOISE), 200, rng) == 0.0
        rng = np.random.default_rng(0)
        assert outage_probability_mc(GEOM, quiet, labels,
                                     OPQuery(det_rate + 0.5, P_T, NOISE), 200, rng) == 1.0

    def test_agreement_with_analytic(self):
        params, labels = desk_scenario(5)
        mean = mean_channel(GEOM, params, labels)
        n_samples = 100_000
        base = rate_at(1.0, mean, params.sigma2, GEOM.n_elements)
        rates = np.linspace(base - 0.2, base + 0.2, 7)
        mc = mc_outage_curve(GEOM, params, labels, rates, P_T, NOISE, n_samples,
                             np.random.default_rng(17))
        for r, mc_val in zip(rates, mc):
            an = outage_probability_analytic(mean, params.sigma2, OPQuery(r, P_T, NOISE))
            se = math.sqrt(max(an * (1 - an), 1e-12) / n_samples)
            assert abs(an - mc_val) <= max(0.01, 3 * se)

    def test_determinism_and_batching(self):
        params, labels = desk_scenario(6)
        mean = mean_channel(GEOM, params, labels)
        base = rate_at(1.0, mean, params.sigma2, GEOM.n_elements)
        q = OPQuery(base, P_T, NOISE)
        a = outage_probability_mc(GEOM, params, labels, q, 5000, np.random.default_rng(9))
        b = outage_probability_mc(GEOM, params, labels, q, 5000, np.random.default_rng(9))
        assert a == b

    def test_invalid_count(self):
        params, labels = desk_scenario(7)
        with pytest.raises(ValueError):
            outage_probability_mc(GEOM, params, labels, OPQuery(1.0, P_T, NOISE), 0,
                                  np.random.default_rng(0))
