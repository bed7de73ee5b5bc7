"""Channel model tests: brute-force summation oracle, law-of-large-numbers
checks, scenario draw ranges, serialization round trips."""

import numpy as np
import pytest

from nearfar.channel import (ChannelModelParams, ChannelSampleSet, FieldHypothesis,
                             PathParams, ScenarioConfig, draw_scenario,
                             load_samples_binary, load_samples_text, mean_channel,
                             sample_channels, save_samples_binary, save_samples_text,
                             sigma2_for_K)
from nearfar.steering import (FAR, NEAR, ArrayGeometry, rayleigh_distance, steering)

GEOM = ArrayGeometry(n1=8, n2=4, d=0.005, wavelength=0.01)


def random_params(rng, L, sigma2=0.1):
    paths = [PathParams(beta=complex(rng.standard_normal(), rng.standard_normal()),
                        theta=rng.uniform(np.pi / 3, 2 * np.pi / 3),
                        phi=rng.uniform(-np.pi / 6, np.pi / 6),
                        r=rng.uniform(1.0, 10.0)) for _ in range(L)]
    labels = FieldHypothesis(tuple(int(rng.integers(0, 2)) for _ in range(L)))
    return ChannelModelParams(paths=paths, sigma2=sigma2), labels


class TestFieldHypothesis:
    def test_index_round_trip(self):
        for L in (1, 2, 4):
            for idx in range(1 << L):
                z = FieldHypothesis.from_index(idx, L)
                assert z.index == idx
                assert len(z) == L

    def test_bit_order_lsb_is_first_path(self):
        z = FieldHypothesis.from_index(1, 3)
        assert z.labels == (1, 0, 0)

    def test_validation(self):
        with pytest.raises(ValueError):
            FieldHypothesis((0, 2))


class TestMeanChannel:
    def test_single_far_path_broadside(self):
        params = ChannelModelParams(
            paths=[PathParams(beta=1.0, theta=np.pi / 2, phi=0.0, r=5.0)], sigma2=1.0)
        mean = mean_channel(GEOM, params, FieldHypothesis((FAR,)))
        assert np.allclose(mean, 1 / np.sqrt(GEOM.n_elements), atol=1e-14)

    def test_opposite_gains_cancel(self):
        p = PathParams(beta=0.7 - 0.2j, theta=1.2, phi=0.1, r=3.0)
        q = PathParams(beta=-p.beta, theta=p.theta, phi=p.phi, r=p.r)
        params = ChannelModelParams(paths=[p, q], sigma2=1.0)
        mean = mean_channel(GEOM, params, FieldHypothesis((NEAR, NEAR)))
        assert np.max(np.abs(mean)) < 1e-15

    def test_matches_naive_loop(self):
        rng = np.random.default_rng(17)
        for _ in range(10):
            params, labels = random_params(rng, L=3)
            mean = mean_channel(GEOM, params, labels)
            naive = np.zeros(GEOM.n_elements, dtype=complex)
            for path, z in zip(params.paths, labels.labels):
                vec = steering(GEOM, path.theta, path.phi, path.r, z)
                for i in range(GEOM.n_elements):
                    naive[i] += path.beta * vec[i]
            assert np.allclose(mean, naive, atol=1e-12)

    def test_dimension_mismatch(self):
        params, _ = random_params(np.random.default_rng(0), L=2)
        with pytest.raises(ValueError):
            mean_channel(GEOM, params, FieldHypothesis((NEAR,)))


class TestSigma2ForK:
    def test_unit_ratio(self):
        mean = np.ones(GEOM.n_elements)  # ||mean||^2 = N
        assert sigma2_for_K(mean, 0.0, GEOM.n_elements) == pytest.approx(1.0, rel=1e-14)

    def test_ten_db(self):
        mean = np.ones(GEOM.n_elements)
        assert sigma2_for_K(mean, 10.0, GEOM.n_elements) == pytest.approx(0.1, rel=1e-14)

    def test_zero_mean_rejected(self):
        with pytest.raises(ValueError):
            sigma2_for_K(np.zeros(4), 0.0, 4)

    def test_monte_carlo_round_trip(self):
        rng = np.random.default_rng(23)
        params, labels = random_params(rng, L=2)
        mean = mean_channel(GEOM, params, labels)
        target_db = 7.0
        sigma2 = sigma2_for_K(mean, target_db, GEOM.n_elements)
        params = ChannelModelParams(paths=params.paths, sigma2=sigma2)
        samples = sample_channels(GEOM, params, labels, 10_000, rng)
        diffuse = samples.samples - mean[None, :]
        k_emp = (np.vdot(mean, mean).real /
                 (np.mean(np.abs(diffuse) ** 2) * GEOM.n_elements))
        assert abs(10 * np.log10(k_emp) - target_db) <= 0.3


class TestSampleChannels:
    def test_vanishing_noise(self):
        rng = np.random.default_rng(31)
        params, labels = random_params(rng, L=2, sigma2=1e-30)
        mean = mean_channel(GEOM, params, labels)
        samples = sample_channels(GEOM, params, labels, 5, rng)
        assert np.allclose(samples.samples, mean[None, :], atol=1e-12)

    def test_law_of_large_numbers(self):
        rng = np.random.default_rng(37)
        params, labels = random_params(rng, L=2, sigma2=0.5)
        mean = mean_channel(GEOM, params, labels)
        S = 10_000
        samples = sample_channels(GEOM, params, labels, S, rng)
        emp_mean = samples.samples.mean(axis=0)
        bound = 4 * np.sqrt(params.sigma2) / np.sqrt(S)
        assert np.max(np.abs(emp_mean - mean)) <= bound
        emp_var = np.mean(np.abs(samples.samples - mean[None, :]) ** 2, axis=0)
        assert np.max(np.abs(emp_var / params.sigma2 - 1.0)) <= 0.05

    def test_standardized_residuals(self):
        # real and imaginary residual parts, scaled by sqrt(sigma2/2), are unit normal
        rng = np.random.default_rng(41)
        params, labels = random_params(rng, L=2, sigma2=0.25)
        mean = mean_channel(GEOM, params, labels)
        samples = sample_channels(GEOM, params, labels, 4000, rng)  # S*N = 128000
        resid = (samples.samples - mean[None, :]) / np.sqrt(params.sigma2 / 2)
        stacked = np.concatenate([resid.real.ravel(), resid.imag.ravel()])
        assert abs(stacked.mean()) <= 0.05
        assert abs(stacked.var() - 1.0) <= 0.05

    def test_seed_determinism(self):
        params, labels = random_params(np.random.default_rng(3), L=2)
        a = sample_channels(GEOM, params, labels, 50, np.random.default_rng(99))
        b = sample_channels(GEOM, params, labels, 50, np.random.default_rng(99))
        assert np.array_equal(a.samples, b.samples)

    def test_invalid_count(self):
        params, labels = random_params(np.random.default_rng(5), L=1)
        with pytest.raises(ValueError):
            sample_channels(GEOM, params, labels, 0, np.random.default_rng(0))


class TestDrawScenario:
    def make_cfg(self, **kw):
        # the 8x4 test array has a Rayleigh distance of 0.4 m, so the
        # near-field draw range must start well inside it
        defaults = dict(geometry=GEOM, num_paths=4, gamma=1.0, k_factor_db=5.0,
                        num_samples=10, r_min=0.05, seed=0)
        defaults.update(kw)
        return ScenarioConfig(**defaults)

    def test_balanced_labels(self):
        _, labels = draw_scenario(self.make_cfg(gamma=1.0), np.random.default_rng(1))
        assert sum(labels.labels) == 2  # two far, two near

    def test_gamma_zero_all_far(self):
        _, labels = draw_scenario(self.make_cfg(gamma=0.0), np.random.default_rng(2))
        assert all(z == FAR for z in labels.labels)

    def test_strict_gamma(self):
        cfg = self.make_cfg(gamma=0.5, strict_gamma=True)  # 4/3 near paths
        with pytest.raises(ValueError):
            draw_scenario(cfg, np.random.default_rng(3))

    def test_draw_ranges(self):
        cfg = self.make_cfg()
        r_rd = rayleigh_distance(GEOM)
        rng = np.random.default_rng(7)
        for _ in range(2500):  # 10^4 paths in total
            params, labels = draw_scenario(cfg, rng)
            for path, z in zip(params.paths, labels.labels):
                assert np.pi / 3 <= path.theta <= 2 * np.pi / 3
                assert -np.pi / 6 <= path.phi <= np.pi / 6
                if z == NEAR:
                    assert cfg.r_min <= path.r <= r_rd
                else:
                    assert r_rd <= path.r <= 4 * r_rd

    def test_gain_scale_follows_distance(self):
        # beta is lambda/(4 pi r) times a unit complex normal; check the scale
        rng = np.random.default_rng(11)
        draws = []
        for _ in range(500):
            params, _ = draw_scenario(self.make_cfg(), rng)
            for p in params.paths:
                draws.append(abs(p.beta) * 4 * np.pi * p.r / GEOM.wavelength)
        draws = np.array(draws)
        # |CN(0,1)| is Rayleigh(1/sqrt 2) with mean sqrt(pi)/2
        assert abs(draws.mean() - np.sqrt(np.pi) / 2) < 0.05

    def test_realized_k_factor(self):
        params, labels = draw_scenario(self.make_cfg(k_factor_db=12.0),
                                       np.random.default_rng(13))
        mean = mean_channel(GEOM, params, labels)
        k_lin = np.vdot(mean, mean).real / (GEOM.n_elements * params.sigma2)
        assert 10 * np.log10(k_lin) == pytest.approx(12.0, abs=1e-9)

    def test_seed_determinism(self):
        cfg = self.make_cfg()
        p1, z1 = draw_scenario(cfg, np.random.default_rng(55))
        p2, z2 = draw_scenario(cfg, np.random.default_rng(55))
        assert z1 == z2
        assert all(a == b for a, b in zip(p1.paths, p2.paths))


class TestSerialization:
    def make_set(self):
        rng = np.random.default_rng(61)
        data = rng.standard_normal((6, 10)) + 1j * rng.standard_normal((6, 10))
        return ChannelSampleSet(data)

    def test_text_round_trip(self, tmp_path):
        sample_set = self.make_set()
        path = tmp_path / "samples.csv"
        save_samples_text(path, sample_set, {"config_hash": "abc", "seed": 7})
        loaded, prov = load_samples_text(path)
        assert np.array_equal(loaded.samples, sample_set.samples)
        assert prov == {"config_hash": "abc", "seed": "7"}

    def test_binary_round_trip(self, tmp_path):
        sample_set = self.make_set()
        path = tmp_path / "samples.bin"
        save_samples_binary(path, sample_set, {"config_hash": "abc"})
        loaded, prov = load_samples_binary(path)
        assert np.array_equal(loaded.samples, sample_set.samples)
        assert prov["config_hash"] == "abc"

    def test_rewrite_is_byte_identical(self, tmp_path):
        sample_set = self.make_set()
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        save_samples_text(a, sample_set, {"seed": 1})
        save_samples_text(b, sample_set, {"seed": 1})
        assert a.read_bytes() == b.read_bytes()

    def test_binary_rejects_wrong_magic(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"not a sample file")
        with pytest.raises(ValueError):
            load_samples_binary(path)
