"""Observation networks, schedules, noise statistics, reproducibility."""

import numpy as np
import pytest
from scipy import stats

from varda.errors import ContractError
from varda.obsgen import (
    ObsNetwork,
    draw_network,
    observation_times,
    perturb_ic,
    sample_obs,
)

RNG = np.random.default_rng(11)


class TestDrawNetwork:
    def test_full_coverage(self):
        net = draw_network(10, 10, seed=0)
        assert np.array_equal(net.indices, np.arange(10))

    def test_cardinality_and_order(self):
        net = draw_network(36, 18, seed=1)
        assert net.indices.size == 18
        assert np.all(np.diff(net.indices) > 0)

    def test_bounds(self):
        with pytest.raises(ContractError):
            draw_network(10, 11, seed=0)
        with pytest.raises(ContractError):
            draw_network(10, 0, seed=0)

    def test_determinism(self):
        a = draw_network(36, 18, seed=7)
        b = draw_network(36, 18, seed=7)
        assert np.array_equal(a.indices, b.indices)

    def test_uniformity_chi_square(self):
        dim, n_obs, draws = 12, 4, 10_000
        counts = np.zeros(dim)
        for s in range(draws):
            counts[draw_network(dim, n_obs, seed=s).indices] += 1
        expected = draws * n_obs / dim
        chi2 = float(((counts - expected) ** 2 / expected).sum())
        p = stats.chi2.sf(chi2, dim - 1)
        assert p > 0.01


class TestSchedule:
    def test_default_convention_first_at_every_k(self):
        assert observation_times(10, 5) == (5, 10)
        assert observation_times(6, 3) == (3, 6)
        assert observation_times(9, 3) == (3, 6, 9)

    def test_include_t0_convention(self):
        assert observation_times(10, 5, include_t0=True) == (0, 5)
        assert observation_times(6, 3, include_t0=True) == (0, 3)

    def test_every_step(self):
        assert observation_times(3, 1) == (1, 2, 3)


class TestSampleObs:
    def _nature(self, steps=50, dim=8):
        return np.cumsum(RNG.standard_normal((steps, dim)), axis=0)

    def test_zero_noise_recovers_truth(self):
        nature = self._nature()
        net = draw_network(8, 4, seed=3, every_k=2, noise_sd=0.0)
        batch = sample_obs(nature, net, (10, 6))
        for i, t in enumerate(batch.times):
            assert np.array_equal(batch.values[i], nature[10 + t][net.indices])

    def test_noise_moments(self):
        dim = 4
        nature = np.zeros((40, dim))
        net = draw_network(dim, dim, seed=5, every_k=1, noise_sd=0.7)
        samples = []
        for w in range(2500):
            batch = sample_obs(nature, net, (w % 30, 10))
            samples.append(batch.values.ravel())
        sd = np.concatenate(samples).std()
        assert abs(sd - 0.7) / 0.7 < 0.02

    def test_replay_determinism(self):
        nature = self._nature()
        net = draw_network(8, 3, seed=9, every_k=3, noise_sd=0.5)
        a = sample_obs(nature, net, (12, 9))
        b = sample_obs(nature, net, (12, 9))
        assert np.array_equal(a.values, b.values)
        c = sample_obs(nature, net, (21, 9))
        assert not np.array_equal(a.values, c.values)

    def test_only_network_indices_appear(self):
        nature = self._nature()
        net = draw_network(8, 3, seed=13, every_k=2, noise_sd=0.0)
        batch = sample_obs(nature, net, (0, 6))
        assert np.array_equal(batch.indices, net.indices)
        assert batch.values.shape == (3, 3)

    def test_per_component_noise_vector(self):
        dim = 6
        nature = np.zeros((30, dim))
        sd_vec = np.linspace(0.1, 0.6, dim)
        net = draw_network(dim, dim, seed=2, every_k=1, noise_sd=sd_vec)
        vals = np.concatenate([
            sample_obs(nature, net, (w, 5)).values for w in range(20)
        ])
        measured = vals.std(axis=0)
        assert np.all(np.abs(measured - sd_vec) < 0.25 * sd_vec + 0.02)


class TestPerturbIC:
    def test_zero_sd_identical(self):
        x = RNG.standard_normal(10)
        assert np.array_equal(perturb_ic(x, 0.0, seed=1), x)

    def test_bitwise_reproducible(self):
        x = RNG.standard_normal(10)
        a = perturb_ic(x, 1.0, seed=42)
        b = perturb_ic(x, 1.0, seed=42)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, perturb_ic(x, 1.0, seed=43))

    def test_mean_near_zero(self):
        x = np.zeros(25)
        draws = np.stack([perturb_ic(x, 1.0, seed=s) for s in range(10_000)])
        mean = draws.mean()
        se = 1.0 / np.sqrt(draws.size)
        assert abs(mean) < 3 * se

    def test_negative_sd_rejected(self):
        with pytest.raises(ContractError):
            perturb_ic(np.zeros(3), -1.0, seed=0)


class TestNetworkValidation:
    def test_indices_must_increase(self):
        with pytest.raises(ContractError):
            ObsNetwork(indices=np.array([3, 1]), every_k=1, noise_sd=0.1,
                       seed=0, dim=5)

    def test_every_k_positive(self):
        with pytest.raises(ContractError):
            ObsNetwork(indices=np.array([0, 1]), every_k=0, noise_sd=0.1,
                       seed=0, dim=5)
