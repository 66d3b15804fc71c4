"""Normalization and decomposition contracts."""

import numpy as np
import pytest

from ioh_forecast.preprocess import (
    SIGMA_FLOOR,
    decompose,
    denormalize,
    denormalize_all,
    normalize,
)


class TestNormalize:
    def test_already_standardized(self):
        x = np.array([[-1.0], [1.0]])
        out, stats = normalize(x)
        np.testing.assert_allclose(out, x)
        assert stats.mean[0] == 0.0
        assert stats.std[0] == 1.0

    def test_constant_channel_floors(self):
        x = np.full((3, 1), 5.0)
        out, stats = normalize(x)
        assert stats.floored[0]
        assert stats.std[0] == SIGMA_FLOOR
        np.testing.assert_array_equal(out, np.zeros((3, 1)))

    def test_population_std_values(self):
        x = np.array([[1.0], [2.0], [3.0], [4.0]])
        out, stats = normalize(x)
        assert stats.mean[0] == pytest.approx(2.5)
        assert stats.std[0] == pytest.approx(np.sqrt(1.25))
        np.testing.assert_allclose(
            out.ravel(), [-1.3416, -0.4472, 0.4472, 1.3416], atol=1e-4
        )

    def test_post_normalization_stats(self):
        rng = np.random.default_rng(0)
        x = rng.normal(85, 7, (200, 2))
        out, stats = normalize(x)
        assert not stats.floored.any()
        np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-6)
        np.testing.assert_allclose(out.std(axis=0), 1.0, atol=1e-6)

    def test_idempotent_on_standardized_data(self):
        rng = np.random.default_rng(1)
        x, _ = normalize(rng.normal(0, 1, (50, 2)))
        again, _ = normalize(x)
        np.testing.assert_allclose(again, x, atol=1e-6)

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            normalize(np.zeros((1, 2)))


class TestDenormalize:
    def test_round_trip(self):
        rng = np.random.default_rng(2)
        x = rng.normal(90, 12, (64, 2))
        out, stats = normalize(x)
        for ch in range(2):
            np.testing.assert_allclose(
                denormalize(out[:, ch], stats, ch), x[:, ch], atol=1e-6
            )

    def test_zero_maps_to_mean(self):
        _, stats = normalize(np.array([[78.0], [102.0]]))
        np.testing.assert_allclose(
            denormalize(np.array([0.0]), stats, 0), [90.0]
        )

    def test_affine_evaluation(self):
        from ioh_forecast.preprocess import NormStats

        stats = NormStats(mean=np.array([80.0]), std=np.array([10.0]),
                          floored=np.array([False]))
        np.testing.assert_allclose(
            denormalize(np.array([1.0, -1.0]), stats, 0), [90.0, 70.0]
        )

    def test_channel_out_of_range(self):
        _, stats = normalize(np.zeros((3, 2)) + [[80.0, 120.0]] * 3)
        with pytest.raises(IndexError):
            denormalize(np.array([0.0]), stats, 2)

    def test_last_value_round_trips_exactly_with_context_stats(self):
        # a forecast equal to the normalized context's last value must
        # de-normalize to the raw last value
        rng = np.random.default_rng(3)
        x = rng.normal(85, 6, (30, 2))
        out, stats = normalize(x)
        restored = denormalize_all(out[-1:, :], stats)
        np.testing.assert_allclose(restored, x[-1:, :], atol=1e-9)


class TestDecompose:
    def test_window_one_identity(self):
        rng = np.random.default_rng(4)
        x = rng.normal(0, 1, (12, 2))
        parts = decompose(x, 1)
        np.testing.assert_array_equal(parts.trend, x)
        np.testing.assert_array_equal(parts.seasonal, np.zeros_like(x))

    def test_constant_channel(self):
        x = np.full((6, 1), 3.5)
        parts = decompose(x, 3)
        np.testing.assert_allclose(parts.trend, x)
        np.testing.assert_allclose(parts.seasonal, 0.0, atol=1e-12)

    def test_replicate_pad_values(self):
        x = np.array([[1.0], [2.0], [3.0], [4.0]])
        parts = decompose(x, 3)
        np.testing.assert_allclose(parts.trend.ravel(), [4 / 3, 2, 3, 11 / 3])
        np.testing.assert_allclose(
            parts.seasonal.ravel(), [-1 / 3, 0, 0, 1 / 3]
        )

    def test_even_window_rejected(self):
        with pytest.raises(ValueError):
            decompose(np.zeros((8, 2)), 4)

    def test_reconstruction_over_random_windows(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            L = int(rng.integers(4, 40))
            window = int(rng.choice([w for w in (1, 3, 5, 9) if w <= 2 * L - 1]))
            x = rng.normal(85, 10, (L, 2))
            parts = decompose(x, window)
            np.testing.assert_allclose(parts.trend + parts.seasonal, x,
                                       atol=1e-6)

    def test_commutes_with_channel_permutation(self):
        rng = np.random.default_rng(6)
        x = rng.normal(0, 1, (20, 2))
        direct = decompose(x[:, ::-1].copy(), 5)
        swapped = decompose(x, 5)
        np.testing.assert_allclose(direct.trend, swapped.trend[:, ::-1])
        np.testing.assert_allclose(direct.seasonal, swapped.seasonal[:, ::-1])
