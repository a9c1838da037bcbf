"""Tests for the Gaussian low-pass and shell-wise Wiener baselines."""

import numpy as np
import pytest

from src.analysis.baselines import (
    apply_filter,
    estimate_noise_variance,
    filter_stack,
    lowpass,
    wiener_shell,
)
from src.ingestion.schemas import FilterKind, FilterSpec
from src.simulation.simulate import project, sample_orientation


def _sinusoid(n: int, cycles: int) -> np.ndarray:
    x = np.arange(n)
    return np.tile(np.cos(2 * np.pi * cycles * x / n), (n, 1))


class TestLowpass:
    def test_constant_preserved(self):
        img = np.full((16, 16), 3.25)
        np.testing.assert_allclose(lowpass(img, 2.0), img, atol=1e-9)

    def test_mean_preserved(self, rng):
        img = rng.standard_normal((32, 32)) + 5.0
        assert lowpass(img, 1.7).mean() == pytest.approx(img.mean(), abs=1e-9)

    def test_tiny_sigma_is_identity(self, rng):
        img = rng.standard_normal((16, 16))
        np.testing.assert_allclose(lowpass(img, 1e-3), img, atol=1e-6)

    @pytest.mark.parametrize("cycles", [2, 5, 9])
    def test_sinusoid_attenuation(self, cycles):
        n, sigma = 64, 1.5
        out = lowpass(_sinusoid(n, cycles), sigma)
        f = cycles / n
        expected = np.exp(-2 * np.pi**2 * sigma**2 * f**2)
        assert np.abs(out).max() == pytest.approx(expected, rel=0.01)

    def test_non_positive_sigma(self):
        with pytest.raises(ValueError):
            lowpass(np.zeros((4, 4)), 0.0)


class TestWiener:
    def test_zero_noise_is_identity(self, rng):
        img = rng.standard_normal((16, 16))
        np.testing.assert_allclose(wiener_shell(img, 0.0), img, atol=1e-9)

    def test_huge_noise_suppresses_everything(self, rng):
        img = rng.standard_normal((16, 16))
        np.testing.assert_allclose(wiener_shell(img, 1e6), 0.0, atol=1e-12)

    def test_shellwise_gain_on_sinusoid(self):
        img = _sinusoid(32, 4)
        out = wiener_shell(img, 0.0)
        np.testing.assert_allclose(out, img, atol=1e-9)

    def test_reduces_error(self, phantom32):
        rng = np.random.default_rng(3)
        before, after = [], []
        for _ in range(100):
            clean = project(phantom32, sample_orientation(rng))
            clean = (clean - clean.mean()) / clean.std()
            noisy = clean + rng.standard_normal(clean.shape)
            before.append(np.mean((noisy - clean) ** 2))
            after.append(np.mean((wiener_shell(noisy, 1.0) - clean) ** 2))
        assert np.mean(after) <= np.mean(before)

    def test_noise_estimate_on_white_noise(self, rng):
        img = 2.0 * rng.standard_normal((64, 64))
        assert estimate_noise_variance(img) == pytest.approx(4.0, rel=0.15)

    def test_negative_noise_var(self):
        with pytest.raises(ValueError):
            wiener_shell(np.zeros((4, 4)), -1.0)


class TestDispatch:
    def test_apply_filter(self, rng):
        img = rng.standard_normal((16, 16))
        spec = FilterSpec(kind=FilterKind.LOWPASS, sigma=1.0)
        np.testing.assert_array_equal(apply_filter(spec, img), lowpass(img, 1.0))

    def test_wiener_estimates_noise_when_absent(self, rng):
        img = rng.standard_normal((16, 16))
        spec = FilterSpec(kind=FilterKind.WIENER)
        np.testing.assert_allclose(apply_filter(spec, img), wiener_shell(img, estimate_noise_variance(img)))

    def test_stack_keeps_metadata(self, random_stack):
        out = filter_stack(FilterSpec(kind=FilterKind.LOWPASS, sigma=1.0), random_stack)
        assert len(out) == len(random_stack)
        assert out.pixel_size == random_stack.pixel_size

    def test_rejects_stack_input(self):
        with pytest.raises(ValueError):
            lowpass(np.zeros((2, 4, 4)), 1.0)
