"""Tests for Fourier Shell Correlation and resolution estimates."""

import numpy as np
import pytest

from src.analysis.fsc import FSC_COLUMNS, FSCCurve, fsc, resolution_at, shell_indices
from src.ingestion.schemas import DensityMap


def _curve(values, freqs=None) -> FSCCurve:
    values = np.asarray(values, dtype=np.float64)
    freqs = np.arange(1, len(values) + 1) * 0.1 if freqs is None else np.asarray(freqs)
    return FSCCurve(shell_freq=freqs, correlation=values, shell_counts=np.ones(len(values), dtype=int))


class TestFSC:
    def test_self_correlation(self, phantom16):
        curve = fsc(phantom16, phantom16)
        np.testing.assert_allclose(curve.correlation, 1.0, atol=1e-9)
        assert len(curve.shell_freq) == 8
        assert curve.shell_freq[-1] == pytest.approx(0.5 / phantom16.voxel_size)

    def test_negation(self, phantom16):
        neg = DensityMap(voxels=-phantom16.voxels, voxel_size=phantom16.voxel_size)
        np.testing.assert_allclose(fsc(phantom16, neg).correlation, -1.0, atol=1e-9)

    def test_independent_noise(self, rng):
        a = DensityMap(voxels=rng.standard_normal((32, 32, 32)))
        b = DensityMap(voxels=rng.standard_normal((32, 32, 32)))
        curve = fsc(a, b)
        populated = curve.shell_counts >= 50
        assert np.all(np.abs(curve.correlation[populated]) < 0.2)

    def test_symmetric(self, phantom16, rng):
        other = DensityMap(voxels=phantom16.voxels + rng.standard_normal((16, 16, 16)), voxel_size=2.0)
        np.testing.assert_array_equal(fsc(phantom16, other).correlation, fsc(other, phantom16).correlation)

    def test_scale_invariant(self, phantom16, rng):
        other = DensityMap(voxels=phantom16.voxels + rng.standard_normal((16, 16, 16)), voxel_size=2.0)
        scaled = DensityMap(voxels=3.5 * other.voxels, voxel_size=2.0)
        np.testing.assert_allclose(
            fsc(phantom16, other).correlation, fsc(phantom16, scaled).correlation, atol=1e-6
        )

    def test_counts_match_shells(self):
        shells = shell_indices(16)
        curve = fsc(DensityMap(voxels=np.ones((16, 16, 16))), DensityMap(voxels=np.ones((16, 16, 16))))
        assert curve.shell_counts[0] == np.count_nonzero(shells == 1)

    def test_voxel_size_mismatch(self, phantom16):
        with pytest.raises(ValueError):
            fsc(phantom16, DensityMap(voxels=phantom16.voxels, voxel_size=1.0))

    def test_shape_mismatch(self, phantom16, phantom32):
        with pytest.raises(ValueError):
            fsc(phantom16, phantom32)


class TestResolution:
    def test_interpolated_crossing(self):
        est = resolution_at(_curve([1.0, 0.5, 0.1]), 0.143)
        assert est.crossed
        assert est.frequency == pytest.approx(0.28925)
        assert est.resolution == pytest.approx(3.457, abs=1e-3)

    def test_no_crossing(self):
        est = resolution_at(_curve([1.0] * 5))
        assert not est.crossed
        assert est.resolution == pytest.approx(2.0)
        assert est.describe().startswith("no-crossing")

    def test_below_at_first_shell(self):
        est = resolution_at(_curve([0.05, 0.9]))
        assert est.crossed
        assert est.frequency == pytest.approx(0.1)

    def test_monotone_in_threshold(self, rng):
        values = np.sort(rng.random(12))[::-1]
        curve = _curve(values)
        thresholds = np.linspace(0.05, 0.95, 19)
        resolutions = [resolution_at(curve, t).resolution for t in thresholds]
        assert all(b >= a - 1e-12 for a, b in zip(resolutions, resolutions[1:]))

    def test_dense_scan_agreement(self):
        curve = _curve([1.0, 0.9, 0.7, 0.4, 0.2, 0.1, 0.05])
        dense_f = np.linspace(curve.shell_freq[0], curve.shell_freq[-1], 10_001)
        dense_c = np.interp(dense_f, curve.shell_freq, curve.correlation)
        first = dense_f[np.argmax(dense_c < 0.143)]
        assert abs(resolution_at(curve).frequency - first) < 0.1


class TestCurveIO:
    def test_csv_roundtrip(self, phantom16, tmp_path):
        curve = fsc(phantom16, phantom16)
        path = curve.write_csv(tmp_path / "fsc.csv")
        assert path.read_text().splitlines()[0] == ",".join(FSC_COLUMNS)
        back = FSCCurve.read_csv(path)
        np.testing.assert_allclose(back.shell_freq, curve.shell_freq, rtol=1e-9)
        np.testing.assert_array_equal(back.shell_counts, curve.shell_counts)

    def test_rejects_unordered(self):
        with pytest.raises(ValueError):
            _curve([1.0, 0.5], freqs=[0.2, 0.1])

    def test_missing_column(self, tmp_path):
        (tmp_path / "bad.csv").write_text("shell_freq_invA,fsc\n0.1,1.0\n")
        with pytest.raises(ValueError):
            FSCCurve.read_csv(tmp_path / "bad.csv")
