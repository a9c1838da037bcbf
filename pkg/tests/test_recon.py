"""Tests for known-pose Fourier reconstruction."""

import numpy as np
import pytest

from src.analysis.fsc import fsc
from src.ingestion.schemas import ImageMetadata, ImageStack, Orientation
from src.reconstruction.recon import (
    FourierAccumulator,
    centered_fft2,
    finalize,
    insert_slice,
    invert,
    merge,
    reconstruct,
)
from src.simulation.simulate import project, sample_orientation


@pytest.fixture(scope="module")
def projections(compact32) -> ImageStack:
    rng = np.random.default_rng(21)
    orientations = [sample_orientation(rng) for _ in range(1000)]
    images = np.stack([project(compact32, o) for o in orientations])
    return ImageStack(images=images, metadata=[ImageMetadata(orientation=o, index=i) for i, o in enumerate(orientations)])


@pytest.fixture(scope="module")
def recovered(projections):
    return reconstruct(projections, denormalize=False)


class TestInsertSlice:
    def test_identity_lands_on_central_plane(self, rng):
        n = 16
        image = rng.standard_normal((n, n))
        acc = insert_slice(FourierAccumulator.empty(n), image, Orientation.identity())
        c = n // 2
        expected = centered_fft2(image)
        k = np.arange(n) - c
        inside = (k[:, None] ** 2 + k[None, :] ** 2) <= c**2
        np.testing.assert_allclose(acc.numerator[c][inside], expected[inside], atol=1e-9)
        off_plane = np.delete(acc.weights, c, axis=0)
        assert off_plane.sum() == 0

    def test_zero_image_adds_weight_only(self):
        acc = insert_slice(FourierAccumulator.empty(8), np.zeros((8, 8)), sample_orientation(np.random.default_rng(0)))
        assert not acc.numerator.any()
        assert acc.weights.sum() > 0
        assert acc.n_inserted == 1

    def test_additive(self, rng):
        a, b = rng.standard_normal((2, 8, 8))
        pose = sample_orientation(rng)
        twice = insert_slice(insert_slice(FourierAccumulator.empty(8), a, pose), b, pose)
        once = insert_slice(FourierAccumulator.empty(8), a + b, pose)
        np.testing.assert_allclose(twice.numerator, once.numerator, atol=1e-9)
        np.testing.assert_allclose(twice.weights, 2 * once.weights)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            insert_slice(FourierAccumulator.empty(8), np.zeros((6, 6)), Orientation.identity())


class TestMerge:
    def test_sums_grids(self, rng):
        poses = [sample_orientation(rng) for _ in range(4)]
        images = rng.standard_normal((4, 8, 8))
        whole = FourierAccumulator.empty(8)
        left, right = FourierAccumulator.empty(8), FourierAccumulator.empty(8)
        for i, (img, pose) in enumerate(zip(images, poses)):
            insert_slice(whole, img, pose)
            insert_slice(left if i < 2 else right, img, pose)
        merged = merge(left, right)
        np.testing.assert_allclose(merged.numerator, whole.numerator, atol=1e-9)
        assert merged.n_inserted == 4

    def test_grid_mismatch(self):
        with pytest.raises(ValueError):
            merge(FourierAccumulator.empty(8), FourierAccumulator.empty(10))


class TestFinalize:
    def test_empty_accumulator(self):
        with pytest.raises(ValueError):
            finalize(FourierAccumulator.empty(8))

    def test_single_image_is_finite(self, rng):
        acc = insert_slice(FourierAccumulator.empty(16), rng.standard_normal((16, 16)), sample_orientation(rng))
        volume = finalize(acc, weight_floor=1e-3)
        assert np.isfinite(volume.voxels).all()

    @pytest.mark.parametrize("n", [15, 16])
    def test_imaginary_residual(self, rng, n):
        acc = FourierAccumulator.empty(n)
        for _ in range(5):
            insert_slice(acc, rng.standard_normal((n, n)), sample_orientation(rng))
        volume = invert(acc)
        assert np.abs(volume.imag).max() < 1e-6 * np.abs(volume.real).max()

    def test_bad_floor(self, rng):
        acc = insert_slice(FourierAccumulator.empty(8), rng.standard_normal((8, 8)), Orientation.identity())
        with pytest.raises(ValueError):
            finalize(acc, weight_floor=0.0)


class TestReconstruct:
    def test_linear(self, rng):
        poses = [sample_orientation(rng) for _ in range(6)]
        meta = [ImageMetadata(orientation=o) for o in poses]
        a, b = rng.standard_normal((2, 6, 16, 16))
        ra = reconstruct(ImageStack(images=a, metadata=meta)).voxels.astype(np.float64)
        rb = reconstruct(ImageStack(images=b, metadata=meta)).voxels.astype(np.float64)
        rab = reconstruct(ImageStack(images=a + b, metadata=meta)).voxels.astype(np.float64)
        assert np.linalg.norm(rab - ra - rb) < 1e-5 * np.linalg.norm(rab)

    def test_needs_poses(self, random_stack):
        with pytest.raises(ValueError):
            reconstruct(random_stack)

    def test_pose_count_mismatch(self, random_stack):
        with pytest.raises(ValueError):
            reconstruct(random_stack, orientations=[Orientation.identity()])

    def test_recovers_phantom(self, compact32, recovered):
        curve = fsc(recovered, compact32)
        below_half_nyquist = curve.shell_freq < 0.25 / compact32.voxel_size
        assert np.all(curve.correlation[below_half_nyquist] > 0.9)

    def test_reprojection_matches_inserted_images(self, projections, recovered):
        for i in range(0, 1000, 100):
            reprojected = project(recovered, projections.metadata[i].orientation)
            r = np.corrcoef(reprojected.ravel(), projections.images[i].ravel())[0, 1]
            assert r > 0.95

    def test_parallel_matches_serial(self, projections):
        subset = projections.subset(list(range(40)))
        serial = reconstruct(subset, denormalize=False)
        parallel = reconstruct(subset, denormalize=False, n_jobs=2)
        np.testing.assert_allclose(parallel.voxels, serial.voxels, rtol=1e-4, atol=1e-6)
