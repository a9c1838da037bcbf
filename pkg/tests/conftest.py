"""Shared fixtures: small phantoms, stacks and seeded generators."""

import numpy as np
import pytest
import torch

from src.ingestion.schemas import DensityMap, ImageStack, SimulationConfig
from src.simulation.phantom import gaussian_phantom
from src.simulation.simulate import build_dataset


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def generator() -> torch.Generator:
    return torch.Generator().manual_seed(1234)


@pytest.fixture(scope="session")
def phantom16():
    return gaussian_phantom(size=16, n_blobs=6, seed=3, voxel_size=2.0)


@pytest.fixture(scope="session")
def phantom32():
    return gaussian_phantom(size=32, n_blobs=10, seed=5, voxel_size=1.5)


@pytest.fixture(scope="session")
def dataset16(phantom16):
    config = SimulationConfig(n_images=20, snr=0.5, image_size=16, rng_seed=7, split=(0.6, 0.2, 0.2))
    return build_dataset(phantom16, config, source="phantom16")


@pytest.fixture
def random_stack(rng) -> ImageStack:
    return ImageStack(images=rng.standard_normal((5, 16, 16)), pixel_size=1.3)


def blob_map(n: int, blobs: list[tuple[tuple[int, int, int], float, float]]) -> DensityMap:
    """Sum of isotropic Gaussians given as (center offset xyz, sigma, amplitude)."""
    axis = np.arange(n, dtype=np.float64) - n // 2
    z, y, x = np.meshgrid(axis, axis, axis, indexing="ij")
    voxels = np.zeros((n, n, n))
    for (cx, cy, cz), s, a in blobs:
        voxels += a * np.exp(-((x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2) / (2 * s**2))
    return DensityMap(voxels=voxels, voxel_size=1.0)


@pytest.fixture(scope="session")
def smooth32():
    """Wide blobs: interpolation error of a projection stays well under a percent."""
    return blob_map(32, [((2, -1, 1), 3.5, 1.0), ((-2, 2, -1), 4.0, 0.7), ((1, 2, 2), 3.5, 0.5)])


@pytest.fixture(scope="session")
def compact32():
    """Narrower blobs near the center: negligible density at the box faces, signal out to half-Nyquist."""
    return blob_map(32, [((2, -1, 1), 2.5, 1.0), ((-3, 2, -1), 2.5, 0.7), ((1, 3, -2), 2.5, 0.5)])
