"""Synthetic density maps for desk-scale experiments."""

import numpy as np

from ..ingestion.schemas import DensityMap


def gaussian_phantom(
    size: int = 64,
    n_blobs: int = 12,
    seed: int = 0,
    voxel_size: float = 1.0,
) -> DensityMap:
    """
    Sum of anisotropic Gaussian blobs, asymmetric and smooth.

    Blob centers lie within 0.2·size of the box center and widths stay
    below 0.07·size, so every blob sits inside the inscribed sphere and
    survives any rotation about the center without clipping.
    """
    if size < 4:
        raise ValueError(f"Phantom size must be at least 4, got {size}")
    rng = np.random.default_rng(seed)
    c = size // 2
    axis = np.arange(size, dtype=np.float64) - c
    z, y, x = np.meshgrid(axis, axis, axis, indexing="ij")

    voxels = np.zeros((size, size, size))
    min_width = max(0.04 * size, 1.2)
    for _ in range(n_blobs):
        while True:
            center = rng.uniform(-0.2, 0.2, 3) * size
            if np.linalg.norm(center) <= 0.2 * size:
                break
        widths = rng.uniform(min_width, max(0.07 * size, min_width), 3)
        amplitude = rng.uniform(0.5, 1.0)
        cx, cy, cz = center
        wx, wy, wz = widths
        voxels += amplitude * np.exp(
            -0.5 * (((x - cx) / wx) ** 2 + ((y - cy) / wy) ** 2 + ((z - cz) / wz) ** 2)
        )
    return DensityMap(voxels=voxels, voxel_size=voxel_size)
