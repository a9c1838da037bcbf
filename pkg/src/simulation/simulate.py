"""Paired noisy/clean particle images from a density map.

Projections are line integrals along z of the rotated map, with the map
resampled by inverse mapping and trilinear interpolation (zero outside
the box). Noise is additive white Gaussian at a target
SNR = var(signal) / var(noise).
"""

import logging
import math
from typing import Optional

import numpy as np
from joblib import Parallel, delayed
from scipy.ndimage import map_coordinates
from tqdm import tqdm

from ..errors import DegenerateInputError
from ..ingestion.normalizer import normalize_pair
from ..ingestion.schemas import (
    DensityMap,
    ImageMetadata,
    ImageStack,
    Orientation,
    PairedDataset,
    SimulationConfig,
    Split,
)

logger = logging.getLogger(__name__)


def child_seed(rng_seed: int, index: int) -> int:
    """Independent 64-bit seed for one dataset index."""
    state = np.random.SeedSequence([rng_seed, index]).generate_state(1, dtype=np.uint64)
    return int(state[0])


def sample_orientation(rng: np.random.Generator) -> Orientation:
    """Haar-uniform rotation: a normalized 4D Gaussian is uniform on the unit 3-sphere."""
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    return Orientation(quaternion=tuple(q))


def project(
    density: DensityMap,
    orientation: Orientation,
    image_size: Optional[int] = None,
) -> np.ndarray:
    """
    Line integral along z of the rotated map, cropped to the central
    image_size × image_size pixels. Indexed [y, x]; pixel size equals the
    map's voxel size.
    """
    if not density.is_cubic:
        raise ValueError(f"Projection needs a cubic map, got grid {density.grid_shape}")
    n = density.side
    m = n if image_size is None else image_size
    if m <= 0 or m > n:
        raise ValueError(f"image_size must be in [1, {n}], got {m}")

    c = n // 2
    start = c - m // 2
    full = np.arange(n, dtype=np.float64) - c
    crop = full[start:start + m]
    z, y, x = np.meshgrid(full, crop, crop, indexing="ij")
    points = np.stack([x.ravel(), y.ravel(), z.ravel()])

    # inverse mapping: output point p samples the map at R^T p
    source = orientation.as_matrix().T @ points + c
    values = map_coordinates(
        density.voxels.astype(np.float64),
        source[::-1],
        order=1,
        mode="constant",
        cval=0.0,
        prefilter=False,
    )
    return values.reshape(n, m, m).sum(axis=0)


def add_noise(image: np.ndarray, snr: float, rng: np.random.Generator) -> np.ndarray:
    """image + ε with ε ~ N(0, var(image)/snr) i.i.d.; snr = inf adds nothing."""
    image = np.asarray(image, dtype=np.float64)
    if math.isnan(snr) or snr <= 0:
        raise ValueError(f"snr must be positive, got {snr}")
    if math.isinf(snr):
        return image.copy()
    variance = float(image.var())
    if variance <= 0:
        raise DegenerateInputError("Cannot set a noise level relative to a zero-variance image")
    return image + rng.normal(0.0, math.sqrt(variance / snr), size=image.shape)


def _simulate_index(
    density: DensityMap,
    config: SimulationConfig,
    index: int,
    source: Optional[str],
) -> tuple[np.ndarray, np.ndarray, ImageMetadata]:
    seed = child_seed(config.rng_seed, index)
    rng = np.random.default_rng(seed)
    orientation = sample_orientation(rng)
    clean = project(density, orientation, config.image_size)
    noisy = add_noise(clean, config.snr, rng)
    noisy_n, clean_n, shift, scale = normalize_pair(noisy, clean)
    meta = ImageMetadata(
        orientation=orientation,
        seed=seed,
        source=source,
        index=index,
        norm_shift=shift,
        norm_scale=scale,
    )
    return noisy_n, clean_n, meta


def build_dataset(
    density: DensityMap,
    config: SimulationConfig,
    source: Optional[str] = None,
    progress: bool = False,
) -> PairedDataset:
    """
    Simulate config.n_images noisy/clean pairs.

    Each index draws from its own child seed of (rng_seed, index), so the
    result does not depend on config.n_jobs. The first images form the
    train split, then val, then test.
    """
    if not density.is_cubic:
        raise ValueError(f"Projection needs a cubic map, got grid {density.grid_shape}")
    if config.image_size > density.side:
        raise ValueError(
            f"image_size {config.image_size} exceeds map side {density.side}"
        )

    indices = range(config.n_images)
    if config.n_jobs > 1:
        results = Parallel(n_jobs=config.n_jobs)(
            delayed(_simulate_index)(density, config, i, source) for i in indices
        )
    else:
        results = [
            _simulate_index(density, config, i, source)
            for i in tqdm(indices, desc="Simulating", disable=not progress)
        ]

    noisy = np.stack([r[0] for r in results])
    clean = np.stack([r[1] for r in results])
    metadata = [r[2] for r in results]

    n_train, n_val, n_test = config.split_counts()
    splits = [Split.TRAIN] * n_train + [Split.VAL] * n_val + [Split.TEST] * n_test
    logger.info(
        "Simulated %d images (%d×%d, snr=%g): %d train / %d val / %d test",
        config.n_images, config.image_size, config.image_size, config.snr,
        n_train, n_val, n_test,
    )
    return PairedDataset(
        noisy=ImageStack(images=noisy, pixel_size=density.voxel_size, metadata=metadata),
        clean=ImageStack(images=clean, pixel_size=density.voxel_size, metadata=metadata),
        splits=splits,
        config=config,
        source=source,
    )
