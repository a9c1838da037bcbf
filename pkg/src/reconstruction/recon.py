"""Known-pose reconstruction by central-slice insertion in Fourier space.

Each image's centered 2D transform is a central plane of the map's 3D
transform. Planes are spread onto the 3D grid with trilinear weights;
the accumulated numerator is divided by the accumulated weights and
inverted. Grids are centered (DC at index n // 2) and indexed [z, y, x].
"""

import itertools
import logging
from typing import Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, model_validator
from tqdm import tqdm

from ..ingestion.normalizer import denormalize_stack
from ..ingestion.schemas import DensityMap, ImageStack, Orientation

logger = logging.getLogger(__name__)

DEFAULT_WEIGHT_FLOOR = 1e-3


class FourierAccumulator(BaseModel):
    """Weighted sums of inserted slice values and of the interpolation weights."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    numerator: np.ndarray
    weights: np.ndarray
    voxel_size: float = Field(1.0, gt=0)
    n_inserted: int = Field(0, ge=0)

    @model_validator(mode="after")
    def matching_grids(self) -> "FourierAccumulator":
        if self.numerator.ndim != 3 or len(set(self.numerator.shape)) != 1:
            raise ValueError(f"Accumulator grid must be cubic, got {self.numerator.shape}")
        if self.weights.shape != self.numerator.shape:
            raise ValueError("Numerator and weight grids differ in shape")
        return self

    @classmethod
    def empty(cls, side: int, voxel_size: float = 1.0) -> "FourierAccumulator":
        return cls(
            numerator=np.zeros((side,) * 3, dtype=np.complex128),
            weights=np.zeros((side,) * 3, dtype=np.float64),
            voxel_size=voxel_size,
        )

    @property
    def side(self) -> int:
        return self.numerator.shape[0]


def centered_fft2(image: np.ndarray) -> np.ndarray:
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(image)))


def insert_slice(
    acc: FourierAccumulator,
    image: np.ndarray,
    orientation: Orientation,
) -> FourierAccumulator:
    """
    Spread the image's transform onto the plane spanned by the first two
    rows of the rotation matrix. Updates `acc` in place and returns it.
    """
    image = np.asarray(image, dtype=np.float64)
    n = acc.side
    if image.shape != (n, n):
        raise ValueError(f"Image shape {image.shape} does not match accumulator side {n}")

    c = n // 2
    values = centered_fft2(image)
    k = np.arange(n, dtype=np.float64) - c
    ky, kx = np.meshgrid(k, k, indexing="ij")
    inside = kx**2 + ky**2 <= (n // 2) ** 2
    rot = orientation.as_matrix()

    coords = kx[inside, None] * rot[0] + ky[inside, None] * rot[1] + c  # (M, 3) as x, y, z
    values = values[inside]
    base = np.floor(coords).astype(np.int64)
    frac = coords - base

    num_flat = acc.numerator.reshape(-1)
    wt_flat = acc.weights.reshape(-1)
    size = n**3
    for offset in itertools.product((0, 1), repeat=3):
        idx = base + np.array(offset)
        w = np.prod(np.where(np.array(offset) == 1, frac, 1.0 - frac), axis=1)
        valid = np.all((idx >= 0) & (idx < n), axis=1) & (w > 0)
        flat = (idx[valid, 2] * n + idx[valid, 1]) * n + idx[valid, 0]
        wv = w[valid]
        vv = values[valid]
        num_flat += np.bincount(flat, weights=wv * vv.real, minlength=size)
        num_flat += 1j * np.bincount(flat, weights=wv * vv.imag, minlength=size)
        wt_flat += np.bincount(flat, weights=wv, minlength=size)
    acc.n_inserted += 1
    return acc


def merge(acc_a: FourierAccumulator, acc_b: FourierAccumulator) -> FourierAccumulator:
    """Sum of two accumulators over the same grid."""
    if acc_a.side != acc_b.side or not np.isclose(acc_a.voxel_size, acc_b.voxel_size):
        raise ValueError("Cannot merge accumulators over different grids")
    return FourierAccumulator(
        numerator=acc_a.numerator + acc_b.numerator,
        weights=acc_a.weights + acc_b.weights,
        voxel_size=acc_a.voxel_size,
        n_inserted=acc_a.n_inserted + acc_b.n_inserted,
    )


def _friedel_flip(grid: np.ndarray) -> np.ndarray:
    """grid[-k] for every k on a centered grid."""
    flipped = grid[::-1, ::-1, ::-1]
    if grid.shape[0] % 2 == 0:
        flipped = np.roll(flipped, 1, axis=(0, 1, 2))
    return flipped


def symmetrize(acc: FourierAccumulator) -> tuple[np.ndarray, np.ndarray]:
    """Numerator and weights with Hermitian symmetry F(−k) = conj F(k) enforced."""
    numerator = 0.5 * (acc.numerator + np.conj(_friedel_flip(acc.numerator)))
    weights = 0.5 * (acc.weights + _friedel_flip(acc.weights))
    return numerator, weights


def invert(acc: FourierAccumulator, weight_floor: float = DEFAULT_WEIGHT_FLOOR) -> np.ndarray:
    """
    Complex real-space map before the imaginary part is dropped.

    The floor is relative: weights below weight_floor × mean positive weight
    are raised to it.
    """
    if weight_floor <= 0:
        raise ValueError(f"weight_floor must be positive, got {weight_floor}")
    if acc.n_inserted == 0 or not np.any(acc.weights > 0):
        raise ValueError("Cannot finalize an empty accumulator")
    numerator, weights = symmetrize(acc)
    floor = weight_floor * float(weights[weights > 0].mean())
    spectrum = numerator / np.maximum(weights, floor)
    return np.fft.fftshift(np.fft.ifftn(np.fft.ifftshift(spectrum)))


def finalize(acc: FourierAccumulator, weight_floor: float = DEFAULT_WEIGHT_FLOOR) -> DensityMap:
    volume = invert(acc, weight_floor)
    real = volume.real
    peak = float(np.abs(real).max())
    if peak > 0:
        logger.debug("Imaginary residual %.3g of peak real value", float(np.abs(volume.imag).max()) / peak)
    return DensityMap(voxels=real, voxel_size=acc.voxel_size)


def _accumulate(
    images: np.ndarray,
    orientations: Sequence[Orientation],
    side: int,
    voxel_size: float,
    progress: bool = False,
) -> FourierAccumulator:
    acc = FourierAccumulator.empty(side, voxel_size)
    for image, orientation in tqdm(
        zip(images, orientations), total=len(images), desc="Inserting", disable=not progress
    ):
        insert_slice(acc, image, orientation)
    return acc


def reconstruct(
    images: ImageStack,
    orientations: Optional[Sequence[Orientation]] = None,
    weight_floor: float = DEFAULT_WEIGHT_FLOOR,
    n_jobs: int = 1,
    denormalize: bool = True,
    progress: bool = False,
) -> DensityMap:
    """
    Map from images at known poses.

    Poses default to the orientations recorded in the stack metadata.
    Images carrying normalization metadata are mapped back to projection
    units first when `denormalize` is set. With n_jobs > 1 the stack is
    split into contiguous chunks whose accumulators are summed.
    """
    if orientations is None:
        orientations = [m.orientation for m in images.metadata]
    if len(orientations) != len(images):
        raise ValueError(f"{len(orientations)} poses for {len(images)} images")
    if any(o is None for o in orientations):
        raise ValueError("Every image needs a known orientation for reconstruction")
    height, width = images.image_shape
    if height != width:
        raise ValueError(f"Reconstruction needs square images, got {images.image_shape}")

    data = denormalize_stack(images) if denormalize else images.images.astype(np.float64)
    if n_jobs > 1 and len(images) > 1:
        chunks = np.array_split(np.arange(len(images)), min(n_jobs, len(images)))
        partials = Parallel(n_jobs=n_jobs)(
            delayed(_accumulate)(data[idx], [orientations[i] for i in idx], height, images.pixel_size)
            for idx in chunks
        )
        acc = partials[0]
        for part in partials[1:]:
            acc = merge(acc, part)
    else:
        acc = _accumulate(data, orientations, height, images.pixel_size, progress)

    logger.info("Inserted %d slices into a %d³ grid", acc.n_inserted, height)
    return finalize(acc, weight_floor)
