"""Normalization conventions for particle images.

Two conventions live here:

- Paired z-scoring for training data: the noisy image sets the affine
  parameters and its clean partner is mapped with the same ones, so the
  pair stays aligned.
- Reference range scaling for scoring: both images are mapped so the
  reference spans [0, 1].
"""

import numpy as np

from ..errors import DegenerateInputError
from .schemas import ImageMetadata, ImageStack


def zscore_params(image: np.ndarray) -> tuple[float, float]:
    """Mean and standard deviation of an image, computed in float64."""
    image = np.asarray(image, dtype=np.float64)
    shift = float(image.mean())
    scale = float(image.std())
    if not np.isfinite(scale) or scale <= 0:
        raise DegenerateInputError("Cannot normalize an image with zero variance")
    return shift, scale


def normalize_pair(
    noisy: np.ndarray,
    clean: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Z-score the noisy image and apply the same affine map to the clean one.

    Returns (noisy_n, clean_n, shift, scale).
    """
    shift, scale = zscore_params(noisy)
    noisy_n = (np.asarray(noisy, dtype=np.float64) - shift) / scale
    clean_n = (np.asarray(clean, dtype=np.float64) - shift) / scale
    return noisy_n, clean_n, shift, scale


def denormalize(image: np.ndarray, meta: ImageMetadata) -> np.ndarray:
    """Undo the recorded affine normalization; identity when none was recorded."""
    image = np.asarray(image, dtype=np.float64)
    if meta.norm_scale is None:
        return image
    return image * meta.norm_scale + (meta.norm_shift or 0.0)


def denormalize_stack(stack: ImageStack) -> np.ndarray:
    """All images of a stack mapped back to projection units, as float64."""
    return np.stack([denormalize(img, meta) for img, meta in zip(stack.images, stack.metadata)])


def normalize_to_reference(
    estimate: np.ndarray,
    reference: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Map both images with the affine transform taking the reference onto [0, 1]."""
    reference = np.asarray(reference, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    lo, hi = float(reference.min()), float(reference.max())
    span = hi - lo
    if span <= 0:
        # flat reference: shift only
        return estimate - lo, reference - lo
    return (estimate - lo) / span, (reference - lo) / span
