"""Image-quality metrics and per-stack reports.

Scoring convention: before any metric, the estimate and the reference are
mapped by the affine transform that takes the reference onto [0, 1], and
PSNR/SSIM use data_range = 1.
"""

import logging
import math
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.ndimage import gaussian_filter

from ..ingestion.normalizer import normalize_to_reference
from ..ingestion.schemas import ImageStack

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["index", "mse", "psnr_db", "ssim"]

SSIM_SIGMA = 1.5
SSIM_TRUNCATE = 3.5  # radius int(3.5 * 1.5 + 0.5) = 5 → 11×11 window
SSIM_WINDOW = 11
K1, K2 = 0.01, 0.03


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"Shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    """Mean squared difference over all pixels or voxels."""
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b, data_range: float = 1.0) -> float:
    """10·log10(data_range² / mse) in dB; inf for identical inputs."""
    if data_range <= 0:
        raise ValueError(f"data_range must be positive, got {data_range}")
    err = mse(a, b)
    if err == 0:
        return math.inf
    return float(10.0 * np.log10(data_range**2 / err))


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean structural similarity with an 11×11 Gaussian window (σ = 1.5).

    Local statistics use population covariance and reflective borders; the
    5-pixel margin is excluded from the mean.
    """
    a, b = _pair(a, b)
    if a.ndim != 2:
        raise ValueError(f"ssim expects 2D images, got shape {a.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"Images must be at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {a.shape}")
    if data_range <= 0:
        raise ValueError(f"data_range must be positive, got {data_range}")

    def smooth(img: np.ndarray) -> np.ndarray:
        return gaussian_filter(img, sigma=SSIM_SIGMA, truncate=SSIM_TRUNCATE, mode="reflect")

    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    mu_a, mu_b = smooth(a), smooth(b)
    var_a = smooth(a * a) - mu_a * mu_a
    var_b = smooth(b * b) - mu_b * mu_b
    cov = smooth(a * b) - mu_a * mu_b

    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    )
    pad = (SSIM_WINDOW - 1) // 2
    return float(s[pad:-pad, pad:-pad].mean())


def score_image(estimate, reference) -> tuple[float, float, float]:
    """(mse, psnr_db, ssim) after mapping both images onto the reference's [0, 1] range."""
    est, ref = normalize_to_reference(estimate, reference)
    sim = min(max(ssim(est, ref, 1.0), -1.0), 1.0)
    return mse(est, ref), psnr(est, ref, 1.0), sim


class ImageMetrics(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    index: int
    mse: float = Field(..., ge=0)
    psnr_db: float
    ssim: float = Field(..., ge=-1, le=1)


class MetricsReport(BaseModel):
    """Per-image scores of one method on one dataset."""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    method: str
    dataset: str
    images: list[ImageMetrics]

    @model_validator(mode="after")
    def not_empty(self) -> "MetricsReport":
        if not self.images:
            raise ValueError("A metrics report needs at least one image")
        return self

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([m.model_dump() for m in self.images], columns=REPORT_COLUMNS)

    def aggregates(self) -> pd.DataFrame:
        """Mean, population std and count per metric."""
        frame = self.to_frame()[REPORT_COLUMNS[1:]]
        with np.errstate(invalid="ignore"):
            return pd.DataFrame({
                "mean": frame.mean(),
                "std": frame.std(ddof=0),
                "count": frame.count(),
            })

    def write_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        self.to_frame().to_csv(path, index=False)
        return path

    def write_json(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.write_text(self.model_dump_json(indent=2))
        return path

    @classmethod
    def read_json(cls, path: Union[str, Path]) -> "MetricsReport":
        return cls.model_validate_json(Path(path).read_text())


def evaluate_stack(
    denoised: ImageStack,
    clean: ImageStack,
    method: str,
    dataset: str,
) -> MetricsReport:
    """Score every image of a denoised stack against its clean partner."""
    if len(denoised) != len(clean):
        raise ValueError(f"{len(denoised)} denoised vs {len(clean)} clean images")
    if denoised.image_shape != clean.image_shape:
        raise ValueError(f"Shape mismatch: {denoised.image_shape} vs {clean.image_shape}")

    rows = []
    for i, (est, ref) in enumerate(zip(denoised.images, clean.images)):
        original = clean.metadata[i].index if clean.metadata else None
        err, peak, sim = score_image(est, ref)
        rows.append(ImageMetrics(index=original if original is not None else i, mse=err, psnr_db=peak, ssim=sim))
    report = MetricsReport(method=method, dataset=dataset, images=rows)
    means = report.aggregates()["mean"]
    logger.info(
        "%s on %s: MSE %.4g, PSNR %.3f dB, SSIM %.4f over %d images",
        method, dataset, means["mse"], means["psnr_db"], means["ssim"], len(rows),
    )
    return report
