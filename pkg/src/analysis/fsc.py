"""Fourier Shell Correlation and threshold-crossing resolution."""

import math
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, model_validator

from ..ingestion.schemas import DensityMap

FSC_COLUMNS = ["shell_freq_invA", "fsc", "count"]
DEFAULT_THRESHOLD = 0.143


class FSCCurve(BaseModel):
    """Correlation per Fourier shell; frequencies in 1/Å at shell centers."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    shell_freq: np.ndarray
    correlation: np.ndarray
    shell_counts: np.ndarray

    @model_validator(mode="after")
    def well_formed(self) -> "FSCCurve":
        n = len(self.shell_freq)
        if n == 0 or len(self.correlation) != n or len(self.shell_counts) != n:
            raise ValueError("FSC arrays must be non-empty and of equal length")
        if self.shell_freq[0] <= 0 or np.any(np.diff(self.shell_freq) <= 0):
            raise ValueError("Shell frequencies must be positive and strictly increasing")
        if np.any(self.shell_counts < 1):
            raise ValueError("Every shell must contain at least one voxel")
        return self

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "shell_freq_invA": self.shell_freq,
            "fsc": self.correlation,
            "count": self.shell_counts,
        }, columns=FSC_COLUMNS)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "FSCCurve":
        missing = set(FSC_COLUMNS) - set(frame.columns)
        if missing:
            raise ValueError(f"FSC table is missing columns: {sorted(missing)}")
        return cls(
            shell_freq=frame["shell_freq_invA"].to_numpy(dtype=np.float64),
            correlation=frame["fsc"].to_numpy(dtype=np.float64),
            shell_counts=frame["count"].to_numpy(dtype=np.int64),
        )

    def write_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        self.to_frame().to_csv(path, index=False, float_format="%.10g")
        return path

    @classmethod
    def read_csv(cls, path: Union[str, Path]) -> "FSCCurve":
        return cls.from_frame(pd.read_csv(path))


class ResolutionEstimate(BaseModel):
    threshold: float
    frequency: float
    resolution: float
    crossed: bool

    def describe(self) -> str:
        if not self.crossed:
            return f"no-crossing at {self.threshold:g}: Nyquist {self.resolution:.3f} Å"
        return f"{self.resolution:.3f} Å at FSC = {self.threshold:g}"


def shell_indices(n: int) -> np.ndarray:
    """Radial shell of every voxel of an n³ FFT grid (unshifted), by rounding."""
    k = np.fft.fftfreq(n) * n
    kz, ky, kx = np.meshgrid(k, k, k, indexing="ij")
    return np.rint(np.sqrt(kx**2 + ky**2 + kz**2)).astype(np.int64)


def fsc(vol_a: DensityMap, vol_b: DensityMap) -> FSCCurve:
    """
    Re(Σ F_A·conj(F_B)) / sqrt(Σ|F_A|² · Σ|F_B|²) per one-voxel-wide shell,
    from shell 1 to Nyquist.
    """
    if not vol_a.is_cubic or vol_a.grid_shape != vol_b.grid_shape:
        raise ValueError(f"Need equal cubic grids, got {vol_a.grid_shape} and {vol_b.grid_shape}")
    if not math.isclose(vol_a.voxel_size, vol_b.voxel_size, rel_tol=1e-6):
        raise ValueError(f"Voxel sizes differ: {vol_a.voxel_size} vs {vol_b.voxel_size}")

    n = vol_a.side
    nyquist = n // 2
    fa = np.fft.fftn(vol_a.voxels.astype(np.float64))
    fb = np.fft.fftn(vol_b.voxels.astype(np.float64))
    shells = shell_indices(n).ravel()

    def shell_sum(values: np.ndarray) -> np.ndarray:
        return np.bincount(shells, weights=values.ravel(), minlength=nyquist + 1)[1:nyquist + 1]

    cross = shell_sum(fa.real * fb.real + fa.imag * fb.imag)
    power_a = shell_sum(fa.real**2 + fa.imag**2)
    power_b = shell_sum(fb.real**2 + fb.imag**2)
    counts = np.bincount(shells, minlength=nyquist + 1)[1:nyquist + 1]

    denom = np.sqrt(power_a * power_b)
    with np.errstate(invalid="ignore", divide="ignore"):
        correlation = np.where(denom > 0, cross / denom, 0.0)
    freqs = np.arange(1, nyquist + 1) / (n * vol_a.voxel_size)
    return FSCCurve(shell_freq=freqs, correlation=correlation, shell_counts=counts)


def resolution_at(curve: FSCCurve, threshold: float = DEFAULT_THRESHOLD) -> ResolutionEstimate:
    """
    First drop below `threshold`, scanning outward, with linear interpolation
    between the bracketing shells. A curve that is already below at the
    first shell reports that shell; one that never drops reports Nyquist
    with crossed = False.
    """
    f, c = curve.shell_freq, curve.correlation
    below = np.flatnonzero(c < threshold)
    if below.size == 0:
        return ResolutionEstimate(
            threshold=threshold, frequency=float(f[-1]), resolution=float(1.0 / f[-1]), crossed=False
        )
    i = int(below[0])
    if i == 0:
        freq = float(f[0])
    else:
        freq = float(f[i - 1] + (f[i] - f[i - 1]) * (c[i - 1] - threshold) / (c[i - 1] - c[i]))
    return ResolutionEstimate(threshold=threshold, frequency=freq, resolution=1.0 / freq, crossed=True)
