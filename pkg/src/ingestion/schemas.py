"""Data models and validation for density maps, particle stacks and run configs."""

import math
from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.spatial.transform import Rotation


class Split(str, Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


class ModelKind(str, Enum):
    DIFFUSION = "diffusion"
    POST = "post"


class GammaSampling(str, Enum):
    CONTINUOUS = "continuous"
    DISCRETE = "discrete"


class FilterKind(str, Enum):
    LOWPASS = "lowpass"
    WIENER = "wiener"


class Orientation(BaseModel):
    """A 3D rotation stored as a unit quaternion (w, x, y, z).

    q and -q describe the same rotation; the stored form has its first
    nonzero component positive.
    """

    model_config = ConfigDict(frozen=True)

    quaternion: tuple[float, float, float, float]

    @field_validator("quaternion")
    @classmethod
    def unit_norm(cls, q: tuple[float, float, float, float]) -> tuple[float, float, float, float]:
        arr = np.asarray(q, dtype=np.float64)
        norm = float(np.linalg.norm(arr))
        if not np.all(np.isfinite(arr)) or abs(norm - 1.0) > 1e-9:
            raise ValueError(f"Quaternion must have unit norm, got |q| = {norm}")
        nonzero = arr[np.flatnonzero(arr)]
        if nonzero.size and nonzero[0] < 0:
            arr = -arr
        return tuple(float(v) for v in arr)

    @classmethod
    def identity(cls) -> "Orientation":
        return cls(quaternion=(1.0, 0.0, 0.0, 0.0))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "Orientation":
        x, y, z, w = Rotation.from_matrix(matrix).as_quat()
        return cls(quaternion=(w, x, y, z))

    def as_matrix(self) -> np.ndarray:
        """3×3 rotation matrix acting on (x, y, z) column vectors."""
        w, x, y, z = self.quaternion
        return Rotation.from_quat([x, y, z, w]).as_matrix()


def _finite_float32(value, ndim: int, name: str) -> np.ndarray:
    arr = np.ascontiguousarray(value, dtype=np.float32)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}D, got shape {arr.shape}")
    if any(n <= 0 for n in arr.shape):
        raise ValueError(f"{name} has an empty axis: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


class DensityMap(BaseModel):
    """3D density on an isotropic grid.

    `voxels` is indexed [z, y, x] (MRC file order, X fastest); `grid_shape`
    gives the (nx, ny, nz) view.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    voxels: np.ndarray
    voxel_size: float = Field(1.0, gt=0, description="Å per voxel")
    origin: tuple[float, float, float] = Field((0.0, 0.0, 0.0), description="Origin in Å")

    @field_validator("voxels", mode="before")
    @classmethod
    def finite_volume(cls, v) -> np.ndarray:
        return _finite_float32(v, 3, "voxels")

    @property
    def grid_shape(self) -> tuple[int, int, int]:
        nz, ny, nx = self.voxels.shape
        return (nx, ny, nz)

    @property
    def is_cubic(self) -> bool:
        return len(set(self.voxels.shape)) == 1

    @property
    def side(self) -> int:
        """Side length of a cubic map."""
        if not self.is_cubic:
            raise ValueError(f"Map is not cubic: grid {self.grid_shape}")
        return self.voxels.shape[0]


class ImageMetadata(BaseModel):
    """Per-image record. Every field may be absent for real data."""

    orientation: Optional[Orientation] = None
    seed: Optional[int] = Field(None, description="Noise-realization seed")
    source: Optional[str] = Field(None, description="Source map identifier")
    index: Optional[int] = Field(None, ge=0, description="Index in the originating dataset")
    norm_shift: Optional[float] = Field(None, description="Mean subtracted during normalization")
    norm_scale: Optional[float] = Field(None, gt=0, description="Std divided out during normalization")


class ImageStack(BaseModel):
    """Uniformly shaped 2D particle images, indexed [image, y, x]."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    images: np.ndarray
    pixel_size: float = Field(1.0, gt=0, description="Å per pixel")
    metadata: list[ImageMetadata] = Field(default_factory=list)

    @field_validator("images", mode="before")
    @classmethod
    def finite_images(cls, v) -> np.ndarray:
        arr = np.asarray(v)
        if arr.ndim == 2:
            arr = arr[np.newaxis]
        return _finite_float32(arr, 3, "images")

    @model_validator(mode="after")
    def metadata_per_image(self) -> "ImageStack":
        if not self.metadata:
            self.metadata = [ImageMetadata() for _ in range(len(self.images))]
        elif len(self.metadata) != len(self.images):
            raise ValueError(
                f"{len(self.metadata)} metadata records for {len(self.images)} images"
            )
        return self

    def __len__(self) -> int:
        return len(self.images)

    @property
    def image_shape(self) -> tuple[int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, indices: list[int]) -> "ImageStack":
        return ImageStack(
            images=self.images[list(indices)],
            pixel_size=self.pixel_size,
            metadata=[self.metadata[i] for i in indices],
        )


class SimulationConfig(BaseModel):
    """Parameters of a simulated paired dataset."""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    n_images: int = Field(..., gt=0)
    snr: float = Field(0.1, gt=0, description="var(signal) / var(noise); inf for no noise")
    image_size: int = Field(64, gt=0, description="Output image side in pixels")
    rng_seed: int = Field(0, ge=0, lt=2**64)
    split: tuple[float, float, float] = Field((0.8, 0.1, 0.1), description="train/val/test fractions")
    n_jobs: int = Field(1, ge=1, description="Parallel workers for generation")

    @field_validator("snr")
    @classmethod
    def snr_not_nan(cls, v: float) -> float:
        if math.isnan(v):
            raise ValueError("snr must be a number")
        return v

    @field_validator("split")
    @classmethod
    def fractions_sum_to_one(cls, v: tuple[float, float, float]) -> tuple[float, float, float]:
        if any(f < 0 or f > 1 for f in v):
            raise ValueError(f"Split fractions must lie in [0, 1], got {v}")
        if abs(sum(v) - 1.0) > 1e-9:
            raise ValueError(f"Split fractions must sum to 1, got {sum(v)}")
        return v

    def split_counts(self) -> tuple[int, int, int]:
        """Number of train/val/test images; rounding leftovers go to test."""
        n_train = int(round(self.n_images * self.split[0]))
        n_val = min(int(round(self.n_images * self.split[1])), self.n_images - n_train)
        return n_train, n_val, self.n_images - n_train - n_val


class TrainConfig(BaseModel):
    """Optimization and architecture settings for either training stage."""

    epochs: int = Field(200, ge=0)
    batch_size: int = Field(16, gt=0)
    learning_rate: float = Field(1e-4, gt=0)
    T: int = Field(1000, ge=1, description="Diffusion steps used in training")
    beta_start: float = Field(1e-4, gt=0, lt=1)
    beta_end: float = Field(0.02, gt=0, lt=1)
    gamma_sampling: GammaSampling = GammaSampling.CONTINUOUS
    rng_seed: int = Field(0, ge=0, lt=2**64)
    checkpoint_every: int = Field(10, gt=0, description="Epochs between checkpoints")
    base_width: int = Field(32, gt=0)
    levels: int = Field(3, ge=1, le=6)

    @model_validator(mode="after")
    def ordered_betas(self) -> "TrainConfig":
        if self.beta_start >= self.beta_end:
            raise ValueError(
                f"beta_start must be below beta_end, got {self.beta_start} >= {self.beta_end}"
            )
        return self

    @classmethod
    def post_defaults(cls, **overrides) -> "TrainConfig":
        """Defaults for the lightweight post-processing network."""
        values = {"base_width": 16, "learning_rate": 1e-3}
        values.update(overrides)
        return cls(**values)


class PairedDataset(BaseModel):
    """Noisy condition images aligned index-by-index with clean targets."""

    noisy: ImageStack
    clean: ImageStack
    splits: list[Split]
    config: Optional[SimulationConfig] = None
    source: Optional[str] = None

    @model_validator(mode="after")
    def aligned(self) -> "PairedDataset":
        if len(self.noisy) != len(self.clean):
            raise ValueError(f"{len(self.noisy)} noisy vs {len(self.clean)} clean images")
        if self.noisy.image_shape != self.clean.image_shape:
            raise ValueError(
                f"Noisy shape {self.noisy.image_shape} != clean shape {self.clean.image_shape}"
            )
        if len(self.splits) != len(self.noisy):
            raise ValueError(f"{len(self.splits)} split labels for {len(self.noisy)} images")
        return self

    def __len__(self) -> int:
        return len(self.noisy)

    def indices(self, split: Split) -> list[int]:
        return [i for i, s in enumerate(self.splits) if s == split]

    def select(self, split: Split) -> "PairedDataset":
        """Images of one split; original indices stay in the metadata."""
        idx = self.indices(split)
        return PairedDataset(
            noisy=self.noisy.subset(idx),
            clean=self.clean.subset(idx),
            splits=[split] * len(idx),
            config=self.config,
            source=self.source,
        )


class FilterSpec(BaseModel):
    """Classical reference denoiser settings."""

    kind: FilterKind
    sigma: Optional[float] = Field(None, gt=0, description="Low-pass Gaussian sigma in pixels")
    noise_var: Optional[float] = Field(
        None, ge=0, description="Wiener noise variance; estimated from the image when absent"
    )

    @model_validator(mode="after")
    def sigma_for_lowpass(self) -> "FilterSpec":
        if self.kind == FilterKind.LOWPASS and self.sigma is None:
            raise ValueError("lowpass filter needs sigma")
        return self

    @property
    def label(self) -> str:
        if self.kind == FilterKind.LOWPASS:
            return f"lowpass(sigma={self.sigma:g})"
        return "wiener" if self.noise_var is None else f"wiener(noise_var={self.noise_var:g})"
