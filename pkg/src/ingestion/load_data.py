"""Persist and load paired datasets and JSON configs.

A dataset directory holds:

    noisy.mrc       condition images (MRC stack)
    clean.mrc       targets (MRC stack)
    manifest.json   per-image orientation, seed, normalization and split,
                    plus an echo of the simulation config
"""

import logging
from pathlib import Path
from typing import Optional, TypeVar, Union

from pydantic import BaseModel

from .mrc_io import read_mrc, write_mrc
from .schemas import (
    ImageMetadata,
    ImageStack,
    Orientation,
    PairedDataset,
    SimulationConfig,
    Split,
)

logger = logging.getLogger(__name__)

NOISY_FILE = "noisy.mrc"
CLEAN_FILE = "clean.mrc"
MANIFEST_FILE = "manifest.json"
MANIFEST_VERSION = 1

ConfigT = TypeVar("ConfigT", bound=BaseModel)


class DatasetEntry(BaseModel):
    """One image's record in a dataset manifest."""

    index: int
    split: Split
    quaternion: Optional[tuple[float, float, float, float]] = None
    seed: Optional[int] = None
    norm_shift: Optional[float] = None
    norm_scale: Optional[float] = None

    def to_metadata(self, source: Optional[str]) -> ImageMetadata:
        return ImageMetadata(
            orientation=Orientation(quaternion=self.quaternion) if self.quaternion else None,
            seed=self.seed,
            source=source,
            index=self.index,
            norm_shift=self.norm_shift,
            norm_scale=self.norm_scale,
        )


class DatasetManifest(BaseModel):
    version: int = MANIFEST_VERSION
    source: Optional[str] = None
    pixel_size: float
    image_shape: tuple[int, int]
    config: Optional[SimulationConfig] = None
    entries: list[DatasetEntry]

    def metadata(self, split: Optional[Split] = None) -> list[ImageMetadata]:
        """Metadata records in stack order, optionally restricted to one split."""
        return [
            e.to_metadata(self.source)
            for e in self.entries
            if split is None or e.split == split
        ]


def build_manifest(dataset: PairedDataset) -> DatasetManifest:
    entries = []
    for i, (meta, split) in enumerate(zip(dataset.noisy.metadata, dataset.splits)):
        entries.append(DatasetEntry(
            index=meta.index if meta.index is not None else i,
            split=split,
            quaternion=meta.orientation.quaternion if meta.orientation else None,
            seed=meta.seed,
            norm_shift=meta.norm_shift,
            norm_scale=meta.norm_scale,
        ))
    return DatasetManifest(
        source=dataset.source,
        pixel_size=dataset.noisy.pixel_size,
        image_shape=dataset.noisy.image_shape,
        config=dataset.config,
        entries=entries,
    )


def save_dataset(dataset: PairedDataset, directory: Union[str, Path]) -> list[Path]:
    """Write the two stacks and the manifest; returns the written paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = [directory / NOISY_FILE, directory / CLEAN_FILE, directory / MANIFEST_FILE]
    write_mrc(dataset.noisy, paths[0])
    write_mrc(dataset.clean, paths[1])
    paths[2].write_text(build_manifest(dataset).model_dump_json(indent=2))
    logger.info("Saved %d image pairs to %s", len(dataset), directory)
    return paths


def load_manifest(path: Union[str, Path]) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_FILE
    return DatasetManifest.model_validate_json(path.read_text())


def load_stack(path: Union[str, Path]) -> ImageStack:
    data = read_mrc(path)
    if not isinstance(data, ImageStack):
        raise ValueError(f"{path} holds a volume, expected an image stack")
    return data


def load_dataset(directory: Union[str, Path]) -> PairedDataset:
    """Load a dataset directory written by save_dataset."""
    directory = Path(directory)
    manifest = load_manifest(directory / MANIFEST_FILE)
    metadata = manifest.metadata()
    noisy = load_stack(directory / NOISY_FILE)
    clean = load_stack(directory / CLEAN_FILE)
    if len(noisy) != len(manifest.entries):
        raise ValueError(
            f"{directory}: manifest lists {len(manifest.entries)} images, stack has {len(noisy)}"
        )
    return PairedDataset(
        noisy=ImageStack(images=noisy.images, pixel_size=manifest.pixel_size, metadata=metadata),
        clean=ImageStack(images=clean.images, pixel_size=manifest.pixel_size, metadata=metadata),
        splits=[e.split for e in manifest.entries],
        config=manifest.config,
        source=manifest.source,
    )


def load_config(path: Union[str, Path], model: type[ConfigT]) -> ConfigT:
    """Parse a JSON config file into the given pydantic model."""
    return model.model_validate_json(Path(path).read_text())
