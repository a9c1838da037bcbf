"""Tests for dataset persistence and config loading."""

import numpy as np
import pytest

from src.ingestion.load_data import (
    CLEAN_FILE,
    MANIFEST_FILE,
    NOISY_FILE,
    load_config,
    load_dataset,
    load_manifest,
    load_stack,
    save_dataset,
)
from src.ingestion.mrc_io import write_mrc
from src.ingestion.schemas import SimulationConfig, Split


class TestDatasetDirectory:
    def test_save_writes_three_files(self, dataset16, tmp_path):
        paths = save_dataset(dataset16, tmp_path / "ds")
        assert [p.name for p in paths] == [NOISY_FILE, CLEAN_FILE, MANIFEST_FILE]
        assert all(p.exists() for p in paths)

    def test_reload_matches(self, dataset16, tmp_path):
        save_dataset(dataset16, tmp_path)
        back = load_dataset(tmp_path)
        np.testing.assert_array_equal(back.noisy.images, dataset16.noisy.images)
        np.testing.assert_array_equal(back.clean.images, dataset16.clean.images)
        assert back.splits == dataset16.splits
        assert back.config == dataset16.config
        assert back.noisy.metadata[5].orientation == dataset16.noisy.metadata[5].orientation
        assert back.noisy.metadata[5].norm_scale == pytest.approx(dataset16.noisy.metadata[5].norm_scale)

    def test_manifest_splits(self, dataset16, tmp_path):
        save_dataset(dataset16, tmp_path)
        manifest = load_manifest(tmp_path)
        assert len(manifest.metadata(Split.TEST)) == 4
        assert manifest.image_shape == (16, 16)

    def test_count_mismatch(self, dataset16, tmp_path):
        save_dataset(dataset16, tmp_path)
        write_mrc(dataset16.noisy.subset([0, 1]), tmp_path / NOISY_FILE)
        with pytest.raises(ValueError):
            load_dataset(tmp_path)

    def test_stack_rejects_volume(self, phantom16, tmp_path):
        write_mrc(phantom16, tmp_path / "map.mrc")
        with pytest.raises(ValueError):
            load_stack(tmp_path / "map.mrc")


class TestConfig:
    def test_load_config(self, tmp_path):
        (tmp_path / "sim.json").write_text('{"n_images": 12, "snr": 0.05, "image_size": 32}')
        config = load_config(tmp_path / "sim.json", SimulationConfig)
        assert config.n_images == 12
        assert config.snr == 0.05

    def test_invalid_config(self, tmp_path):
        (tmp_path / "sim.json").write_text('{"n_images": 0}')
        with pytest.raises(ValueError):
            load_config(tmp_path / "sim.json", SimulationConfig)
