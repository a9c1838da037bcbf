"""Tests for the MRC2014 reader and writer."""

import numpy as np
import pytest

from src.errors import CorruptFileError, MRCFormatError, UnsupportedModeError
from src.ingestion.mrc_io import HEADER_BYTES, read_mrc, read_mrc_header, write_mrc
from src.ingestion.schemas import DensityMap, ImageStack

mrcfile = pytest.importorskip("mrcfile")


def _volume(rng, shape=(6, 7, 8), voxel_size=1.25) -> DensityMap:
    return DensityMap(voxels=rng.standard_normal(shape), voxel_size=voxel_size, origin=(1.0, 2.0, 3.0))


class TestRoundtrip:
    def test_volume_bit_exact(self, tmp_path, rng):
        vol = _volume(rng)
        write_mrc(vol, tmp_path / "v.mrc")
        back = read_mrc(tmp_path / "v.mrc")
        assert isinstance(back, DensityMap)
        np.testing.assert_array_equal(back.voxels, vol.voxels)
        assert back.voxel_size == pytest.approx(1.25)
        assert back.origin == (1.0, 2.0, 3.0)

    def test_stack_bit_exact(self, tmp_path, random_stack):
        write_mrc(random_stack, tmp_path / "s.mrc")
        back = read_mrc(tmp_path / "s.mrc")
        assert isinstance(back, ImageStack)
        np.testing.assert_array_equal(back.images, random_stack.images)
        assert back.pixel_size == pytest.approx(1.3)

    def test_single_image_is_stack(self, tmp_path):
        write_mrc(ImageStack(images=np.ones((4, 4))), tmp_path / "one.mrc")
        assert isinstance(read_mrc(tmp_path / "one.mrc"), ImageStack)

    def test_rewrite_identical_bytes(self, tmp_path, rng):
        vol = _volume(rng)
        write_mrc(vol, tmp_path / "a.mrc")
        write_mrc(read_mrc(tmp_path / "a.mrc"), tmp_path / "b.mrc")
        assert (tmp_path / "a.mrc").read_bytes() == (tmp_path / "b.mrc").read_bytes()


class TestHeader:
    def test_fields(self, tmp_path, rng):
        vol = _volume(rng)
        write_mrc(vol, tmp_path / "v.mrc")
        h = read_mrc_header(tmp_path / "v.mrc")
        assert (h.nx, h.ny, h.nz) == (8, 7, 6)
        assert h.mode == 2
        assert h.ispg == 1
        assert not h.is_stack
        assert h.dmax == pytest.approx(float(vol.voxels.max()))
        assert h.byte_order == "<"

    def test_stack_header(self, tmp_path, random_stack):
        write_mrc(random_stack, tmp_path / "s.mrc")
        h = read_mrc_header(tmp_path / "s.mrc")
        assert h.ispg == 0
        assert h.mz == 1
        assert h.is_stack


class TestInterop:
    def test_independent_reader(self, tmp_path, rng):
        vol = _volume(rng)
        write_mrc(vol, tmp_path / "v.mrc")
        with mrcfile.open(tmp_path / "v.mrc", permissive=False) as m:
            np.testing.assert_array_equal(m.data, vol.voxels)
            assert float(m.voxel_size.x) == pytest.approx(1.25)

    def test_validates_in_independent_checker(self, tmp_path, rng):
        write_mrc(_volume(rng), tmp_path / "v.mrc")
        assert mrcfile.validate(str(tmp_path / "v.mrc"))

    def test_reads_independent_writer(self, tmp_path, rng):
        data = rng.standard_normal((5, 6, 7)).astype(np.float32)
        with mrcfile.new(tmp_path / "ext.mrc") as m:
            m.set_data(data)
            m.voxel_size = 2.0
        back = read_mrc(tmp_path / "ext.mrc")
        np.testing.assert_array_equal(back.voxels, data)
        assert back.voxel_size == pytest.approx(2.0)

    def test_int16_mode(self, tmp_path, rng):
        data = rng.integers(-300, 300, (4, 5, 6)).astype(np.int16)
        with mrcfile.new(tmp_path / "i16.mrc") as m:
            m.set_data(data)
        back = read_mrc(tmp_path / "i16.mrc")
        np.testing.assert_array_equal(back.voxels, data.astype(np.float32))

    def test_extended_header_skipped(self, tmp_path, rng):
        data = rng.standard_normal((3, 4, 4)).astype(np.float32)
        with mrcfile.new(tmp_path / "ext.mrc") as m:
            m.set_data(data)
            m.set_extended_header(np.zeros(64, dtype=np.uint8))
        np.testing.assert_array_equal(read_mrc(tmp_path / "ext.mrc").voxels, data)

    def test_image_stack_from_independent_writer(self, tmp_path, rng):
        data = rng.standard_normal((3, 8, 8)).astype(np.float32)
        with mrcfile.new(tmp_path / "stack.mrcs") as m:
            m.set_data(data)
            m.set_image_stack()
        back = read_mrc(tmp_path / "stack.mrcs")
        assert isinstance(back, ImageStack)
        assert len(back) == 3


class TestErrors:
    def test_missing_magic(self, tmp_path):
        (tmp_path / "bad.mrc").write_bytes(b"\0" * 2048)
        with pytest.raises(MRCFormatError):
            read_mrc(tmp_path / "bad.mrc")

    def test_short_file(self, tmp_path):
        (tmp_path / "short.mrc").write_bytes(b"\0" * 100)
        with pytest.raises(MRCFormatError):
            read_mrc_header(tmp_path / "short.mrc")

    def test_truncated_data(self, tmp_path, rng):
        write_mrc(_volume(rng), tmp_path / "v.mrc")
        raw = (tmp_path / "v.mrc").read_bytes()
        (tmp_path / "cut.mrc").write_bytes(raw[:-16])
        with pytest.raises(CorruptFileError):
            read_mrc(tmp_path / "cut.mrc")

    def test_unsupported_mode(self, tmp_path, rng):
        write_mrc(_volume(rng), tmp_path / "v.mrc")
        raw = bytearray((tmp_path / "v.mrc").read_bytes())
        raw[12:16] = (4).to_bytes(4, "little")  # complex64
        (tmp_path / "m4.mrc").write_bytes(bytes(raw))
        with pytest.raises(UnsupportedModeError):
            read_mrc(tmp_path / "m4.mrc")

    def test_format_errors_are_value_errors(self):
        assert issubclass(MRCFormatError, ValueError)

    def test_header_size(self):
        assert HEADER_BYTES == 1024
