"""Reading and writing MRC2014 volumes and particle stacks."""

import logging
from pathlib import Path
from typing import Union

import numpy as np
from pydantic import BaseModel

from ..errors import CorruptFileError, MRCFormatError, UnsupportedModeError
from .schemas import DensityMap, ImageStack

logger = logging.getLogger(__name__)

HEADER_BYTES = 1024
MAP_MAGIC = b"MAP "
STAMP_LITTLE = bytes([0x44, 0x44, 0x00, 0x00])
STAMP_BIG = bytes([0x11, 0x11, 0x00, 0x00])

# MODE word -> on-disk element type (byte order applied at read time)
MODE_DTYPES: dict[int, str] = {
    0: "i1",
    1: "i2",
    2: "f4",
    6: "u2",
}


def _header_dtype(order: str) -> np.dtype:
    return np.dtype([
        ("nx", order + "i4"), ("ny", order + "i4"), ("nz", order + "i4"),
        ("mode", order + "i4"),
        ("nxstart", order + "i4"), ("nystart", order + "i4"), ("nzstart", order + "i4"),
        ("mx", order + "i4"), ("my", order + "i4"), ("mz", order + "i4"),
        ("cella", order + "f4", (3,)),
        ("cellb", order + "f4", (3,)),
        ("mapc", order + "i4"), ("mapr", order + "i4"), ("maps", order + "i4"),
        ("dmin", order + "f4"), ("dmax", order + "f4"), ("dmean", order + "f4"),
        ("ispg", order + "i4"),
        ("nsymbt", order + "i4"),
        ("extra1", "V8"),
        ("exttyp", "S4"),
        ("nversion", order + "i4"),
        ("extra2", "V84"),
        ("origin", order + "f4", (3,)),
        ("map", "S4"),
        ("machst", "u1", (4,)),
        ("rms", order + "f4"),
        ("nlabl", order + "i4"),
        ("label", "S80", (10,)),
    ])


assert _header_dtype("<").itemsize == HEADER_BYTES


class MRCHeader(BaseModel):
    """The header fields this toolkit reads."""

    nx: int
    ny: int
    nz: int
    mode: int
    mx: int
    my: int
    mz: int
    cell: tuple[float, float, float]
    axis_map: tuple[int, int, int]
    dmin: float
    dmax: float
    dmean: float
    rms: float
    ispg: int
    nsymbt: int
    origin: tuple[float, float, float]
    byte_order: str

    @property
    def is_stack(self) -> bool:
        return self.ispg == 0 or self.nz == 1

    @property
    def data_offset(self) -> int:
        return HEADER_BYTES + self.nsymbt

    @property
    def data_bytes(self) -> int:
        return self.nx * self.ny * self.nz * np.dtype(MODE_DTYPES[self.mode]).itemsize


def read_mrc_header(path: Union[str, Path]) -> MRCHeader:
    """Parse and validate the 1024-byte header."""
    path = Path(path)
    with open(path, "rb") as f:
        raw = f.read(HEADER_BYTES)
    if len(raw) < HEADER_BYTES:
        raise MRCFormatError(f"{path}: file shorter than the {HEADER_BYTES}-byte header")
    if raw[208:212] != MAP_MAGIC:
        raise MRCFormatError(f"{path}: missing 'MAP ' identifier at word 53 (found {raw[208:212]!r})")

    stamp = raw[212:216]
    order = ">" if stamp[:2] == STAMP_BIG[:2] else "<"
    h = np.frombuffer(raw, dtype=_header_dtype(order), count=1)[0]

    mode = int(h["mode"])
    if mode not in MODE_DTYPES:
        raise UnsupportedModeError(f"{path}: unsupported MODE {mode}")

    nx, ny, nz = int(h["nx"]), int(h["ny"]), int(h["nz"])
    if min(nx, ny, nz) <= 0:
        raise MRCFormatError(f"{path}: invalid dimensions ({nx}, {ny}, {nz})")
    nsymbt = int(h["nsymbt"])
    if nsymbt < 0:
        raise MRCFormatError(f"{path}: negative extended header size {nsymbt}")

    axis_map = (int(h["mapc"]), int(h["mapr"]), int(h["maps"]))
    if axis_map == (0, 0, 0):
        axis_map = (1, 2, 3)
    if sorted(axis_map) != [1, 2, 3]:
        raise MRCFormatError(f"{path}: MAPC/MAPR/MAPS {axis_map} is not a permutation of 1,2,3")

    return MRCHeader(
        nx=nx, ny=ny, nz=nz, mode=mode,
        mx=int(h["mx"]), my=int(h["my"]), mz=int(h["mz"]),
        cell=tuple(float(c) for c in h["cella"]),
        axis_map=axis_map,
        dmin=float(h["dmin"]), dmax=float(h["dmax"]), dmean=float(h["dmean"]),
        rms=float(h["rms"]),
        ispg=int(h["ispg"]),
        nsymbt=nsymbt,
        origin=tuple(float(o) for o in h["origin"]),
        byte_order=order,
    )


def _sampling_size(header: MRCHeader, path: Path) -> float:
    """Isotropic Å/voxel from cell dimensions over sampling grid."""
    grid = [
        m if m > 0 else n
        for m, n in zip((header.mx, header.my, header.mz), (header.nx, header.ny, header.nz))
    ]
    sizes = [c / g for c, g in zip(header.cell, grid)]
    # A stack's z cell is frequently left at 0 or 1.
    axes = sizes[:2] if header.is_stack else sizes
    if all(s == 0 for s in axes):
        return 1.0
    if any(s <= 0 for s in axes) or not np.allclose(axes, axes[0], rtol=1e-4):
        raise MRCFormatError(f"{path}: non-isotropic voxel size {tuple(sizes)}")
    return float(axes[0])


def _read_data(path: Path, header: MRCHeader) -> np.ndarray:
    expected = header.data_offset + header.data_bytes
    actual = path.stat().st_size
    if actual < expected:
        raise CorruptFileError(
            f"{path}: data section truncated ({actual} bytes, header declares {expected})"
        )
    dtype = np.dtype(header.byte_order + MODE_DTYPES[header.mode])
    with open(path, "rb") as f:
        f.seek(header.data_offset)
        raw = f.read(header.data_bytes)
    if len(raw) != header.data_bytes:
        raise CorruptFileError(f"{path}: short read of data section")

    # File layout is sections × rows × columns, columns fastest.
    data = np.frombuffer(raw, dtype=dtype).reshape(header.nz, header.ny, header.nx)
    labels = [header.axis_map[2], header.axis_map[1], header.axis_map[0]]
    if labels != [3, 2, 1]:
        # canonical array axes are (Z, Y, X) = labels (3, 2, 1)
        data = data.transpose([labels.index(3 - a) for a in range(3)])
    return data.astype(np.float32)


def read_mrc(path: Union[str, Path]) -> Union[DensityMap, ImageStack]:
    """Read an MRC2014 file as a DensityMap (volume) or ImageStack (ISPG 0 or NZ 1)."""
    path = Path(path)
    header = read_mrc_header(path)
    size = _sampling_size(header, path)
    data = _read_data(path, header)
    logger.debug("Read %s: grid %s, mode %d, %.4g Å/px", path, data.shape[::-1], header.mode, size)
    if header.is_stack:
        return ImageStack(images=data, pixel_size=size)
    return DensityMap(voxels=data, voxel_size=size, origin=header.origin)


def write_mrc(data: Union[DensityMap, ImageStack], path: Union[str, Path]) -> None:
    """Write little-endian MRC2014, MODE 2."""
    path = Path(path)
    if isinstance(data, DensityMap):
        array = data.voxels
        size = data.voxel_size
        origin = data.origin
        ispg = 1
        nz, ny, nx = array.shape
        sampling = (nx, ny, nz)
    elif isinstance(data, ImageStack):
        array = data.images
        size = data.pixel_size
        origin = (0.0, 0.0, 0.0)
        ispg = 0
        nz, ny, nx = array.shape
        sampling = (nx, ny, 1)
    else:
        raise TypeError(f"Cannot write {type(data).__name__} as MRC")

    array = np.ascontiguousarray(array, dtype="<f4")
    header = np.zeros(1, dtype=_header_dtype("<"))
    h = header[0]
    h["nx"], h["ny"], h["nz"] = nx, ny, nz
    h["mode"] = 2
    h["mx"], h["my"], h["mz"] = sampling
    h["cella"] = [size * n for n in sampling]
    h["cellb"] = [90.0, 90.0, 90.0]
    h["mapc"], h["mapr"], h["maps"] = 1, 2, 3
    h["dmin"] = array.min()
    h["dmax"] = array.max()
    h["dmean"] = array.mean(dtype=np.float64)
    h["rms"] = array.std(dtype=np.float64)
    h["ispg"] = ispg
    h["exttyp"] = b"MRCO"
    h["nversion"] = 20140
    h["origin"] = origin
    h["map"] = MAP_MAGIC
    h["machst"] = list(STAMP_LITTLE)

    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(header.tobytes())
        f.write(array.tobytes())
    logger.debug("Wrote %s: grid %s", path, (nx, ny, nz))
