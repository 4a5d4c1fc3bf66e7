"""Binary mask volumes, their bit-exact MVOL file format, and slice extraction.

A volume stores dims as (dx, dy, dz) with the linear voxel order
x-fastest (index = x + dx*(y + dy*z)), which is exactly the C order of a
numpy array shaped (dz, dy, dx).  Spacing is millimetres per voxel and is
quantized to float32 on construction so that disk round-trips are
bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ShapeError, TruncationError

MVOL_MAGIC = b"MVOL"
MVOL_VERSION = 1
_HEADER = struct.Struct("<4sI3I3fBB")  # magic, version, dims, spacing, dtype, reserved


def _as_binary_u8(values, size: int) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=np.uint8)
    if arr.size != size:
        raise ShapeError(f"expected {size} voxels, got {arr.size}")
    bad = (arr > 1).any()
    if bad:
        raise ValueError("voxel values must be 0 or 1")
    return arr


@dataclass(frozen=True)
class MaskVolume:
    """3D binary voxel grid with spacing metadata."""

    dims: tuple[int, int, int]          # (dx, dy, dz)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    voxels: np.ndarray = field(default=None, repr=False)  # (dz, dy, dx) uint8

    def __post_init__(self):
        dx, dy, dz = (int(d) for d in self.dims)
        if min(dx, dy, dz) <= 0:
            raise ShapeError(f"dims must be positive, got {self.dims}")
        object.__setattr__(self, "dims", (dx, dy, dz))
        # float32 quantization keeps write->read->write byte-identical
        spacing = tuple(float(np.float32(s)) for s in self.spacing)
        if min(spacing) <= 0.0:
            raise ValueError(f"spacing must be strictly positive, got {self.spacing}")
        object.__setattr__(self, "spacing", spacing)
        vox = _as_binary_u8(self.voxels, dx * dy * dz).reshape(dz, dy, dx)
        vox.flags.writeable = False
        object.__setattr__(self, "voxels", vox)

    @classmethod
    def from_array(cls, array, spacing=(1.0, 1.0, 1.0)) -> "MaskVolume":
        """Build from a (dz, dy, dx)-shaped binary array."""
        arr = np.asarray(array)
        if arr.ndim != 3:
            raise ShapeError(f"expected a 3D array, got ndim={arr.ndim}")
        dz, dy, dx = arr.shape
        return cls(dims=(dx, dy, dz), spacing=spacing, voxels=arr)

    @property
    def array(self) -> np.ndarray:
        """Read-only (dz, dy, dx) uint8 view."""
        return self.voxels

    @property
    def linear(self) -> np.ndarray:
        """Voxels in the on-disk x-fastest linear order."""
        return self.voxels.reshape(-1)

    def foreground_count(self) -> int:
        return int(self.voxels.sum())

    def __eq__(self, other) -> bool:
        if not isinstance(other, MaskVolume):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.spacing == other.spacing
            and np.array_equal(self.voxels, other.voxels)
        )


@dataclass(frozen=True)
class MaskSlice:
    """2D binary plane; pixels row-major with dims (w, h)."""

    dims: tuple[int, int]
    pixels: np.ndarray = field(default=None, repr=False)  # (h, w) uint8

    def __post_init__(self):
        w, h = (int(d) for d in self.dims)
        if min(w, h) <= 0:
            raise ShapeError(f"dims must be positive, got {self.dims}")
        object.__setattr__(self, "dims", (w, h))
        px = _as_binary_u8(self.pixels, w * h).reshape(h, w)
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @classmethod
    def from_array(cls, array) -> "MaskSlice":
        arr = np.asarray(array)
        if arr.ndim != 2:
            raise ShapeError(f"expected a 2D array, got ndim={arr.ndim}")
        h, w = arr.shape
        return cls(dims=(w, h), pixels=arr)

    @property
    def array(self) -> np.ndarray:
        return self.pixels

    def foreground_count(self) -> int:
        return int(self.pixels.sum())

    def __eq__(self, other) -> bool:
        if not isinstance(other, MaskSlice):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.pixels, other.pixels)


def write_volume(v: MaskVolume, path) -> None:
    """Write the MVOL layout: 34-byte header followed by dx*dy*dz payload bytes."""
    dx, dy, dz = v.dims
    header = _HEADER.pack(MVOL_MAGIC, MVOL_VERSION, dx, dy, dz, *v.spacing, 0, 0)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(v.linear.tobytes())


def read_volume(path) -> MaskVolume:
    """Read an MVOL file back into a MaskVolume; inverse of write_volume."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise TruncationError(f"{path}: file shorter than MVOL header")
    magic, version, dx, dy, dz, sx, sy, sz, dtype, _ = _HEADER.unpack_from(raw)
    if magic != MVOL_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != MVOL_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if dtype != 0:
        raise FormatError(f"{path}: unsupported dtype {dtype}")
    if min(dx, dy, dz) == 0:
        raise FormatError(f"{path}: zero extent in dims ({dx}, {dy}, {dz})")
    payload = raw[_HEADER.size:]
    expected = dx * dy * dz
    if len(payload) != expected:
        raise TruncationError(
            f"{path}: payload is {len(payload)} bytes, dims require {expected}"
        )
    voxels = np.frombuffer(payload, dtype=np.uint8)
    if (voxels > 1).any():
        raise ValueError(f"{path}: payload byte outside {{0,1}}")
    return MaskVolume(dims=(dx, dy, dz), spacing=(sx, sy, sz), voxels=voxels)


_AXIS_INDEX = {"x": 0, "y": 1, "z": 2}


def extract_middle_slice(v: MaskVolume, axis: str = "z") -> MaskSlice:
    """Plane at floor(d_axis / 2) along the chosen axis.

    Remaining axes keep their (x, y, z) order, first remaining as slice
    width: axis z -> (w, h) = (dx, dy); axis y -> (dx, dz); axis x -> (dy, dz).
    """
    if axis not in _AXIS_INDEX:
        raise ValueError(f"axis must be one of x, y, z; got {axis!r}")
    dx, dy, dz = v.dims
    arr = v.array  # (z, y, x)
    if axis == "z":
        plane = arr[dz // 2, :, :]            # (y, x) -> rows y, cols x
    elif axis == "y":
        plane = arr[:, dy // 2, :]            # (z, x) -> rows z, cols x
    else:
        plane = arr[:, :, dx // 2]            # (z, y) -> rows z, cols y
    return MaskSlice.from_array(plane)
