"""Pose-invariant shape descriptors from the DFT of a complex-encoded contour.

Convention: forward transform carries the 1/N factor,
Z(k) = (1/N) * sum_m z(m) * exp(-2j*pi*m*k/N).  Under it Parseval reads
sum_k |Z(k)|^2 == (1/N) * sum_m |z(m)|^2, which dft() asserts on every call.

Normalization drops Z(0) (translation), keeps magnitudes (rotation and
start point), and divides by |Z(1)| (scale), yielding 10 values at
frequency indices 1..5 and N-5..N-1, in that order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .contour import Contour, largest_component, resample_contour, trace_boundary
from .errors import DegenerateShapeError
from .volume import MaskSlice

DESCRIPTOR_LEN = 10
DESCRIPTOR_CONVENTION = "dft-1n-mag10"
DEFAULT_RESAMPLE = 128
_Z1_FLOOR = 1e-12
_PARSEVAL_RTOL = 1e-9


@dataclass(frozen=True)
class FourierCoefficients:
    """All N DFT coefficients of a complex contour signal."""

    coeffs: np.ndarray = field(repr=False)  # (N,) complex128
    n_points: int = 0

    def __post_init__(self):
        arr = np.ascontiguousarray(self.coeffs, dtype=np.complex128)
        if arr.ndim != 1 or arr.shape[0] != self.n_points:
            raise ValueError(
                f"coefficient count {arr.shape} disagrees with n_points {self.n_points}"
            )
        arr.flags.writeable = False
        object.__setattr__(self, "coeffs", arr)


@dataclass(frozen=True)
class ShapeDescriptor:
    """10 non-negative magnitudes; values[0] is exactly 1 by construction."""

    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if len(vals) != DESCRIPTOR_LEN:
            raise ValueError(f"descriptor needs {DESCRIPTOR_LEN} values, got {len(vals)}")
        if any(v < 0.0 for v in vals):
            raise ValueError("descriptor magnitudes must be non-negative")
        object.__setattr__(self, "values", vals)

    def as_array(self) -> np.ndarray:
        return np.array(self.values, dtype=np.float64)


def descriptor_distance(a: ShapeDescriptor, b: ShapeDescriptor) -> float:
    """Euclidean distance between two descriptor vectors."""
    return float(np.sqrt(((a.as_array() - b.as_array()) ** 2).sum()))


def complex_encode(c: Contour) -> np.ndarray:
    """z(m) = x_m + j*y_m for each contour point in order."""
    pts = c.points
    return pts[:, 0] + 1j * pts[:, 1]


def dft(z: np.ndarray) -> FourierCoefficients:
    """Forward DFT with the 1/N factor; verified against Parseval on every call."""
    z = np.ascontiguousarray(z, dtype=np.complex128)
    n = z.shape[0]
    if n < 3:
        raise ValueError(f"need at least 3 samples, got {n}")
    coeffs = np.fft.fft(z) / n
    lhs = float((np.abs(coeffs) ** 2).sum())
    rhs = float((np.abs(z) ** 2).sum()) / n
    if abs(lhs - rhs) > _PARSEVAL_RTOL * max(1.0, abs(rhs)):
        raise ArithmeticError(f"Parseval identity violated: {lhs} vs {rhs}")
    return FourierCoefficients(coeffs=coeffs, n_points=n)


def normalize_descriptor(f: FourierCoefficients) -> ShapeDescriptor:
    """Translation-, scale-, rotation-, and start-point-invariant 10-vector."""
    n = f.n_points
    if n < 11:
        raise DegenerateShapeError(
            f"need at least 11 coefficients for a 10-entry descriptor, got {n}"
        )
    mags = np.abs(f.coeffs)
    anchor = mags[1]
    if anchor <= _Z1_FLOOR:
        raise DegenerateShapeError(f"|Z(1)| = {anchor:g} is below {_Z1_FLOOR:g}")
    idx = list(range(1, 6)) + list(range(n - 5, n))
    return ShapeDescriptor(values=tuple(mags[idx] / anchor))


def contour_descriptor(c: Contour, resample_m: int | None = DEFAULT_RESAMPLE) -> ShapeDescriptor:
    """Descriptor of a contour; resample_m=None keeps the raw point count."""
    if resample_m is not None:
        c = resample_contour(c, resample_m)
    return normalize_descriptor(dft(complex_encode(c)))


def compute_descriptor(
    s: MaskSlice, resample_m: int | None = DEFAULT_RESAMPLE
) -> ShapeDescriptor:
    """Full slice-to-descriptor pipeline over the largest foreground component."""
    return contour_descriptor(
        trace_boundary(largest_component(s)), resample_m=resample_m
    )
