"""Self-supervised corruption: pose jitter and false-positive/negative stains.

A training triplet derives from one label volume: reference = T1(y),
target = T2(y), noisy = RN(T2(y)) where T1/T2 are independent random affine
transforms and RN stamps solid spheres of wrong labels.  All randomness is
drawn from explicit seeds, so triplets are reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, EmptyShapeError
from .volume import MaskVolume


def _seed_tuple(seed) -> tuple[int, ...]:
    if isinstance(seed, (int, np.integer)):
        return (int(seed),)
    return tuple(int(s) for s in seed)


@dataclass(frozen=True)
class TransformParams:
    """Ranges for one random affine draw; a (v, v) range pins an exact value.

    rotation is degrees about the slab (z) axis; translation is voxels per
    (x, y, z) axis; scale is an isotropic factor.  The draw order from the
    seed is fixed: angle, scale, tx, ty, tz.
    """

    rotation: tuple[float, float] = (-15.0, 15.0)
    scale: tuple[float, float] = (0.9, 1.1)
    translation: tuple[tuple[float, float], ...] = ((-5.0, 5.0), (-5.0, 5.0), (-5.0, 5.0))
    seed: int | tuple[int, ...] = 0

    def __post_init__(self):
        if self.scale[0] <= 0.0 or self.scale[1] < self.scale[0]:
            raise ConfigError(f"scale range must satisfy 0 < lo <= hi, got {self.scale}")
        if self.rotation[1] < self.rotation[0]:
            raise ConfigError(f"rotation range reversed: {self.rotation}")
        if len(self.translation) != 3 or any(t[1] < t[0] for t in self.translation):
            raise ConfigError(f"translation needs 3 (lo, hi) ranges, got {self.translation}")

    @classmethod
    def identity(cls, seed=0) -> "TransformParams":
        return cls(rotation=(0.0, 0.0), scale=(1.0, 1.0),
                   translation=((0.0, 0.0),) * 3, seed=seed)

    def draw(self) -> tuple[float, float, np.ndarray]:
        rng = np.random.default_rng(np.random.SeedSequence(_seed_tuple(self.seed)))
        angle = rng.uniform(*self.rotation)
        scale = rng.uniform(*self.scale)
        shift = np.array([rng.uniform(*t) for t in self.translation])
        return angle, scale, shift


@dataclass(frozen=True)
class NoiseParams:
    """Stain model: blob count ranges (inclusive) and voxel radius range."""

    fp_blobs: tuple[int, int] = (1, 4)
    fn_blobs: tuple[int, int] = (1, 4)
    blob_radius: tuple[float, float] = (2.0, 6.0)
    seed: int | tuple[int, ...] = 0

    def __post_init__(self):
        for name, rng_ in (("fp_blobs", self.fp_blobs), ("fn_blobs", self.fn_blobs)):
            if rng_[0] < 0 or rng_[1] < rng_[0]:
                raise ConfigError(f"{name} range must satisfy 0 <= lo <= hi, got {rng_}")
        if self.blob_radius[0] < 1.0 or self.blob_radius[1] < self.blob_radius[0]:
            raise ConfigError(f"blob_radius must satisfy 1 <= lo <= hi, got {self.blob_radius}")

    @classmethod
    def disabled(cls, seed=0) -> "NoiseParams":
        return cls(fp_blobs=(0, 0), fn_blobs=(0, 0), seed=seed)


def apply_affine(v: MaskVolume, t: TransformParams) -> MaskVolume:
    """Rotate/scale/translate about the volume center, nearest neighbor.

    Inverse mapping: every output voxel looks up its source location under
    the inverted transform; sources outside the field become background.
    """
    angle, scale, shift = t.draw()
    dx, dy, dz = v.dims
    center = np.array([(dx - 1) / 2.0, (dy - 1) / 2.0, (dz - 1) / 2.0])

    zz, yy, xx = np.meshgrid(
        np.arange(dz), np.arange(dy), np.arange(dx), indexing="ij"
    )
    out_xyz = np.stack([xx.ravel(), yy.ravel(), zz.ravel()]).astype(np.float64)

    theta = np.deg2rad(angle)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    rel = out_xyz - (center + shift)[:, None]
    # inverse rotation about z, then inverse scale
    src = np.empty_like(rel)
    src[0] = cos_t * rel[0] + sin_t * rel[1]
    src[1] = -sin_t * rel[0] + cos_t * rel[1]
    src[2] = rel[2]
    src /= scale
    src += center[:, None]

    idx = np.rint(src).astype(np.int64)
    inside = (
        (idx[0] >= 0) & (idx[0] < dx)
        & (idx[1] >= 0) & (idx[1] < dy)
        & (idx[2] >= 0) & (idx[2] < dz)
    )
    out = np.zeros(dz * dy * dx, dtype=np.uint8)
    ii = np.flatnonzero(inside)
    out[ii] = v.voxels[idx[2, ii], idx[1, ii], idx[0, ii]]
    return MaskVolume.from_array(out.reshape(dz, dy, dx), spacing=v.spacing)


def _stamp_sphere(vox: np.ndarray, center_zyx: np.ndarray, radius: float, value: int) -> None:
    r = int(np.floor(radius))
    cz, cy, cx = (int(c) for c in center_zyx)
    z0, z1 = max(cz - r, 0), min(cz + r + 1, vox.shape[0])
    y0, y1 = max(cy - r, 0), min(cy + r + 1, vox.shape[1])
    x0, x1 = max(cx - r, 0), min(cx + r + 1, vox.shape[2])
    zz, yy, xx = np.ogrid[z0:z1, y0:y1, x0:x1]
    ball = (zz - cz) ** 2 + (yy - cy) ** 2 + (xx - cx) ** 2 <= radius * radius
    vox[z0:z1, y0:y1, x0:x1][ball] = value


def apply_noise(v: MaskVolume, n: NoiseParams) -> MaskVolume:
    """Stamp false-positive spheres on background sites, then false-negative
    spheres on foreground sites; a class with no sites is skipped."""
    rng = np.random.default_rng(np.random.SeedSequence(_seed_tuple(n.seed)))
    k_fp = int(rng.integers(n.fp_blobs[0], n.fp_blobs[1] + 1))
    k_fn = int(rng.integers(n.fn_blobs[0], n.fn_blobs[1] + 1))
    vox = v.voxels.copy()

    bg = np.argwhere(vox == 0)
    if len(bg):
        for _ in range(k_fp):
            center = bg[int(rng.integers(len(bg)))]
            radius = rng.uniform(*n.blob_radius)
            _stamp_sphere(vox, center, radius, 1)
    fg = np.argwhere(vox == 1)
    if len(fg):
        for _ in range(k_fn):
            center = fg[int(rng.integers(len(fg)))]
            radius = rng.uniform(*n.blob_radius)
            _stamp_sphere(vox, center, radius, 0)
    return MaskVolume.from_array(vox, spacing=v.spacing)


def make_training_triplet(
    y: MaskVolume,
    seed,
    transform: TransformParams | None = None,
    noise: NoiseParams | None = None,
) -> tuple[MaskVolume, MaskVolume, MaskVolume]:
    """(reference, target, noisy) with independent seeded T1, T2, RN draws."""
    if not y.voxels.any():
        raise EmptyShapeError("cannot build a triplet from an empty label")
    transform = transform if transform is not None else TransformParams()
    noise = noise if noise is not None else NoiseParams()
    base = _seed_tuple(seed)
    reference = apply_affine(y, replace(transform, seed=base + (0,)))
    target = apply_affine(y, replace(transform, seed=base + (1,)))
    noisy = apply_noise(target, replace(noise, seed=base + (2,)))
    return reference, target, noisy
