"""Seeded synthetic label corpus: superellipsoid slabs in three families.

Each volume is a star-convex slab around a jittered center: the in-plane
radius at angle phi is radius * superellipse(phi - theta) * wobble(phi),
tapered along z by a dome profile.  Star convexity per slice plus a shared
center across slices guarantees one connected foreground component, and the
dome keeps every slice non-degenerate so middle-slice descriptors always
exist.  Families differ in superellipse exponent, aspect ratio, and wobble
amplitudes; pose (rotation, size, center) varies per sample.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .volume import MaskVolume, write_volume

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class FamilySpec:
    name: str
    exponent: float
    aspect: float
    wobble: tuple[float, float, float]  # harmonic amplitudes for k = 2, 3, 4


FAMILIES: dict[str, FamilySpec] = {
    "round": FamilySpec("round", exponent=2.0, aspect=1.0, wobble=(0.05, 0.03, 0.02)),
    "ellipse": FamilySpec("ellipse", exponent=2.0, aspect=1.9, wobble=(0.05, 0.03, 0.02)),
    "boxy": FamilySpec("boxy", exponent=6.0, aspect=1.3, wobble=(0.03, 0.02, 0.02)),
}


@dataclass(frozen=True)
class SynthParams:
    count: int = 64
    dims: tuple[int, int, int] = (64, 64, 8)  # (dx, dy, dz)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    families: tuple[str, ...] = ("round", "ellipse", "boxy")
    seed: int = 0
    radius: tuple[float, float] = (12.0, 16.0)
    center_jitter: float = 4.0

    def __post_init__(self):
        if self.count < 1:
            raise ConfigError(f"count must be >= 1, got {self.count}")
        if any(d < 4 for d in self.dims):
            raise ConfigError(f"dims too small: {self.dims}")
        unknown = [f for f in self.families if f not in FAMILIES]
        if unknown:
            raise ConfigError(f"unknown families: {unknown}; known: {sorted(FAMILIES)}")
        if not self.families:
            raise ConfigError("need at least one family")
        if not 0.0 < self.radius[0] <= self.radius[1]:
            raise ConfigError(f"radius range invalid: {self.radius}")
        worst = max(
            self.radius[1] * np.sqrt(FAMILIES[f].aspect) * (1.0 + sum(FAMILIES[f].wobble))
            for f in self.families
        )
        margin = min(self.dims[0], self.dims[1]) / 2.0 - 2.0
        if worst + self.center_jitter > margin:
            raise ConfigError(
                f"shapes may clip the border: extent {worst + self.center_jitter:.1f} "
                f"exceeds margin {margin:.1f}; shrink radius or jitter"
            )

    def family_of(self, index: int) -> str:
        return self.families[index % len(self.families)]


def synth_volume(params: SynthParams, family: str, sample_seed) -> MaskVolume:
    """One seeded slab; identical (params, family, seed) give identical bytes."""
    spec = FAMILIES[family]
    rng = np.random.default_rng(np.random.SeedSequence(sample_seed))
    dx, dy, dz = params.dims

    theta = rng.uniform(0.0, 2.0 * np.pi)
    base_r = rng.uniform(*params.radius)
    cx = (dx - 1) / 2.0 + rng.uniform(-params.center_jitter, params.center_jitter)
    cy = (dy - 1) / 2.0 + rng.uniform(-params.center_jitter, params.center_jitter)
    amps = [a * rng.uniform(0.5, 1.0) for a in spec.wobble]
    phases = [rng.uniform(0.0, 2.0 * np.pi) for _ in spec.wobble]

    yy, xx = np.meshgrid(np.arange(dy), np.arange(dx), indexing="ij")
    rel_x = xx - cx
    rel_y = yy - cy
    rho = np.hypot(rel_x, rel_y)
    phi = np.arctan2(rel_y, rel_x)

    # superellipse radius with geometric-mean normalization of the axes
    psi = phi - theta
    a_ax = np.sqrt(spec.aspect)
    b_ax = 1.0 / a_ax
    p = spec.exponent
    r_se = (np.abs(np.cos(psi) / a_ax) ** p + np.abs(np.sin(psi) / b_ax) ** p) ** (-1.0 / p)
    wob = 1.0
    for k, (amp, ph) in enumerate(zip(amps, phases), start=2):
        wob = wob + amp * np.cos(k * phi + ph)

    zc = (dz - 1) / 2.0
    zr = dz / 2.0 + 1.5
    vox = np.zeros((dz, dy, dx), dtype=np.uint8)
    for z in range(dz):
        dome = np.sqrt(max(1.0 - ((z - zc) / zr) ** 2, 0.0))
        vox[z] = (rho <= base_r * dome * r_se * wob).astype(np.uint8)
    return MaskVolume.from_array(vox, spacing=params.spacing)


def synth_volumes(params: SynthParams) -> list[tuple[MaskVolume, str]]:
    """In-memory corpus: [(volume, family)] in index order."""
    out = []
    for i in range(params.count):
        fam = params.family_of(i)
        out.append((synth_volume(params, fam, (params.seed, i)), fam))
    return out


def synth_corpus(params: SynthParams, out_dir) -> list[Path]:
    """Write vol_NNN.mvol files plus a manifest; returns the volume paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    paths = []
    for i, (vol, fam) in enumerate(synth_volumes(params)):
        name = f"vol_{i:03d}.mvol"
        write_volume(vol, out_dir / name)
        entries.append({"file": name, "family": fam, "index": i})
        paths.append(out_dir / name)
    manifest = {
        "format": "synth-manifest",
        "version": MANIFEST_VERSION,
        "count": params.count,
        "dims": list(params.dims),
        "spacing": list(params.spacing),
        "families": list(params.families),
        "seed": params.seed,
        "radius": list(params.radius),
        "center_jitter": params.center_jitter,
        "entries": entries,
    }
    with open(out_dir / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    return paths


def load_manifest(corpus_dir) -> dict:
    with open(Path(corpus_dir) / MANIFEST_NAME, encoding="utf-8") as fh:
        return json.load(fh)
