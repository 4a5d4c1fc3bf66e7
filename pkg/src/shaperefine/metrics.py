"""Mask-pair evaluation: DICE, symmetric surface distance, SEN/SPE.

ASD uses this surface definition: a foreground voxel is surface if at least
one of its six axis neighbors is background, with the volume border counting
as background.  The distance is the symmetric mean over the union of both
surface voxel sets of each voxel's Euclidean distance (in mm via spacing) to
the nearest surface voxel of the other mask.  Degenerate class counts (0/0)
report as 1.0 with an explicit flag instead of NaN.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import MetricUndefinedError, ShapeError
from .volume import MaskVolume


@dataclass(frozen=True)
class MetricReport:
    dice: float
    asd_mm: float | None
    sensitivity: float
    specificity: float
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "dice": self.dice,
            "asd_mm": self.asd_mm,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "flags": list(self.flags),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def _paired(a: MaskVolume, b: MaskVolume) -> None:
    if a.dims != b.dims:
        raise ShapeError(f"volume dims differ: {a.dims} vs {b.dims}")


def dice(a: MaskVolume, b: MaskVolume) -> float:
    """2|A∩B| / (|A| + |B|); two empty masks count as identical (1.0)."""
    _paired(a, b)
    na = int(a.voxels.sum())
    nb = int(b.voxels.sum())
    if na + nb == 0:
        return 1.0
    inter = int(np.logical_and(a.voxels, b.voxels).sum())
    return 2.0 * inter / (na + nb)


def surface_voxels(vox: np.ndarray) -> np.ndarray:
    """(z, y, x) indices of foreground voxels with a six-connected background
    neighbor; the border behaves as background."""
    p = np.pad(vox, 1)
    bg_neighbor = (
        (p[:-2, 1:-1, 1:-1] == 0) | (p[2:, 1:-1, 1:-1] == 0)
        | (p[1:-1, :-2, 1:-1] == 0) | (p[1:-1, 2:, 1:-1] == 0)
        | (p[1:-1, 1:-1, :-2] == 0) | (p[1:-1, 1:-1, 2:] == 0)
    )
    return np.argwhere((vox == 1) & bg_neighbor)


def asd(a: MaskVolume, b: MaskVolume) -> float:
    """Symmetric mean surface distance in millimeters."""
    _paired(a, b)
    if a.spacing != b.spacing:
        raise ShapeError(f"volume spacing differs: {a.spacing} vs {b.spacing}")
    sa = surface_voxels(a.voxels)
    sb = surface_voxels(b.voxels)
    if len(sa) == 0 or len(sb) == 0:
        raise MetricUndefinedError("surface distance needs both masks non-empty")
    sx, sy, sz = a.spacing
    mm = np.array([sz, sy, sx], dtype=np.float64)
    pa = sa * mm
    pb = sb * mm
    d_ab, _ = cKDTree(pb).query(pa)
    d_ba, _ = cKDTree(pa).query(pb)
    return float((d_ab.sum() + d_ba.sum()) / (len(pa) + len(pb)))


def sen_spe(pred: MaskVolume, gt: MaskVolume) -> tuple[float, float, tuple[str, ...]]:
    """(TP/(TP+FN), TN/(TN+FP)); a 0/0 ratio reports 1.0 plus a flag."""
    _paired(pred, gt)
    p = pred.voxels.astype(bool)
    g = gt.voxels.astype(bool)
    tp = int(np.count_nonzero(p & g))
    fn = int(np.count_nonzero(~p & g))
    tn = int(np.count_nonzero(~p & ~g))
    fp = int(np.count_nonzero(p & ~g))
    flags = []
    if tp + fn == 0:
        sen = 1.0
        flags.append("sensitivity_degenerate")
    else:
        sen = tp / (tp + fn)
    if tn + fp == 0:
        spe = 1.0
        flags.append("specificity_degenerate")
    else:
        spe = tn / (tn + fp)
    return sen, spe, tuple(flags)


def evaluate(pred: MaskVolume, gt: MaskVolume) -> MetricReport:
    """Full report; an undefined ASD becomes null plus a flag, not an error."""
    d = dice(pred, gt)
    sen, spe, flags = sen_spe(pred, gt)
    flags = list(flags)
    try:
        dist = asd(pred, gt)
    except MetricUndefinedError:
        dist = None
        flags.append("asd_undefined")
    return MetricReport(dice=d, asd_mm=dist, sensitivity=sen,
                        specificity=spe, flags=tuple(flags))
