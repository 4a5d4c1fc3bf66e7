"""End-to-end refinement: one middle-slice retrieval, then slab-wise denoising.

refine() computes the query descriptor from the segmentation's middle slice,
retrieves the nearest dictionary label, and runs the autoencoder over
consecutive depth slabs with the retrieved label as the reference channel.
The retrieval happens once per volume; every slab reuses the same label.
Inputs whose in-plane dims differ from the model, or whose depth does not
tile into model slabs, are errors rather than silent resamples.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields

import numpy as np

from .augment import NoiseParams, TransformParams
from .autoencoder import SAEModel, binarize, sae_forward
from .descriptor import DEFAULT_RESAMPLE, compute_descriptor
from .dictionary import ShapeDictionary, retrieve_nearest
from .errors import ConfigError, EmptyShapeError, ShapeError
from .metrics import MetricReport, evaluate
from .synth import SynthParams
from .training import TrainConfig
from .volume import MaskVolume, extract_middle_slice, read_volume


@dataclass(frozen=True)
class PipelineConfig:
    dictionary_path: str | None = None
    model_path: str | None = None
    axis: str = "z"
    resample_m: int = DEFAULT_RESAMPLE
    tau: float = 0.5
    passthrough_empty: bool = False
    train: TrainConfig = field(default_factory=TrainConfig)
    transform: TransformParams = field(default_factory=TransformParams)
    noise: NoiseParams = field(default_factory=NoiseParams)
    synth: SynthParams = field(default_factory=SynthParams)


def config_to_dict(cfg: PipelineConfig) -> dict:
    return {
        "dictionary_path": cfg.dictionary_path,
        "model_path": cfg.model_path,
        "axis": cfg.axis,
        "resample_m": cfg.resample_m,
        "tau": cfg.tau,
        "passthrough_empty": cfg.passthrough_empty,
        "train": {
            "learning_rate": cfg.train.learning_rate,
            "beta1": cfg.train.beta1,
            "beta2": cfg.train.beta2,
            "weight_decay": cfg.train.weight_decay,
            "batch_size": cfg.train.batch_size,
            "iterations": cfg.train.iterations,
            "seed": cfg.train.seed,
            "clip_eps": cfg.train.clip_eps,
        },
        "transform": {
            "rotation": list(cfg.transform.rotation),
            "scale": list(cfg.transform.scale),
            "translation": [list(t) for t in cfg.transform.translation],
        },
        "noise": {
            "fp_blobs": list(cfg.noise.fp_blobs),
            "fn_blobs": list(cfg.noise.fn_blobs),
            "blob_radius": list(cfg.noise.blob_radius),
        },
        "synth": {
            "count": cfg.synth.count,
            "dims": list(cfg.synth.dims),
            "spacing": list(cfg.synth.spacing),
            "families": list(cfg.synth.families),
            "seed": cfg.synth.seed,
            "radius": list(cfg.synth.radius),
            "center_jitter": cfg.synth.center_jitter,
        },
    }


def _build_section(cls, data: dict, section: str):
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown {section} config keys: {sorted(unknown)}")
    kwargs = {}
    for key, val in data.items():
        if isinstance(val, list):
            val = tuple(tuple(v) if isinstance(v, list) else v for v in val)
        kwargs[key] = val
    return cls(**kwargs)


def config_from_dict(data: dict) -> PipelineConfig:
    """Parse a JSON-shaped dict; unknown keys are configuration errors."""
    if not isinstance(data, dict):
        raise ConfigError(f"pipeline config must be an object, got {type(data).__name__}")
    top = {f.name for f in fields(PipelineConfig)}
    unknown = set(data) - top
    if unknown:
        raise ConfigError(f"unknown pipeline config keys: {sorted(unknown)}")
    kwargs = dict(data)
    for section, cls in (
        ("train", TrainConfig),
        ("transform", TransformParams),
        ("noise", NoiseParams),
        ("synth", SynthParams),
    ):
        if section in kwargs:
            kwargs[section] = _build_section(cls, kwargs[section], section)
    return PipelineConfig(**kwargs)


@dataclass(frozen=True)
class RefineResult:
    refined: MaskVolume
    retrieved_id: str | None
    distance: float | None
    slabs: int
    passthrough: bool = False


def _slab_count(seg: MaskVolume, model: SAEModel) -> int:
    want_d, want_h, want_w = model.config.input_dims
    dz, dy, dx = seg.voxels.shape
    if (dy, dx) != (want_h, want_w):
        raise ShapeError(
            f"in-plane dims {(dx, dy)} do not match the model's {(want_w, want_h)}"
        )
    if dz % want_d:
        raise ShapeError(f"depth {dz} does not tile into slabs of {want_d}")
    return dz // want_d


def refine(
    seg: MaskVolume,
    dictionary: ShapeDictionary,
    model: SAEModel,
    cfg: PipelineConfig | None = None,
    label_root=None,
) -> RefineResult:
    """Retrieve a shape prior for seg and denoise it slab by slab.

    label_root resolves relative dictionary label paths (defaults to the
    current directory).  Empty segmentations raise unless
    cfg.passthrough_empty, which returns the input unchanged, flagged.
    """
    cfg = cfg if cfg is not None else PipelineConfig()
    slabs = _slab_count(seg, model)
    if not seg.voxels.any():
        if cfg.passthrough_empty:
            return RefineResult(seg, None, None, slabs, passthrough=True)
        raise EmptyShapeError(
            "segmentation has no foreground; enable passthrough to keep it as is"
        )
    if dictionary.meta.axis != cfg.axis:
        raise ConfigError(
            f"dictionary was built on axis {dictionary.meta.axis!r}, config wants {cfg.axis!r}"
        )
    if dictionary.meta.resample_m != cfg.resample_m:
        raise ConfigError(
            f"dictionary resample {dictionary.meta.resample_m} != config {cfg.resample_m}"
        )

    query = compute_descriptor(extract_middle_slice(seg, cfg.axis), cfg.resample_m)
    entry, dist = retrieve_nearest(dictionary, query)
    path = entry.label_path
    if label_root is not None and not os.path.isabs(path):
        path = os.path.join(label_root, path)
    label = read_volume(path)
    if label.dims != seg.dims:
        raise ShapeError(
            f"retrieved label dims {label.dims} do not match segmentation {seg.dims}"
        )

    depth = model.config.input_dims[0]
    prob = np.empty(seg.voxels.shape, dtype=np.float64)
    for k in range(slabs):
        lo, hi = k * depth, (k + 1) * depth
        out = sae_forward(model, label.voxels[lo:hi], seg.voxels[lo:hi])
        prob[lo:hi] = out.data
    refined = binarize(prob, cfg.tau, spacing=seg.spacing)
    return RefineResult(refined, entry.id, float(dist), slabs)


def evaluate_pair(pred: MaskVolume, gt: MaskVolume) -> MetricReport:
    """CLI-facing alias so command output cannot drift from the library."""
    return evaluate(pred, gt)
