"""Segmentation refinement via shape-dictionary retrieval and a shuffle-window
transformer autoencoder.

The package splits into three layers: geometry (binary volumes, boundary
tracing, Fourier-magnitude shape descriptors, the nearest-neighbor shape
dictionary), learning (a small reverse-mode engine, windowed shuffle
attention, the autoencoder, augmentation, and training), and evaluation
plus orchestration (overlap/surface metrics, the synthetic corpus, the
refinement pipeline, and the command-line surface).
"""

from .errors import (
    ConfigError,
    DegenerateShapeError,
    DictionaryError,
    EmptyShapeError,
    EvaluationError,
    FormatError,
    MetricUndefinedError,
    ShapeError,
    ShapeRefineError,
    TrainingError,
    TruncationError,
)
from .volume import MaskSlice, MaskVolume, extract_middle_slice, read_volume, write_volume
from .contour import Contour, largest_component, resample_contour, trace_boundary
from .descriptor import ShapeDescriptor, compute_descriptor, descriptor_distance
from .dictionary import (
    DictionaryEntry,
    DictionaryMeta,
    ShapeDictionary,
    build_dictionary,
    load_dictionary,
    retrieve_nearest,
    save_dictionary,
)
from .attention import (
    AttentionConfig,
    ShuffleSpec,
    shuffle_block_forward,
    shuffle_partition,
    unshuffle_merge,
    windowed_attention,
)
from .autoencoder import (
    SAEConfig,
    SAEModel,
    binarize,
    init_model,
    load_model,
    sae_forward,
    save_model,
)
from .augment import NoiseParams, TransformParams, apply_affine, apply_noise, make_training_triplet
from .training import AdamState, TrainConfig, TrainResult, adam_step, sae_loss, train_sae
from .metrics import MetricReport, asd, dice, evaluate, sen_spe, surface_voxels
from .synth import SynthParams, load_manifest, synth_corpus, synth_volume, synth_volumes
from .pipeline import (
    PipelineConfig,
    RefineResult,
    config_from_dict,
    config_to_dict,
    evaluate_pair,
    refine,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "AttentionConfig",
    "ConfigError",
    "Contour",
    "DegenerateShapeError",
    "DictionaryEntry",
    "DictionaryError",
    "DictionaryMeta",
    "EmptyShapeError",
    "EvaluationError",
    "FormatError",
    "MaskSlice",
    "MaskVolume",
    "MetricReport",
    "MetricUndefinedError",
    "NoiseParams",
    "PipelineConfig",
    "RefineResult",
    "SAEConfig",
    "SAEModel",
    "ShapeDescriptor",
    "ShapeDictionary",
    "ShapeError",
    "ShapeRefineError",
    "ShuffleSpec",
    "SynthParams",
    "TrainConfig",
    "TrainResult",
    "TrainingError",
    "TransformParams",
    "TruncationError",
    "adam_step",
    "apply_affine",
    "apply_noise",
    "asd",
    "binarize",
    "build_dictionary",
    "compute_descriptor",
    "config_from_dict",
    "config_to_dict",
    "descriptor_distance",
    "dice",
    "evaluate",
    "evaluate_pair",
    "extract_middle_slice",
    "init_model",
    "largest_component",
    "load_dictionary",
    "load_manifest",
    "load_model",
    "make_training_triplet",
    "read_volume",
    "refine",
    "resample_contour",
    "retrieve_nearest",
    "sae_forward",
    "sae_loss",
    "save_dictionary",
    "save_model",
    "sen_spe",
    "shuffle_block_forward",
    "shuffle_partition",
    "surface_voxels",
    "synth_corpus",
    "synth_volume",
    "synth_volumes",
    "trace_boundary",
    "train_sae",
    "unshuffle_merge",
    "windowed_attention",
    "write_volume",
]
