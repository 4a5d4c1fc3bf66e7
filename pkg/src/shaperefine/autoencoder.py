"""U-shaped shape autoencoder over binary mask slabs.

Two input channels (shape reference first, mask to refine second) pass through
a conv stem, a stack of shuffle-attention stages with stride-2 conv
downsampling, and a mirrored decoder with nearest-neighbor upsampling and
channel-concatenated skip connections, ending in a sub-voxel linear head
(one logit per stem-stride cell position) and a sigmoid.
All parameters live in a flat name -> Parameter dict whose names and shapes
are a pure function of the config, which is what makes the model file format
verifiable: the header manifest must regenerate from the stored config.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import engine as en
from .attention import (
    AttentionConfig,
    ShuffleSpec,
    block_param_shapes,
    shuffle_block_forward,
)
from .errors import ConfigError, FormatError, ShapeError, TruncationError
from .volume import MaskVolume

MODEL_FORMAT = "sae-model"
MODEL_VERSION = 1
BLOCKS_PER_STAGE = 2
MLP_RATIO = 2


@dataclass(frozen=True)
class SAEConfig:
    """Network geometry; every derived extent is checked at construction."""

    input_dims: tuple[int, int, int]
    stages: int = 2
    base_channels: int = 8
    stem_stride: tuple[int, int, int] = (2, 2, 2)
    shuffle_specs: tuple[tuple[int, int, int], ...] = ((2, 8, 8), (2, 4, 4))
    heads: tuple[int, ...] = (2, 4)

    def __post_init__(self):
        object.__setattr__(self, "input_dims", tuple(int(v) for v in self.input_dims))
        object.__setattr__(self, "stem_stride", tuple(int(v) for v in self.stem_stride))
        object.__setattr__(
            self, "shuffle_specs", tuple(tuple(int(v) for v in s) for s in self.shuffle_specs)
        )
        object.__setattr__(self, "heads", tuple(int(v) for v in self.heads))
        if self.stages < 1:
            raise ConfigError(f"stages must be >= 1, got {self.stages}")
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be >= 1, got {self.base_channels}")
        if len(self.input_dims) != 3 or any(v < 1 for v in self.input_dims):
            raise ConfigError(f"input_dims must be 3 positive extents, got {self.input_dims}")
        if any(s not in (1, 2) for s in self.stem_stride):
            raise ConfigError(f"stem_stride entries must be 1 or 2, got {self.stem_stride}")
        if len(self.shuffle_specs) != self.stages or len(self.heads) != self.stages:
            raise ConfigError(
                f"need one shuffle spec and head count per stage "
                f"({self.stages}), got {len(self.shuffle_specs)} and {len(self.heads)}"
            )
        for dim, s in zip(self.input_dims, self.stem_stride):
            if dim % (s * 2 ** self.stages):
                raise ConfigError(
                    f"input dim {dim} not divisible by stem stride {s} "
                    f"times 2^{self.stages}"
                )
        for i in range(self.stages):
            c = self.stage_channels(i)
            if c % self.heads[i]:
                raise ConfigError(
                    f"stage {i}: channels {c} not divisible by heads {self.heads[i]}"
                )
            ShuffleSpec(self.shuffle_specs[i]).block_shape(self.stage_spatial(i))

    def stage_channels(self, i: int) -> int:
        return self.base_channels * 2 ** i

    def stage_spatial(self, i: int) -> tuple[int, int, int]:
        return tuple(
            dim // (s * 2 ** i) for dim, s in zip(self.input_dims, self.stem_stride)
        )

    def shuffle_spec(self, i: int) -> ShuffleSpec:
        return ShuffleSpec(self.shuffle_specs[i])

    def attention_config(self, i: int) -> AttentionConfig:
        c = self.stage_channels(i)
        block = self.shuffle_spec(i).block_shape(self.stage_spatial(i))
        return AttentionConfig(heads=self.heads[i], d_k=c // self.heads[i], block_shape=block)

    @classmethod
    def desk_default(cls) -> "SAEConfig":
        return cls(input_dims=(8, 64, 64))

    @classmethod
    def tiny(cls) -> "SAEConfig":
        """Small enough for finite-difference gradient checks."""
        return cls(
            input_dims=(4, 16, 16),
            stages=2,
            base_channels=8,
            stem_stride=(1, 2, 2),
            shuffle_specs=((2, 4, 4), (1, 2, 2)),
            heads=(2, 4),
        )

    @classmethod
    def paper_scale(cls) -> "SAEConfig":
        """Full-size geometry; constructible but not sized for CPU training."""
        return cls(
            input_dims=(8, 256, 256),
            stages=2,
            base_channels=16,
            stem_stride=(1, 2, 2),
            shuffle_specs=((2, 4, 4), (2, 4, 4)),
            heads=(2, 4),
        )

    def to_dict(self) -> dict:
        return {
            "input_dims": list(self.input_dims),
            "stages": self.stages,
            "base_channels": self.base_channels,
            "stem_stride": list(self.stem_stride),
            "shuffle_specs": [list(s) for s in self.shuffle_specs],
            "heads": list(self.heads),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SAEConfig":
        try:
            return cls(
                input_dims=tuple(d["input_dims"]),
                stages=int(d["stages"]),
                base_channels=int(d["base_channels"]),
                stem_stride=tuple(d["stem_stride"]),
                shuffle_specs=tuple(tuple(s) for s in d["shuffle_specs"]),
                heads=tuple(d["heads"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad model config: {exc}") from exc


def param_manifest(cfg: SAEConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) list; identical configs yield identical manifests."""
    c0 = cfg.base_channels
    manifest: list[tuple[str, tuple[int, ...]]] = [
        ("stem.w", (c0, 2, 3, 3, 3)),
        ("stem.b", (c0,)),
    ]

    def add_blocks(side: str, i: int) -> None:
        shapes = block_param_shapes(cfg.attention_config(i), MLP_RATIO)
        for j in range(BLOCKS_PER_STAGE):
            for k, s in shapes.items():
                manifest.append((f"{side}{i}.blk{j}.{k}", s))

    for i in range(cfg.stages):
        ci, cn = cfg.stage_channels(i), cfg.stage_channels(i + 1)
        add_blocks("enc", i)
        manifest.append((f"enc{i}.down.w", (cn, ci, 3, 3, 3)))
        manifest.append((f"enc{i}.down.b", (cn,)))
    for i in reversed(range(cfg.stages)):
        ci, cn = cfg.stage_channels(i), cfg.stage_channels(i + 1)
        # upsample path mixes channels pointwise; spatial context comes from
        # the 3x3x3 fuse conv after the skip concat
        manifest.append((f"dec{i}.up.w", (cn, ci)))
        manifest.append((f"dec{i}.up.b", (ci,)))
        manifest.append((f"dec{i}.fuse.w", (ci, 2 * ci, 3, 3, 3)))
        manifest.append((f"dec{i}.fuse.b", (ci,)))
        add_blocks("dec", i)
    # sub-voxel head: one linear readout per stem-stride cell position, so the
    # output returns to full resolution without a full-resolution convolution
    cells = cfg.stem_stride[0] * cfg.stem_stride[1] * cfg.stem_stride[2]
    manifest.append(("head.w", (c0, cells)))
    manifest.append(("head.b", (cells,)))
    return manifest


@dataclass
class SAEModel:
    config: SAEConfig
    params: dict[str, en.Parameter]

    def parameters(self) -> list[en.Parameter]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def init_model(cfg: SAEConfig, seed: int = 0) -> SAEModel:
    """Seeded init: He-scaled convs, 0.02-scale projections, identity norms."""
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    params: dict[str, en.Parameter] = {}
    for name, shape in param_manifest(cfg):
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "w" and len(shape) == 5:
            fan_in = shape[1] * 27
            data = rng.normal(scale=np.sqrt(2.0 / fan_in), size=shape)
        elif leaf == "w" and len(shape) == 2:
            data = rng.normal(scale=np.sqrt(2.0 / shape[0]), size=shape)
        elif leaf in ("wq", "wk", "wv", "wo", "mlp_w1", "mlp_w2"):
            data = rng.normal(scale=0.02, size=shape)
        elif leaf in ("ln1_g", "ln2_g"):
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
        params[name] = en.Parameter(name, data)
    return SAEModel(config=cfg, params=params)


def _block_params(params: dict, prefix: str, cfg_i: AttentionConfig) -> dict:
    return {k: params[f"{prefix}.{k}"] for k in block_param_shapes(cfg_i, MLP_RATIO)}


def _as_channel(a, dims) -> np.ndarray:
    if isinstance(a, MaskVolume):
        a = a.voxels
    a = np.asarray(a, dtype=np.float64)
    if a.shape != tuple(dims):
        raise ShapeError(f"input shape {a.shape} does not match model dims {tuple(dims)}")
    if a.size and (a.min() < 0.0 or a.max() > 1.0):
        raise ShapeError("input values must lie in [0, 1]")
    return a


def sae_forward(m: SAEModel, reference, noisy) -> en.Tensor:
    """Per-voxel foreground probability, shape config.input_dims, in (0, 1).

    Returns the graph output Tensor; inference callers read .data.
    """
    cfg, p = m.config, m.params
    x = en.as_tensor(np.stack([
        _as_channel(reference, cfg.input_dims),
        _as_channel(noisy, cfg.input_dims),
    ]))
    x = en.gelu(en.conv3d(x, p["stem.w"], p["stem.b"], stride=cfg.stem_stride))
    skips = []
    for i in range(cfg.stages):
        spec, att = cfg.shuffle_spec(i), cfg.attention_config(i)
        for j in range(BLOCKS_PER_STAGE):
            x = shuffle_block_forward(x, spec, att, _block_params(p, f"enc{i}.blk{j}", att))
        skips.append(x)
        x = en.gelu(en.conv3d(x, p[f"enc{i}.down.w"], p[f"enc{i}.down.b"], stride=(2, 2, 2)))
    for i in reversed(range(cfg.stages)):
        x = en.upsample_nearest(x, (2, 2, 2))
        x = en.gelu(en.conv1x1(x, p[f"dec{i}.up.w"], p[f"dec{i}.up.b"]))
        x = en.concat([x, skips[i]], axis=0)
        x = en.gelu(en.conv3d(x, p[f"dec{i}.fuse.w"], p[f"dec{i}.fuse.b"]))
        spec, att = cfg.shuffle_spec(i), cfg.attention_config(i)
        for j in range(BLOCKS_PER_STAGE):
            x = shuffle_block_forward(x, spec, att, _block_params(p, f"dec{i}.blk{j}", att))
    # depth-to-space: each stem-resolution cell emits its own logit per
    # sub-voxel, restoring full resolution
    fd, fh, fw = cfg.stem_stride
    d0, h0, w0 = cfg.stage_spatial(0)
    x = en.conv1x1(x, p["head.w"], p["head.b"])
    x = en.reshape(x, (fd, fh, fw, d0, h0, w0))
    x = en.transpose(x, (3, 0, 4, 1, 5, 2))
    return en.sigmoid(en.reshape(x, cfg.input_dims))


def binarize(p, tau: float = 0.5, spacing=(1.0, 1.0, 1.0)) -> MaskVolume:
    """Threshold probabilities into a mask; voxel is foreground iff p >= tau."""
    if not 0.0 < tau < 1.0:
        raise ConfigError(f"threshold must lie in (0, 1), got {tau}")
    if isinstance(p, en.Tensor):
        p = p.data
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 3:
        raise ShapeError(f"expected a 3D probability array, got shape {p.shape}")
    return MaskVolume.from_array((p >= tau).astype(np.uint8), spacing=spacing)


def save_model(m: SAEModel, path) -> None:
    """JSON header (config + ordered manifest), NUL byte, little-endian f64 payload."""
    manifest = param_manifest(m.config)
    header = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "config": m.config.to_dict(),
        "manifest": [[name, list(shape)] for name, shape in manifest],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, indent=1).encode("utf-8"))
        fh.write(b"\0")
        for name, shape in manifest:
            arr = m.params[name].data
            if arr.shape != shape:
                raise FormatError(f"parameter {name} has shape {arr.shape}, manifest says {shape}")
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path) -> SAEModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    sep = blob.find(b"\0")
    if sep < 0:
        raise FormatError("model file has no header separator")
    try:
        header = json.loads(blob[:sep].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"model header is not valid JSON: {exc}") from exc
    if header.get("format") != MODEL_FORMAT or header.get("version") != MODEL_VERSION:
        raise FormatError(
            f"unsupported model format/version: {header.get('format')!r} "
            f"v{header.get('version')!r}"
        )
    cfg = SAEConfig.from_dict(header.get("config", {}))
    manifest = param_manifest(cfg)
    stored = [(name, tuple(shape)) for name, shape in header.get("manifest", [])]
    if stored != manifest:
        raise FormatError("model manifest does not match the stored config")
    payload = blob[sep + 1:]
    total = sum(int(np.prod(shape)) for _, shape in manifest)
    if len(payload) != 8 * total:
        raise TruncationError(
            f"model payload holds {len(payload)} bytes, manifest requires {8 * total}"
        )
    params: dict[str, en.Parameter] = {}
    offset = 0
    for name, shape in manifest:
        n = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f8", count=n, offset=offset).reshape(shape)
        params[name] = en.Parameter(name, arr.astype(np.float64))
        offset += 8 * n
    return SAEModel(config=cfg, params=params)
