"""Shuffle partitioning and windowed multi-head attention with relative bias.

The shuffle maps voxel (d, h, w) of a [C, D, H, W] feature map into block
(d mod n1, h mod n2, w mod n3) at intra-block position (d//n1, h//n2, w//n3):
a strided interleave, so every block samples the whole spatial extent while
relative voxel order inside a block is preserved.  Both directions are pure
reshape/transpose compositions and therefore exact bijections, and they work
unchanged on numpy arrays and on autodiff Tensors.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import engine as en
from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class ShuffleSpec:
    """Block counts per spatial axis; each must divide the feature extent."""

    n: tuple[int, int, int]

    def __post_init__(self):
        n = tuple(int(v) for v in self.n)
        if any(v < 1 for v in n):
            raise ConfigError(f"block counts must be >= 1, got {self.n}")
        object.__setattr__(self, "n", n)

    @property
    def block_count(self) -> int:
        n1, n2, n3 = self.n
        return n1 * n2 * n3

    def block_shape(self, spatial) -> tuple[int, int, int]:
        d, h, w = spatial
        n1, n2, n3 = self.n
        if d % n1 or h % n2 or w % n3:
            raise ShapeError(
                f"extents {spatial} not divisible by block counts {self.n}; pad first"
            )
        return (d // n1, h // n2, w // n3)


@dataclass(frozen=True)
class AttentionConfig:
    """Window attention geometry; the bias table itself lives in the params."""

    heads: int
    d_k: int
    block_shape: tuple[int, int, int]

    def __post_init__(self):
        if self.heads < 1 or self.d_k < 1:
            raise ConfigError(f"heads and d_k must be positive, got {self.heads}, {self.d_k}")
        object.__setattr__(self, "block_shape", tuple(int(v) for v in self.block_shape))

    @property
    def channels(self) -> int:
        return self.heads * self.d_k

    @property
    def tokens(self) -> int:
        bd, bh, bw = self.block_shape
        return bd * bh * bw

    @property
    def bias_table_size(self) -> int:
        bd, bh, bw = self.block_shape
        return (2 * bd - 1) * (2 * bh - 1) * (2 * bw - 1)


def shuffle_partition(x, spec: ShuffleSpec):
    """[C, D, H, W] -> [n1*n2*n3, C, D/n1, H/n2, W/n3] strided interleave."""
    c, d, h, w = x.shape
    bd, bh, bw = spec.block_shape((d, h, w))
    n1, n2, n3 = spec.n
    y = x.reshape((c, bd, n1, bh, n2, bw, n3))
    y = y.transpose((2, 4, 6, 0, 1, 3, 5))
    return y.reshape((spec.block_count, c, bd, bh, bw))


def unshuffle_merge(blocks, spec: ShuffleSpec):
    """Exact inverse permutation of shuffle_partition."""
    nb, c, bd, bh, bw = blocks.shape
    n1, n2, n3 = spec.n
    if nb != spec.block_count:
        raise ShapeError(f"expected {spec.block_count} blocks, got {nb}")
    y = blocks.reshape((n1, n2, n3, c, bd, bh, bw))
    y = y.transpose((3, 4, 0, 5, 1, 6, 2))
    return y.reshape((c, bd * n1, bh * n2, bw * n3))


@lru_cache(maxsize=None)
def relative_position_index(block_shape: tuple[int, int, int]) -> np.ndarray:
    """[T, T] table index; equal 3D coordinate differences share one entry."""
    bd, bh, bw = block_shape
    coords = np.stack(
        np.meshgrid(np.arange(bd), np.arange(bh), np.arange(bw), indexing="ij")
    ).reshape(3, -1)
    rel = coords[:, :, None] - coords[:, None, :]
    rel[0] += bd - 1
    rel[1] += bh - 1
    rel[2] += bw - 1
    idx = (rel[0] * (2 * bh - 1) + rel[1]) * (2 * bw - 1) + rel[2]
    idx.flags.writeable = False
    return idx


def attention_param_shapes(cfg: AttentionConfig) -> dict[str, tuple[int, ...]]:
    c = cfg.channels
    return {
        "wq": (c, c), "bq": (c,),
        "wk": (c, c), "bk": (c,),
        "wv": (c, c), "bv": (c,),
        "wo": (c, c), "bo": (c,),
        "bias_table": (cfg.heads, cfg.bias_table_size),
    }


def windowed_attention(x, cfg: AttentionConfig, params, return_weights: bool = False):
    """softmax(Q K^T / sqrt(d_k) + B) V per head, then an output projection.

    x: Tensor or array, [T, C] for one block or [nb, T, C] for a batch of
    blocks.  B is gathered per head from params["bias_table"] through the
    relative-position index of cfg.block_shape.
    """
    x = en.as_tensor(x)
    squeezed = x.data.ndim == 2
    if squeezed:
        x = en.reshape(x, (1,) + x.shape)
    if x.data.ndim != 3:
        raise ShapeError(f"attention input must be [T, C] or [nb, T, C], got {x.shape}")
    nb, t, c = x.shape
    if c != cfg.heads * cfg.d_k:
        raise ConfigError(f"channels {c} must equal heads*d_k = {cfg.heads}*{cfg.d_k}")
    if t != cfg.tokens:
        raise ShapeError(f"token count {t} does not match block {cfg.block_shape}")
    table = en.as_tensor(params["bias_table"])
    if table.shape != (cfg.heads, cfg.bias_table_size):
        raise ConfigError(
            f"bias table shape {table.shape} != ({cfg.heads}, {cfg.bias_table_size})"
        )

    def split_heads(v):
        v = en.reshape(v, (nb, t, cfg.heads, cfg.d_k))
        return en.transpose(v, (0, 2, 1, 3))  # [nb, heads, T, d_k]

    # 1/sqrt(d_k) folded into the query projection: scales the small weight
    # matrix instead of the [nb, heads, T, T] score tensor
    scale = 1.0 / np.sqrt(cfg.d_k)
    q = split_heads(en.matmul(x, params["wq"] * scale) + params["bq"] * scale)
    k = split_heads(en.matmul(x, params["wk"]) + params["bk"])
    v = split_heads(en.matmul(x, params["wv"]) + params["bv"])

    scores = en.matmul(q, en.transpose(k, (0, 1, 3, 2)))
    bias = en.bias_gather(table, relative_position_index(cfg.block_shape))
    attn = en.softmax_lastdim(scores + bias)  # [nb, heads, T, T]
    out = en.matmul(attn, v)
    out = en.reshape(en.transpose(out, (0, 2, 1, 3)), (nb, t, c))
    out = en.matmul(out, params["wo"]) + params["bo"]
    if squeezed:
        out = en.reshape(out, (t, c))
    if return_weights:
        return out, attn
    return out


def block_param_shapes(cfg: AttentionConfig, mlp_ratio: int = 2) -> dict[str, tuple[int, ...]]:
    c = cfg.channels
    shapes = {"ln1_g": (c,), "ln1_b": (c,)}
    shapes.update(attention_param_shapes(cfg))
    shapes.update({
        "ln2_g": (c,), "ln2_b": (c,),
        "mlp_w1": (c, mlp_ratio * c), "mlp_b1": (mlp_ratio * c,),
        "mlp_w2": (mlp_ratio * c, c), "mlp_b2": (c,),
    })
    return shapes


def shuffle_block_forward(x, spec: ShuffleSpec, cfg: AttentionConfig, params):
    """Pre-norm residual block: shuffled window attention, then a 2-layer MLP.

    y  = x + merge(attention(LN(shuffled blocks)))
    y' = y + mlp(LN(y))           (per-voxel MLP, GELU, expansion from params)
    """
    x = en.as_tensor(x)
    c, d, h, w = x.shape
    bd, bh, bw = spec.block_shape((d, h, w))
    if (bd, bh, bw) != cfg.block_shape:
        raise ConfigError(
            f"spec block shape {(bd, bh, bw)} disagrees with attention config {cfg.block_shape}"
        )
    nb = spec.block_count
    t = cfg.tokens

    blocks = shuffle_partition(x, spec)
    tok = en.transpose(en.reshape(blocks, (nb, c, t)), (0, 2, 1))
    att = windowed_attention(en.layer_norm(tok, params["ln1_g"], params["ln1_b"]), cfg, params)
    att = en.reshape(en.transpose(att, (0, 2, 1)), (nb, c, bd, bh, bw))
    y = x + unshuffle_merge(att, spec)

    vox = en.transpose(en.reshape(y, (c, d * h * w)), (1, 0))
    hid = en.layer_norm(vox, params["ln2_g"], params["ln2_b"])
    hid = en.gelu(en.matmul(hid, params["mlp_w1"]) + params["mlp_b1"])
    hid = en.matmul(hid, params["mlp_w2"]) + params["mlp_b2"]
    return y + en.reshape(en.transpose(hid, (1, 0)), (c, d, h, w))
