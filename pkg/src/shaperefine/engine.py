"""Minimal reverse-mode autodiff on float64 numpy arrays.

Primitive set: elementwise add/mul/neg, relu, gelu, sigmoid, log, clamp,
matmul (batched), softmax over the last axis, layer normalization over the
last axis, 3x3x3 convolution with pad 1 and per-axis stride 1 or 2, pointwise
(1x1x1) convolution, nearest-neighbor upsampling, reshape/transpose,
concatenation, mean, and a bias-table gather.  Every primitive carries a hand-derived backward rule;
grad_check verifies any composition against central finite differences.

Determinism: everything is plain numpy, gradients accumulate in reverse
topological order of graph construction, so identical inputs in the same
environment produce bit-identical values and gradients.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf, expit

from .errors import EvaluationError, ShapeError

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _asarray(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float64)


class Tensor:
    """Node in the computation graph; holds float64 data and its gradient."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd")

    # keep numpy from absorbing Tensors in mixed expressions; binary ops then
    # fall back to the __r*__ methods below
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, parents=(), bwd=None):
        self.data = _asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(parents)
        self._bwd = bwd

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy() if g.base is not None or g.dtype != np.float64 else g
        else:
            self.grad = self.grad + g

    def backward(self) -> None:
        """Reverse pass from a scalar; accumulates into .grad of every node."""
        if self.size != 1:
            raise ShapeError(f"backward needs a scalar, got shape {self.shape}")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._bwd is not None and node.grad is not None:
                node._bwd(node.grad)

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -as_tensor(other))

    def __rsub__(self, other):
        return add(as_tensor(other), -self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, axes):
        return transpose(self, axes)


class Parameter(Tensor):
    """Trainable leaf with a unique name within its model."""

    __slots__ = ("name",)

    def __init__(self, name: str, data):
        super().__init__(data, requires_grad=True)
        self.name = name

    def zero_grad(self) -> None:
        self.grad = None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum g down to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, extent in enumerate(shape):
        if extent == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _make(data, parents, bwd) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, parents=[p for p in parents if p.requires_grad],
                  bwd=bwd if req else None)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(out_data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), bwd)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0.0

    def bwd(g):
        x._accumulate(g * mask)

    return _make(np.where(mask, x.data, 0.0), (x,), bwd)


def gelu(x) -> Tensor:
    """Exact-erf GELU: 0.5 * x * (1 + erf(x / sqrt(2)))."""
    x = as_tensor(x)
    phi = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))

    def bwd(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
        x._accumulate(g * (phi + x.data * pdf))

    return _make(x.data * phi, (x,), bwd)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = expit(x.data)

    def bwd(g):
        x._accumulate(g * y * (1.0 - y))

    return _make(y, (x,), bwd)


def log(x) -> Tensor:
    x = as_tensor(x)

    def bwd(g):
        x._accumulate(g / x.data)

    return _make(np.log(x.data), (x,), bwd)


def clamp(x, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes where lo <= x <= hi."""
    x = as_tensor(x)
    mask = (x.data >= lo) & (x.data <= hi)

    def bwd(g):
        x._accumulate(g * mask)

    return _make(np.clip(x.data, lo, hi), (x,), bwd)


def mean_all(x) -> Tensor:
    x = as_tensor(x)
    n = x.size

    def bwd(g):
        x._accumulate(np.full(x.shape, g.item() / n))

    return _make(x.data.mean(), (x,), bwd)


# ---------------------------------------------------------------------------
# shape plumbing
# ---------------------------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    orig = x.shape

    def bwd(g):
        x._accumulate(g.reshape(orig))

    return _make(x.data.reshape(shape), (x,), bwd)


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def bwd(g):
        x._accumulate(g.transpose(inverse))

    return _make(x.data.transpose(axes), (x,), bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    edges = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, edges[:-1], edges[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bwd)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError("matmul operands need at least 2 dims")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    k = a.shape[-1]
    # batched lhs against a plain weight matrix collapses to one flat GEMM
    flat = b.data.ndim == 2 and a.data.ndim > 2
    if flat:
        a2 = a.data.reshape(-1, k)
        out_data = (a2 @ b.data).reshape(a.shape[:-1] + (b.shape[-1],))
    else:
        out_data = np.matmul(a.data, b.data)

    def bwd(g):
        if flat:
            g2 = g.reshape(-1, b.shape[-1])
            if a.requires_grad:
                a._accumulate((g2 @ b.data.T).reshape(a.shape))
            if b.requires_grad:
                b._accumulate(a2.T @ g2)
            return
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accumulate(_unbroadcast(gb, b.shape))

    return _make(out_data, (a, b), bwd)


def softmax_lastdim(x) -> Tensor:
    """Max-subtracted softmax over the last axis; rows sum to 1."""
    x = as_tensor(x)
    y = x.data - x.data.max(axis=-1, keepdims=True)
    np.exp(y, out=y)
    y /= y.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        x._accumulate(y * (g - dot))

    return _make(y, (x,), bwd)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale/shift per feature."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    f = x.shape[-1]
    if gamma.shape != (f,) or beta.shape != (f,):
        raise ShapeError(f"layer_norm affine params must have shape ({f},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def bwd(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).reshape(-1, f).sum(axis=0))
        if beta.requires_grad:
            beta._accumulate(g.reshape(-1, f).sum(axis=0))
        if x.requires_grad:
            gh = g * gamma.data
            term = gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(term * inv)

    return _make(xhat * gamma.data + beta.data, (x, gamma, beta), bwd)


def bias_gather(table, index: np.ndarray) -> Tensor:
    """table[h, index[i, j]] -> [heads, T, T]; backward scatter-adds per head."""
    table = as_tensor(table)
    heads, table_size = table.shape
    flat = index.reshape(-1)

    def bwd(g):
        gt = np.empty_like(table.data)
        g2 = g.reshape(heads, -1)
        for h in range(heads):
            gt[h] = np.bincount(flat, weights=g2[h], minlength=table_size)
        table._accumulate(gt)

    return _make(table.data[:, index], (table,), bwd)


# ---------------------------------------------------------------------------
# convolution and resampling
# ---------------------------------------------------------------------------

def _corr3d(x: np.ndarray, w: np.ndarray, stride) -> tuple[np.ndarray, np.ndarray]:
    """Valid cross-correlation of [Cin, D, H, W] with [Cout, Cin, 3, 3, 3].

    Returns (output, im2col matrix [27*Cin, voxels] in offset-major order);
    the matrix is kept for the weight gradient.  Output extent per axis is
    floor((ext - 3) / stride) + 1.
    """
    c_out, c_in = w.shape[:2]
    sd, sh, sw = stride
    do = (x.shape[1] - 3) // sd + 1
    ho = (x.shape[2] - 3) // sh + 1
    wo = (x.shape[3] - 3) // sw + 1
    n = do * ho * wo
    cols = np.empty((27, c_in, n))
    k = 0
    for dz in range(3):
        for dy in range(3):
            for dx in range(3):
                src = x[:, dz:dz + do * sd:sd, dy:dy + ho * sh:sh, dx:dx + wo * sw:sw]
                np.copyto(cols[k].reshape(c_in, do, ho, wo), src)
                k += 1
    cols = cols.reshape(27 * c_in, n)
    # weight layout is (c_in, kd, kh, kw); reorder to the offset-major columns
    wr = w.reshape(c_out, c_in, 27).transpose(0, 2, 1).reshape(c_out, 27 * c_in)
    return (wr @ cols).reshape(c_out, do, ho, wo), cols


def conv3d(x, w, b=None, stride=(1, 1, 1)) -> Tensor:
    """3x3x3 cross-correlation, pad 1, per-axis stride 1 or 2.

    x: [Cin, D, H, W]; w: [Cout, Cin, 3, 3, 3]; b: [Cout] or None.
    Output spatial extent per axis is ceil(extent / stride).
    """
    x = as_tensor(x)
    w = as_tensor(w)
    b = as_tensor(b) if b is not None else None
    if isinstance(stride, int):
        stride = (stride, stride, stride)
    stride = tuple(int(s) for s in stride)
    if any(s not in (1, 2) for s in stride):
        raise ShapeError(f"stride components must be 1 or 2, got {stride}")
    if x.data.ndim != 4 or w.data.ndim != 5:
        raise ShapeError(f"conv3d expects x[Cin,D,H,W], w[Cout,Cin,3,3,3]; got {x.shape}, {w.shape}")
    if w.shape[1] != x.shape[0]:
        raise ShapeError(f"channel mismatch: x has {x.shape[0]}, w expects {w.shape[1]}")
    if w.shape[2:] != (3, 3, 3):
        raise ShapeError(f"kernel must be 3x3x3, got {w.shape[2:]}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"bias must have shape ({w.shape[0]},), got {b.shape}")

    xp = np.pad(x.data, ((0, 0), (1, 1), (1, 1), (1, 1)))
    out, cols = _corr3d(xp, w.data, stride)
    if b is not None:
        out = out + b.data[:, None, None, None]
    spatial = x.shape[1:]

    def bwd(g):
        c_out = g.shape[0]
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(1, 2, 3)))
        g2 = g.reshape(c_out, -1)
        if w.requires_grad:
            gw = (g2 @ cols.T).reshape(c_out, 27, w.shape[1]).transpose(0, 2, 1)
            w._accumulate(gw.reshape(w.shape))
        if x.requires_grad:
            # transposed conv: zero-stuff by stride, pad, correlate with the
            # flipped kernel, then crop the original padding ring
            pads = []
            stuffed_shape = [c_out]
            for ext, s, g_ext in zip(spatial, stride, g.shape[1:]):
                stuffed = (g_ext - 1) * s + 1
                stuffed_shape.append(stuffed)
                pads.append((2, ext + 2 - stuffed))
            gs = np.zeros(stuffed_shape)
            sd, sh, sw = stride
            gs[:, ::sd, ::sh, ::sw] = g
            gsp = np.pad(gs, [(0, 0)] + pads)
            w_t = np.ascontiguousarray(
                w.data[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4)
            )
            gxp, _ = _corr3d(gsp, w_t, (1, 1, 1))
            x._accumulate(gxp[:, 1:-1, 1:-1, 1:-1])

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, bwd)


def conv1x1(x, w, b=None) -> Tensor:
    """Pointwise channel mix of [Cin, D, H, W] with w [Cin, Cout]: one GEMM."""
    x = as_tensor(x)
    w = as_tensor(w)
    b = as_tensor(b) if b is not None else None
    if x.data.ndim != 4 or w.data.ndim != 2:
        raise ShapeError(f"conv1x1 expects x[Cin,D,H,W], w[Cin,Cout]; got {x.shape}, {w.shape}")
    c_in, c_out = w.shape
    if x.shape[0] != c_in:
        raise ShapeError(f"channel mismatch: x has {x.shape[0]}, w expects {c_in}")
    if b is not None and b.shape != (c_out,):
        raise ShapeError(f"bias must have shape ({c_out},), got {b.shape}")
    spatial = x.shape[1:]
    xf = x.data.reshape(c_in, -1)
    out = (w.data.T @ xf).reshape((c_out,) + spatial)
    if b is not None:
        out += b.data[:, None, None, None]

    def bwd(g):
        gf = g.reshape(c_out, -1)
        if b is not None and b.requires_grad:
            b._accumulate(gf.sum(axis=1))
        if w.requires_grad:
            w._accumulate(xf @ gf.T)
        if x.requires_grad:
            x._accumulate((w.data @ gf).reshape(x.shape))

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, bwd)


def upsample_nearest(x, factors) -> Tensor:
    """Nearest-neighbor upsampling of [C, D, H, W] by per-axis factor 1 or 2."""
    x = as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError(f"upsample expects [C, D, H, W], got {x.shape}")
    fd, fh, fw = (int(f) for f in factors)
    if any(f not in (1, 2) for f in (fd, fh, fw)):
        raise ShapeError(f"upsample factors must be 1 or 2, got {factors}")
    y = x.data
    if fd > 1:
        y = np.repeat(y, fd, axis=1)
    if fh > 1:
        y = np.repeat(y, fh, axis=2)
    if fw > 1:
        y = np.repeat(y, fw, axis=3)
    c, d, h, w_ = x.shape

    def bwd(g):
        gx = g.reshape(c, d, fd, h, fh, w_, fw).sum(axis=(2, 4, 6))
        x._accumulate(gx)

    return _make(y, (x,), bwd)


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------

def grad_check(f, params, eps: float = 1e-5, n_samples: int = 200, seed: int = 0) -> float:
    """Max relative disagreement between analytic and central-difference grads.

    f() must rebuild the scalar loss from `params` (a dict or list of
    Parameter).  Relative error per coordinate is
    |analytic - central| / max(1, |analytic|, |central|).
    """
    if not 1e-6 <= eps <= 1e-4:
        raise ValueError(f"eps must lie in [1e-6, 1e-4], got {eps}")
    plist = list(params.values()) if isinstance(params, dict) else list(params)
    for p in plist:
        p.grad = None
    loss = f()
    if not np.isfinite(loss.data).all():
        raise EvaluationError("loss is not finite at the evaluation point")
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in plist]

    sizes = np.array([p.size for p in plist])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    count = min(n_samples, total)
    coords = rng.choice(total, size=count, replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    worst = 0.0
    for coord in coords:
        pi = int(np.searchsorted(offsets, coord, side="right")) - 1
        local = int(coord - offsets[pi])
        flat = plist[pi].data.reshape(-1)
        keep = flat[local]
        flat[local] = keep + eps
        hi = f().data.item()
        flat[local] = keep - eps
        lo = f().data.item()
        flat[local] = keep
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise EvaluationError("loss is not finite under perturbation")
        central = (hi - lo) / (2.0 * eps)
        ana = float(analytic[pi].reshape(-1)[local])
        err = abs(ana - central) / max(1.0, abs(ana), abs(central))
        worst = max(worst, err)
    return worst
