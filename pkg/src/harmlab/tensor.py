"""Tape-based reverse-mode autodiff over dense float64 arrays.

A ``Tensor`` wraps a flat row-major numpy buffer; operations are module-level
functions that compute forward values eagerly and, when a ``Graph`` is active
and an operand requires gradients, append a record to the tape. ``Graph.backward``
walks the tape in exact reverse execution order, accumulating gradients into
``Tensor.grad`` buffers.

Everything is float64 and single-threaded by design: identical inputs produce
bit-identical outputs across runs. There is no broadcasting beyond the handful
of channel-wise patterns the operations below need.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DegenerateAttentionError, ShapeError

# Additive-mask magnitude: after row-max subtraction, exp(-LARGE + O(1e3))
# underflows to exactly 0.0 in double precision.
LARGE = 1e9


class Tensor:
    """Dense N-dimensional float64 array with an optional gradient buffer.

    ``grad`` is ``None`` until the tensor participates in a backward pass.
    Zero-sized dimensions are rejected at construction, and all values must
    be finite.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 0 and min(arr.shape) == 0:
            raise ShapeError(f"degenerate tensor shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor values must be finite")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class _Record:
    """One tape entry: op kind, operand identities, and the gradient closure."""

    __slots__ = ("op", "inputs", "outs", "fn")

    def __init__(self, op: str, inputs: tuple[Tensor, ...], outs: tuple[Tensor, ...],
                 fn: Callable[[], None]):
        self.op = op
        self.inputs = inputs
        self.outs = outs
        self.fn = fn


class Graph:
    """Execution tape. Use as a context manager around a differentiable forward pass.

    Records are appended in execution order; ``backward`` visits them in exact
    reverse order, so gradient accumulation is deterministic.
    """

    _active: Optional["Graph"] = None

    def __init__(self):
        self.records: list[_Record] = []
        self._outer: Optional[Graph] = None

    def __enter__(self) -> "Graph":
        self._outer = Graph._active
        Graph._active = self
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        Graph._active = self._outer
        return False

    def backward(self, root: Tensor) -> None:
        """Seed d(root)/d(root) = 1 and accumulate gradients along the tape."""
        if root.data.size != 1:
            raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
        root.grad = np.ones_like(root.data)
        for rec in reversed(self.records):
            if any(o.grad is not None for o in rec.outs):
                rec.fn()


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _maybe_record(op: str, out: Tensor, inputs: Sequence[Tensor], fn: Callable[[], None]) -> None:
    graph = Graph._active
    if graph is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        graph.records.append(_Record(op, tuple(inputs), (out,), fn))


def as_site_mask(mask, h: int, w: int) -> np.ndarray:
    m = np.asarray(mask, dtype=np.float64)
    if m.shape == (1, h, w):
        m = m[0]
    if m.shape != (h, w):
        raise ShapeError(f"mask shape {m.shape} does not match sites ({h}, {w})")
    if not np.all((m == 0.0) | (m == 1.0)):
        raise ValueError("mask must be binary")
    return m


# ---------------------------------------------------------------------------
# elementwise and structural operations


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    out = Tensor(a.data + b.data)

    def bwd():
        g = out.grad
        _accum(a, g)
        _accum(b, g)

    _maybe_record("add", out, (a, b), bwd)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} differ")
    out = Tensor(a.data - b.data)

    def bwd():
        g = out.grad
        _accum(a, g)
        _accum(b, -g)

    _maybe_record("sub", out, (a, b), bwd)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    out = Tensor(a.data * b.data)

    def bwd():
        g = out.grad
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    _maybe_record("mul", out, (a, b), bwd)
    return out


def scale(a: Tensor, s: float) -> Tensor:
    out = Tensor(a.data * s)

    def bwd():
        _accum(a, out.grad * s)

    _maybe_record("scale", out, (a,), bwd)
    return out


def add_scalar(a: Tensor, s: float) -> Tensor:
    out = Tensor(a.data + s)

    def bwd():
        _accum(a, out.grad)

    _maybe_record("add_scalar", out, (a,), bwd)
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))

    def bwd():
        _accum(a, out.grad * (a.data > 0.0))

    _maybe_record("relu", out, (a,), bwd)
    return out


def absolute(a: Tensor) -> Tensor:
    """|a|, with subgradient sign(a) and sign(0) = 0."""
    out = Tensor(np.abs(a.data))

    def bwd():
        _accum(a, out.grad * np.sign(a.data))

    _maybe_record("absolute", out, (a,), bwd)
    return out


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0.0):
        raise ValueError("sqrt: negative input")
    root = np.sqrt(a.data)
    out = Tensor(root)

    def bwd():
        _accum(a, out.grad / (2.0 * root))

    _maybe_record("sqrt", out, (a,), bwd)
    return out


def clamp01(a: Tensor) -> Tensor:
    """Clamp to [0, 1]; identity (and gradient 1) on in-range values."""
    out = Tensor(np.clip(a.data, 0.0, 1.0))

    def bwd():
        inside = (a.data >= 0.0) & (a.data <= 1.0)
        _accum(a, out.grad * inside)

    _maybe_record("clamp01", out, (a,), bwd)
    return out


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(np.sum(a.data))

    def bwd():
        _accum(a, np.full_like(a.data, float(out.grad)))

    _maybe_record("sum_all", out, (a,), bwd)
    return out


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    out = Tensor(np.sum(a.data) / n)

    def bwd():
        _accum(a, np.full_like(a.data, float(out.grad) / n))

    _maybe_record("mean_all", out, (a,), bwd)
    return out


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
    out = Tensor(a.data.reshape(shape).copy())

    def bwd():
        _accum(a, out.grad.reshape(a.shape))

    _maybe_record("reshape", out, (a,), bwd)
    return out


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: need a 2-d tensor, got {a.shape}")
    out = Tensor(np.ascontiguousarray(a.data.T))

    def bwd():
        _accum(a, out.grad.T)

    _maybe_record("transpose", out, (a,), bwd)
    return out


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 3 or b.data.ndim != 3 or a.shape[1:] != b.shape[1:]:
        raise ShapeError(f"concat_channels: shapes {a.shape} and {b.shape} do not align")
    ca = a.shape[0]
    out = Tensor(np.concatenate([a.data, b.data], axis=0))

    def bwd():
        g = out.grad
        _accum(a, g[:ca])
        _accum(b, g[ca:])

    _maybe_record("concat_channels", out, (a, b), bwd)
    return out


def upsample2(a: Tensor) -> Tensor:
    """Nearest-neighbor x2 upsample of a [C, H, W] map."""
    if a.data.ndim != 3:
        raise ShapeError(f"upsample2: need [C, H, W], got {a.shape}")
    out = Tensor(a.data.repeat(2, axis=1).repeat(2, axis=2))

    def bwd():
        c, h, w = a.shape
        _accum(a, out.grad.reshape(c, h, 2, w, 2).sum(axis=(2, 4)))

    _maybe_record("upsample2", out, (a,), bwd)
    return out


# ---------------------------------------------------------------------------
# masked blending (masks are constant, non-differentiable site selectors)


def blend(fg: Tensor, bg: Tensor, mask) -> Tensor:
    """Select fg where mask=1 and bg where mask=0, exactly (no arithmetic mixing)."""
    if fg.shape != bg.shape or fg.data.ndim != 3:
        raise ShapeError(f"blend: shapes {fg.shape} and {bg.shape} must be equal [C, H, W]")
    m = as_site_mask(mask, fg.shape[1], fg.shape[2])
    sel = m.astype(bool)[None]
    out = Tensor(np.where(sel, fg.data, bg.data))

    def bwd():
        g = out.grad
        _accum(fg, g * m[None])
        _accum(bg, g * (1.0 - m)[None])

    _maybe_record("blend", out, (fg, bg), bwd)
    return out


def mask_sites(a: Tensor, mask) -> Tensor:
    """Zero a [C, H, W] map outside the mask; mask is a constant."""
    if a.data.ndim != 3:
        raise ShapeError(f"mask_sites: need [C, H, W], got {a.shape}")
    m = as_site_mask(mask, a.shape[1], a.shape[2])
    out = Tensor(a.data * m[None])

    def bwd():
        _accum(a, out.grad * m[None])

    _maybe_record("mask_sites", out, (a,), bwd)
    return out


# ---------------------------------------------------------------------------
# channel-wise affine maps


def channel_affine(x: Tensor, scale_c: Tensor, shift_c: Tensor) -> Tensor:
    """out[c] = x[c] * scale_c[c] + shift_c[c] over a [C, H, W] map."""
    if x.data.ndim != 3:
        raise ShapeError(f"channel_affine: need [C, H, W], got {x.shape}")
    c = x.shape[0]
    if scale_c.shape != (c,) or shift_c.shape != (c,):
        raise ShapeError(
            f"channel_affine: per-channel vectors must have shape ({c},), "
            f"got {scale_c.shape} and {shift_c.shape}"
        )
    out = Tensor(x.data * scale_c.data[:, None, None] + shift_c.data[:, None, None])

    def bwd():
        g = out.grad
        _accum(x, g * scale_c.data[:, None, None])
        _accum(scale_c, (g * x.data).sum(axis=(1, 2)))
        _accum(shift_c, g.sum(axis=(1, 2)))

    _maybe_record("channel_affine", out, (x, scale_c, shift_c), bwd)
    return out


def normalize_channels(x: Tensor, mean_c: Tensor, std_c: Tensor) -> Tensor:
    """out[c] = (x[c] - mean_c[c]) / std_c[c] over a [C, H, W] map."""
    if x.data.ndim != 3:
        raise ShapeError(f"normalize_channels: need [C, H, W], got {x.shape}")
    c = x.shape[0]
    if mean_c.shape != (c,) or std_c.shape != (c,):
        raise ShapeError(
            f"normalize_channels: per-channel vectors must have shape ({c},), "
            f"got {mean_c.shape} and {std_c.shape}"
        )
    centered = x.data - mean_c.data[:, None, None]
    out = Tensor(centered / std_c.data[:, None, None])

    def bwd():
        g = out.grad
        inv = 1.0 / std_c.data
        _accum(x, g * inv[:, None, None])
        _accum(mean_c, -g.sum(axis=(1, 2)) * inv)
        _accum(std_c, -(g * out.data).sum(axis=(1, 2)) * inv)

    _maybe_record("normalize_channels", out, (x, mean_c, std_c), bwd)
    return out


# ---------------------------------------------------------------------------
# contractions


def _mm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # k-ordered rank-1 accumulation: each out[i, j] sees the products
    # a[i, k] * b[k, j] in increasing k with one rounding per multiply and
    # one per add, bit-identical to the naive triple loop.
    m, k = a.shape
    _, n = b.shape
    out = np.zeros((m, n), dtype=np.float64)
    for i in range(k):
        out += a[:, i : i + 1] * b[i : i + 1, :]
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    out = Tensor(_mm(a.data, b.data))

    def bwd():
        g = out.grad
        _accum(a, _mm(g, b.data.T))
        _accum(b, _mm(a.data.T, g))

    _maybe_record("matmul", out, (a, b), bwd)
    return out


def conv1x1(x: Tensor, w: Tensor, bias: Tensor) -> Tensor:
    """Per-pixel linear map of a [C_in, H, W] map: out[:, h, w] = w @ x[:, h, w] + bias."""
    if x.data.ndim != 3 or w.data.ndim != 2:
        raise ShapeError(f"conv1x1: need x [C_in, H, W] and w [C_out, C_in], got {x.shape}, {w.shape}")
    c_in, h, wd = x.shape
    c_out = w.shape[0]
    if w.shape[1] != c_in:
        raise ShapeError(f"conv1x1: weight expects {w.shape[1]} input channels, map has {c_in}")
    if bias.shape != (c_out,):
        raise ShapeError(f"conv1x1: bias shape {bias.shape}, expected ({c_out},)")
    flat = x.data.reshape(c_in, h * wd)
    out = Tensor((w.data @ flat + bias.data[:, None]).reshape(c_out, h, wd))

    def bwd():
        g = out.grad.reshape(c_out, h * wd)
        _accum(x, (w.data.T @ g).reshape(c_in, h, wd))
        _accum(w, g @ flat.T)
        _accum(bias, g.sum(axis=1))

    _maybe_record("conv1x1", out, (x, w, bias), bwd)
    return out


_OFFSETS_3X3 = [(ky, kx) for ky in range(3) for kx in range(3)]


def _im2col3(x: np.ndarray, stride: int) -> tuple[np.ndarray, int, int]:
    c, h, w = x.shape
    ho = -(-h // stride)
    wo = -(-w // stride)
    xp = np.zeros((c, h + 2, w + 2), dtype=np.float64)
    xp[:, 1 : h + 1, 1 : w + 1] = x
    cols = np.empty((c, 9, ho, wo), dtype=np.float64)
    for idx, (ky, kx) in enumerate(_OFFSETS_3X3):
        cols[:, idx] = xp[:, ky : ky + (ho - 1) * stride + 1 : stride,
                          kx : kx + (wo - 1) * stride + 1 : stride]
    return cols.reshape(c * 9, ho * wo), ho, wo


def conv3x3(x: Tensor, w: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    """3x3 cross-correlation with zero padding 1 and stride 1 or 2."""
    if stride not in (1, 2):
        raise ShapeError(f"conv3x3: stride must be 1 or 2, got {stride}")
    if x.data.ndim != 3 or w.data.ndim != 4 or w.shape[2:] != (3, 3):
        raise ShapeError(f"conv3x3: need x [C_in, H, W] and w [C_out, C_in, 3, 3], got {x.shape}, {w.shape}")
    c_in, h, wd = x.shape
    c_out = w.shape[0]
    if w.shape[1] != c_in:
        raise ShapeError(f"conv3x3: weight expects {w.shape[1]} input channels, map has {c_in}")
    if bias.shape != (c_out,):
        raise ShapeError(f"conv3x3: bias shape {bias.shape}, expected ({c_out},)")
    cols, ho, wo = _im2col3(x.data, stride)
    w2 = w.data.reshape(c_out, c_in * 9)
    out = Tensor((w2 @ cols + bias.data[:, None]).reshape(c_out, ho, wo))

    def bwd():
        g = out.grad.reshape(c_out, ho * wo)
        _accum(w, (g @ cols.T).reshape(w.shape))
        _accum(bias, g.sum(axis=1))
        if x.requires_grad:
            dcols = (w2.T @ g).reshape(c_in, 9, ho, wo)
            gxp = np.zeros((c_in, h + 2, wd + 2), dtype=np.float64)
            for idx, (ky, kx) in enumerate(_OFFSETS_3X3):
                gxp[:, ky : ky + (ho - 1) * stride + 1 : stride,
                    kx : kx + (wo - 1) * stride + 1 : stride] += dcols[:, idx]
            _accum(x, gxp[:, 1 : h + 1, 1 : wd + 1])

    _maybe_record("conv3x3", out, (x, w, bias), bwd)
    return out


# ---------------------------------------------------------------------------
# softmax and masked statistics


def softmax_rows(logits: Tensor, additive_mask=None) -> Tensor:
    """Row-wise softmax with per-row max subtraction.

    ``additive_mask`` entries must be 0 (keep) or -LARGE (suppress); suppressed
    entries come out exactly 0. A row whose every entry is suppressed raises
    ``DegenerateAttentionError``.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"softmax_rows: need [N, M] logits, got {logits.shape}")
    z = logits.data
    if additive_mask is not None:
        m = additive_mask.data if isinstance(additive_mask, Tensor) else np.asarray(additive_mask, dtype=np.float64)
        if m.shape != z.shape:
            raise ShapeError(f"softmax_rows: mask shape {m.shape} differs from logits {z.shape}")
        dead = m <= -LARGE / 2
        full = np.nonzero(dead.all(axis=1))[0]
        if full.size:
            raise DegenerateAttentionError(f"softmax_rows: row {int(full[0])} has every entry masked out")
        z = z + m
    zmax = z.max(axis=1, keepdims=True)
    e = np.exp(z - zmax)
    y = e / e.sum(axis=1, keepdims=True)
    out = Tensor(y)

    def bwd():
        g = out.grad
        _accum(logits, y * (g - (g * y).sum(axis=1, keepdims=True)))

    _maybe_record("softmax_rows", out, (logits,), bwd)
    return out


def masked_channel_stats(feat: Tensor, mask) -> tuple[Tensor, Tensor, int]:
    """Per-channel mean and biased variance of a [C, H, W] map over mask=1 sites.

    Returns ``(mean, var, count)``. When the mask selects no sites the stats are
    unspecified (zeros) and ``count`` is 0; callers must branch on the count.
    Differentiable in ``feat``; the mask is a constant.
    """
    if feat.data.ndim != 3:
        raise ShapeError(f"masked_channel_stats: need [C, H, W], got {feat.shape}")
    c, h, w = feat.shape
    m = as_site_mask(mask, h, w)
    count = int(m.sum())
    if count == 0:
        return Tensor(np.zeros(c)), Tensor(np.zeros(c)), 0
    sel = m[None]
    mean_d = (feat.data * sel).sum(axis=(1, 2)) / count
    centered = feat.data - mean_d[:, None, None]
    var_d = (centered * centered * sel).sum(axis=(1, 2)) / count
    mean_t = Tensor(mean_d)
    var_t = Tensor(var_d)

    graph = Graph._active
    if graph is not None and feat.requires_grad:
        mean_t.requires_grad = True
        var_t.requires_grad = True

        def bwd():
            gx = np.zeros_like(feat.data)
            if mean_t.grad is not None:
                gx += mean_t.grad[:, None, None] * sel / count
            if var_t.grad is not None:
                gx += var_t.grad[:, None, None] * (2.0 / count) * centered * sel
            _accum(feat, gx)

        graph.records.append(_Record("masked_channel_stats", (feat,), (mean_t, var_t), bwd))
    return mean_t, var_t, count
