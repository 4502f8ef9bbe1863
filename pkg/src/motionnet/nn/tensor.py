"""Reverse-mode automatic differentiation on float64 numpy arrays.

Implements only what the BEV motion network needs: elementwise arithmetic,
reductions, reshapes, 2D convolution, pseudo-1D temporal convolution,
temporal max pooling, nearest-neighbor upsampling, batch normalization,
ReLU and channel concatenation. Every operation builds a node in a dynamic
graph; ``backward`` runs a single reverse sweep over the topological order
and accumulates gradients on tensors that require them.

All data is float64. Gradients are validated against central finite
differences in the test suite (see ``gradcheck``).
"""
from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "Parameter",
    "no_grad",
    "grad_enabled",
    "custom_op",
    "backward",
    "add",
    "sub",
    "mul",
    "scale",
    "tsum",
    "tmean",
    "reshape",
    "cumsum",
    "relu",
    "concat_channels",
    "conv2d",
    "linear_lift",
    "conv_temporal",
    "temporal_max_pool",
    "upsample2x",
    "batch_norm2d",
]


class ShapeError(ValueError):
    """An operation rejected its operands' shapes."""


_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager that disables graph construction."""

    def __enter__(self):
        self._prev = grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


class Tensor:
    """A float64 array plus the bookkeeping for reverse-mode autodiff.

    ``grad`` is populated by ``backward`` for every reachable tensor with
    ``requires_grad=True``; repeated backward calls accumulate.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._vjp: Optional[Callable] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other, self.shape))

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.shape))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def sum(self) -> "Tensor":
        return tsum(self)

    def mean(self) -> "Tensor":
        return tmean(self)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)


class Parameter:
    """A named leaf tensor that always requires gradients."""

    __slots__ = ("name", "tensor")

    def __init__(self, name: str, data):
        self.name = str(name)
        self.tensor = Tensor(np.array(data, dtype=np.float64), requires_grad=True)

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @data.setter
    def data(self, value) -> None:
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self.tensor.data.shape:
            raise ShapeError(
                f"parameter {self.name}: assigned shape {value.shape} != {self.tensor.data.shape}"
            )
        self.tensor.data = value

    @property
    def grad(self) -> Optional[np.ndarray]:
        return self.tensor.grad

    def zero_grad(self) -> None:
        self.tensor.zero_grad()

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.tensor.shape})"


def _as_tensor(x, like_shape) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape == ():
        arr = np.broadcast_to(arr, like_shape).copy()
    return Tensor(arr)


def custom_op(value: np.ndarray, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Build a graph node with an externally supplied vector-Jacobian product.

    ``vjp(g)`` must return one cotangent per parent (``None`` for parents
    that do not require gradients). Used by the loss functions, whose
    backward passes are written analytically.
    """
    out = Tensor(value)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def backward(loss: Tensor) -> None:
    """Reverse sweep from a scalar; accumulates into ``.grad`` of reachable
    tensors with ``requires_grad=True``."""
    if loss.shape != ():
        raise ShapeError(f"backward needs a scalar, got shape {loss.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones(())}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g
        if node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not (parent.requires_grad or parent._vjp is not None):
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------------------
# elementwise and structural ops


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return custom_op(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return custom_op(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return custom_op(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return custom_op(a.data * s, (a,), lambda g: (g * s,))


def tsum(a: Tensor) -> Tensor:
    shape = a.shape
    return custom_op(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def tmean(a: Tensor) -> Tensor:
    n = a.size
    if n == 0:
        raise ShapeError("mean of empty tensor")
    return scale(tsum(a), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
    old = a.shape
    return custom_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def cumsum(a: Tensor, axis: int) -> Tensor:
    axis = int(axis)
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"cumsum: axis {axis} out of range for ndim {a.ndim}")

    def vjp(g):
        rev = np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis)
        return (np.ascontiguousarray(rev),)

    return custom_op(np.cumsum(a.data, axis=axis), (a,), vjp)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0
    return custom_op(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def concat_channels(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    if len(parts) == 0:
        raise ShapeError("concat_channels: no inputs")
    nd = parts[0].ndim
    for i, p in enumerate(parts[1:], start=1):
        if p.ndim != nd:
            raise ShapeError(f"concat_channels: input {i} has ndim {p.ndim} != {nd}")
        for d in range(nd):
            if d != axis % nd and p.shape[d] != parts[0].shape[d]:
                raise ShapeError(
                    f"concat_channels: input {i} dim {d} is {p.shape[d]} != {parts[0].shape[d]}"
                )
    ax = axis % nd
    sizes = [p.shape[ax] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        sl = [slice(None)] * nd
        outs = []
        for i in range(len(parts)):
            sl[ax] = slice(int(offsets[i]), int(offsets[i + 1]))
            outs.append(np.ascontiguousarray(g[tuple(sl)]))
        return tuple(outs)

    return custom_op(np.concatenate([p.data for p in parts], axis=ax), tuple(parts), vjp)


# ---------------------------------------------------------------------------
# 2D convolution via im2col + BLAS matmul

# Transient im2col buffers are capped; bigger batches are processed in chunks.
_COL_BUDGET_BYTES = 192 * 1024 * 1024


def _conv_out_size(n: int, k: int, stride: int, pad: int, what: str) -> int:
    # standard floor semantics; trailing rows the strided window never
    # reaches are dropped, exactly as in the usual framework definition
    span = n + 2 * pad - k
    if span < 0:
        raise ShapeError(f"conv2d: {what} {n} too small for kernel {k} with padding {pad}")
    return span // stride + 1


def _im2col(x: np.ndarray, k: int, stride: int, pad: int, ho: int, wo: int) -> np.ndarray:
    b, c, _, _ = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((b, c, k, k, ho, wo), dtype=np.float64)
    for ki in range(k):
        for kj in range(k):
            cols[:, :, ki, kj] = x[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride]
    return cols.reshape(b, c * k * k, ho * wo)


def _col2im(dcols: np.ndarray, xshape: tuple, k: int, stride: int, pad: int, ho: int, wo: int) -> np.ndarray:
    b, c, h, w = xshape
    buf = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    dcols = dcols.reshape(b, c, k, k, ho, wo)
    for ki in range(k):
        for kj in range(k):
            buf[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride] += dcols[:, :, ki, kj]
    if pad:
        return buf[:, :, pad : pad + h, pad : pad + w].copy()
    return buf


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2D convolution, NCHW layout, square odd kernel, symmetric zero padding."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d: input must be 4D NCHW, got ndim {x.ndim}")
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d: weight must be (out, in, k, k), got {w.shape}")
    k = w.shape[2]
    if k % 2 != 1:
        raise ShapeError(f"conv2d: kernel size {k} must be odd")
    if w.shape[1] != x.shape[1]:
        raise ShapeError(f"conv2d: input channels {x.shape[1]} != weight in-channels {w.shape[1]}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"conv2d: bias shape {b.shape} != ({w.shape[0]},)")
    stride = int(stride)
    padding = int(padding)
    bs, c, h, wdim = x.shape
    co = w.shape[0]
    ho = _conv_out_size(h, k, stride, padding, "height")
    wo = _conv_out_size(wdim, k, stride, padding, "width")

    feat = c * k * k
    npix = ho * wo
    chunk = max(1, _COL_BUDGET_BYTES // max(1, feat * npix * 8))

    wmat = w.data.reshape(co, feat)
    out = np.empty((bs, co, ho, wo), dtype=np.float64)
    for s in range(0, bs, chunk):
        cols = _im2col(x.data[s : s + chunk], k, stride, padding, ho, wo)
        out[s : s + chunk] = (wmat @ cols).reshape(-1, co, ho, wo)
    out += b.data[:, None, None]

    xd = x.data
    xshape = x.shape

    def vjp(g):
        gm = g.reshape(bs, co, npix)
        need_x = x.requires_grad or x._vjp is not None
        dw = np.zeros((co, feat), dtype=np.float64) if (w.requires_grad or w._vjp is not None) else None
        dx = np.empty(xshape, dtype=np.float64) if need_x else None
        for s in range(0, bs, chunk):
            gc = gm[s : s + chunk]
            if dw is not None:
                cols = _im2col(xd[s : s + chunk], k, stride, padding, ho, wo)
                dw += np.tensordot(gc, cols, axes=([0, 2], [0, 2]))
            if dx is not None:
                dcols = np.matmul(wmat.T, gc)
                dx[s : s + chunk] = _col2im(dcols, (gc.shape[0],) + xshape[1:], k, stride, padding, ho, wo)
        db = g.sum(axis=(0, 2, 3))
        return (dx, dw.reshape(w.shape) if dw is not None else None, db)

    return custom_op(out, (x, w, b), vjp)


def linear_lift(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """1x1 channel projection on NCHW input (a pointwise convolution)."""
    if x.ndim != 4:
        raise ShapeError(f"linear_lift: input must be 4D NCHW, got ndim {x.ndim}")
    if w.ndim != 2:
        raise ShapeError(f"linear_lift: weight must be (out, in), got {w.shape}")
    if w.shape[1] != x.shape[1]:
        raise ShapeError(f"linear_lift: input channels {x.shape[1]} != weight in-channels {w.shape[1]}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"linear_lift: bias shape {b.shape} != ({w.shape[0]},)")
    out = np.tensordot(w.data, x.data, axes=([1], [1])).transpose(1, 0, 2, 3)
    out = out + b.data[:, None, None]

    def vjp(g):
        dx = np.tensordot(w.data.T, g, axes=([1], [1])).transpose(1, 0, 2, 3)
        dw = np.tensordot(g, x.data, axes=([0, 2, 3], [0, 2, 3]))
        db = g.sum(axis=(0, 2, 3))
        return (np.ascontiguousarray(dx), dw, db)

    return custom_op(np.ascontiguousarray(out), (x, w, b), vjp)


# ---------------------------------------------------------------------------
# temporal ops on (B, T, C, H, W) stacks


def conv_temporal(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Pseudo-1D convolution along the frame axis: kernel (out, in, kt) acts as
    kt x 1 x 1 in space-time, no padding, so T shrinks to T - kt + 1."""
    if x.ndim != 5:
        raise ShapeError(f"conv_temporal: input must be 5D (B,T,C,H,W), got ndim {x.ndim}")
    if w.ndim != 3:
        raise ShapeError(f"conv_temporal: weight must be (out, in, kt), got {w.shape}")
    bs, t, c, h, wdim = x.shape
    co, ci, kt = w.shape
    if ci != c:
        raise ShapeError(f"conv_temporal: input channels {c} != weight in-channels {ci}")
    if b.shape != (co,):
        raise ShapeError(f"conv_temporal: bias shape {b.shape} != ({co},)")
    if kt > t:
        raise ShapeError(f"conv_temporal: temporal length {t} < kernel {kt}")
    to = t - kt + 1

    out = np.zeros((bs, to, co, h, wdim), dtype=np.float64)
    for j in range(kt):
        xs = x.data[:, j : j + to]
        term = np.tensordot(xs, w.data[:, :, j], axes=([2], [1]))  # (B,To,H,W,Co)
        out += np.moveaxis(term, 4, 2)
    out += b.data[:, None, None]

    def vjp(g):
        dx = np.zeros(x.shape, dtype=np.float64)
        dw = np.zeros(w.shape, dtype=np.float64)
        for j in range(kt):
            term = np.tensordot(g, w.data[:, :, j], axes=([2], [0]))  # (B,To,H,W,C)
            dx[:, j : j + to] += np.moveaxis(term, 4, 2)
            xs = x.data[:, j : j + to]
            dw[:, :, j] = np.tensordot(g, xs, axes=([0, 1, 3, 4], [0, 1, 3, 4]))
        db = g.sum(axis=(0, 1, 3, 4))
        return (dx, dw, db)

    return custom_op(out, (x, w, b), vjp)


def temporal_max_pool(x: Tensor) -> Tensor:
    """Global max over the frame axis of a (B,T,C,H,W) stack; keeps T=1.

    Ties route the gradient to the earliest frame (argmax convention).
    """
    if x.ndim != 5:
        raise ShapeError(f"temporal_max_pool: input must be 5D (B,T,C,H,W), got ndim {x.ndim}")
    idx = np.argmax(x.data, axis=1)[:, None]
    out = np.take_along_axis(x.data, idx, axis=1)
    shape = x.shape

    def vjp(g):
        dx = np.zeros(shape, dtype=np.float64)
        np.put_along_axis(dx, idx, g, axis=1)
        return (dx,)

    return custom_op(out, (x,), vjp)


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbor 2x spatial upsampling of an NCHW map."""
    if x.ndim != 4:
        raise ShapeError(f"upsample2x: input must be 4D NCHW, got ndim {x.ndim}")
    bs, c, h, w = x.shape
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def vjp(g):
        return (g.reshape(bs, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return custom_op(out, (x,), vjp)


def batch_norm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
    update_stats: Optional[bool] = None,
) -> Tensor:
    """Per-channel batch normalization on NCHW input.

    In training mode the batch statistics (biased variance) normalize the
    input and, unless ``update_stats`` is False, update the running buffers
    in place. In eval mode the running buffers normalize.
    """
    if x.ndim != 4:
        raise ShapeError(f"batch_norm2d: input must be 4D NCHW, got ndim {x.ndim}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm2d: gamma/beta must be ({c},), got {gamma.shape}/{beta.shape}")
    if running_mean.shape != (c,) or running_var.shape != (c,):
        raise ShapeError(f"batch_norm2d: running stats must be ({c},)")
    if update_stats is None:
        update_stats = training

    if training:
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        if update_stats:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu
            running_var *= 1.0 - momentum
            running_var += momentum * var
    else:
        mu = running_mean.copy()
        var = running_var.copy()

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[:, None, None]) * inv[:, None, None]
    out = gamma.data[:, None, None] * xhat + beta.data[:, None, None]

    def vjp(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        dxhat = g * gamma.data[:, None, None]
        if training:
            mean_dxhat = dxhat.mean(axis=(0, 2, 3))
            mean_dxhat_xhat = (dxhat * xhat).mean(axis=(0, 2, 3))
            dx = inv[:, None, None] * (
                dxhat - mean_dxhat[:, None, None] - xhat * mean_dxhat_xhat[:, None, None]
            )
        else:
            dx = dxhat * inv[:, None, None]
        return (dx, dgamma, dbeta)

    return custom_op(out, (x, gamma, beta), vjp)
