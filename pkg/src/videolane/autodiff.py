"""Dense float64 tensors with reverse-mode automatic differentiation.

Just the operator set the detectors need: elementwise arithmetic, conv2d,
channel softmax/concat, bilinear resize, reductions, pixel gathers and a
momentum SGD step.  Each operation records its inputs and a gradient
closure; ``backward`` replays the implicit tape in reverse topological
order.  Desk-scale sizes make float64 affordable and keep finite-difference
gradient checks tight.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

Scalar = (int, float, np.integer, np.floating)


class Tensor:
    """A ≤4-D float64 array with an optional gradient.

    requires_grad tensors collect into ``grad`` during backward; results of
    operations on them inherit the flag and a backward closure.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        if self.data.ndim > 4:
            raise ShapeError(f"tensors are at most 4-D, got {self.data.ndim}-D")
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """A view of the same data cut off from the graph."""
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- elementwise arithmetic ------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -as_tensor(other))

    def __rsub__(self, other):
        return add(as_tensor(other), -self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __pow__(self, n):
        return pow_(self, n)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _accum(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the shape it was broadcast from."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _make(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    live = tuple(p for p in parents if p.requires_grad)
    if live:
        out.requires_grad = True
        out._parents = live
        out._backward = backward_fn
    return out


def backward(loss: Tensor):
    """Populate grads of every requires_grad ancestor of a scalar loss."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    _accum(loss, np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


# -- primitive operations ------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def back(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.shape))

    return _make(data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def back(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), back)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data / b.data

    def back(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g * a.data / (b.data**2), b.shape))

    return _make(data, (a, b), back)


def pow_(a, n) -> Tensor:
    if not isinstance(n, Scalar):
        raise ShapeError("exponent must be a python scalar")
    a = as_tensor(a)
    n = float(n)
    data = a.data**n

    def back(g):
        if a.requires_grad:
            _accum(a, g * n * a.data ** (n - 1.0))

    return _make(data, (a,), back)


def exp(a) -> Tensor:
    a = as_tensor(a)
    data = np.exp(a.data)

    def back(g):
        if a.requires_grad:
            _accum(a, g * data)

    return _make(data, (a,), back)


def log(a) -> Tensor:
    a = as_tensor(a)
    data = np.log(a.data)

    def back(g):
        if a.requires_grad:
            _accum(a, g / a.data)

    return _make(data, (a,), back)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    data = np.where(mask, a.data, 0.0)

    def back(g):
        if a.requires_grad:
            _accum(a, g * mask)

    return _make(data, (a,), back)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # overflow-safe form: exp is only taken of non-positive values
    z = np.exp(-np.abs(a.data))
    data = np.where(a.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))

    def back(g):
        if a.requires_grad:
            _accum(a, g * data * (1.0 - data))

    return _make(data, (a,), back)


def maximum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data >= b.data  # ties route the gradient to a
    data = np.where(take_a, a.data, b.data)

    def back(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * take_a, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * ~take_a, b.shape))

    return _make(data, (a, b), back)


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data <= b.data
    data = np.where(take_a, a.data, b.data)

    def back(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * take_a, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * ~take_a, b.shape))

    return _make(data, (a, b), back)


def sum_(a, axis=None) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis)

    def back(g):
        if not a.requires_grad:
            return
        if axis is None:
            _accum(a, np.broadcast_to(g, a.shape).copy())
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g, axis), a.shape).copy())

    return _make(data, (a,), back)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum_(a, axis), 1.0 / n)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul expects 2-D operands")
    data = a.data @ b.data

    def back(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return _make(data, (a, b), back)


def concat_channels(*tensors) -> Tensor:
    """Stack (C, H, W) tensors along the channel dimension."""
    if not tensors:
        raise ShapeError("concat_channels needs at least one tensor")
    ts = [as_tensor(t) for t in tensors]
    spatial = ts[0].shape[1:]
    for t in ts:
        if t.ndim != 3 or t.shape[1:] != spatial:
            raise ShapeError(
                f"spatial dims differ: {[t.shape for t in ts]}"
            )
    data = np.concatenate([t.data for t in ts], axis=0)
    splits = np.cumsum([t.shape[0] for t in ts])[:-1]

    def back(g):
        for t, gpart in zip(ts, np.split(g, splits, axis=0)):
            if t.requires_grad:
                _accum(t, gpart)

    return _make(data, tuple(ts), back)


def softmax_channels(a) -> Tensor:
    """Per-pixel softmax over the channel dimension of a (C, H, W) tensor."""
    a = as_tensor(a)
    if a.ndim != 3 or a.shape[0] < 1:
        raise ShapeError(f"expected (C, H, W) with C >= 1, got {a.shape}")
    shifted = a.data - a.data.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=0, keepdims=True)

    def back(g):
        if a.requires_grad:
            dot = (g * data).sum(axis=0, keepdims=True)
            _accum(a, data * (g - dot))

    return _make(data, (a,), back)


# -- convolution ---------------------------------------------------------


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    s0, s1, s2 = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(c, kh, kw, oh, ow),
        strides=(s0, s1, s2, s1 * stride, s2 * stride),
        writeable=False,
    )
    return view.reshape(c * kh * kw, oh * ow), oh, ow


def _col2im(cols: np.ndarray, x_shape, kh, kw, stride, pad, oh, ow) -> np.ndarray:
    c, h, w = x_shape
    gx = np.zeros((c, h + 2 * pad, w + 2 * pad))
    cols = cols.reshape(c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            gx[:, i : i + stride * oh : stride, j : j + stride * ow : stride] += cols[
                :, i, j
            ]
    if pad == 0:
        return gx
    return gx[:, pad : pad + h, pad : pad + w]


def conv2d(x, weight, bias, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of a (C, H, W) input with (O, C, kh, kw) filters.

    Zero padding; output spatial size floor((in + 2·pad − k)/stride) + 1.
    Evaluated as a GEMM over an im2col view, which matches the direct
    six-loop form to float64 rounding.
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.ndim != 3 or weight.ndim != 4:
        raise ShapeError(
            f"conv2d expects (C,H,W) input and (O,C,kh,kw) weight, "
            f"got {x.shape} and {weight.shape}"
        )
    o, cin, kh, kw = weight.shape
    if x.shape[0] != cin:
        raise ShapeError(f"input has {x.shape[0]} channels, weight expects {cin}")
    if bias.shape != (o,):
        raise ShapeError(f"bias must have shape ({o},), got {bias.shape}")
    if stride < 1 or padding < 0:
        raise ShapeError("need stride >= 1 and padding >= 0")
    cols, oh, ow = _im2col(x.data, kh, kw, stride, padding)
    if oh < 1 or ow < 1:
        raise ShapeError("kernel larger than padded input")
    data = (weight.data.reshape(o, -1) @ cols + bias.data[:, None]).reshape(o, oh, ow)

    def back(g):
        gflat = g.reshape(o, -1)
        if weight.requires_grad:
            _accum(weight, (gflat @ cols.T).reshape(weight.shape))
        if bias.requires_grad:
            _accum(bias, gflat.sum(axis=1))
        if x.requires_grad:
            gcols = weight.data.reshape(o, -1).T @ gflat
            _accum(x, _col2im(gcols, x.shape, kh, kw, stride, padding, oh, ow))

    return _make(data, (x, weight, bias), back)


# -- resampling ----------------------------------------------------------


def _resize_axis_coords(n_in: int, n_out: int):
    """align-corners-false source coordinates, clamped to the valid range."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    return i0, i1, frac


def bilinear_resize(a, out_h: int, out_w: int, scale_values: bool = False) -> Tensor:
    """Bilinear resample of a (C, H, W) tensor to (C, out_h, out_w).

    With scale_values, output values are multiplied by the spatial scale
    factor, which re-expresses motion vectors in output-grid pixels; both
    axes must then share one factor.
    """
    a = as_tensor(a)
    if a.ndim != 3:
        raise ShapeError(f"expected (C, H, W), got {a.shape}")
    if out_h < 1 or out_w < 1:
        raise ShapeError("output dims must be >= 1")
    c, h, w = a.shape
    factor = 1.0
    if scale_values:
        factor = out_h / h
        if abs(out_w / w - factor) > 1e-9:
            raise ShapeError(
                "scale_values needs one shared scale factor, got "
                f"{out_h}/{h} vs {out_w}/{w}"
            )
    y0, y1, fy = _resize_axis_coords(h, out_h)
    x0, x1, fx = _resize_axis_coords(w, out_w)
    rows = a.data[:, y0, :] * (1.0 - fy)[None, :, None] + a.data[:, y1, :] * fy[None, :, None]
    data = rows[:, :, x0] * (1.0 - fx)[None, None, :] + rows[:, :, x1] * fx[None, None, :]
    if scale_values:
        data = data * factor

    def back(g):
        if not a.requires_grad:
            return
        if scale_values:
            g = g * factor
        grows = np.zeros((c, out_h, w))
        np.add.at(grows, (slice(None), slice(None), x0), g * (1.0 - fx)[None, None, :])
        np.add.at(grows, (slice(None), slice(None), x1), g * fx[None, None, :])
        ga = np.zeros((c, h, w))
        np.add.at(ga, (slice(None), y0, slice(None)), grows * (1.0 - fy)[None, :, None])
        np.add.at(ga, (slice(None), y1, slice(None)), grows * fy[None, :, None])
        _accum(a, ga)

    return _make(data, (a,), back)


def gather_pixels(a, rows, cols) -> Tensor:
    """Pick per-pixel vectors: (C, H, W) gathered at P positions -> (C, P)."""
    a = as_tensor(a)
    if a.ndim != 3:
        raise ShapeError(f"expected (C, H, W), got {a.shape}")
    rows = np.asarray(rows, dtype=int)
    cols = np.asarray(cols, dtype=int)
    if rows.shape != cols.shape or rows.ndim != 1:
        raise ShapeError("rows and cols must be equal-length 1-D index arrays")
    data = a.data[:, rows, cols]

    def back(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            np.add.at(ga, (slice(None), rows, cols), g)
            _accum(a, ga)

    return _make(data, (a,), back)


# -- optimizer -----------------------------------------------------------


def sgd_step(param: np.ndarray, grad: np.ndarray, velocity: np.ndarray, lr: float, momentum: float):
    """One classic momentum update; returns (new_param, new_velocity)."""
    if param.shape != grad.shape or param.shape != velocity.shape:
        raise ShapeError("param, grad and velocity shapes must agree")
    velocity = momentum * velocity + grad
    return param - lr * velocity, velocity


class SGD:
    """Momentum SGD over a name -> Tensor parameter dict; lr is mutable."""

    def __init__(self, params: dict, lr: float, momentum: float = 0.9):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(t.data) for k, t in params.items()}

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def step(self):
        for name, t in self.params.items():
            if t.grad is None:
                continue
            t.data, self.velocity[name] = sgd_step(
                t.data, t.grad, self.velocity[name], self.lr, self.momentum
            )
