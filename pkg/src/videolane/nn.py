"""Small building blocks for the conv nets: init, stacks, parameter naming."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, conv2d, relu
from .errors import ShapeError


def he_conv(rng: np.random.Generator, c_out: int, c_in: int, k: int, zero: bool = False):
    """He-normal conv weights and zero bias; zero=True for zero-init layers."""
    if zero:
        w = np.zeros((c_out, c_in, k, k))
    else:
        std = np.sqrt(2.0 / (c_in * k * k))
        w = rng.normal(0.0, std, size=(c_out, c_in, k, k))
    return Tensor(w, requires_grad=True), Tensor(np.zeros(c_out), requires_grad=True)


def apply_stack(x, layers, strides=None, pads=None):
    """Conv layers with relu between them; the final layer stays linear.

    Padding defaults to 'same' for stride 1 (k//2 each side).
    """
    n = len(layers)
    strides = strides or [1] * n
    pads = pads if pads is not None else [layers[i][0].shape[2] // 2 for i in range(n)]
    for i, (w, b) in enumerate(layers):
        x = conv2d(x, w, b, strides[i], pads[i])
        if i != n - 1:
            x = relu(x)
    return x


def stack_params(prefix: str, layers) -> dict:
    out = {}
    for i, (w, b) in enumerate(layers):
        out[f"{prefix}.{i}.w"] = w
        out[f"{prefix}.{i}.b"] = b
    return out


def load_named(params: dict, data: dict):
    """Overwrite parameter tensors in place from a name -> array mapping."""
    missing = sorted(set(params) - set(data))
    extra = sorted(set(data) - set(params))
    if missing or extra:
        raise ShapeError(f"checkpoint mismatch: missing={missing}, extra={extra}")
    for name, t in params.items():
        arr = np.asarray(data[name], dtype=np.float64)
        if arr.shape != t.data.shape:
            raise ShapeError(
                f"parameter {name}: checkpoint shape {arr.shape} != model {t.data.shape}"
            )
        t.data = arr.copy()
