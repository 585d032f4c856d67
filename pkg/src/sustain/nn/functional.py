"""Convolution, padding and pooling on ``Tensor`` objects."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import GeometryError, ShapeError
from .tensor import Tensor, as_tensor


def conv_output_length(frames, kernel, stride=1, padding=0):
    return (frames + 2 * padding - kernel) // stride + 1


def pad1d(x: Tensor, padding: int, mode: str = "zeros") -> Tensor:
    """Pad the last (frame) axis on both sides.

    ``mode='edge'`` repeats the border frames, which keeps a constant
    input constant after a convolution.
    """
    if padding == 0:
        return x
    widths = [(0, 0)] * (x.ndim - 1) + [(padding, padding)]
    if mode == "zeros":
        data = np.pad(x.data, widths)
    elif mode == "edge":
        data = np.pad(x.data, widths, mode="edge")
    else:
        raise ValueError(f"unknown padding mode {mode!r}")
    out = None

    def backward():
        g = out.grad
        inner = g[..., padding:-padding].copy()
        if mode == "edge":
            inner[..., :1] += g[..., :padding].sum(axis=-1, keepdims=True)
            inner[..., -1:] += g[..., -padding:].sum(axis=-1, keepdims=True)
        x._accum(inner)

    out = x._make(data, (x,), backward)
    return out


def conv1d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0, padding_mode: str = "zeros") -> Tensor:
    """1-D cross-correlation.

    x: (batch, in_channels, frames); kernel: (out_channels, in_channels, width).
    Returns (batch, out_channels, out_frames).
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 3 or kernel.ndim != 3:
        raise ShapeError(f"conv1d expects 3-d input and kernel, got {x.shape} and {kernel.shape}")
    batch, cin, frames = x.shape
    cout, kin, width = kernel.shape
    if kin != cin:
        raise ShapeError(f"conv1d: input has {cin} channels but kernel expects {kin} ({x.shape} vs {kernel.shape})")
    if frames + 2 * padding < width:
        raise GeometryError(
            f"conv1d: kernel width {width} exceeds padded input length {frames + 2 * padding}")
    xp = pad1d(x, padding, padding_mode)
    n_out = conv_output_length(frames, width, stride, padding)

    # (batch, cin, n_out, width) -> (batch, n_out, cin * width)
    win = sliding_window_view(xp.data, width, axis=2)[:, :, ::stride][:, :, :n_out]
    cols = win.transpose(0, 2, 1, 3).reshape(batch, n_out, cin * width)
    kmat = kernel.data.reshape(cout, cin * width)
    y = cols @ kmat.T
    if bias is not None:
        y = y + bias.data
    parents = (xp, kernel) if bias is None else (xp, kernel, bias)
    out = None

    def backward():
        g = out.grad.transpose(0, 2, 1)  # (batch, n_out, cout)
        if kernel.requires_grad:
            kernel._accum((g.reshape(-1, cout).T @ cols.reshape(-1, cin * width)).reshape(kernel.shape))
        if bias is not None and bias.requires_grad:
            bias._accum(g.sum(axis=(0, 1)))
        if xp.requires_grad:
            dcols = (g @ kmat).reshape(batch, n_out, cin, width)
            dx = np.zeros_like(xp.data)
            stop = stride * (n_out - 1) + 1
            for j in range(width):
                dx[:, :, j:j + stop:stride] += dcols[..., j].transpose(0, 2, 1)
            xp._accum(dx)

    out = xp._make(y.transpose(0, 2, 1), parents, backward)
    return out


def pool1d(x: Tensor, size: int, mode: str = "max") -> Tensor:
    """Non-overlapping pooling over the frame axis; trailing frames that do
    not fill a window are dropped."""
    if size == 1:
        return x
    frames = x.shape[-1]
    n_out = frames // size
    if n_out < 1:
        raise GeometryError(f"pool size {size} exceeds input length {frames}")
    windows = x[..., : n_out * size].reshape(*x.shape[:-1], n_out, size)
    if mode == "max":
        return windows.max(axis=-1)
    if mode == "avg":
        return windows.mean(axis=-1)
    raise ValueError(f"unknown pooling mode {mode!r}")
