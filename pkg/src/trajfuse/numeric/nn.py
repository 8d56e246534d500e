"""Fused layer ops with hand-derived backward passes."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, _accum, _make, _sigmoid, as_tensor


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    out = x @ weight
    return out + bias if bias is not None else out


def softmax(logits: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax (max subtracted before exponentiation)."""
    x = logits.data
    if not np.all(np.isfinite(x)):
        raise ValueError("softmax: non-finite logits")
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        _accum(logits, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _make(y, (logits,), backward)


def _slice_view(joint: Tensor, sl: slice) -> Tensor:
    # cheap basic-slice view; backward writes into a zero buffer instead of add.at
    def backward(g):
        full = np.zeros(joint.shape, dtype=g.dtype)
        full[..., sl] = g
        _accum(joint, full)

    return _make(joint.data[..., sl], (joint,), backward)


def lstm_cell_step(x: Tensor, h: Tensor, c: Tensor, weight: Tensor, bias: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step for a batch.

    ``weight`` has shape (input + hidden, 4 * hidden) with gate blocks ordered
    input, forget, candidate, output; ``bias`` has shape (4 * hidden,).
    Returns ``(h_next, c_next)``.
    """
    x, h, c = as_tensor(x), as_tensor(h), as_tensor(c)
    n_in, n_hid = x.shape[-1], h.shape[-1]
    if weight.shape != (n_in + n_hid, 4 * n_hid) or bias.shape != (4 * n_hid,) or c.shape != h.shape:
        raise ValueError(
            f"lstm_cell_step shape mismatch: x{x.shape} h{h.shape} c{c.shape} "
            f"weight{weight.shape} bias{bias.shape}; expected weight ({n_in + n_hid}, {4 * n_hid})"
        )
    H = n_hid
    xh = np.concatenate([x.data, h.data], axis=-1)
    a = xh @ weight.data + bias.data
    i = _sigmoid(a[..., :H])
    f = _sigmoid(a[..., H:2 * H])
    g = np.tanh(a[..., 2 * H:3 * H])
    o = _sigmoid(a[..., 3 * H:])
    c_next = f * c.data + i * g
    tc = np.tanh(c_next)
    h_next = o * tc

    def backward(grad):
        dh = grad[..., :H]
        dc_total = grad[..., H:] + dh * o * (1 - tc * tc)
        da = np.concatenate(
            [
                dc_total * g * i * (1 - i),
                dc_total * c.data * f * (1 - f),
                dc_total * i * (1 - g * g),
                dh * tc * o * (1 - o),
            ],
            axis=-1,
        )
        if weight.requires_grad:
            _accum(weight, xh.reshape(-1, n_in + H).T @ da.reshape(-1, 4 * H))
        if bias.requires_grad:
            _accum(bias, da.reshape(-1, 4 * H).sum(axis=0))
        if x.requires_grad or h.requires_grad:
            dxh = da @ weight.data.T
            _accum(x, dxh[..., :n_in])
            _accum(h, dxh[..., n_in:])
        _accum(c, dc_total * f)

    joint = _make(np.concatenate([h_next, c_next], axis=-1), (x, h, c, weight, bias), backward)
    if not joint.requires_grad:
        return Tensor(h_next), Tensor(c_next)
    return _slice_view(joint, slice(0, H)), _slice_view(joint, slice(H, 2 * H))


def _out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation over NHWC input (a leading batch axis is optional).

    ``kernel`` is (Kh, Kw, Cin, Cout).
    """
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4:
        raise ValueError(f"conv2d expects (H,W,C) or (B,H,W,C) input, got {x.shape}")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: invalid stride={stride} padding={padding}")
    B, H, W, C = xd.shape
    kh, kw, cin, cout = kernel.shape
    if cin != C:
        raise ValueError(f"conv2d: input has {C} channels, kernel expects {cin}")
    if H + 2 * padding < kh or W + 2 * padding < kw:
        raise ValueError(f"conv2d: kernel {kh}x{kw} larger than padded input {H + 2 * padding}x{W + 2 * padding}")
    ho, wo = _out_size(H, kh, stride, padding), _out_size(W, kw, stride, padding)
    xp = np.pad(xd, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else xd
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    # win: (B, ho, wo, C, kh, kw) -> rows ordered (kh, kw, C) to match the kernel layout
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(B * ho * wo, kh * kw * C)
    kmat = kernel.data.reshape(kh * kw * C, cout)
    out = (cols @ kmat).reshape(B, ho, wo, cout)
    if bias is not None:
        out = out + bias.data
    if squeeze:
        out = out[0]

    def backward(g):
        g4 = g[None] if squeeze else g
        g2 = g4.reshape(B * ho * wo, cout)
        if kernel.requires_grad:
            _accum(kernel, (cols.T @ g2).reshape(kernel.shape))
        if bias is not None and bias.requires_grad:
            _accum(bias, g2.sum(axis=0))
        if x.requires_grad:
            dcols = (g2 @ kmat.T).reshape(B, ho, wo, kh, kw, C)
            dxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += dcols[:, :, :, i, j, :]
            dx = dxp[:, padding:padding + H, padding:padding + W, :]
            _accum(x, dx[0] if squeeze else dx)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _make(out, parents, backward)


def maxpool2d(x: Tensor, kernel: int, stride: int | None = None) -> Tensor:
    """Per-channel max over kernel x kernel windows (NHWC, optional batch axis)."""
    stride = kernel if stride is None else stride
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    B, H, W, C = xd.shape
    if H < kernel or W < kernel:
        raise ValueError(f"maxpool2d: window {kernel} exceeds input {H}x{W}")
    ho, wo = _out_size(H, kernel, stride, 0), _out_size(W, kernel, stride, 0)
    win = sliding_window_view(xd, (kernel, kernel), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    flat = win.reshape(B, ho, wo, C, kernel * kernel)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    if squeeze:
        out = out[0]

    def backward(g):
        g4 = g[None] if squeeze else g
        dx = np.zeros(xd.shape, dtype=g.dtype)
        for p in range(kernel * kernel):
            i, j = divmod(p, kernel)
            dx[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += np.where(arg == p, g4, 0)
        _accum(x, dx[0] if squeeze else dx)

    return _make(np.ascontiguousarray(out), (x,), backward)
