"""Differentiable operations on :class:`Tensor`."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor, make_node


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(out):
        a.accumulate(out.grad)
        b.accumulate(out.grad)
    return make_node(a.data + b.data, (a, b), "add", back)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def back(out):
        a.accumulate(-out.grad)
    return make_node(-a.data, (a,), "neg", back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(out):
        a.accumulate(out.grad * b.data)
        b.accumulate(out.grad * a.data)
    return make_node(a.data * b.data, (a, b), "mul", back)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(out):
        g = out.grad
        if a.requires_grad:
            a.accumulate(g @ np.swapaxes(b.data, -1, -2) if b.ndim > 1 else np.outer(g, b.data))
        if b.requires_grad:
            b.accumulate(np.swapaxes(a.data, -1, -2) @ g if b.ndim > 1 else a.data.T @ g)
    return make_node(a.data @ b.data, (a, b), "matmul", back)


def total(a) -> Tensor:
    a = as_tensor(a)

    def back(out):
        a.accumulate(np.broadcast_to(out.grad, a.shape))
    return make_node(np.asarray(a.data.sum()), (a,), "sum", back)


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.size

    def back(out):
        a.accumulate(np.broadcast_to(out.grad / n, a.shape))
    return make_node(np.asarray(a.data.mean()), (a,), "mean", back)


def reshape(a: Tensor, shape) -> Tensor:
    def back(out):
        a.accumulate(out.grad.reshape(a.shape))
    return make_node(a.data.reshape(shape), (a,), "reshape", back)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def back(out):
        for t, g in zip(tensors, np.split(out.grad, cuts, axis=axis)):
            t.accumulate(g)
    return make_node(np.concatenate([t.data for t in tensors], axis=axis), tensors, "concat", back)


# activations ---------------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def back(out):
        a.accumulate(out.grad * mask)
    return make_node(a.data * mask, (a,), "relu", back)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def back(out):
        a.accumulate(out.grad * (1.0 - y * y))
    return make_node(y, (a,), "tanh", back)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)

    def back(out):
        a.accumulate(out.grad * y * (1.0 - y))
    return make_node(y, (a,), "sigmoid", back)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of integer ``labels`` under ``softmax(logits)``."""
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -log_p[np.arange(n), labels].mean()

    def back(out):
        g = np.exp(log_p)
        g[np.arange(n), labels] -= 1.0
        logits.accumulate(g * (out.grad / n))
    return make_node(np.asarray(loss), (logits,), "softmax_xent", back)


def dropout(a: Tensor, p: float, rng: np.random.Generator | None = None,
            mask: np.ndarray | None = None) -> Tensor:
    """Inverted dropout; pass ``mask`` to replay a fixed pattern."""
    if mask is None:
        if p <= 0:
            return a
        mask = (rng.random(a.shape) >= p) / (1.0 - p)

    def back(out):
        a.accumulate(out.grad * mask)
    return make_node(a.data * mask, (a,), "dropout", back)


# dense / convolution -------------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` shaped ``(out, in)``."""
    x = as_tensor(x)
    y = x.data @ weight.data.T
    if bias is not None:
        y = y + bias.data

    def back(out):
        g = out.grad
        x.accumulate(g @ weight.data)
        weight.accumulate(g.reshape(-1, g.shape[-1]).T @ x.data.reshape(-1, x.shape[-1]))
        if bias is not None:
            bias.accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0))
    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(y, parents, "linear", back)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-1 'same' cross-correlation. ``x``: (N, C, L); ``weight``: (O, C, K), K odd."""
    x = as_tensor(x)
    K = weight.shape[2]
    pad = (K - 1) // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad)))
    cols = sliding_window_view(xp, K, axis=2)  # (N, C, L, K)
    y = np.tensordot(cols, weight.data, axes=([1, 3], [1, 2])).transpose(0, 2, 1)  # (N, O, L)
    if bias is not None:
        y = y + bias.data[None, :, None]

    def back(out):
        g = out.grad  # (N, O, L)
        if weight.requires_grad:
            weight.accumulate(np.tensordot(g, cols, axes=([0, 2], [0, 2])))
        if bias is not None:
            bias.accumulate(g.sum(axis=(0, 2)))
        if x.requires_grad:
            gp = np.pad(g, ((0, 0), (0, 0), (K - 1, K - 1)))
            gcols = sliding_window_view(gp, K, axis=2)  # (N, O, L + 2pad, K)
            dxp = np.tensordot(gcols, weight.data[:, :, ::-1], axes=([1, 3], [0, 2]))
            dxp = dxp.transpose(0, 2, 1)
            x.accumulate(dxp[:, :, pad: pad + x.shape[2]])
    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(y, parents, "conv1d", back)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-1 'same' 2-D cross-correlation. ``x``: (N, C, H, W); ``weight``: (O, C, kh, kw)."""
    x = as_tensor(x)
    kh, kw = weight.shape[2:]
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # (N, C, H, W, kh, kw)
    y = np.tensordot(cols, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        y = y + bias.data[None, :, None, None]

    def back(out):
        g = out.grad  # (N, O, H, W)
        if weight.requires_grad:
            weight.accumulate(np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3])))
        if bias is not None:
            bias.accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gp = np.pad(g, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
            gcols = sliding_window_view(gp, (kh, kw), axis=(2, 3))
            flipped = weight.data[:, :, ::-1, ::-1]
            dxp = np.tensordot(gcols, flipped, axes=([1, 4, 5], [0, 2, 3])).transpose(0, 3, 1, 2)
            x.accumulate(dxp[:, :, ph: ph + x.shape[2], pw: pw + x.shape[3]])
    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(y, parents, "conv2d", back)


# pooling -------------------------------------------------------------------

def _blocks(a: np.ndarray, k: int, dims: int) -> np.ndarray:
    """View trailing ``dims`` axes as non-overlapping k-blocks (remainder cropped)."""
    if dims == 1:
        N, C, L = a.shape
        Lo = L // k
        return a[:, :, : Lo * k].reshape(N, C, Lo, k)
    N, C, H, W = a.shape
    Ho, Wo = H // k, W // k
    return a[:, :, : Ho * k, : Wo * k].reshape(N, C, Ho, k, Wo, k).transpose(0, 1, 2, 4, 3, 5) \
        .reshape(N, C, Ho, Wo, k * k)


def _unblock(g: np.ndarray, k: int, dims: int, shape) -> np.ndarray:
    out = np.zeros(shape)
    if dims == 1:
        N, C, Lo, _ = g.shape
        out[:, :, : Lo * k] = g.reshape(N, C, Lo * k)
        return out
    N, C, Ho, Wo, _ = g.shape
    g = g.reshape(N, C, Ho, Wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, Ho * k, Wo * k)
    out[:, :, : Ho * k, : Wo * k] = g
    return out


def _pool(a: Tensor, k: int, dims: int, kind: str) -> Tensor:
    blocks = _blocks(a.data, k, dims)
    if kind == "max":
        idx = blocks.argmax(axis=-1)
        y = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    else:
        y = blocks.mean(axis=-1)

    def back(out):
        if kind == "max":
            gb = np.zeros(blocks.shape)
            np.put_along_axis(gb, idx[..., None], out.grad[..., None], axis=-1)
        else:
            gb = np.repeat(out.grad[..., None] / blocks.shape[-1], blocks.shape[-1], axis=-1)
        a.accumulate(_unblock(gb, k, dims, a.shape))
    return make_node(y, (a,), f"{kind}_pool{dims}d", back)


def max_pool1d(a: Tensor, k: int = 2) -> Tensor:
    return _pool(a, k, 1, "max")


def avg_pool1d(a: Tensor, k: int = 2) -> Tensor:
    return _pool(a, k, 1, "avg")


def max_pool2d(a: Tensor, k: int = 2) -> Tensor:
    return _pool(a, k, 2, "max")


def avg_pool2d(a: Tensor, k: int = 2) -> Tensor:
    return _pool(a, k, 2, "avg")


def global_avg_pool(a: Tensor) -> Tensor:
    """Average over all axes after the channel axis: (N, C, ...) -> (N, C)."""
    axes = tuple(range(2, a.ndim))
    n = int(np.prod([a.shape[i] for i in axes]))

    def back(out):
        a.accumulate(np.broadcast_to(out.grad.reshape(out.grad.shape + (1,) * len(axes)) / n, a.shape))
    return make_node(a.data.mean(axis=axes), (a,), "global_avg_pool", back)
