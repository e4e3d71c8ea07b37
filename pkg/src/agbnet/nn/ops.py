"""Differentiable operators. Tensors are laid out N x C x H x W."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autograd import Value, as_value, make


class ShapeError(ValueError):
    pass


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Value:
    a, b = as_value(a), as_value(b)

    def backward(g):
        a.accumulate(_unbroadcast(g, a.shape))
        b.accumulate(_unbroadcast(g, b.shape))

    return make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Value:
    a, b = as_value(a), as_value(b)

    def backward(g):
        a.accumulate(_unbroadcast(g, a.shape))
        b.accumulate(_unbroadcast(-g, b.shape))

    return make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Value:
    a, b = as_value(a), as_value(b)

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.shape))

    return make(a.data * b.data, (a, b), backward)


def relu(x) -> Value:
    x = as_value(x)
    on = x.data > 0

    def backward(g):
        x.accumulate(g * on)

    return make(np.where(on, x.data, 0).astype(x.dtype, copy=False), (x,), backward)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x) -> Value:
    x = as_value(x)
    s = _sigmoid(x.data)

    def backward(g):
        x.accumulate(g * s * (1 - s))

    return make(s, (x,), backward)


def reshape(x, shape) -> Value:
    x = as_value(x)
    old = x.shape

    def backward(g):
        x.accumulate(g.reshape(old))

    return make(x.data.reshape(shape), (x,), backward)


def concat(values, axis=1) -> Value:
    values = [as_value(v) for v in values]
    sizes = np.cumsum([v.shape[axis] for v in values])[:-1]

    def backward(g):
        for v, part in zip(values, np.split(g, sizes, axis=axis)):
            v.accumulate(part)

    return make(np.concatenate([v.data for v in values], axis=axis), tuple(values), backward)


def total(x) -> Value:
    x = as_value(x)

    def backward(g):
        x.accumulate(np.broadcast_to(g, x.shape))

    return make(x.data.sum(keepdims=False).reshape(()), (x,), backward)


def weighted_sum(x, weights) -> Value:
    """sum(x * weights) with constant weights; turns any output into a scalar."""
    x = as_value(x)
    w = np.asarray(weights, dtype=x.dtype)

    def backward(g):
        x.accumulate(g * w)

    return make(np.asarray((x.data * w).sum(), dtype=x.dtype), (x,), backward)


# ---------------------------------------------------------------------------
# convolutions


def _im2col(xp, k, stride, ho, wo):
    """Columns laid out (C*k*k) x (N*ho*wo); rows copy contiguous runs."""
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    n, c = xp.shape[:2]
    return win.transpose(1, 4, 5, 0, 2, 3).reshape(c * k * k, n * ho * wo)


def _conv_raw(xdata, wmat, k, stride, padding):
    """Correlation of N x C x H x W input with a C_out x (C*k*k) kernel matrix.

    Returns the output as C_out x N x ho x wo plus the column matrix.
    """
    n, c, h, w = xdata.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError("conv2d: kernel larger than padded input")
    xp = np.pad(xdata, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xdata
    cols = _im2col(xp, k, stride, ho, wo)
    return (wmat @ cols).reshape(-1, n, ho, wo), cols, xp.shape


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Value:
    """2-D cross-correlation. ``weight`` is C_out x C_in x k x k."""
    x, weight = as_value(x), as_value(weight)
    bias = as_value(bias) if bias is not None else None
    n, c, h, w = x.shape
    co, ci, k, k2 = weight.shape
    if ci != c or k != k2:
        raise ShapeError(f"conv2d: input has {c} channels, kernel expects {ci} (kernel {weight.shape})")
    p, s = padding, stride
    wmat = weight.data.reshape(co, -1)
    out, cols, xp_shape = _conv_raw(x.data, wmat, k, s, p)
    _, _, ho, wo = out.shape
    if bias is not None:
        out += bias.data.reshape(co, 1, 1, 1)
    out = np.ascontiguousarray(out.transpose(1, 0, 2, 3))

    def backward(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(co, -1)
        if weight.requires_grad:
            weight.accumulate((g2 @ cols.T).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias.accumulate(g2.sum(axis=1))
        if not x.requires_grad:
            return
        if s == 1 and 2 * p == k - 1:
            # size-preserving case: the input gradient is a correlation of g
            # with the spatially flipped, channel-transposed kernel
            flipped = weight.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c, -1)
            dx, *_ = _conv_raw(g, flipped, k, 1, k - 1 - p)
            x.accumulate(dx.transpose(1, 0, 2, 3))
            return
        dcols = (wmat.T @ g2).reshape(c, k, k, n, ho, wo)
        dxp = np.zeros(xp_shape, dtype=x.dtype)
        for ky in range(k):
            for kx in range(k):
                dxp[:, :, ky : ky + s * ho : s, kx : kx + s * wo : s] += dcols[:, ky, kx].transpose(1, 0, 2, 3)
        x.accumulate(dxp[:, :, p : p + h, p : p + w] if p else dxp)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make(out, parents, backward)


def up_conv2(x, weight, bias=None) -> Value:
    """Stride-2, 2x2 transposed convolution. ``weight`` is C_in x C_out x 2 x 2."""
    x, weight = as_value(x), as_value(weight)
    bias = as_value(bias) if bias is not None else None
    n, c, h, w = x.shape
    ci, co, k1, k2 = weight.shape
    if ci != c or (k1, k2) != (2, 2):
        raise ShapeError(f"up_conv2: input has {c} channels, kernel is {weight.shape}")
    xf = x.data.transpose(0, 2, 3, 1).reshape(-1, c)
    wmat = weight.data.reshape(c, co * 4)
    y = (xf @ wmat).reshape(n, h, w, co, 2, 2).transpose(0, 3, 1, 4, 2, 5).reshape(n, co, 2 * h, 2 * w)
    if bias is not None:
        y = y + bias.data.reshape(1, co, 1, 1)

    def backward(g):
        gy = g.reshape(n, co, h, 2, w, 2).transpose(0, 2, 4, 1, 3, 5).reshape(-1, co * 4)
        if weight.requires_grad:
            weight.accumulate((xf.T @ gy).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias.accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            x.accumulate((gy @ wmat.T).reshape(n, h, w, c).transpose(0, 3, 1, 2))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make(np.ascontiguousarray(y), parents, backward)


def max_pool2(x) -> Value:
    """2x2/stride-2 max pooling; ties go to the first element in row-major order."""
    x = as_value(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool2 needs even spatial size, got {h}x{w}")
    blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        g4 = np.zeros(blocks.shape, dtype=x.dtype)
        np.put_along_axis(g4, idx[..., None], g[..., None], axis=-1)
        x.accumulate(g4.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w))

    return make(out, (x,), backward)


def linear(x, weight, bias=None) -> Value:
    """y = x @ W + b with W of shape M x K; x is length M or N x M."""
    x, weight = as_value(x), as_value(weight)
    bias = as_value(bias) if bias is not None else None
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input length {x.shape[-1]} vs weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ShapeError(f"linear: bias {bias.shape} vs weight {weight.shape}")
    y = x.data @ weight.data
    if bias is not None:
        y = y + bias.data

    def backward(g):
        if weight.requires_grad:
            x2 = x.data.reshape(-1, x.shape[-1])
            weight.accumulate(x2.T @ g.reshape(-1, weight.shape[1]))
        if bias is not None and bias.requires_grad:
            bias.accumulate(g.reshape(-1, weight.shape[1]).sum(axis=0))
        if x.requires_grad:
            x.accumulate(g @ weight.data.T)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make(y, parents, backward)


# ---------------------------------------------------------------------------
# normalization


class BatchNormState:
    """Running statistics for one batch-norm layer."""

    def __init__(self, channels, dtype=np.float64, momentum=0.1, eps=1e-5):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps


def batch_norm(x, gamma, beta, state: BatchNormState, train: bool = True) -> Value:
    """Per-channel normalization over (N, H, W).

    Train mode uses batch statistics (biased variance) and updates the
    running estimates (unbiased variance); eval mode uses the running ones.
    """
    x, gamma, beta = as_value(x), as_value(gamma), as_value(beta)
    n, c, h, w = x.shape
    eps = state.eps
    if train:
        if n * h * w < 2:
            raise ShapeError("batch_norm in train mode needs at least 2 values per channel")
        m = n * h * w
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        mom = state.momentum
        state.mean = (1 - mom) * state.mean + mom * mean
        state.var = (1 - mom) * state.var + mom * var * (m / (m - 1))
    else:
        mean, var = state.mean.astype(x.dtype), state.var.astype(x.dtype)
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mean.reshape(1, c, 1, 1)) * inv.reshape(1, c, 1, 1)
    out = xhat * gamma.data.reshape(1, c, 1, 1) + beta.data.reshape(1, c, 1, 1)

    def backward(g):
        if gamma.requires_grad:
            gamma.accumulate((g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            beta.accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dxhat = g * gamma.data.reshape(1, c, 1, 1)
            if train:
                mdx = dxhat.mean(axis=(0, 2, 3), keepdims=True)
                mdxx = (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
                dx = (dxhat - mdx - xhat * mdxx) * inv.reshape(1, c, 1, 1)
            else:
                dx = dxhat * inv.reshape(1, c, 1, 1)
            x.accumulate(dx)

    return make(out, (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# attention gate and loss


def attention_gate(x, g, params, return_coefficients=False):
    """Additive attention on a skip connection.

    ``x`` (N x F_l x H x W) are encoder features, ``g`` (N x F_g x H x W)
    the gating features at the same resolution. ``params`` maps
    ``Wx, bx, Wg, bg, psi, bpsi`` to values; the three weights are 1x1
    kernels into / out of the intermediate width F_int. Returns u * x with
    u = sigmoid(psi(relu(Wx x + bx + Wg g + bg)) + bpsi) broadcast over
    channels.
    """
    x, g = as_value(x), as_value(g)
    if x.shape[0] != g.shape[0] or x.shape[2:] != g.shape[2:]:
        raise ShapeError(f"attention_gate: x {x.shape} and g {g.shape} are not aligned")
    q = add(conv2d(x, params["Wx"], params["bx"]), conv2d(g, params["Wg"], params["bg"]))
    u = sigmoid(conv2d(relu(q), params["psi"], params["bpsi"]))
    out = mul(u, x)
    return (out, u) if return_coefficients else out


def masked_mse_l2_loss(pred, label, mask=None, weights=(), lam: float = 0.0) -> Value:
    """Mean squared error over labelled pixels plus lam * sum ||W||^2.

    ``mask`` defaults to ``label >= 0``. Unlabelled pixels contribute an
    exact zero to both the value and the gradient.
    """
    pred = as_value(pred)
    label = np.asarray(label)
    if mask is None:
        mask = label >= 0
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), pred.shape)
    label = np.broadcast_to(label, pred.shape)
    count = int(mask.sum())
    if count == 0:
        raise ValueError("masked loss: no labelled pixels in the batch")
    diff = np.where(mask, pred.data - np.where(mask, label, 0), 0).astype(pred.dtype)
    loss = (diff * diff).sum() / count
    weights = [as_value(w) for w in weights]
    if lam:
        loss = loss + lam * sum(float((w.data * w.data).sum()) for w in weights)

    def backward(gr):
        pred.accumulate(gr * 2.0 * diff / count)
        if lam:
            for w in weights:
                w.accumulate(gr * 2.0 * lam * w.data)

    return make(np.asarray(loss, dtype=pred.dtype), (pred, *weights), backward)
