"""Differentiable kernels.

Every function takes :class:`Tensor` (or array-like) inputs and returns a
Tensor. When no input needs a gradient the result is a plain constant and no
graph is recorded.
"""

from __future__ import annotations

import builtins
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, as_tensor

_GELU_C = math.sqrt(2.0 / math.pi)


def _make(data, parents, backward_fn, op):
    parents = tuple(parents)
    if builtins.any(p.requires_grad or p.parents for p in parents):
        return Tensor(data, parents=parents, backward_fn=backward_fn, op=op)
    return Tensor(data, op=op)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _operand(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b):
    a = as_tensor(a)
    b = _operand(b, a)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), backward, "add")


def sub(a, b):
    if not isinstance(a, Tensor):
        b = as_tensor(b)
        a = _operand(a, b)
    a = as_tensor(a)
    b = _operand(b, a)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(out, (a, b), backward, "sub")


def mul(a, b):
    a = as_tensor(a)
    b = _operand(b, a)
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, (a, b), backward, "mul")


def where(cond, a, b):
    """Select ``a`` where ``cond`` holds, else ``b``. ``cond`` is a constant."""
    a = as_tensor(a)
    b = _operand(b, a)
    cond = np.asarray(cond, dtype=bool)
    out = np.where(cond, a.data, b.data)

    def backward(g):
        zero = np.zeros((), dtype=g.dtype)
        return (_unbroadcast(np.where(cond, g, zero), a.shape),
                _unbroadcast(np.where(cond, zero, g), b.shape))

    return _make(out, (a, b), backward, "where")


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - y * y),)

    return _make(y, (x,), backward, "tanh")


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def sigmoid(x):
    x = as_tensor(x)
    y = _sigmoid(x.data)

    def backward(g):
        return (g * y * (1.0 - y),)

    return _make(y, (x,), backward, "sigmoid")


def relu(x):
    x = as_tensor(x)
    pos = x.data > 0
    y = np.where(pos, x.data, np.zeros((), dtype=x.dtype))

    def backward(g):
        return (np.where(pos, g, np.zeros((), dtype=g.dtype)),)

    return _make(y, (x,), backward, "relu")


def gelu(x):
    """GELU, tanh approximation."""
    x = as_tensor(x)
    xd = x.data
    inner = _GELU_C * (xd + 0.044715 * xd ** 3)
    t = np.tanh(inner)
    y = 0.5 * xd * (1.0 + t)

    def backward(g):
        d = 0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * xd * xd)
        return (g * d,)

    return _make(y, (x,), backward, "gelu")


# ---------------------------------------------------------------------------
# reductions and shape manipulation
# ---------------------------------------------------------------------------


def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(out, (x,), backward, "sum")


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(x, shape):
    x = as_tensor(x)
    out = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(x.shape),)

    return _make(out, (x,), backward, "reshape")


def transpose(x, axes=None):
    x = as_tensor(x)
    out = np.transpose(x.data, axes)
    inv = None if axes is None else np.argsort(axes)

    def backward(g):
        return (np.transpose(g, inv),)

    return _make(out, (x,), backward, "transpose")


def _is_basic_index(idx):
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(p is None or p is Ellipsis or isinstance(p, (int, np.integer, slice)) for p in parts)


def index(x, idx):
    x = as_tensor(x)
    out = x.data[idx]
    basic = _is_basic_index(idx)

    def backward(g):
        gx = np.zeros_like(x.data)
        if basic:
            gx[idx] = g
        else:
            np.add.at(gx, idx, g)
        return (gx,)

    return _make(np.array(out, copy=True), (x,), backward, "index")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tensors, backward, "concat")


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make(out, tensors, backward, "stack")


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a, b):
    """Matrix product over the last two axes; leading axes broadcast."""
    a = as_tensor(a)
    b = _operand(b, a)
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    out = a.data @ b.data

    def backward(g):
        bd = b.data
        ad = a.data
        if ad.ndim == 1:
            return g @ np.swapaxes(bd, -1, -2), _unbroadcast(np.outer(ad, g), b.shape)
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), a.shape)
        if bd.ndim == 2:
            k, n = bd.shape
            gb = ad.reshape(-1, k).T @ g.reshape(-1, n)
        else:
            gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, b.shape)
        return ga, gb

    return _make(out, (a, b), backward, "matmul")


def linear(x, weight, bias=None):
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


def embedding(table, ids):
    """Rows of ``table`` selected by integer ``ids`` (any shape)."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise TypeError("embedding ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding id out of range for table of {table.shape[0]} rows")
    out = table.data[ids]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _make(out, (table,), backward, "embedding")


# ---------------------------------------------------------------------------
# normalisation, attention, losses
# ---------------------------------------------------------------------------


def _softmax_array(x, mask, axis):
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not mask.any(axis=axis).all():
            raise ValueError("softmax: a row has every position masked out")
        x = np.where(mask, x, -np.inf)
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x, mask=None, axis=-1):
    """Softmax along ``axis``. Positions where ``mask`` is 0 get probability 0."""
    x = as_tensor(x)
    y = _softmax_array(x.data, mask, axis)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), backward, "softmax")


def layer_norm(x, gain, bias, eps=1e-12):
    x = as_tensor(x)
    gain = _operand(gain, x)
    bias = _operand(bias, x)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gain.data + bias.data
    n = x.shape[-1]

    def backward(g):
        dxhat = g * gain.data
        dx = inv / n * (n * dxhat - dxhat.sum(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        return dx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape)

    return _make(out, (x, gain, bias), backward, "layer_norm")


def cross_entropy(logits, targets):
    """Mean negative log-likelihood of ``targets`` under softmax(``logits``)."""
    logits = as_tensor(logits)
    targets = np.asarray(targets)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects batch x classes logits, got {logits.shape}")
    batch, classes = logits.shape
    if targets.shape != (batch,):
        raise ShapeError(f"cross_entropy: {batch} logit rows but targets of shape {targets.shape}")
    bad = np.flatnonzero((targets < 0) | (targets >= classes))
    if bad.size:
        i = int(bad[0])
        raise IndexError(f"cross_entropy: target {int(targets[i])} at index {i} outside [0, {classes})")
    z = logits.data
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - log_norm
    rows = np.arange(batch)
    loss = -logp[rows, targets].mean()

    def backward(g):
        d = np.exp(logp)
        d[rows, targets] -= 1.0
        return (d * (g / batch),)

    return _make(np.asarray(loss, dtype=z.dtype), (logits,), backward, "cross_entropy")


# ---------------------------------------------------------------------------
# sequence kernels
# ---------------------------------------------------------------------------


def conv1d(x, kernels, bias=None, padding="same"):
    """Sliding dot product over the length axis.

    ``x`` is ``[..., len, d_in]`` and ``kernels`` ``[width, d_in, d_out]``.
    ``same`` zero-pads symmetrically (odd width) so the length is kept;
    ``valid`` yields ``len - width + 1`` positions.
    """
    x = as_tensor(x)
    kernels = _operand(kernels, x)
    if x.ndim < 2 or x.shape[-2] == 0:
        raise ShapeError(f"conv1d: empty or rank-deficient input of shape {x.shape}")
    width, d_in, _ = kernels.shape
    if x.shape[-1] != d_in:
        raise ShapeError(f"conv1d: input channels {x.shape[-1]} do not match kernels {kernels.shape}")
    length = x.shape[-2]
    if padding == "same":
        if width % 2 == 0:
            raise ValueError(f"conv1d: same padding needs an odd width, got {width}")
        pad = (width - 1) // 2
    elif padding == "valid":
        if length < width:
            raise ShapeError(f"conv1d: length {length} shorter than kernel width {width}")
        pad = 0
    else:
        raise ValueError(f"conv1d: unknown padding {padding!r}")
    pad_spec = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (0, 0)]
    xp = np.pad(x.data, pad_spec)
    windows = sliding_window_view(xp, width, axis=-2)  # [..., L', d_in, w]
    out = np.einsum("...ldw,wde->...le", windows, kernels.data)
    parents = [x, kernels]
    if bias is not None:
        bias = _operand(bias, x)
        out = out + bias.data
        parents.append(bias)
    out_len = out.shape[-2]

    def backward(g):
        flat_w = windows.reshape((-1,) + windows.shape[-3:])
        gk = np.einsum("bldw,ble->wde", flat_w, g.reshape((-1,) + g.shape[-2:]))
        gxp = np.zeros_like(xp)
        for j in range(width):
            gxp[..., j:j + out_len, :] += g @ kernels.data[j].T
        gx = gxp[..., pad:pad + length, :]
        grads = [gx, gk]
        if bias is not None:
            grads.append(_unbroadcast(g, bias.shape))
        return tuple(grads)

    return _make(out, parents, backward, "conv1d")


def masked_max(x, mask, axis=-2):
    """Maximum over ``axis`` restricted to positions where ``mask`` is 1.

    ``mask`` has the shape of ``x`` without its trailing feature axis.
    """
    x = as_tensor(x)
    m = np.expand_dims(np.asarray(mask, dtype=bool), -1)
    m = np.broadcast_to(m, x.shape)
    if not m.any(axis=axis).all():
        raise ValueError("masked_max: a row has every position masked out")
    filled = np.where(m, x.data, -np.inf)
    arg = filled.argmax(axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(arg, axis), axis=axis).squeeze(axis)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _make(out, (x,), backward, "masked_max")


def dropout(x, rate, rng, train):
    """Inverted dropout; identity unless ``train`` and ``rate > 0``."""
    x = as_tensor(x)
    if not train or rate <= 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return mul(x, keep)


def lstm_cell(x, h_prev, c_prev, w_input, w_hidden, bias):
    """One step of a gated LSTM cell; returns ``(h, c)``.

    Gates are laid out in blocks of ``hidden`` columns in the order input,
    forget, candidate, output::

        a = x W + h_prev U + b
        i, f, o = sigmoid(a_i), sigmoid(a_f), sigmoid(a_o);  g = tanh(a_g)
        c = f * c_prev + i * g
        h = o * tanh(c)

    ``x`` may be ``[d_in]`` or ``[batch, d_in]``.
    """
    x = as_tensor(x)
    h_prev, c_prev = _operand(h_prev, x), _operand(c_prev, x)
    w_input, w_hidden, bias = _operand(w_input, x), _operand(w_hidden, x), _operand(bias, x)
    hidden = w_hidden.shape[0]
    expected = {
        "w_input": (x.shape[-1], 4 * hidden),
        "w_hidden": (hidden, 4 * hidden),
        "bias": (4 * hidden,),
    }
    for label, t in (("w_input", w_input), ("w_hidden", w_hidden), ("bias", bias)):
        if t.shape != expected[label]:
            raise ShapeError(f"lstm_cell: {label} has shape {t.shape}, expected {expected[label]}")
    state_shape = x.shape[:-1] + (hidden,)
    if h_prev.shape != state_shape or c_prev.shape != state_shape:
        raise ShapeError(f"lstm_cell: states {h_prev.shape}/{c_prev.shape}, expected {state_shape}")

    x2 = x.data.reshape(-1, x.shape[-1])
    h2 = h_prev.data.reshape(-1, hidden)
    c2 = c_prev.data.reshape(-1, hidden)
    a = x2 @ w_input.data + h2 @ w_hidden.data + bias.data
    i = _sigmoid(a[:, :hidden])
    f = _sigmoid(a[:, hidden:2 * hidden])
    gc = np.tanh(a[:, 2 * hidden:3 * hidden])
    o = _sigmoid(a[:, 3 * hidden:])
    c = f * c2 + i * gc
    tc = np.tanh(c)
    h = o * tc

    def through_gates(dc, do):
        di = dc * gc
        df = dc * c2
        dg = dc * i
        da = np.concatenate([
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            dg * (1.0 - gc * gc),
            do * o * (1.0 - o),
        ], axis=1)
        return (
            (da @ w_input.data.T).reshape(x.shape),
            (da @ w_hidden.data.T).reshape(state_shape),
            (dc * f).reshape(state_shape),
            x2.T @ da,
            h2.T @ da,
            da.sum(axis=0),
        )

    def backward_c(g):
        g = g.reshape(-1, hidden)
        return through_gates(g, np.zeros_like(g))

    def backward_h(g):
        g = g.reshape(-1, hidden)
        return through_gates(g * o * (1.0 - tc * tc), g * tc)

    parents = (x, h_prev, c_prev, w_input, w_hidden, bias)
    h_out = _make(h.reshape(state_shape), parents, backward_h, "lstm_h")
    c_out = _make(c.reshape(state_shape), parents, backward_c, "lstm_c")
    return h_out, c_out
