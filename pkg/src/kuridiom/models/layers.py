"""Building blocks shared by the three classifiers.

Parameters arrive as a mapping from name to :class:`Tensor` (or array);
``prefix`` selects a sub-block, e.g. ``"encoder."``.
"""

from __future__ import annotations

import math

import numpy as np

from .. import numcore as nc


def encoder(P, cfg, ids, mask, prefix=""):
    """Token + learned position embeddings, then ``cfg.layers`` post-norm blocks.

    Returns ``[batch, len, hidden]``. Padding positions never receive
    attention weight, so real positions do not depend on them.
    """
    batch, length = ids.shape
    x = nc.embedding(P[prefix + "embed.token"], ids)
    x = x + P[prefix + "embed.position"][:length]
    x = nc.layer_norm(x, P[prefix + "embed.norm.gain"], P[prefix + "embed.norm.bias"])
    key_mask = np.asarray(mask, dtype=bool)[:, None, None, :]
    for i in range(cfg.layers):
        p = f"{prefix}layer{i}."
        x = encoder_block(P, p, x, key_mask, cfg.heads)
    return x


def _split_heads(t, heads):
    batch, length, hidden = t.shape
    return nc.transpose(nc.reshape(t, (batch, length, heads, hidden // heads)), (0, 2, 1, 3))


def encoder_block(P, p, x, key_mask, heads):
    batch, length, hidden = x.shape
    q = _split_heads(nc.linear(x, P[p + "attn.q.weight"], P[p + "attn.q.bias"]), heads)
    k = _split_heads(nc.linear(x, P[p + "attn.k.weight"], P[p + "attn.k.bias"]), heads)
    v = _split_heads(nc.linear(x, P[p + "attn.v.weight"], P[p + "attn.v.bias"]), heads)
    scores = nc.matmul(q, nc.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(hidden // heads))
    weights = nc.softmax(scores, mask=key_mask)
    ctx = nc.transpose(nc.matmul(weights, v), (0, 2, 1, 3))
    ctx = nc.reshape(ctx, (batch, length, hidden))
    attn = nc.linear(ctx, P[p + "attn.out.weight"], P[p + "attn.out.bias"])
    x = nc.layer_norm(x + attn, P[p + "norm1.gain"], P[p + "norm1.bias"])
    ff = nc.gelu(nc.linear(x, P[p + "ffn.in.weight"], P[p + "ffn.in.bias"]))
    ff = nc.linear(ff, P[p + "ffn.out.weight"], P[p + "ffn.out.bias"])
    return nc.layer_norm(x + ff, P[p + "norm2.gain"], P[p + "norm2.bias"])


def _run_direction(P, p, x, mask, steps):
    batch = x.shape[0]
    hidden = P[p + "w_hidden"].shape[0]
    zeros = np.zeros((batch, hidden), dtype=x.dtype)
    h, c = nc.Tensor(zeros), nc.Tensor(zeros)
    outputs = {}
    for t in steps:
        h_new, c_new = nc.lstm_cell(x[:, t, :], h, c, P[p + "w_input"], P[p + "w_hidden"], P[p + "bias"])
        keep = mask[:, t:t + 1]
        # padded steps carry the previous state through unchanged
        h = nc.where(keep, h_new, h)
        c = nc.where(keep, c_new, c)
        outputs[t] = h
    return [outputs[t] for t in sorted(outputs)]


def bilstm(P, prefix, x, mask):
    """Bidirectional LSTM over ``[batch, len, d]``; returns ``[batch, len, 2*hidden]``.

    The backward direction starts at each sequence's last real token.
    Outputs at padding positions are zero.
    """
    mask = np.asarray(mask, dtype=bool)
    length = x.shape[1]
    fwd = _run_direction(P, prefix + "fwd.", x, mask, range(length))
    bwd = _run_direction(P, prefix + "bwd.", x, mask, range(length - 1, -1, -1))
    out = nc.concat([nc.stack(fwd, axis=1), nc.stack(bwd, axis=1)], axis=-1)
    return out * mask[:, :, None].astype(x.dtype)


def attention_pool(states, mask, weight, vector):
    """Additive attention pooling over the length axis.

    ``score_t = v . tanh(W^T s_t)``; weights are a softmax over unmasked
    positions and the output is the weighted sum of states.
    """
    states = nc.as_tensor(states)
    vector = nc.as_tensor(vector)
    d = states.shape[-1]
    hidden = nc.tanh(nc.matmul(states, weight))
    scores = nc.matmul(hidden, nc.reshape(vector, (vector.shape[0], 1)))
    scores = nc.reshape(scores, states.shape[:-1])
    weights = nc.softmax(scores, mask=np.asarray(mask, dtype=bool))
    pooled = nc.sum(states * nc.reshape(weights, weights.shape + (1,)), axis=-2)
    assert pooled.shape[-1] == d
    return pooled
