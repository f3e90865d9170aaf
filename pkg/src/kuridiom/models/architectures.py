"""Forward passes of the three classifiers.

Every forward takes a parameter mapping (a :class:`ModelParams` or a dict of
name -> Tensor for training), an id batch ``[batch, len]`` and its 0/1 mask,
and returns logits ``[batch, num_classes]``.
"""

from __future__ import annotations

import numpy as np

from .. import numcore as nc
from .config import ModelConfig
from .layers import attention_pool, bilstm, encoder
from .params import CheckpointError, ModelParams, check_params


def trim(ids, mask):
    """Drop trailing columns that are padding in every row."""
    ids = np.asarray(ids)
    mask = np.asarray(mask)
    if ids.shape != mask.shape or ids.ndim != 2:
        raise nc.ShapeError(f"ids {ids.shape} and mask {mask.shape} must be equal 2-D shapes")
    real = mask.astype(bool)
    if not real.any(axis=1).all():
        raise ValueError("every row needs at least one unmasked position")
    keep = int(np.flatnonzero(real.any(axis=0)).max()) + 1
    return ids[:, :keep], mask[:, :keep]


def transformer_forward(cfg, P, ids, mask, train=False, rng=None):
    states = encoder(P, cfg, ids, mask)
    pooled = states[:, 0, :]
    pooled = nc.dropout(pooled, cfg.dropout, rng, train)
    return nc.linear(pooled, P["classifier.weight"], P["classifier.bias"])


def rcnn_forward(cfg, P, ids, mask, train=False, rng=None):
    x = nc.embedding(P["embed.token"], ids)
    states = bilstm(P, "lstm.", x, mask)
    feats = nc.relu(nc.conv1d(states, P["conv.kernel"], P["conv.bias"], padding="same"))
    pooled = nc.masked_max(feats, mask, axis=-2)
    pooled = nc.dropout(pooled, cfg.dropout, rng, train)
    return nc.linear(pooled, P["classifier.weight"], P["classifier.bias"])


def bilstm_attn_forward(cfg, P, ids, mask, train=False, rng=None):
    ctx = encoder(P, cfg, ids, mask, prefix="encoder.")
    states = bilstm(P, "lstm.", ctx, mask)
    pooled = attention_pool(states, mask, P["attn_pool.weight"], P["attn_pool.vector"])
    pooled = nc.dropout(pooled, cfg.dropout, rng, train)
    return nc.linear(pooled, P["classifier.weight"], P["classifier.bias"])


_FORWARDS = {
    "transformer": transformer_forward,
    "rcnn": rcnn_forward,
    "bilstm_attn": bilstm_attn_forward,
}


def forward(params, ids, mask, train=False, rng=None, config: ModelConfig | None = None):
    """Logits for one batch. ``params`` is a ModelParams or (with ``config``) a dict.

    Trailing all-padding columns are trimmed first; this never changes the
    result because padded positions cannot reach the logits.
    """
    if isinstance(params, ModelParams):
        config = params.config
        tensors = params.tensors
    else:
        tensors = params
        if config is None:
            raise ValueError("config is required when params is a plain mapping")
    if train and config.dropout > 0 and rng is None:
        raise ValueError("train mode with dropout needs an rng")
    ids, mask = trim(ids, mask)
    if ids.shape[1] > config.max_len:
        raise nc.ShapeError(f"sequence length {ids.shape[1]} exceeds max_len {config.max_len}")
    if np.any(ids < 0) or np.any(ids >= config.vocab_size):
        raise ValueError(f"token ids must lie in [0, {config.vocab_size})")
    return _FORWARDS[config.kind](config, tensors, ids, mask, train=train, rng=rng)


def logits(params: ModelParams, ids, mask, batch_size=64) -> np.ndarray:
    """Eval-mode logits as a plain array, computed in chunks."""
    ids = np.asarray(ids)
    mask = np.asarray(mask)
    out = []
    for start in range(0, len(ids), batch_size):
        sl = slice(start, start + batch_size)
        out.append(forward(params, ids[sl], mask[sl]).data)
    if not out:
        return np.zeros((0, params.config.num_classes))
    return np.concatenate(out, axis=0)


def predict(scores) -> np.ndarray:
    """Argmax over classes; ties go to the lowest class id."""
    return np.asarray(scores).argmax(axis=-1)


def probabilities(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def validate_params(params: ModelParams) -> None:
    """Raise :class:`CheckpointError` naming the first mismatching tensor."""
    check_params(params.config, params.tensors)


__all__ = [
    "CheckpointError", "bilstm_attn_forward", "forward", "logits", "predict", "probabilities",
    "rcnn_forward", "transformer_forward", "trim", "validate_params",
]
