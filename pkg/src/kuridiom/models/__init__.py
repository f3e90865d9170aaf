"""Transformer, RCNN and BiLSTM+attention sentence classifiers."""

from .architectures import (
    bilstm_attn_forward, forward, logits, predict, probabilities, rcnn_forward,
    transformer_forward, trim, validate_params,
)
from .config import KINDS, PRESETS, ModelConfig, preset
from .layers import attention_pool, bilstm, encoder
from .params import (
    CheckpointError, ModelParams, decay_exempt, decode_checkpoint, encode_checkpoint,
    init_params, load_params, param_shapes, save_params,
)

__all__ = [
    "KINDS", "PRESETS", "CheckpointError", "ModelConfig", "ModelParams", "attention_pool",
    "bilstm", "bilstm_attn_forward", "decay_exempt", "decode_checkpoint", "encode_checkpoint",
    "encoder", "forward", "init_params", "load_params", "logits", "param_shapes", "predict",
    "preset", "probabilities", "rcnn_forward", "save_params", "transformer_forward", "trim",
    "validate_params",
]
