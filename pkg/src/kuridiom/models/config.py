from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

KINDS = ("transformer", "rcnn", "bilstm_attn")
PRESETS = ("paper", "desk")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    ``layers``/``heads``/``hidden``/``ff_inner`` describe the transformer
    encoder, which is also the contextual encoder of ``bilstm_attn``.
    ``ff_inner`` of 0 means ``4 * hidden``.
    """

    kind: str
    vocab_size: int
    num_classes: int
    max_len: int = 128
    layers: int = 12
    heads: int = 12
    hidden: int = 768
    ff_inner: int = 0
    emb_dim: int = 128
    lstm_hidden: int = 256
    conv_width: int = 3
    conv_filters: int = 256
    dropout: float = 0.1
    freeze_encoder: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        for name in ("vocab_size", "num_classes", "max_len", "layers", "heads", "hidden",
                     "emb_dim", "lstm_hidden", "conv_width", "conv_filters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1, got {getattr(self, name)}")
        if self.ff_inner < 0:
            raise ValueError("ff_inner must be non-negative")
        if self.hidden % self.heads:
            raise ValueError(f"hidden {self.hidden} is not divisible by heads {self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.conv_width % 2 == 0:
            raise ValueError("conv_width must be odd for same padding")

    @property
    def ff_size(self):
        return self.ff_inner or 4 * self.hidden

    @property
    def head_dim(self):
        return self.hidden // self.heads

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


_PAPER = {
    "transformer": dict(layers=12, heads=12, hidden=768, dropout=0.1),
    "rcnn": dict(emb_dim=128, lstm_hidden=256, conv_width=3, conv_filters=256, dropout=0.5),
    "bilstm_attn": dict(layers=12, heads=12, hidden=768, lstm_hidden=256, dropout=0.3),
}

_DESK = {
    "transformer": dict(layers=2, heads=2, hidden=64, dropout=0.1),
    "rcnn": dict(emb_dim=32, lstm_hidden=32, conv_width=3, conv_filters=64, dropout=0.5),
    "bilstm_attn": dict(layers=2, heads=2, hidden=64, lstm_hidden=32, dropout=0.3),
}


def preset(kind: str, name: str, vocab_size: int, num_classes: int, **overrides) -> ModelConfig:
    """``paper`` dimensions or the small ``desk`` ones for CPU-scale runs."""
    kind = kind.replace("-", "_")
    table = {"paper": _PAPER, "desk": _DESK}.get(name)
    if table is None:
        raise ValueError(f"unknown preset {name!r}; expected one of {PRESETS}")
    if kind not in table:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {KINDS}")
    fields = dict(table[kind])
    fields.update(overrides)
    return ModelConfig(kind=kind, vocab_size=vocab_size, num_classes=num_classes, **fields)
