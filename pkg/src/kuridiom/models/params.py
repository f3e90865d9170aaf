"""Parameter layout, initialisation and the binary checkpoint format."""

from __future__ import annotations

import os
import struct
import tempfile
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ModelConfig

MAGIC = b"KIDC"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict

    def __getitem__(self, name):
        return self.tensors[name]

    def count(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))


def _encoder_shapes(cfg: ModelConfig, prefix: str) -> dict:
    h, f = cfg.hidden, cfg.ff_size
    shapes = {
        f"{prefix}embed.token": (cfg.vocab_size, h),
        f"{prefix}embed.position": (cfg.max_len, h),
        f"{prefix}embed.norm.gain": (h,),
        f"{prefix}embed.norm.bias": (h,),
    }
    for i in range(cfg.layers):
        p = f"{prefix}layer{i}."
        for proj in ("q", "k", "v", "out"):
            shapes[f"{p}attn.{proj}.weight"] = (h, h)
            shapes[f"{p}attn.{proj}.bias"] = (h,)
        shapes[f"{p}norm1.gain"] = (h,)
        shapes[f"{p}norm1.bias"] = (h,)
        shapes[f"{p}ffn.in.weight"] = (h, f)
        shapes[f"{p}ffn.in.bias"] = (f,)
        shapes[f"{p}ffn.out.weight"] = (f, h)
        shapes[f"{p}ffn.out.bias"] = (h,)
        shapes[f"{p}norm2.gain"] = (h,)
        shapes[f"{p}norm2.bias"] = (h,)
    return shapes


def _bilstm_shapes(d_in: int, hidden: int, prefix: str) -> dict:
    shapes = {}
    for direction in ("fwd", "bwd"):
        p = f"{prefix}{direction}."
        shapes[p + "w_input"] = (d_in, 4 * hidden)
        shapes[p + "w_hidden"] = (hidden, 4 * hidden)
        shapes[p + "bias"] = (4 * hidden,)
    return shapes


def param_shapes(cfg: ModelConfig) -> dict:
    """Name -> shape, in canonical (checkpoint) order."""
    c = cfg.num_classes
    if cfg.kind == "transformer":
        shapes = _encoder_shapes(cfg, "")
        shapes["classifier.weight"] = (cfg.hidden, c)
    elif cfg.kind == "rcnn":
        d = 2 * cfg.lstm_hidden
        shapes = {"embed.token": (cfg.vocab_size, cfg.emb_dim)}
        shapes.update(_bilstm_shapes(cfg.emb_dim, cfg.lstm_hidden, "lstm."))
        shapes["conv.kernel"] = (cfg.conv_width, d, cfg.conv_filters)
        shapes["conv.bias"] = (cfg.conv_filters,)
        shapes["classifier.weight"] = (cfg.conv_filters, c)
    else:
        d = 2 * cfg.lstm_hidden
        shapes = _encoder_shapes(cfg, "encoder.")
        shapes.update(_bilstm_shapes(cfg.hidden, cfg.lstm_hidden, "lstm."))
        shapes["attn_pool.weight"] = (d, d)
        shapes["attn_pool.vector"] = (d,)
        shapes["classifier.weight"] = (d, c)
    shapes["classifier.bias"] = (c,)
    return shapes


def is_embedding(name):
    return ".token" in name or ".position" in name


def decay_exempt(name: str) -> bool:
    """Embeddings, biases and normalisation gains get no weight decay."""
    return is_embedding(name) or name.endswith(".bias") or name.endswith(".gain")


def _xavier(rng, shape):
    if len(shape) == 1:
        fan_in, fan_out = shape[0], 1
    elif len(shape) == 2:
        fan_in, fan_out = shape
    else:
        fan_in, fan_out = shape[0] * shape[1], shape[0] * shape[2]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> ModelParams:
    """Xavier-uniform matrices, zero biases, N(0, 0.02) embeddings.

    LSTM forget-gate biases start at 1 and norm gains at 1.
    """
    tensors = {}
    for name, shape in param_shapes(cfg).items():
        if is_embedding(name):
            arr = rng.normal(0.0, 0.02, size=shape)
        elif name.endswith(".gain"):
            arr = np.ones(shape)
        elif name.endswith("bias"):
            arr = np.zeros(shape)
            if name.startswith("lstm."):
                hidden = shape[0] // 4
                arr[hidden:2 * hidden] = 1.0
        else:
            arr = _xavier(rng, shape)
        tensors[name] = arr.astype(dtype)
    return ModelParams(cfg, tensors)


def check_params(cfg: ModelConfig, tensors: dict) -> None:
    expected = param_shapes(cfg)
    for name in expected:
        if name not in tensors:
            raise CheckpointError(f"missing tensor {name!r} for {cfg.kind} config")
    for name in tensors:
        if name not in expected:
            raise CheckpointError(f"unknown tensor {name!r} for {cfg.kind} config")
    for name, shape in expected.items():
        got = tuple(np.shape(tensors[name]))
        if got != shape:
            raise CheckpointError(f"tensor {name!r} has shape {got}, config needs {shape}")
        if not np.isfinite(tensors[name]).all():
            raise CheckpointError(f"tensor {name!r} contains non-finite values")


# ---------------------------------------------------------------------------
# checkpoint file: "KIDC", u32 version, records..., u32 CRC-32 of the records.
# record: u32 name length, utf-8 name, u32 rank, u32 dims..., float32 values.
# all integers and floats little-endian.
# ---------------------------------------------------------------------------


def encode_checkpoint(params: ModelParams) -> bytes:
    payload = bytearray()
    for name, arr in params.tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        payload += struct.pack("<I", len(raw)) + raw
        payload += struct.pack("<I", arr.ndim)
        payload += struct.pack(f"<{arr.ndim}I", *arr.shape)
        payload += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    header = MAGIC + struct.pack("<I", FORMAT_VERSION)
    return header + bytes(payload) + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


def decode_checkpoint(blob: bytes) -> dict:
    if len(blob) < 12:
        raise CheckpointError("checkpoint truncated: shorter than header and checksum")
    if blob[:4] != MAGIC:
        raise CheckpointError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}, expected {FORMAT_VERSION}")
    payload = blob[8:-4]
    (crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CheckpointError("checksum mismatch: file truncated or corrupted")
    tensors = {}
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(payload):
            raise CheckpointError("checkpoint truncated inside a tensor record")
        chunk = payload[pos:pos + n]
        pos += n
        return chunk

    while pos < len(payload):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(dims)) if rank else 1
        values = np.frombuffer(take(4 * count), dtype="<f4").astype(np.float32)
        if name in tensors:
            raise CheckpointError(f"tensor {name!r} stored twice")
        tensors[name] = values.reshape(dims)
    return tensors


def save_params(params: ModelParams, path) -> None:
    """Write atomically, so a failed write leaves any previous file intact."""
    path = Path(path)
    blob = encode_checkpoint(params)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_params(path, config: ModelConfig) -> ModelParams:
    tensors = decode_checkpoint(Path(path).read_bytes())
    check_params(config, tensors)
    ordered = {name: tensors[name] for name in param_shapes(config)}
    return ModelParams(config, ordered)
