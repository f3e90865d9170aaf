"""Minimal numpy tensor library with reverse-mode autodiff."""

from contextlib import contextmanager

from .ops import (
    add,
    concat,
    conv1d,
    cross_entropy,
    dropout,
    embedding,
    gelu,
    index,
    layer_norm,
    linear,
    lstm_cell,
    masked_max,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    sigmoid,
    softmax,
    stack,
    sub,
    sum,
    tanh,
    transpose,
    where,
)
from .tensor import Graph, ShapeError, Tensor, as_tensor, backward


@contextmanager
def single_thread():
    """Pin BLAS to one thread so results are bit-reproducible."""
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        yield


__all__ = [
    "Graph", "ShapeError", "Tensor", "add", "as_tensor", "backward", "concat", "conv1d",
    "cross_entropy", "dropout", "embedding", "gelu", "index", "layer_norm", "linear",
    "lstm_cell", "masked_max", "matmul", "mean", "mul", "relu", "reshape", "sigmoid",
    "single_thread", "softmax", "stack", "sub", "sum", "tanh", "transpose", "where",
]
