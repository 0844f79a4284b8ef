"""Trainable parameter registry and the attention primitive built on it."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .autograd import (
    Tensor,
    add,
    concat,
    matmul,
    mul,
    reshape,
    slice_cols,
    softmax_rows,
    transpose,
)
from .errors import ConfigError, DataError, ShapeError


class ParameterStore:
    """Named map of parameter tensors, each flagged trainable or frozen.

    Reads may happen concurrently; the single writer (the optimizer step)
    swaps a parameter's array wholesale rather than mutating it in place.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._frozen: set[str] = set()

    def add(self, name: str, data, trainable: bool = True) -> Tensor:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=trainable, name=name)
        self._params[name] = t
        if not trainable:
            self._frozen.add(name)
        return t

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._params[name]
        except KeyError:
            raise KeyError(f"unknown parameter {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def trainable_names(self) -> list[str]:
        return [n for n in self._params if n not in self._frozen]

    def is_frozen(self, name: str) -> bool:
        return name in self._frozen

    def set_data(self, name: str, data: np.ndarray) -> None:
        """Replace a trainable parameter's value (the optimizer write path)."""
        if name in self._frozen:
            raise ConfigError(f"parameter {name!r} is frozen")
        current = self[name]
        arr = np.asarray(data, dtype=np.float64)
        if arr.shape != current.shape:
            raise ShapeError(f"new value for {name!r} has shape {arr.shape}, expected {current.shape}")
        current.data = arr

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = [n for n in self._params if n not in state]
        if missing:
            raise DataError(f"checkpoint missing parameters: {missing[:5]}")
        for name, tensor in self._params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != tensor.shape:
                raise ShapeError(f"checkpoint shape {arr.shape} for {name!r}, expected {tensor.shape}")
            tensor.data = arr


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    scale = math.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, scale, size=(fan_in, fan_out))


def add_linear(params: ParameterStore, rng: np.random.Generator, prefix: str,
               fan_in: int, fan_out: int) -> None:
    params.add(f"{prefix}.weight", glorot(rng, fan_in, fan_out))
    params.add(f"{prefix}.bias", np.zeros(fan_out))


def linear(params: ParameterStore, prefix: str, x: Tensor) -> Tensor:
    return add(matmul(x, params[f"{prefix}.weight"]), params[f"{prefix}.bias"])


def add_attention_params(params: ParameterStore, rng: np.random.Generator,
                         prefix: str, dim: int) -> None:
    for part in ("query", "key", "value", "output"):
        add_linear(params, rng, f"{prefix}.{part}", dim, dim)


def multi_head_attention(
    query: Tensor,
    keys: Tensor,
    values: Tensor,
    heads: int,
    params: ParameterStore,
    prefix: str,
    key_mask: np.ndarray | None = None,
) -> Tensor:
    """Scaled dot-product attention over rows of keys/values.

    query is a single vector or a matrix of query rows; the result has the
    matching rank. Each head attends with its own slice of the projected
    dimensions; head outputs are concatenated and linearly mixed. Masked
    key rows receive exactly zero attention weight.
    """
    if keys.ndim != 2 or values.ndim != 2:
        raise ShapeError(f"keys/values must be matrices, got {keys.shape} and {values.shape}")
    m = keys.shape[0]
    if m == 0:
        raise DataError("attention over an empty key/value sequence")
    if values.shape[0] != m:
        raise ShapeError(f"keys have {m} rows but values have {values.shape[0]}")

    dim = params[f"{prefix}.query.weight"].shape[1]
    if dim % heads != 0:
        raise ConfigError(f"model dim {dim} not divisible by {heads} heads")
    head_dim = dim // heads

    single = query.ndim == 1
    q_rows = reshape(query, (1, query.shape[0])) if single else query

    q = linear(params, f"{prefix}.query", q_rows)
    k = linear(params, f"{prefix}.key", keys)
    v = linear(params, f"{prefix}.value", values)

    scale = 1.0 / math.sqrt(head_dim)
    head_outputs = []
    for h in range(heads):
        lo, hi = h * head_dim, (h + 1) * head_dim
        qh = slice_cols(q, lo, hi)
        kh = slice_cols(k, lo, hi)
        vh = slice_cols(v, lo, hi)
        scores = mul(matmul(qh, transpose(kh)), scale)
        weights = softmax_rows(scores, key_mask=key_mask)
        head_outputs.append(matmul(weights, vh))

    mixed = linear(params, f"{prefix}.output", concat(head_outputs, axis=1))
    return reshape(mixed, (dim,)) if single else mixed
