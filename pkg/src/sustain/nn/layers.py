"""Parameter containers, initialisation and the dense layer."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, as_tensor

ACTIVATIONS = ("linear", "relu", "sigmoid")


class ParamSet:
    """Named parameter tensors with a per-parameter trainable flag.

    Iteration order is insertion order, so flattening and serialisation are
    stable across runs.
    """

    def __init__(self):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self._trainable: dict[str, bool] = {}

    def add(self, name, value, trainable=True) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = t
        self._trainable[name] = trainable
        return t

    def __getitem__(self, name) -> Tensor:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def is_trainable(self, name) -> bool:
        return self._trainable[name]

    def set_trainable(self, name, flag=True):
        self._trainable[name] = bool(flag)

    def zero_grad(self):
        for p in self._params.values():
            p.grad = np.zeros_like(p.data)

    def grads(self):
        return OrderedDict((k, p.grad) for k, p in self._params.items())

    def state_dict(self):
        return OrderedDict((k, p.data.copy()) for k, p in self._params.items())

    def load_state_dict(self, state):
        missing = set(self._params) ^ set(state)
        if missing:
            raise KeyError(f"parameter names differ: {sorted(missing)}")
        for k, p in self._params.items():
            value = np.asarray(state[k], dtype=np.float64)
            if value.shape != p.shape:
                raise ShapeError(f"parameter {k!r}: expected shape {p.shape}, got {value.shape}")
            p.data = value.copy()

    def copy(self) -> "ParamSet":
        other = ParamSet()
        for k, p in self._params.items():
            other.add(k, p.data.copy(), self._trainable[k])
        return other

    def n_values(self):
        return sum(p.data.size for p in self._params.values())


def glorot_uniform(rng: np.random.Generator, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def activate(x: Tensor, activation: str) -> Tensor:
    if activation == "linear":
        return x
    if activation == "relu":
        return x.relu()
    if activation == "sigmoid":
        return x.sigmoid()
    raise ValueError(f"unknown activation {activation!r}; expected one of {ACTIVATIONS}")


def dense_forward(x, weight: Tensor, bias: Tensor | None = None, activation="linear") -> Tensor:
    """Affine map ``x @ weight + bias`` over the last axis, then ``activation``."""
    x = as_tensor(x)
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(
            f"dense: input shape {x.shape} does not match weight shape {weight.shape}")
    y = x @ weight
    if bias is not None:
        y = y + bias
    return activate(y, activation)
