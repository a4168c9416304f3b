"""Parameter tensors and the partitioned parameter store.

Every learnable (or frozen) array in the model is a ParamTensor registered
in a ParamStore under a dotted path name. The store is the single source of
truth for checkpointing, optimizer steps and the frozen/trainable partition
contract: an optimizer must only ever touch tensors with trainable=True.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np


class NumericError(ValueError):
    """A tensor left the finite domain (NaN/Inf)."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {what}")
    return x


@dataclass
class ParamTensor:
    name: str
    value: np.ndarray
    trainable: bool = True
    grad: np.ndarray | None = None

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)

    def zero_grad(self) -> None:
        self.grad = None

    def add_grad(self, g: np.ndarray) -> None:
        g = np.asarray(g, dtype=np.float64)
        if g.shape != self.value.shape:
            raise DimensionError(
                f"grad shape {g.shape} != value shape {self.value.shape} for {self.name}"
            )
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g


class ParamStore:
    """Ordered name -> ParamTensor registry with frozen/trainable partitions."""

    def __init__(self):
        self._params: dict[str, ParamTensor] = {}

    def register(self, name: str, value: np.ndarray, trainable: bool) -> ParamTensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        p = ParamTensor(name, value, trainable)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> ParamTensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params.keys())

    def trainable(self) -> list[ParamTensor]:
        return [p for p in self if p.trainable]

    def frozen(self) -> list[ParamTensor]:
        return [p for p in self if not p.trainable]

    def zero_grads(self) -> None:
        for p in self:
            p.zero_grad()

    def n_values(self, trainable: bool | None = None) -> int:
        total = 0
        for p in self:
            if trainable is None or p.trainable == trainable:
                total += p.value.size
        return total

    def partition_hash(self, trainable: bool) -> str:
        """SHA-256 over the raw bytes of one partition, in registry order."""
        h = hashlib.sha256()
        for p in self:
            if p.trainable == trainable:
                h.update(p.name.encode())
                h.update(np.ascontiguousarray(p.value).tobytes())
        return h.hexdigest()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self}


@dataclass
class Scope:
    """Helper that registers parameters under a dotted prefix."""

    store: ParamStore
    prefix: str
    trainable: bool
    rng: np.random.Generator = field(repr=False, default=None)

    def child(self, name: str) -> "Scope":
        return Scope(self.store, f"{self.prefix}.{name}", self.trainable, self.rng)

    def tensor(self, name: str, value: np.ndarray) -> ParamTensor:
        return self.store.register(f"{self.prefix}.{name}", value, self.trainable)

    def xavier(self, name: str, fan_in: int, fan_out: int) -> ParamTensor:
        std = np.sqrt(2.0 / (fan_in + fan_out))
        return self.tensor(name, self.rng.normal(0.0, std, size=(fan_in, fan_out)))

    def zeros(self, name: str, shape) -> ParamTensor:
        return self.tensor(name, np.zeros(shape))

    def ones(self, name: str, shape) -> ParamTensor:
        return self.tensor(name, np.ones(shape))

    def normal(self, name: str, shape, std: float = 0.02) -> ParamTensor:
        return self.tensor(name, self.rng.normal(0.0, std, size=shape))
