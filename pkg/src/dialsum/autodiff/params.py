from __future__ import annotations

import zlib
from collections import OrderedDict
from typing import Iterator

import numpy as np

from .tensor import Tensor


class ParameterStore:
    """Ordered name -> Tensor map with a trainable flag per entry.

    Names are unique; insertion order is preserved and used for
    serialization, so it is stable across save/load.
    """

    def __init__(self):
        self._tensors: OrderedDict[str, Tensor] = OrderedDict()
        self._trainable: dict[str, bool] = {}

    def add(self, name: str, value, trainable: bool = True) -> Tensor:
        if name in self._tensors:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=trainable)
        self._tensors[name] = t
        self._trainable[name] = trainable
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def get(self, name: str, default=None):
        return self._tensors.get(name, default)

    def items(self):
        return self._tensors.items()

    def names(self) -> list[str]:
        return list(self._tensors)

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def trainable_items(self):
        return [(k, v) for k, v in self._tensors.items() if self._trainable[k]]

    def numel(self) -> int:
        return sum(t.data.size for t in self._tensors.values())

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        """Gradient per trainable entry (zeros where nothing was accumulated)."""
        return {k: (v.grad if v.grad is not None else np.zeros_like(v.data))
                for k, v in self.trainable_items()}

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._tensors.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, arr in state.items():
            if self._tensors[k].shape != arr.shape:
                raise ValueError(f"shape mismatch for {k}: {self._tensors[k].shape} vs {arr.shape}")
            self._tensors[k].data = np.array(arr, dtype=np.float64)

    def copy(self) -> "ParameterStore":
        out = ParameterStore()
        for k, v in self._tensors.items():
            out.add(k, v.data.copy(), self._trainable[k])
        return out


def name_rng(seed: int, name: str) -> np.random.Generator:
    """Per-parameter generator so adding/removing one entry never shifts another's draw."""
    return np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])
