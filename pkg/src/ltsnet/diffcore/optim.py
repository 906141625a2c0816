"""Parameter storage and the Adam update."""

from __future__ import annotations

from collections.abc import Iterable, Iterator, Mapping

import numpy as np

from .tensor import Tensor


class MissingGradientError(RuntimeError):
    pass


class ParamStore(Mapping):
    """Named parameter tensors plus their per-parameter Adam state."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.steps: dict[str, int] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        self.steps[name] = 0
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def group(self, prefix: str) -> list[str]:
        return [n for n in self._params if n.startswith(prefix)]

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def copy(self) -> "ParamStore":
        other = ParamStore()
        for name, t in self._params.items():
            other.add(name, t.data.copy())
            other.m[name] = self.m[name].copy()
            other.v[name] = self.v[name].copy()
            other.steps[name] = self.steps[name]
        return other

    def num_parameters(self) -> int:
        return sum(t.size for t in self._params.values())


def adam_step(
    store: ParamStore,
    lr: float = 1e-3,
    beta_m: float = 0.9,
    beta_v: float = 0.999,
    eps: float = 1e-8,
    names: Iterable[str] | None = None,
) -> None:
    """One bias-corrected Adam update over ``names`` (all parameters by default).

    Gradients of the updated parameters are cleared afterwards.
    """
    names = list(store) if names is None else list(names)
    for name in names:
        if store[name].grad is None:
            raise MissingGradientError(f"parameter {name!r} has no gradient")
    for name in names:
        p = store[name]
        g = p.grad
        t = store.steps[name] + 1
        store.steps[name] = t
        m = store.m[name]
        v = store.v[name]
        m *= beta_m
        m += (1.0 - beta_m) * g
        v *= beta_v
        v += (1.0 - beta_v) * (g * g)
        m_hat = m / (1.0 - beta_m**t)
        v_hat = v / (1.0 - beta_v**t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
        p.grad = None
