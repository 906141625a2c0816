"""Small network builders over a :class:`ParamStore`.

Layers only hold parameter *names*; weights live in the store passed at
call time, so copying a store copies the whole network.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .optim import ParamStore


def _he(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class Dense:
    def __init__(self, prefix: str, n_in: int, n_out: int):
        self.prefix, self.n_in, self.n_out = prefix, n_in, n_out

    @property
    def weight_name(self) -> str:
        return self.prefix + ".w"

    def init(self, store: ParamStore, rng: np.random.Generator) -> None:
        store.add(self.prefix + ".w", _he(rng, self.n_in, (self.n_in, self.n_out)))
        store.add(self.prefix + ".b", np.zeros(self.n_out))

    def __call__(self, store: ParamStore, x: T.Tensor) -> T.Tensor:
        return T.matmul(x, store[self.prefix + ".w"]) + store[self.prefix + ".b"]


class Conv2d:
    def __init__(self, prefix: str, c_in: int, c_out: int, kernel: int = 3, stride: int = 1, pad: int = 1):
        self.prefix = prefix
        self.c_in, self.c_out = c_in, c_out
        self.kernel, self.stride, self.pad = kernel, stride, pad

    def init(self, store: ParamStore, rng: np.random.Generator) -> None:
        fan_in = self.kernel * self.kernel * self.c_in
        store.add(self.prefix + ".w", _he(rng, fan_in, (self.kernel, self.kernel, self.c_in, self.c_out)))
        store.add(self.prefix + ".b", np.zeros(self.c_out))

    def __call__(self, store: ParamStore, x: T.Tensor) -> T.Tensor:
        y = T.conv2d(x, store[self.prefix + ".w"], stride=self.stride, pad=self.pad)
        return y + store[self.prefix + ".b"]


_ACTS = {"relu": T.relu, "tanh": T.tanh, "sigmoid": T.sigmoid}


class MLP:
    """Dense stack with a hidden activation and a linear final layer."""

    def __init__(self, prefix: str, sizes: list[int], act: str = "relu"):
        if len(sizes) < 2:
            raise ValueError("MLP needs at least input and output sizes")
        self.layers = [Dense(f"{prefix}.{i}", a, b) for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))]
        self.act = _ACTS[act]

    def init(self, store, rng) -> None:
        for layer in self.layers:
            layer.init(store, rng)

    def __call__(self, store, x):
        for i, layer in enumerate(self.layers):
            x = layer(store, x)
            if i < len(self.layers) - 1:
                x = self.act(x)
        return x

    def hidden_states(self, store, x):
        """Pre-activations of every layer, for callers that need the relu masks."""
        pre = []
        for i, layer in enumerate(self.layers):
            x = layer(store, x)
            pre.append(x)
            if i < len(self.layers) - 1:
                x = self.act(x)
        return pre


class ConvEncoder:
    """Two stride-2 convolutions followed by a dense head."""

    def __init__(self, prefix: str, in_shape: tuple[int, int, int], out_dim: int, channels=(32, 64)):
        h, w, c = in_shape
        c1, c2 = channels
        self.in_shape = in_shape
        self.conv1 = Conv2d(prefix + ".conv1", c, c1, 3, 2, 1)
        self.conv2 = Conv2d(prefix + ".conv2", c1, c2, 3, 2, 1)
        h2 = ((h + 1) // 2 + 1) // 2
        w2 = ((w + 1) // 2 + 1) // 2
        self.flat = h2 * w2 * c2
        self.head = Dense(prefix + ".head", self.flat, out_dim)

    def init(self, store, rng) -> None:
        for part in (self.conv1, self.conv2, self.head):
            part.init(store, rng)

    def __call__(self, store, x):
        n = x.shape[0]
        y = T.relu(self.conv1(store, x))
        y = T.relu(self.conv2(store, y))
        return self.head(store, T.reshape(y, (n, self.flat)))


class ConvDecoder:
    """Dense projection to a quarter-resolution map, then two (upsample, conv) stages."""

    def __init__(self, prefix: str, in_dim: int, out_shape: tuple[int, int, int], channels=(32, 64)):
        h, w, c = out_shape
        if h % 4 or w % 4:
            raise ValueError(f"ConvDecoder needs spatial dims divisible by 4, got {out_shape}")
        c1, c2 = channels
        self.base = (h // 4, w // 4, c2)
        self.proj = Dense(prefix + ".proj", in_dim, int(np.prod(self.base)))
        self.conv1 = Conv2d(prefix + ".conv1", c2, c1, 3, 1, 1)
        self.conv2 = Conv2d(prefix + ".conv2", c1, c, 3, 1, 1)

    def init(self, store, rng) -> None:
        for part in (self.proj, self.conv1, self.conv2):
            part.init(store, rng)

    def __call__(self, store, x):
        n = x.shape[0]
        y = T.relu(self.proj(store, x))
        y = T.reshape(y, (n,) + self.base)
        y = T.relu(self.conv1(store, T.upsample_nearest(y, 2)))
        return self.conv2(store, T.upsample_nearest(y, 2))
