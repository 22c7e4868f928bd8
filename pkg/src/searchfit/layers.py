"""Small parameterised building blocks shared by the encoder and scorer."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .tensor import Tensor

INIT_SCALE = 0.02


def normal_param(rng: np.random.Generator, *shape: int) -> Tensor:
    return Tensor(rng.normal(0.0, INIT_SCALE, shape), requires_grad=True)


def zeros_param(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def ones_param(*shape: int) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


class LinearMap:
    """Affine map x @ W + b, applied to vectors or to matrix rows."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = normal_param(rng, d_in, d_out)
        self.bias = zeros_param(d_out) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = T.matmul(x, self.weight)
        if self.bias is None:
            return out
        if out.values.ndim == 1:
            return T.add(out, self.bias)
        return T.add_row_bias(out, self.bias)

    def named_params(self, prefix: str):
        yield f"{prefix}.weight", self.weight
        if self.bias is not None:
            yield f"{prefix}.bias", self.bias


class Mlp:
    """Fully connected stack with ReLU between layers and a linear output."""

    def __init__(self, widths: list[int], rng: np.random.Generator):
        if len(widths) < 2:
            raise ConfigError(f"Mlp needs at least input and output widths, got {widths}")
        self.layers = [LinearMap(a, b, rng) for a, b in zip(widths, widths[1:])]
        self.widths = list(widths)

    def __call__(self, x: Tensor, dropout_p: float = 0.0,
                 rng: np.random.Generator | None = None) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = T.relu(x)
                if rng is not None and dropout_p > 0.0:
                    x = T.dropout(x, dropout_p, rng)
        return x

    def named_params(self, prefix: str):
        for i, layer in enumerate(self.layers):
            yield from layer.named_params(f"{prefix}.{i}")
