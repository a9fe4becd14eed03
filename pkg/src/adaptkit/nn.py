"""Affine + nonlinearity stacks built on :mod:`adaptkit.tensor`."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

ACTIVATIONS = {"relu": T.relu, "tanh": T.tanh, "sigmoid": T.sigmoid}


class Linear:
    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator, name: str = "linear"):
        self.weight = Tensor(T.glorot_uniform(rng, fan_in, fan_out), requires_grad=True, name=f"{name}.weight")
        self.bias = Tensor(np.zeros(fan_out), requires_grad=True, name=f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return T.affine(x, self.weight, self.bias)

    @property
    def params(self) -> list[Tensor]:
        return [self.weight, self.bias]


class MLP:
    """``widths[0] -> ... -> widths[-1]`` with ``activation`` between layers.

    The last layer is linear unless ``final_activation`` is given.
    """

    def __init__(
        self,
        widths: Sequence[int],
        rng: np.random.Generator,
        activation: str = "relu",
        final_activation: str | None = None,
        name: str = "mlp",
    ):
        if len(widths) < 2:
            raise ValueError("MLP needs at least input and output widths")
        self.widths = list(widths)
        self.layers = [Linear(a, b, rng, name=f"{name}.{i}") for i, (a, b) in enumerate(zip(widths[:-1], widths[1:]))]
        self.activation = ACTIVATIONS[activation]
        self.final_activation = ACTIVATIONS[final_activation] if final_activation else None

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = self.activation(x)
        if self.final_activation is not None:
            x = self.final_activation(x)
        return x

    @property
    def params(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.params]


def named_params(modules: dict[str, object]) -> dict[str, Tensor]:
    """Flatten ``{prefix: module}`` into ``{prefix.param_name: tensor}``."""
    out = {}
    for prefix, mod in modules.items():
        for p in mod.params:
            out[f"{prefix}.{p.name}"] = p
    return out


def snapshot(params: Sequence[Tensor]) -> list[np.ndarray]:
    return [p.data.copy() for p in params]
