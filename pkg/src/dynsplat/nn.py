"""Tiny MLP building blocks on top of the autodiff tensors."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, matmul, relu

__all__ = ["Linear", "MLP"]


class Linear:
    """Affine layer ``x @ W + b`` with (in, out)-shaped weights."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator | None = None,
                 zero_init: bool = False):
        self.in_dim = in_dim
        self.out_dim = out_dim
        if zero_init:
            w = np.zeros((in_dim, out_dim))
        else:
            if rng is None:
                raise ValueError("Linear needs an rng unless zero_init is set")
            bound = np.sqrt(6.0 / (in_dim + out_dim))
            w = rng.uniform(-bound, bound, size=(in_dim, out_dim))
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(x, self.weight) + self.bias

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


class MLP:
    """Stack of Linear layers with ReLU between them (none after the last)."""

    def __init__(self, dims: list[int], rng: np.random.Generator | None = None,
                 zero_init_last: bool = False):
        if len(dims) < 2:
            raise ValueError("MLP needs at least input and output dims")
        self.layers = []
        for i, (din, dout) in enumerate(zip(dims[:-1], dims[1:])):
            last = i == len(dims) - 2
            self.layers.append(
                Linear(din, dout, rng=rng, zero_init=zero_init_last and last)
            )

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = relu(x)
        return x

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]
