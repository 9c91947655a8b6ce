"""Parameter containers."""

from __future__ import annotations

import numpy as np

from .autograd import Tensor, add_row_bias, glorot_uniform, matmul


class Module:
    """Walks attributes in definition order to name parameters stably."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{prefix}{name}.{i}", item

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())


def weight(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    return Tensor(glorot_uniform(rng, fan_in, fan_out), requires_grad=True)


def zeros(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class Linear(Module):
    def __init__(self, rng: np.random.Generator, fan_in: int, fan_out: int, bias: bool = True):
        self.w = weight(rng, fan_in, fan_out)
        self.b = zeros(fan_out) if bias else None

    @property
    def in_dim(self) -> int:
        return self.w.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        y = matmul(x, self.w)
        return y if self.b is None else add_row_bias(y, self.b)
