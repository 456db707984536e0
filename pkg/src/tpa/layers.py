"""Parameter containers shared by the model pieces."""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> Tensor:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-a, a, size=shape), requires_grad=True)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class Module:
    """Holds named parameters and child modules; ``parameters()`` flattens them."""

    def __init__(self):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self._children: "OrderedDict[str, Module]" = OrderedDict()

    def add_param(self, name: str, t: Tensor) -> Tensor:
        self._params[name] = t
        return t

    def add_child(self, name: str, m: "Module") -> "Module":
        self._children[name] = m
        return m

    def parameters(self, prefix: str = "") -> "OrderedDict[str, Tensor]":
        out = OrderedDict((prefix + k, v) for k, v in self._params.items())
        for name, child in self._children.items():
            out.update(child.parameters(f"{prefix}{name}."))
        return out

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def swap_param(self, path: str, new: Tensor) -> Tensor:
        """Replace the parameter at dotted ``path`` by ``new``; returns the old one."""
        owner = self
        *parents, key = path.split(".")
        for name in parents:
            owner = owner._children[name]
        old = owner._params[key]
        owner._params[key] = new
        for attr, value in vars(owner).items():
            if value is old:
                setattr(owner, attr, new)
        return old


class Linear(Module):
    def __init__(self, rng: np.random.Generator, n_in: int, n_out: int, bias: bool = True):
        super().__init__()
        self.W = self.add_param("W", glorot(rng, (n_in, n_out), n_in, n_out))
        self.b = self.add_param("b", zeros(n_out)) if bias else None

    def __call__(self, x) -> Tensor:
        return ad.linear(x, self.W, self.b)

    def zero_(self) -> None:
        self.W.data[...] = 0.0
        if self.b is not None:
            self.b.data[...] = 0.0


class Conv1d(Module):
    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int, k: int,
                 padding: str = "same", dilation: int = 1):
        super().__init__()
        self.padding = padding
        self.dilation = dilation
        self.K = self.add_param("K", glorot(rng, (k, c_in, c_out), k * c_in, c_out))
        self.b = self.add_param("b", zeros(c_out))

    def __call__(self, x) -> Tensor:
        return ad.conv1d(x, self.K, self.b, padding=self.padding, dilation=self.dilation)

    def zero_(self) -> None:
        self.K.data[...] = 0.0
        self.b.data[...] = 0.0
