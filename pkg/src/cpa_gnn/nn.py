"""Small parameter containers: linear maps, 2-layer MLPs, batch norm."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .autodiff import Tensor, ops


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


class Module:
    """Registry of named parameters and child modules, in creation order."""

    def __init__(self):
        self._params: OrderedDict[str, Tensor] = OrderedDict()
        self._children: OrderedDict[str, Module] = OrderedDict()

    def param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, requires_grad=True)
        self._params[name] = t
        return t

    def child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = ""):
        for name, t in self._params.items():
            yield prefix + name, t
        for name, mod in self._children.items():
            yield from mod.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def buffers(self, prefix: str = ""):
        """Non-trainable state (batch-norm running statistics)."""
        for name, mod in self._children.items():
            yield from mod.buffers(f"{prefix}{name}.")

    def num_parameters(self) -> int:
        return sum(t.data.size for t in self.parameters())


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.in_dim, self.out_dim = in_dim, out_dim
        self.weight = self.param("weight", glorot(rng, in_dim, out_dim))
        self.bias = self.param("bias", np.zeros(out_dim)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"Linear expects input width {self.in_dim}, got shape {x.shape}")
        y = ops.matmul(x, self.weight)
        return ops.add(y, self.bias) if self.bias is not None else y


class MLP(Module):
    """``Linear -> ReLU -> Linear``."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int, rng: np.random.Generator):
        super().__init__()
        self.first = self.child("first", Linear(in_dim, hidden, rng))
        self.second = self.child("second", Linear(hidden, out_dim, rng))

    def __call__(self, x: Tensor) -> Tensor:
        return self.second(ops.relu(self.first(x)))


class BatchNorm(Module):
    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.gamma = self.param("gamma", np.ones(dim))
        self.beta = self.param("beta", np.zeros(dim))
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.momentum = momentum
        self.eps = eps

    def buffers(self, prefix: str = ""):
        yield prefix + "running_mean", self.running_mean
        yield prefix + "running_var", self.running_var

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return ops.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                              training, self.momentum, self.eps)
