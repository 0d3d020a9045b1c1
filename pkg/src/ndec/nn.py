"""Parameter containers, initialisers and the AdamW optimiser."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .tensor import NonFiniteError, Tensor, matmul


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None, dtype=np.float32):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    shape = (fan_in, fan_out) if shape is None else shape
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class ParamSet:
    """Ordered name -> Tensor mapping with a few conveniences.

    Subclasses add model-specific config fields; the tensors themselves
    always live in ``self.tensors``.
    """

    def __init__(self, tensors=None):
        self.tensors: "OrderedDict[str, Tensor]" = OrderedDict(tensors or {})

    def __getitem__(self, name) -> Tensor:
        return self.tensors[name]

    def __setitem__(self, name, value) -> None:
        if not isinstance(value, Tensor):
            value = Tensor(value, requires_grad=True)
        self.tensors[name] = value

    def __contains__(self, name) -> bool:
        return name in self.tensors

    def __iter__(self):
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def values(self):
        return self.tensors.values()

    def add(self, name, array) -> None:
        self.tensors[name] = Tensor(array, requires_grad=True)

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def n_params(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def state(self) -> dict:
        return {k: v.data for k, v in self.tensors.items()}

    def load_state(self, state: dict) -> None:
        for k in self.tensors:
            self.tensors[k] = Tensor(np.array(state[k]), requires_grad=True)

    def _clone_meta(self):
        clone = object.__new__(type(self))
        clone.__dict__.update({k: v for k, v in self.__dict__.items() if k != "tensors"})
        return clone

    def astype(self, dtype):
        clone = self._clone_meta()
        clone.tensors = OrderedDict(
            (k, Tensor(v.data.astype(dtype), requires_grad=True)) for k, v in self.tensors.items())
        return clone

    def copy(self):
        clone = self._clone_meta()
        clone.tensors = OrderedDict(
            (k, Tensor(v.data.copy(), requires_grad=True)) for k, v in self.tensors.items())
        return clone

    def equal(self, other) -> bool:
        return (list(self.tensors) == list(other.tensors)
                and all(np.array_equal(self[k].data, other[k].data) for k in self.tensors))


def linear(x, params: ParamSet, prefix: str) -> Tensor:
    return matmul(x, params[prefix + ".w"]) + params[prefix + ".b"]


def add_linear(params: ParamSet, rng, prefix: str, fan_in: int, fan_out: int, dtype=np.float32) -> None:
    params.add(prefix + ".w", xavier_uniform(rng, fan_in, fan_out, dtype=dtype))
    params.add(prefix + ".b", np.zeros(fan_out, dtype=dtype))


def add_norm(params: ParamSet, prefix: str, d: int, dtype=np.float32) -> None:
    params.add(prefix + ".g", np.ones(d, dtype=dtype))
    params.add(prefix + ".b", np.zeros(d, dtype=dtype))


class AdamW:
    """Adam with decoupled weight decay.

    Per step t with gradient g:
        m <- b1 m + (1 - b1) g;  v <- b2 v + (1 - b2) g^2
        p <- p - lr * wd * p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
    """

    def __init__(self, params: ParamSet, lr=1e-4, betas=(0.9, 0.999), weight_decay=0.01, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.weight_decay = weight_decay
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def check_grads(self) -> None:
        for k, p in self.params.items():
            if p.grad is not None and not np.isfinite(p.grad).all():
                raise NonFiniteError(f"non-finite gradient for {k}")

    def step(self) -> None:
        self.check_grads()
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            w = p.data
            if self.weight_decay:
                w -= (self.lr * self.weight_decay) * w
            w -= (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict:
        out = {"t": self.t}
        for k in self.m:
            out["m/" + k] = self.m[k]
            out["v/" + k] = self.v[k]
        return out

    def load_state(self, state: dict) -> None:
        self.t = int(state["t"])
        for k in self.m:
            self.m[k] = np.array(state["m/" + k])
            self.v[k] = np.array(state["v/" + k])
