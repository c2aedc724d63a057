"""Parameter containers built on :mod:`emofuse.tensor`."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Attribute-walking parameter registry.

    Parameters are :class:`Tensor` attributes flagged ``requires_grad`` at
    construction; submodules and lists of submodules are walked recursively
    in attribute-definition order, which makes parameter names stable.
    """

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and getattr(val, "name", None) == "param":
                out[name] = val
            elif isinstance(val, Module):
                out.update(val.named_parameters(name + "."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{name}.{i}."))
                    elif isinstance(item, Tensor) and item.name == "param":
                        out[f"{name}.{i}"] = item
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        params = self.named_parameters()
        if strict:
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            if missing or extra:
                raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for n, p in params.items():
            if n in state:
                if state[n].shape != p.shape:
                    raise ValueError(f"shape mismatch for '{n}': {state[n].shape} vs {p.shape}")
                p.data = state[n].astype(p.dtype, copy=True)

    def set_trainable(self, flag: bool) -> None:
        for p in self.named_parameters().values():
            p.requires_grad = flag

    def zero_grad(self) -> None:
        for p in self.named_parameters().values():
            p.grad = None


def param(data, dtype=None) -> Tensor:
    t = Tensor(np.asarray(data, dtype=dtype or T.get_default_dtype()), requires_grad=True)
    t.name = "param"
    return t


def normal(rng: np.random.Generator, shape, std: float, dtype=None) -> Tensor:
    return param(rng.normal(0.0, std, size=shape), dtype)


def zeros(shape, dtype=None) -> Tensor:
    return param(np.zeros(shape), dtype)


def ones(shape, dtype=None) -> Tensor:
    return param(np.ones(shape), dtype)


class Linear(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, bias: bool = True,
                 std: float | None = None, zero: bool = False):
        self.d_in, self.d_out = d_in, d_out
        if zero:
            self.weight = zeros((d_in, d_out))
        else:
            self.weight = normal(rng, (d_in, d_out), std if std is not None else d_in**-0.5)
        self.bias = zeros((d_out,)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = ones((dim,))
        self.beta = zeros((dim,))
        self._eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self._eps)


class FeedForward(Module):
    """Two affine maps with GeLU between."""

    def __init__(self, rng: np.random.Generator, d_in: int, d_hidden: int, d_out: int,
                 zero_out: bool = False):
        self.fc1 = Linear(rng, d_in, d_hidden)
        self.fc2 = Linear(rng, d_hidden, d_out, zero=zero_out)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))
