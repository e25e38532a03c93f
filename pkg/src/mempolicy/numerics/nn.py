"""Parameter registry and the handful of layers the models are built from."""

from __future__ import annotations

import math

import numpy as np

from ..errors import ConfigError, DimensionError
from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    """A trainable leaf. ``name`` is assigned when the owning model is walked."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = ""):
        arr = np.array(data, copy=True) if _is_float(data) else np.asarray(data, dtype=T.default_dtype())
        super().__init__(arr, requires_grad=True)
        self.name = name


def _is_float(data) -> bool:
    return isinstance(data, np.ndarray) and data.dtype.kind == "f"


class Module:
    """Minimal container: parameters and submodules are discovered from attributes."""

    def named_parameters(self, prefix: str = ""):
        for key, val in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield path, val
            elif isinstance(val, Module):
                yield from val.named_parameters(path + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{path}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def register_names(self) -> dict[str, Parameter]:
        registry = {}
        for name, p in self.named_parameters():
            if name in registry:
                raise ConfigError(f"duplicate parameter name {name!r}")
            p.name = name
            registry[name] = p
        return registry

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise ConfigError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise DimensionError(f"{name}: expected shape {p.shape}, got {arr.shape}")
            p.data = arr.astype(p.data.dtype, copy=True)

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out)).astype(dtype)


class Linear(Module):
    """``y = x @ W + b`` with ``W`` stored as (in, out)."""

    def __init__(self, rng, d_in: int, d_out: int, bias: bool = True, zero: bool = False, dtype=None):
        dtype = dtype or T.default_dtype()
        w = np.zeros((d_in, d_out), dtype) if zero else glorot(rng, d_in, d_out, dtype)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(d_out, dtype)) if bias else None
        self.d_in, self.d_out = d_in, d_out

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise DimensionError(f"Linear expects last dim {self.d_in}, got {x.shape}")
        y = T.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5, dtype=None):
        dtype = dtype or T.default_dtype()
        self.gain = Parameter(np.ones(d, dtype))
        self.shift = Parameter(np.zeros(d, dtype))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.shift, self.eps)


class MLP(Module):
    """Two-layer perceptron; ``zero_out`` zero-initialises the output layer."""

    def __init__(self, rng, d_in, d_hidden, d_out, act="relu", zero_out=False, dtype=None):
        self.fc1 = Linear(rng, d_in, d_hidden, dtype=dtype)
        self.fc2 = Linear(rng, d_hidden, d_out, zero=zero_out, dtype=dtype)
        self.act = act

    def __call__(self, x: Tensor) -> Tensor:
        h = self.fc1(x)
        h = T.relu(h) if self.act == "relu" else T.silu(h)
        return self.fc2(h)


class MultiHeadAttention(Module):
    """Scaled dot-product attention with learned projections.

    Queries come from ``q`` (…, Nq, d_q); keys and values may be supplied
    separately so callers can add positional terms to the keys only.
    ``key_mask`` (…, Nk) marks valid keys with True.
    """

    def __init__(self, rng, d_q: int, d_kv: int, d_model: int, n_heads: int, dtype=None):
        if d_model % n_heads:
            raise ConfigError(f"d_model={d_model} not divisible by n_heads={n_heads}")
        self.wq = Linear(rng, d_q, d_model, dtype=dtype)
        self.wk = Linear(rng, d_kv, d_model, dtype=dtype)
        self.wv = Linear(rng, d_kv, d_model, dtype=dtype)
        self.wo = Linear(rng, d_model, d_q, dtype=dtype)
        self.n_heads = n_heads
        self.d_model = d_model

    def _split(self, x: Tensor) -> Tensor:
        *lead, n, _ = x.shape
        dh = self.d_model // self.n_heads
        x = x.reshape(*lead, n, self.n_heads, dh)
        return x.swapaxes(-2, -3)

    def __call__(self, q: Tensor, k: Tensor, v: Tensor | None = None, key_mask=None) -> Tensor:
        v = k if v is None else v
        Q, K, V = self._split(self.wq(q)), self._split(self.wk(k)), self._split(self.wv(v))
        dh = self.d_model // self.n_heads
        scores = T.matmul(Q, K.swapaxes(-1, -2)) * (1.0 / math.sqrt(dh))
        bias = None
        if key_mask is not None:
            m = np.asarray(key_mask, dtype=bool)
            bias = np.where(m, 0.0, -1e9).astype(scores.dtype)[..., None, None, :]
        attn = T.softmax(scores, axis=-1, bias=bias)
        out = T.matmul(attn, V).swapaxes(-2, -3)
        *lead, n, _, _ = out.shape
        return self.wo(out.reshape(*lead, n, self.d_model))


def sinusoid(t, d: int, dtype=None) -> np.ndarray:
    """Sinusoidal features of (possibly non-integer) positions ``t``.

    Returns shape ``(len(t), d)``: even columns sin, odd columns cos.
    """
    if d % 2:
        raise ConfigError(f"sinusoidal width must be even, got {d}")
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    k = np.arange(d // 2, dtype=np.float64)
    freq = 1.0 / 10000.0 ** (2.0 * k / d)
    out = np.empty((t.shape[0], d))
    out[:, 0::2] = np.sin(t * freq)
    out[:, 1::2] = np.cos(t * freq)
    return out.astype(dtype or T.default_dtype())
