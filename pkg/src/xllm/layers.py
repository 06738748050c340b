"""Parameter containers and the transformer building blocks used by every model."""

from __future__ import annotations

import hashlib
from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import CheckpointError, DimensionError
from .tensor import Parameter, Tensor

NEG_INF = -1e9


class Module:
    """Minimal parameter tree: attributes that are Parameters or Modules (or lists of Modules)."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                # underscore attributes reference modules owned elsewhere
                continue
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, p.data.copy()) for n, p in self.named_parameters())

    def load_state_dict(self, state: dict) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise CheckpointError(f"parameter names differ (missing={sorted(missing)[:3]}, unexpected={sorted(unexpected)[:3]})")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise CheckpointError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.copy()

    def requires_grad_(self, flag: bool) -> "Module":
        for p in self.parameters():
            p.requires_grad = flag
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for name, p in self.named_parameters():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
        return h.hexdigest()


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True, scale: float = 1.0):
        self.weight = Parameter(rng.normal(0.0, scale / np.sqrt(d_in), size=(d_in, d_out)))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    @property
    def d_in(self) -> int:
        return self.weight.shape[0]

    @property
    def d_out(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise DimensionError(f"linear layer expects width {self.d_in}, got {x.shape[-1]}")
        y = x @ self.weight
        return y if self.bias is None else y + self.bias

    def set_identity(self) -> None:
        if self.d_in != self.d_out:
            raise DimensionError("identity initialisation needs a square layer")
        self.weight.data = np.eye(self.d_in)
        if self.bias is not None:
            self.bias.data = np.zeros(self.d_out)


class LayerNorm(Module):
    def __init__(self, d: int):
        self.weight = Parameter(np.ones(d))
        self.bias = Parameter(np.zeros(d))

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.weight, self.bias)


class FeedForward(Module):
    def __init__(self, d: int, d_ffn: int, rng: np.random.Generator):
        self.up = Linear(d, d_ffn, rng)
        self.down = Linear(d_ffn, d, rng, scale=0.5)

    def __call__(self, x: Tensor) -> Tensor:
        return self.down(T.gelu(self.up(x)))


def padding_bias(mask: np.ndarray) -> np.ndarray:
    """Additive attention bias ``[B, 1, 1, Tk]`` that removes masked keys."""
    mask = np.asarray(mask, dtype=bool)
    return np.where(mask, 0.0, NEG_INF)[:, None, None, :]


def causal_bias(n: int) -> np.ndarray:
    return np.triu(np.full((n, n), NEG_INF), k=1)


class MultiHeadAttention(Module):
    """Scaled dot-product attention over ``[B, T, d]`` inputs.

    ``value_bias=False`` drops the bias of the value and output projections,
    so an all-zero memory yields an exactly-zero attention output.
    """

    def __init__(self, d: int, n_heads: int, rng: np.random.Generator, d_kv: int | None = None, value_bias: bool = True):
        if d % n_heads:
            raise DimensionError(f"width {d} not divisible by {n_heads} heads")
        d_kv = d if d_kv is None else d_kv
        self.n_heads = n_heads
        self.q = Linear(d, d, rng)
        self.k = Linear(d_kv, d, rng)
        self.v = Linear(d_kv, d, rng, bias=value_bias)
        self.o = Linear(d, d, rng, bias=value_bias, scale=0.5)

    def _split(self, x: Tensor) -> Tensor:
        B, L, d = x.shape
        return x.reshape(B, L, self.n_heads, d // self.n_heads).transpose(0, 2, 1, 3)

    def __call__(self, x: Tensor, memory: Tensor | None = None, bias: np.ndarray | None = None) -> Tensor:
        memory = x if memory is None else memory
        B, L, d = x.shape
        q = self._split(self.q(x))
        k = self._split(self.k(memory))
        v = self._split(self.v(memory))
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(d // self.n_heads))
        if bias is not None:
            scores = scores + bias
        ctx = T.softmax(scores, axis=-1) @ v
        return self.o(ctx.transpose(0, 2, 1, 3).reshape(B, L, d))


class EncoderBlock(Module):
    """Pre-norm self-attention + feed-forward block (bidirectional unless a causal bias is passed)."""

    def __init__(self, d: int, n_heads: int, d_ffn: int, rng: np.random.Generator):
        self.ln1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, n_heads, rng)
        self.ln2 = LayerNorm(d)
        self.ffn = FeedForward(d, d_ffn, rng)

    def __call__(self, x: Tensor, bias: np.ndarray | None = None) -> Tensor:
        x = x + self.attn(self.ln1(x), bias=bias)
        return x + self.ffn(self.ln2(x))


def sinusoidal_positions(n: int, d: int, offset: int = 0) -> np.ndarray:
    pos = np.arange(offset, offset + n)[:, None]
    i = np.arange(d // 2)[None, :]
    angle = pos / np.power(10000.0, 2 * i / d)
    out = np.zeros((n, d))
    out[:, 0::2] = np.sin(angle)
    out[:, 1::2] = np.cos(angle)
    return out
