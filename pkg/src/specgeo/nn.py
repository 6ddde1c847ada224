"""Parameter containers, attention, optimiser and learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor


class Module:
    """Attribute-discovered parameter tree.

    Parameters are ``Tensor`` attributes with ``requires_grad``; submodules may
    be stored directly or in lists. Names are dotted attribute paths.
    """

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                out[key] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(key + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{key}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        params = self.named_parameters()
        if strict:
            missing = sorted(set(params) - set(state))
            if missing:
                raise KeyError(f"missing parameters: {missing[:5]}")
        for name, p in params.items():
            if name not in state:
                continue
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise DimensionError(f"{name}: checkpoint shape {arr.shape} != {p.shape}")
            p.data[...] = arr


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True, zero: bool = False):
        bound = 1.0 / math.sqrt(max(n_in, 1))
        w = np.zeros((n_in, n_out)) if zero else rng.uniform(-bound, bound, size=(n_in, n_out))
        self.weight = ad.parameter(w)
        self.bias = ad.parameter(np.zeros(n_out) if zero else rng.uniform(-bound, bound, size=n_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ad.linear(x, self.weight, self.bias)


class MLP(Module):
    """Two linear layers with SiLU in between (and optionally after)."""

    def __init__(self, n_in: int, n_hidden: int, n_out: int, rng: np.random.Generator,
                 final_activation: bool = False, zero_last: bool = False, last_bias: bool = True):
        self.fc1 = Linear(n_in, n_hidden, rng)
        self.fc2 = Linear(n_hidden, n_out, rng, bias=last_bias, zero=zero_last)
        self.final_activation = final_activation

    def __call__(self, x: Tensor) -> Tensor:
        out = self.fc2(ad.silu(self.fc1(x)))
        return ad.silu(out) if self.final_activation else out


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gamma = ad.parameter(np.ones(dim))
        self.beta = ad.parameter(np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gamma, self.beta)


class Embedding(Module):
    def __init__(self, count: int, dim: int, rng: np.random.Generator, scale: float = 1.0):
        self.table = ad.parameter(rng.normal(0.0, scale, size=(count, dim)))

    def __call__(self, idx) -> Tensor:
        return ad.take(self.table, np.asarray(idx, dtype=np.intp))


@dataclass
class ProjectionSet:
    """Query/key/value/output projections for multi-head attention.

    ``w_q`` is d_q×d_q, ``w_k`` and ``w_v`` are d_s×d_q, ``w_o`` is d_q×d_q;
    head ``i`` uses columns ``i*d:(i+1)*d`` with ``d = d_q // heads``.
    """

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    b_o: Tensor | None = None


class Attention(Module):
    """Multi-head (cross-)attention with its own projection set."""

    def __init__(self, d_query: int, d_context: int, heads: int, rng: np.random.Generator):
        if d_query % heads:
            raise DimensionError(f"query width {d_query} not divisible by {heads} heads")
        bq = 1.0 / math.sqrt(d_query)
        bc = 1.0 / math.sqrt(d_context)
        self.w_q = ad.parameter(rng.uniform(-bq, bq, (d_query, d_query)))
        self.w_k = ad.parameter(rng.uniform(-bc, bc, (d_context, d_query)))
        self.w_v = ad.parameter(rng.uniform(-bc, bc, (d_context, d_query)))
        self.w_o = ad.parameter(rng.uniform(-bq, bq, (d_query, d_query)))
        self.b_o = ad.parameter(np.zeros(d_query))
        self.heads = heads

    @property
    def projections(self) -> ProjectionSet:
        return ProjectionSet(self.w_q, self.w_k, self.w_v, self.w_o, self.b_o)

    def __call__(self, query: Tensor, context: Tensor, mask: np.ndarray | None = None):
        return multi_head_attention(query, context, self.projections, self.heads, mask)


def multi_head_attention(query: Tensor, context: Tensor, weights: ProjectionSet, heads: int,
                         mask: np.ndarray | None = None) -> tuple[Tensor, np.ndarray]:
    """Scaled dot-product attention of ``query`` rows over ``context`` rows.

    Returns the output (q×d_q) and the attention weights (heads×q×c) as a
    plain array. ``mask`` is an additive q×c array; ``-inf`` blocks a pair.
    """
    q_rows, d_q = query.shape
    c_rows, d_s = context.shape
    if weights.w_q.shape != (d_q, d_q) or weights.w_k.shape[0] != d_s or weights.w_v.shape[0] != d_s:
        raise DimensionError(f"projection shapes do not fit query {query.shape} / context {context.shape}")
    if d_q % heads:
        raise DimensionError(f"query width {d_q} not divisible by {heads} heads")
    d = d_q // heads
    q = ad.matmul(query, weights.w_q).reshape(q_rows, heads, d).transpose(1, 0, 2)
    k = ad.matmul(context, weights.w_k).reshape(c_rows, heads, d).transpose(1, 2, 0)
    v = ad.matmul(context, weights.w_v).reshape(c_rows, heads, d).transpose(1, 0, 2)
    scores = ad.matmul(q, k) * (1.0 / math.sqrt(d))
    attn = ad.softmax(scores, axis=-1, mask=mask)
    mixed = ad.matmul(attn, v).transpose(1, 0, 2).reshape(q_rows, d_q)
    out = ad.linear(mixed, weights.w_o, weights.b_o)
    return out, attn.data


def lr_rate(step: int, warmup: int = 3000, base: float = 1.0, model_dim: int = 512) -> float:
    """Inverse-square-root schedule with linear warm-up; peaks at ``step == warmup``."""
    step = max(int(step), 1)
    return base * model_dim**-0.5 * min(step**-0.5, step * warmup**-1.5)


class AdamW:
    """Decoupled-weight-decay Adam over a fixed parameter list."""

    def __init__(self, params, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = list(params)
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float, clip: float | None = None) -> None:
        self.t += 1
        b1, b2 = self.betas
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        if clip is not None:
            norm = math.sqrt(sum(float((g * g).sum()) for g in grads))
            if norm > clip:
                grads = [g * (clip / norm) for g in grads]
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if self.weight_decay:
                p.data -= lr * self.weight_decay * p.data
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {"t": np.array([float(self.t)])}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m.{i}"] = m.copy()
            out[f"v.{i}"] = v.copy()
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.t = int(state["t"][0])
        for i in range(len(self.params)):
            self.m[i][...] = state[f"m.{i}"]
            self.v[i][...] = state[f"v.{i}"]
