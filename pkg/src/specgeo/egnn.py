"""E(n)-equivariant graph convolutions over batches of fully connected molecules."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import MLP, Linear, Module

NEG_INF = -np.inf


class NumericError(FloatingPointError):
    def __init__(self, message: str, layer: int | None = None):
        self.layer = layer
        super().__init__(message if layer is None else f"layer {layer}: {message}")


@dataclass(frozen=True)
class GraphBatch:
    """Several molecules stacked row-wise, each fully connected.

    Edges are all ordered pairs ``(i, j)``, ``i != j``, inside one molecule, in
    lexicographic order, so summation order is fixed.
    """

    sizes: tuple[int, ...]

    def __post_init__(self):
        if any(n < 1 for n in self.sizes):
            raise ValueError("every molecule needs at least one atom")
        object.__setattr__(self, "sizes", tuple(int(n) for n in self.sizes))

    @property
    def n_nodes(self) -> int:
        return sum(self.sizes)

    @property
    def n_graphs(self) -> int:
        return len(self.sizes)

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)]).astype(np.intp)

    @cached_property
    def node_graph(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_graphs), self.sizes).astype(np.intp)

    @cached_property
    def _edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        src, dst, eg = [], [], []
        for g, (n, off) in enumerate(zip(self.sizes, self.offsets)):
            i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
            keep = i != j
            src.append(i[keep] + off)
            dst.append(j[keep] + off)
            eg.append(np.full(int(keep.sum()), g))
        cat = lambda xs: np.concatenate(xs).astype(np.intp) if xs else np.zeros(0, np.intp)
        return cat(src), cat(dst), cat(eg)

    @property
    def src(self) -> np.ndarray:
        return self._edges[0]

    @property
    def dst(self) -> np.ndarray:
        return self._edges[1]

    @property
    def edge_graph(self) -> np.ndarray:
        return self._edges[2]

    @property
    def n_edges(self) -> int:
        return len(self.src)

    @cached_property
    def reverse_edge(self) -> np.ndarray:
        """Index of edge ``(j, i)`` for every edge ``(i, j)``."""
        lookup = {(int(a), int(b)): k for k, (a, b) in enumerate(zip(self.src, self.dst))}
        return np.array([lookup[(int(b), int(a))] for a, b in zip(self.src, self.dst)], dtype=np.intp)

    def context_mask(self, rows_graph: np.ndarray, context_graph: np.ndarray) -> np.ndarray:
        """Additive attention mask letting rows see only their own molecule's context."""
        return np.where(rows_graph[:, None] == context_graph[None, :], 0.0, NEG_INF)

    def split(self, x: np.ndarray) -> list[np.ndarray]:
        return [x[a:b] for a, b in zip(self.offsets[:-1], self.offsets[1:])]


def zero_com_project(x: np.ndarray, batch: GraphBatch | None = None) -> np.ndarray:
    """Subtract each molecule's coordinate mean."""
    x = np.asarray(x, dtype=np.float64)
    if batch is None:
        return x - x.mean(axis=0, keepdims=True)
    sums = np.zeros((batch.n_graphs, x.shape[1]))
    np.add.at(sums, batch.node_graph, x)
    means = sums / np.asarray(batch.sizes, dtype=np.float64)[:, None]
    return x - means[batch.node_graph]


def zero_com_project_t(x: Tensor, batch: GraphBatch) -> Tensor:
    counts = np.asarray(batch.sizes, dtype=np.float64)[:, None]
    means = ad.segment_sum(x, batch.node_graph, batch.n_graphs) * (1.0 / counts)
    return x - ad.take(means, batch.node_graph)


def com_residual(x: np.ndarray, batch: GraphBatch) -> float:
    """Largest absolute per-molecule coordinate mean."""
    sums = np.zeros((batch.n_graphs, x.shape[1]))
    np.add.at(sums, batch.node_graph, x)
    return float(np.abs(sums / np.asarray(batch.sizes)[:, None]).max())


@dataclass
class NodeState:
    h: Tensor
    x: Tensor


class EGCL(Module):
    """One equivariant graph convolution layer.

    m_ij = phi_e(h_i, h_j, d_ij^2, a_ij), gated by sigmoid(phi_inf(m_ij)) and
    summed into phi_h; coordinates move along (x_i - x_j) / (d_ij + 1) scaled
    by phi_x of the same edge input.
    """

    def __init__(self, d_h: int, d_edge: int, hidden: int, rng: np.random.Generator):
        d_in = 2 * d_h + 1 + d_edge
        self.d_h, self.d_edge = d_h, d_edge
        self.phi_e = MLP(d_in, hidden, hidden, rng, final_activation=True)
        self.phi_inf = Linear(hidden, 1, rng)
        self.phi_h = MLP(d_h + hidden, hidden, d_h, rng)
        self.phi_x = MLP(d_in, hidden, 1, rng, zero_last=True, last_bias=False)

    def __call__(self, state: NodeState, batch: GraphBatch, edge_attr: Tensor | None = None) -> NodeState:
        return egcl_forward(state, batch, self, edge_attr)


def _edge_inputs(h: Tensor, x: Tensor, batch: GraphBatch, edge_attr: Tensor | None):
    diff = ad.take(x, batch.src) - ad.take(x, batch.dst)
    d2 = (diff * diff).sum(axis=1, keepdims=True)
    parts = [ad.take(h, batch.src), ad.take(h, batch.dst), d2]
    if edge_attr is not None:
        parts.append(edge_attr)
    return ad.concat(parts, axis=1), diff, d2


def egcl_forward(state: NodeState, batch: GraphBatch, params: EGCL, edge_attr: Tensor | None = None) -> NodeState:
    h, x = state.h, state.x
    n = batch.n_nodes
    if batch.n_edges == 0:
        agg = ad.tensor(np.zeros((n, params.phi_inf.weight.shape[0])))
        return NodeState(h + params.phi_h(ad.concat([h, agg], axis=1)), x)
    e_in, diff, d2 = _edge_inputs(h, x, batch, edge_attr)
    m = params.phi_e(e_in)
    gate = ad.sigmoid(params.phi_inf(m))
    agg = ad.segment_sum(m * gate, batch.src, n)
    h_new = h + params.phi_h(ad.concat([h, agg], axis=1))
    dist = ad.sqrt(d2 + 1e-12)
    step = diff * (1.0 / (dist + 1.0)) * params.phi_x(e_in)
    x_new = x + ad.segment_sum(step, batch.src, n)
    return NodeState(h_new, x_new)


def egnn_forward(state: NodeState, batch: GraphBatch, layers: Sequence[EGCL],
                 edge_attr: Tensor | None = None) -> NodeState:
    for k, layer in enumerate(layers):
        state = egcl_forward(state, batch, layer, edge_attr)
        if not (np.isfinite(state.h.data).all() and np.isfinite(state.x.data).all()):
            raise NumericError("non-finite activations", k)
    return state


class EGNN(Module):
    """Input embedding, a stack of EGCLs, and an optional output projection for h."""

    def __init__(self, d_in: int, d_out: int | None, n_layers: int, rng: np.random.Generator,
                 d_node: int = 64, hidden: int = 64, d_edge: int = 0):
        self.embed = Linear(d_in, d_node, rng)
        self.layers = [EGCL(d_node, d_edge, hidden, rng) for _ in range(n_layers)]
        self.out = Linear(d_node, d_out, rng) if d_out else None

    def __call__(self, h: Tensor, x: Tensor, batch: GraphBatch, edge_attr: Tensor | None = None):
        state = egnn_forward(NodeState(self.embed(h), x), batch, self.layers, edge_attr)
        return (self.out(state.h) if self.out is not None else state.h), state.x
