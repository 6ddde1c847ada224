"""Noise schedule, forward noising of z_x, the conditional denoiser and the sampler."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .autoencoder import (
    CrossAttentionStack, EdgeFeatureBuilder, build_edge_features, inject_spectral_edges,
    inject_spectral_nodes,
)
from .config import ModelConfig
from .egnn import EGNN, GraphBatch, NumericError, zero_com_project, zero_com_project_t
from .encoder import Encoded
from .nn import Module

BETA_MIN, BETA_MAX = 1e-5, 0.999
PRECISION = 1e-5  # floor mixed into alpha so the final reverse steps stay well conditioned


@dataclass(frozen=True)
class NoiseSchedule:
    """Arrays indexed by t = 0..T; index 0 is clean data (alpha = 1, beta = 0)."""

    alpha: np.ndarray
    beta: np.ndarray
    rho: np.ndarray

    @property
    def T(self) -> int:
        return len(self.alpha) - 1


def make_schedule(T: int, kind: str = "polynomial", precision: float = PRECISION) -> NoiseSchedule:
    """alpha_t = (1 - (t/T)^2)^2 with per-step beta clipped to [1e-5, 0.999].

    The clipped curve is then mixed with a small constant,
    ``(1 - precision) * alpha + precision``, and the per-step betas are
    re-derived and re-clipped. Without the floor the last step has
    beta_T = 0.999 and divides the sampler state by sqrt(1e-3), so any error in
    the noise prediction at t = T is amplified about thirty-fold.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    if kind != "polynomial":
        raise ValueError(f"unknown schedule {kind!r}")
    t = np.arange(T + 1) / T
    target = (1.0 - t**2) ** 2
    curve = np.ones(T + 1)
    for k in range(1, T + 1):
        raw = 1.0 - target[k] / target[k - 1] if target[k - 1] > 0 else 1.0
        curve[k] = curve[k - 1] * (1.0 - np.clip(raw, BETA_MIN, BETA_MAX))
    mixed = (1.0 - precision) * curve + precision
    beta = np.zeros(T + 1)
    beta[1:] = np.clip(1.0 - mixed[1:] / mixed[:-1], BETA_MIN, BETA_MAX)
    alpha = np.cumprod(1.0 - beta)
    return NoiseSchedule(alpha, beta, np.sqrt(beta))


def forward_sample(z0: np.ndarray, t: int, schedule: NoiseSchedule, noise: np.ndarray) -> np.ndarray:
    if not 0 <= t <= schedule.T:
        raise ValueError(f"t={t} outside 0..{schedule.T}")
    a = schedule.alpha[t]
    return np.sqrt(a) * z0 + np.sqrt(1.0 - a) * noise


def time_embedding(t: np.ndarray, dim: int, T: int) -> np.ndarray:
    """Sinusoidal features of the step index; one row per entry of ``t``."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    arg = np.asarray(t, dtype=np.float64)[:, None] * (1000.0 / T) * freqs[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


@dataclass
class DenoiserOutput:
    eps: Tensor
    node_maps: list
    edge_maps: list


class Denoiser(Module):
    """EGNN noise predictor conditioned on atom types, spectral features and t."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.node_attn = CrossAttentionStack(cfg.d_h, cfg.d_s, cfg.cross_layers, cfg.cross_heads, rng)
        self.edge_builder = EdgeFeatureBuilder(cfg.d_h, cfg.d_edge, cfg.egnn_hidden, rng)
        self.edge_attn = CrossAttentionStack(cfg.d_edge, cfg.d_s, cfg.cross_layers, cfg.cross_heads, rng)
        self.egnn = EGNN(2 * cfg.d_h + cfg.t_dim, None, cfg.denoiser_layers, rng,
                         cfg.egnn_hidden, cfg.egnn_hidden, cfg.d_edge)

    def __call__(self, z_t: Tensor, t: np.ndarray, z_h: Tensor, enc: Encoded, batch: GraphBatch,
                 node_owner: np.ndarray | None = None) -> DenoiserOutput:
        return denoiser_forward(self, z_t, t, z_h, enc, batch, node_owner)


def denoiser_forward(model: Denoiser, z_t: Tensor, t: np.ndarray, z_h: Tensor, enc: Encoded,
                     batch: GraphBatch, node_owner: np.ndarray | None = None) -> DenoiserOutput:
    """Predict the zero-CoM noise in ``z_t``; ``t`` holds one step index per molecule."""
    cfg = model.cfg
    owner = batch.node_graph if node_owner is None else node_owner
    z_h_aug, node_maps = inject_spectral_nodes(z_h, enc, owner, model.node_attn)
    t_rows = time_embedding(np.asarray(t)[batch.node_graph], cfg.t_dim, cfg.steps)
    h_in = ad.concat([z_h_aug, ad.tensor(t_rows)], axis=1)
    edge_maps: list = []
    edge_attr = None
    if batch.n_edges:
        z_e = build_edge_features(z_t, z_h, batch, model.edge_builder)
        edge_attr, edge_maps = inject_spectral_edges(z_e, _edge_context(enc, owner, batch), batch, model.edge_attn)
    _, x_out = model.egnn(h_in, z_t, batch, edge_attr)
    eps = zero_com_project_t(x_out - z_t, batch)
    if not np.isfinite(eps.data).all():
        raise NumericError("non-finite noise prediction")
    return DenoiserOutput(eps, node_maps, edge_maps)


def _edge_context(enc: Encoded, node_owner: np.ndarray, batch: GraphBatch) -> Encoded:
    """Re-key spectral rows from spectrum owner to graph index when they differ."""
    graph_owner = np.zeros(batch.n_graphs, dtype=np.intp)
    graph_owner[batch.node_graph] = node_owner
    if np.array_equal(graph_owner, np.arange(batch.n_graphs)):
        return enc
    rows = [np.flatnonzero(enc.owner == o) for o in graph_owner]
    idx = np.concatenate(rows)
    owner = np.concatenate([np.full(len(r), g) for g, r in enumerate(rows)]).astype(np.intp)
    return Encoded(ad.take(enc.S, idx), owner, enc.n_patches)


def ldm_loss(z0: np.ndarray, batch: GraphBatch, schedule: NoiseSchedule, predict: Callable,
             rng: np.random.Generator, t: np.ndarray | None = None):
    """Single-sample estimate of E ||eps - eps_hat||^2, per atom row, averaged over molecules.

    ``predict(z_t, t)`` returns a Tensor of noise predictions. Returns the loss
    tensor together with the sampled ``t`` and ``eps``.
    """
    if t is None:
        t = rng.integers(1, schedule.T + 1, size=batch.n_graphs)
    eps = zero_com_project(rng.normal(size=z0.shape), batch)
    a = schedule.alpha[t][batch.node_graph][:, None]
    z_t = np.sqrt(a) * z0 + np.sqrt(1.0 - a) * eps
    pred = predict(ad.tensor(z_t), t)
    err = pred - eps
    per_row = (err * err).sum(axis=1, keepdims=True)
    weights = 1.0 / (np.asarray(batch.sizes, dtype=np.float64)[batch.node_graph][:, None] * batch.n_graphs)
    return (per_row * weights).sum(), t, eps


def reverse_step(z_t: np.ndarray, t: int, eps_hat: np.ndarray, schedule: NoiseSchedule,
                 noise: np.ndarray | None) -> np.ndarray:
    """z_{t-1} = (z_t - beta_t / sqrt(1 - alpha_t) eps_hat) / sqrt(1 - beta_t) + rho_t noise."""
    b, a = schedule.beta[t], schedule.alpha[t]
    out = (z_t - b / np.sqrt(1.0 - a) * eps_hat) / np.sqrt(1.0 - b)
    if t > 1 and noise is not None:
        out = out + schedule.rho[t] * noise
    return out


def sample_latents(eps_fn: Callable[[np.ndarray, np.ndarray], np.ndarray], batch: GraphBatch,
                   schedule: NoiseSchedule, rng: np.random.Generator,
                   z_T: np.ndarray | None = None, trace: list | None = None) -> np.ndarray:
    """Run all T reverse steps from projected Gaussian noise (no fresh noise at t = 1)."""
    z = zero_com_project(rng.normal(size=(batch.n_nodes, 3)) if z_T is None else z_T, batch)
    if trace is not None:
        trace.append(z.copy())
    for t in range(schedule.T, 0, -1):
        t_vec = np.full(batch.n_graphs, t)
        eps_hat = eps_fn(z, t_vec)
        noise = zero_com_project(rng.normal(size=z.shape), batch) if t > 1 else None
        z = zero_com_project(reverse_step(z, t, eps_hat, schedule, noise), batch)
        if trace is not None:
            trace.append(z.copy())
    return z


def replicate_batch(sizes: Sequence[int], copies: int) -> GraphBatch:
    return GraphBatch(tuple(n for n in sizes for _ in range(copies)))
