"""Geometric autoencoder with spectral cross-attention on nodes and edges."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ModelConfig
from .egnn import EGNN, GraphBatch, zero_com_project, zero_com_project_t
from .encoder import Encoded
from .nn import MLP, Attention, Embedding, LayerNorm, Module


class AtomVocabulary(Module):
    """Learnable n x d_h embedding over the atom types seen in training."""

    def __init__(self, elements: Sequence[str], d_h: int, rng: np.random.Generator):
        self.elements = tuple(elements)
        self.index = {el: k for k, el in enumerate(self.elements)}
        self.table = Embedding(len(self.elements), d_h, rng, scale=1.0)

    def ids(self, elements: Sequence[str]) -> np.ndarray:
        try:
            return np.array([self.index[el] for el in elements], dtype=np.intp)
        except KeyError as exc:
            raise KeyError(f"element {exc.args[0]!r} not in the atom vocabulary") from None


def tokenize_atoms(elements: Sequence[str], vocab: AtomVocabulary) -> Tensor:
    return vocab.table(vocab.ids(elements))


class CrossAttentionStack(Module):
    """Residual pre-norm cross-attention layers from query rows to spectral rows."""

    def __init__(self, d_query: int, d_context: int, n_layers: int, heads: int, rng: np.random.Generator):
        self.norms = [LayerNorm(d_query) for _ in range(n_layers)]
        self.layers = [Attention(d_query, d_context, heads, rng) for _ in range(n_layers)]

    def __call__(self, rows: Tensor, context: Tensor, mask: np.ndarray):
        maps = []
        for norm, attn in zip(self.norms, self.layers):
            out, a = attn(norm(rows), context, mask)
            rows = rows + out
            maps.append(a)
        return rows, maps


def inject_spectral_nodes(z_h: Tensor, enc: Encoded, node_owner: np.ndarray,
                          stack: CrossAttentionStack):
    """Concatenate z_h with its spectrum-attended copy: N x 2 d_h, plus per-layer maps."""
    mask = np.where(node_owner[:, None] == enc.owner[None, :], 0.0, -np.inf)
    z_hs, maps = stack(z_h, enc.S, mask)
    return ad.concat([z_h, z_hs], axis=1), maps


class EdgeFeatureBuilder(Module):
    def __init__(self, d_h: int, d_edge: int, hidden: int, rng: np.random.Generator):
        self.mlp = MLP(1 + d_h, hidden, d_edge, rng)

    def __call__(self, z_x: Tensor, z_h: Tensor, batch: GraphBatch) -> Tensor:
        return build_edge_features(z_x, z_h, batch, self)


def build_edge_features(z_x: Tensor, z_h: Tensor, batch: GraphBatch, builder: EdgeFeatureBuilder) -> Tensor:
    """MLP(|z_x_i - z_x_j|^2, z_h_i + z_h_j) for every ordered pair: E x d_edge."""
    diff = ad.take(z_x, batch.src) - ad.take(z_x, batch.dst)
    d2 = (diff * diff).sum(axis=1, keepdims=True)
    pair = ad.take(z_h, batch.src) + ad.take(z_h, batch.dst)
    return builder.mlp(ad.concat([d2, pair], axis=1))


def inject_spectral_edges(z_e: Tensor, enc: Encoded, batch: GraphBatch, stack: CrossAttentionStack):
    """Edge rows attend to their molecule's spectral rows; residual update."""
    owner_of_graph = batch.edge_graph
    mask = np.where(owner_of_graph[:, None] == enc.owner[None, :], 0.0, -np.inf)
    return stack(z_e, enc.S, mask)


@dataclass
class AEOutput:
    x: Tensor            # centred input coordinates
    mean: Tensor         # encoder mean
    z_x: Tensor          # sampled latent
    x_rec: Tensor
    z_h: Tensor
    z_h_aug: Tensor
    node_maps: list


class GeoAutoencoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.vocab = AtomVocabulary(cfg.elements, cfg.d_h, rng)
        self.node_attn = CrossAttentionStack(cfg.d_h, cfg.d_s, cfg.cross_layers, cfg.cross_heads, rng)
        self.encoder = EGNN(2 * cfg.d_h, None, cfg.encoder_layers, rng, cfg.egnn_hidden, cfg.egnn_hidden)
        self.decoder = EGNN(2 * cfg.d_h, None, cfg.decoder_layers, rng, cfg.egnn_hidden, cfg.egnn_hidden)

    def condition(self, elements: Sequence[str], enc: Encoded, batch: GraphBatch, node_owner: np.ndarray):
        z_h = tokenize_atoms(elements, self.vocab)
        z_h_aug, maps = inject_spectral_nodes(z_h, enc, node_owner, self.node_attn)
        return z_h, z_h_aug, maps

    def encode_geometry(self, x: Tensor, z_h_aug: Tensor, batch: GraphBatch) -> Tensor:
        _, out = self.encoder(z_h_aug, x, batch)
        return zero_com_project_t(out, batch)

    def decode_geometry(self, z_x: Tensor, z_h_aug: Tensor, batch: GraphBatch) -> Tensor:
        _, out = self.decoder(z_h_aug, z_x, batch)
        return zero_com_project_t(out, batch)

    def __call__(self, coords: np.ndarray, elements: Sequence[str], enc: Encoded, batch: GraphBatch,
                 rng: np.random.Generator | None = None, node_owner: np.ndarray | None = None) -> AEOutput:
        """Encode and decode; ``rng`` draws the latent noise, ``None`` uses the mean."""
        owner = batch.node_graph if node_owner is None else node_owner
        z_h, z_h_aug, maps = self.condition(elements, enc, batch, owner)
        x = ad.tensor(zero_com_project(coords, batch))
        mean = self.encode_geometry(x, z_h_aug, batch)
        if rng is not None and self.cfg.sigma0 > 0:
            noise = zero_com_project(rng.normal(size=mean.shape), batch)
            z_x = mean + self.cfg.sigma0 * noise
        else:
            z_x = mean
        x_rec = self.decode_geometry(z_x, z_h_aug, batch)
        return AEOutput(x, mean, z_x, x_rec, z_h, z_h_aug, maps)


def gaussian_kl(mean: Tensor, sigma: float) -> Tensor:
    """KL(N(mean, sigma^2 I) || N(0, I)) summed over all entries."""
    const = mean.size * 0.5 * (sigma**2 - 1.0 - np.log(sigma**2))
    return 0.5 * (mean * mean).sum() + const


def ae_loss(out: AEOutput, batch: GraphBatch, sigma0: float, lambda_kl: float):
    """Per-molecule ||x - x_rec||^2 (summed over atoms) plus lambda_KL * KL, averaged over molecules.

    Returns ``(loss, recon_mse)`` where ``recon_mse`` is the elementwise mean
    squared error in Å^2 (a plain float, for logging).
    """
    err = out.x - out.x_rec
    recon = (err * err).sum() * (1.0 / batch.n_graphs)
    kl = gaussian_kl(out.mean, sigma0) * (1.0 / batch.n_graphs)
    loss = recon + lambda_kl * kl
    mse = float((err.data**2).mean())
    return loss, mse
