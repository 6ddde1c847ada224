"""Spectral transformer: patch + formula tokens in, functional-group logits out."""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .chem.tables import SUPPORTED_ELEMENTS
from .config import ModelConfig
from .nn import MLP, Attention, Embedding, LayerNorm, Linear, Module

FORMULA_VOCAB: tuple[str, ...] = SUPPORTED_ELEMENTS + tuple("0123456789")
_TOKEN_INDEX = {tok: k for k, tok in enumerate(FORMULA_VOCAB)}
_FORMULA_RE = re.compile(r"[A-Z][a-z]?|\d")


class VocabularyError(KeyError):
    pass


def formula_tokens(formula: str) -> list[str]:
    """Split a Hill formula into element symbols and single digits: C3H8O -> C,3,H,8,O."""
    tokens = _FORMULA_RE.findall(formula)
    if "".join(tokens) != formula:
        raise VocabularyError(f"cannot tokenise formula {formula!r}")
    for tok in tokens:
        if tok not in _TOKEN_INDEX:
            raise VocabularyError(f"formula token {tok!r} outside the vocabulary")
    return tokens


def token_ids(tokens: Sequence[str]) -> np.ndarray:
    try:
        return np.array([_TOKEN_INDEX[t] for t in tokens], dtype=np.intp)
    except KeyError as exc:
        raise VocabularyError(f"formula token {exc.args[0]!r} outside the vocabulary") from None


def scale_spectrum(intensities: np.ndarray) -> np.ndarray:
    """Divide by the maximum so the patch projection sees values in [0, 1]."""
    peak = float(np.max(intensities)) if len(intensities) else 0.0
    return intensities / peak if peak > 0 else np.asarray(intensities, dtype=np.float64)


class Block(Module):
    """Pre-norm transformer block; with ``cross`` it also attends to a context."""

    def __init__(self, d: int, heads: int, ffn_mult: int, rng: np.random.Generator,
                 cross: bool = False, d_context: int | None = None):
        self.norm1 = LayerNorm(d)
        self.attn = Attention(d, d, heads, rng)
        self.cross = cross
        if cross:
            self.norm_c = LayerNorm(d)
            self.cross_attn = Attention(d, d_context or d, heads, rng)
        self.norm2 = LayerNorm(d)
        self.ffn = MLP(d, ffn_mult * d, d, rng)

    def __call__(self, x: Tensor, self_mask: np.ndarray, context: Tensor | None = None,
                 context_mask: np.ndarray | None = None):
        normed = self.norm1(x)
        out, _ = self.attn(normed, normed, self_mask)
        x = x + out
        maps = None
        if self.cross:
            out, maps = self.cross_attn(self.norm_c(x), context, context_mask)
            x = x + out
        x = x + self.ffn(self.norm2(x))
        return x, maps


def _block_mask(groups_q: np.ndarray, groups_k: np.ndarray) -> np.ndarray:
    return np.where(groups_q[:, None] == groups_k[None, :], 0.0, -np.inf)


@dataclass
class Encoded:
    """Spectral features for a batch: rows of every sample stacked, with owners."""

    S: Tensor
    owner: np.ndarray
    n_patches: int

    def detached(self) -> "Encoded":
        return Encoded(self.S.detach(), self.owner, self.n_patches)

    def rows(self, k: int) -> np.ndarray:
        return self.S.data[self.owner == k]


@dataclass
class ClassifierOutput:
    logits: Tensor          # B x m
    encoded: Encoded
    cross_maps: list        # per decoder layer: heads x (B*m) x rows


class SpectralClassifier(Module):
    def __init__(self, cfg: ModelConfig, n_groups: int, rng: np.random.Generator):
        d = cfg.d_s
        self.cfg = cfg
        self.n_groups = n_groups
        self.patch_proj = Linear(cfg.patch_size, d, rng)
        self.token_embed = Embedding(len(FORMULA_VOCAB), d, rng, scale=0.5)
        n_pos = 3200 // cfg.patch_size + cfg.max_formula_tokens
        self.pos_embed = Embedding(n_pos, d, rng, scale=0.1)
        self.encoder = [Block(d, cfg.heads, cfg.ffn_mult, rng) for _ in range(cfg.enc_layers)]
        self.enc_norm = LayerNorm(d)
        self.queries = ad.parameter(rng.normal(0, 0.5, size=(n_groups, d)))
        self.decoder = [Block(d, cfg.heads, cfg.ffn_mult, rng, cross=True) for _ in range(cfg.dec_layers)]
        self.dec_norm = LayerNorm(d)
        self.head = Linear(d, 1, rng)

    # -- embedding ----------------------------------------------------------
    def patch_embed(self, intensities: np.ndarray) -> Tensor:
        p = self.cfg.patch_size
        x = np.asarray(intensities, dtype=np.float64)
        if x.size % p:
            raise ValueError(f"{x.size} points do not split into patches of {p}")
        return self.patch_proj(ad.tensor(scale_spectrum(x).reshape(-1, p)))

    def embed_spectrum(self, intensities: np.ndarray, formula: str) -> Tensor:
        """(p + c) x d_s token sequence: patch projections then formula tokens, plus positions."""
        ids = token_ids(formula_tokens(formula))
        if len(ids) > self.cfg.max_formula_tokens:
            raise VocabularyError(f"formula {formula!r} longer than {self.cfg.max_formula_tokens} tokens")
        patches = self.patch_embed(intensities)
        seq = ad.concat([patches, self.token_embed(ids)], axis=0)
        return seq + self.pos_embed(np.arange(seq.shape[0]))

    # -- encoder / decoder ------------------------------------------------
    def encode(self, tokens: Sequence[Tensor]) -> Encoded:
        owner = np.concatenate([np.full(t.shape[0], k) for k, t in enumerate(tokens)]).astype(np.intp)
        x = ad.concat(list(tokens), axis=0)
        mask = _block_mask(owner, owner)
        for block in self.encoder:
            x, _ = block(x, mask)
        n_patches = 3200 // self.cfg.patch_size
        return Encoded(self.enc_norm(x), owner, n_patches)

    def decode_fg(self, enc: Encoded, queries: Tensor | None = None):
        """Logits (B x m) plus the cross-attention maps of every decoder layer."""
        queries = self.queries if queries is None else queries
        m = queries.shape[0]
        n_samples = int(enc.owner.max()) + 1
        q_owner = np.repeat(np.arange(n_samples), m)
        q = ad.take(queries, np.tile(np.arange(m), n_samples))
        self_mask = _block_mask(q_owner, q_owner)
        ctx_mask = _block_mask(q_owner, enc.owner)
        maps = []
        for block in self.decoder:
            q, attn = block(q, self_mask, enc.S, ctx_mask)
            maps.append(attn)
        logits = self.head(self.dec_norm(q)).reshape(n_samples, m)
        return logits, maps

    def __call__(self, spectra: Sequence[np.ndarray], formulas: Sequence[str]) -> ClassifierOutput:
        tokens = [self.embed_spectrum(s, f) for s, f in zip(spectra, formulas)]
        enc = self.encode(tokens)
        logits, maps = self.decode_fg(enc)
        return ClassifierOutput(logits, enc, maps)


def bce_loss(logits: Tensor, y: np.ndarray) -> Tensor:
    """Mean binary cross-entropy from logits: softplus(f) - y f."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != logits.shape:
        raise ValueError(f"labels {y.shape} do not match logits {logits.shape}")
    return (ad.softplus(logits) - logits * y).mean()


def label_accuracy(logits: np.ndarray, y: np.ndarray) -> float:
    return float(((np.asarray(logits) > 0) == (np.asarray(y) > 0.5)).mean())
