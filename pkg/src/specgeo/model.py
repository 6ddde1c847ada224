"""The three networks together, plus batched conditioning and sampling."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autoencoder import GeoAutoencoder, tokenize_atoms
from .chem.geometry import Geometry
from .config import ModelConfig
from .diffusion import Denoiser, NoiseSchedule, make_schedule, sample_latents
from .egnn import GraphBatch, NumericError
from .encoder import Encoded, SpectralClassifier
from .nn import Module


@dataclass(frozen=True)
class Example:
    """One training or test item: atoms, centred-or-not coordinates, spectrum, labels."""

    id: str
    elements: tuple[str, ...]
    coords: np.ndarray
    spectrum: np.ndarray
    formula: str
    labels: np.ndarray


def stack_examples(examples: Sequence[Example]):
    batch = GraphBatch(tuple(len(e.elements) for e in examples))
    elements = [el for e in examples for el in e.elements]
    coords = np.concatenate([e.coords for e in examples], axis=0)
    return batch, elements, coords


class SpecGeoModel(Module):
    def __init__(self, cfg: ModelConfig, n_groups: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.classifier = SpectralClassifier(cfg, n_groups, rng)
        self.ae = GeoAutoencoder(cfg, rng)
        self.denoiser = Denoiser(cfg, rng)

    def encode_spectra(self, examples: Sequence[Example]) -> tuple[ad.Tensor, Encoded]:
        out = self.classifier([e.spectrum for e in examples], [e.formula for e in examples])
        return out.logits, out.encoded

    def schedule(self) -> NoiseSchedule:
        return make_schedule(self.cfg.steps)

    def sample(self, elements: Sequence[str], enc: Encoded, owner_index: int, n_samples: int,
               rng: np.random.Generator, schedule: NoiseSchedule | None = None,
               trace: list | None = None) -> list[Geometry | None]:
        """Draw ``n_samples`` geometries for one spectrum (row owner ``owner_index`` of ``enc``).

        Samples are independent graphs in one batch. A sample whose trajectory
        overflows is dropped from later steps and returned as None, so one bad
        draw does not take the others with it.
        """
        schedule = schedule or self.schedule()
        n = len(elements)
        rows = np.flatnonzero(enc.owner == owner_index)
        S_rows = enc.S.data[rows]
        z_h_one = tokenize_atoms(list(elements), self.ae.vocab).detach().data
        alive = np.ones(n_samples, dtype=bool)
        parts: dict[int, tuple] = {}

        def part(m: int):
            # batch, spectral context and atom tokens for m copies of the molecule
            if m not in parts:
                parts[m] = (GraphBatch((n,) * m),
                            Encoded(ad.tensor(np.tile(S_rows, (m, 1))), np.repeat(np.arange(m), len(rows)),
                                    enc.n_patches),
                            ad.tensor(np.tile(z_h_one, (m, 1))))
            return parts[m]

        def guarded(fn, z, graphs):
            """Apply ``fn`` to the selected graphs, isolating any that fail numerically."""
            out = np.zeros((len(graphs) * n, 3))
            try:
                return fn(z, len(graphs)), np.ones(len(graphs), dtype=bool)
            except NumericError:
                ok = np.ones(len(graphs), dtype=bool)
                for j in range(len(graphs)):
                    try:
                        out[j * n:(j + 1) * n] = fn(z[j * n:(j + 1) * n], 1)
                    except NumericError:
                        ok[j] = False
                return out, ok

        def denoise(z, m, t):
            batch, ctx, z_h = part(m)
            with np.errstate(over="ignore", invalid="ignore"):
                return self.denoiser(ad.tensor(z), np.full(m, t), z_h, ctx, batch).eps.data

        def eps_fn(z, t_vec):
            eps = np.zeros_like(z)
            graphs = np.flatnonzero(alive)
            if len(graphs):
                sel = (graphs[:, None] * n + np.arange(n)).ravel()
                pred, ok = guarded(lambda zz, m: denoise(zz, m, int(t_vec[0])), z[sel], graphs)
                eps[sel] = pred
                alive[graphs[~ok]] = False
            return eps

        full = GraphBatch((n,) * n_samples)
        z0 = sample_latents(eps_fn, full, schedule, rng, trace=trace)

        def decode(z, m):
            batch, ctx, z_h = part(m)
            with np.errstate(over="ignore", invalid="ignore"):
                z_h_aug = self.ae.condition(list(elements) * m, ctx, batch, batch.node_graph)[1].detach()
                x = self.ae.decode_geometry(ad.tensor(z), z_h_aug, batch).data
            if not np.isfinite(x).all():
                raise NumericError("non-finite decoded coordinates")
            return x

        out: list[Geometry | None] = [None] * n_samples
        graphs = np.flatnonzero(alive & np.isfinite(z0.reshape(n_samples, -1)).all(axis=1))
        if len(graphs):
            sel = (graphs[:, None] * n + np.arange(n)).ravel()
            x, ok = guarded(decode, z0[sel], graphs)
            for j, g in enumerate(graphs):
                if ok[j]:
                    out[g] = Geometry(x[j * n:(j + 1) * n], tuple(elements))
        return out
