"""Export of spectral cross-attention maps as CSV tables and an SVG overlay."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from . import autodiff as ad
from .chem import Geometry
from .egnn import GraphBatch
from .encoder import formula_tokens
from .model import Example, SpecGeoModel
from .spectra import DEFAULT_GRID


def head_mean(maps: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Average each layer's heads x rows x positions map over heads."""
    return [np.asarray(m).mean(axis=0) for m in maps]


def aggregate_edges(edge_map: np.ndarray) -> np.ndarray:
    """Max over edge rows: one value per spectral position."""
    return edge_map.max(axis=0)


def normalize_atoms(atom_map: np.ndarray) -> np.ndarray:
    """Rescale each spectral position's column so the atoms' weights sum to 1."""
    totals = atom_map.sum(axis=0, keepdims=True)
    return np.divide(atom_map, totals, out=np.full_like(atom_map, 1.0 / atom_map.shape[0]), where=totals > 0)


@dataclass
class AttentionExport:
    labels: list[str]             # one per spectral position
    edge_max: list[np.ndarray]    # per layer: positions
    atoms: list[np.ndarray]       # per layer: atoms x positions, columns sum to 1
    elements: tuple[str, ...]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "position", "label", "edge_max"]
                   + [f"atom{i}_{el}" for i, el in enumerate(self.elements)])
        for layer, (edge, atoms) in enumerate(zip(self.edge_max, self.atoms)):
            for p, label in enumerate(self.labels):
                w.writerow([layer, p, label, f"{edge[p]:.8f}"] + [f"{v:.8f}" for v in atoms[:, p]])
        return buf.getvalue()


def position_labels(n_patches: int, patch_size: int, formula: str) -> list[str]:
    pts = DEFAULT_GRID.points
    out = [f"{pts[k * patch_size]:.1f}-{pts[(k + 1) * patch_size - 1]:.1f}" for k in range(n_patches)]
    return out + [f"token:{t}" for t in formula_tokens(formula)]


def collect_attention(model: SpecGeoModel, example: Example, geometry: Geometry, t: int = 1) -> AttentionExport:
    """Run the denoiser on the encoded geometry at step ``t`` and keep its cross-attention maps."""
    if tuple(geometry.elements) != tuple(example.elements):
        raise ValueError("geometry atoms do not match the spectrum's molecule")
    _, enc = model.encode_spectra([example])
    enc = enc.detached()
    n = len(geometry)
    batch = GraphBatch((n,))
    z_h, z_h_aug, _ = model.ae.condition(geometry.elements, enc, batch, batch.node_graph)
    z_x = model.ae.encode_geometry(ad.tensor(geometry.coords - geometry.coords.mean(0)), z_h_aug, batch)
    out = model.denoiser(z_x, np.array([t]), z_h.detach(), enc, batch)
    edge = [aggregate_edges(m) for m in head_mean(out.edge_maps)] if out.edge_maps else []
    atoms = [normalize_atoms(m) for m in head_mean(out.node_maps)]
    if not edge:  # a single atom has no edges
        edge = [np.zeros(a.shape[1]) for a in atoms]
    labels = position_labels(enc.n_patches, model.cfg.patch_size, example.formula)
    return AttentionExport(labels, edge, atoms, tuple(geometry.elements))


def render_svg(intensities: np.ndarray, export: AttentionExport, patch_size: int,
               layer: int = -1, width: int = 800, height: int = 240) -> str:
    """Spectrum polyline over patch bands shaded by max edge attention."""
    y = np.asarray(intensities, dtype=np.float64)
    y = y / y.max() if y.max() > 0 else y
    n_patches = len(y) // patch_size
    weights = export.edge_max[layer][:n_patches]
    weights = weights / weights.max() if weights.max() > 0 else weights
    pad = 20
    plot_w, plot_h = width - 2 * pad, height - 2 * pad
    band = plot_w / n_patches
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">', f'<rect width="{width}" height="{height}" fill="white"/>']
    for k, wgt in enumerate(weights):
        parts.append(f'<rect x="{pad + k * band:.2f}" y="{pad}" width="{band:.2f}" height="{plot_h}" '
                     f'fill="#d62728" fill-opacity="{0.85 * wgt:.4f}"/>')
    xs = pad + np.arange(len(y)) * plot_w / (len(y) - 1)
    ys = pad + plot_h * (1.0 - y)
    pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(xs, ys))
    parts.append(f'<polyline points="{pts}" fill="none" stroke="black" stroke-width="1"/>')
    lo, hi = DEFAULT_GRID.points[0], DEFAULT_GRID.points[-1]
    parts.append(f'<text x="{pad}" y="{height - 4}" font-size="11">{lo:.0f} cm-1</text>')
    parts.append(f'<text x="{width - pad}" y="{height - 4}" font-size="11" text-anchor="end">{hi:.0f} cm-1</text>')
    parts.append(f'<text x="{pad}" y="14" font-size="11">{escape("max edge attention, layer " + str(layer))}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def export_attention(model: SpecGeoModel, example: Example, geometry: Geometry, out_prefix: str | Path,
                     t: int = 1) -> tuple[Path, Path]:
    export = collect_attention(model, example, geometry, t)
    out_prefix = Path(out_prefix)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    csv_path = out_prefix.with_suffix(".csv")
    svg_path = out_prefix.with_suffix(".svg")
    csv_path.write_text(export.to_csv())
    svg_path.write_text(render_svg(example.spectrum, export, model.cfg.patch_size))
    return csv_path, svg_path
