"""Per-spectrum and aggregate reports over sampled geometries.

Spectral similarity needs a spectrum for each sampled molecule. Quantum
chemistry is out of scope, so stable samples are looked up by canonical key in
the dataset store; keys not present are counted as unavailable.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, fields
from typing import Mapping, Sequence

from .chem import Geometry, MolecularGraph, check_connectivity, check_stability, check_validity, perceive_bonds
from .fingerprint import canonical_key, graph_similarity
from .spectra import sis, sis_star
from .store import DatasetStore

UNAVAILABLE = "unavailable"


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class SpectrumReport:
    spectrum_id: str
    n_samples: int
    sim_g: float
    max_sim_g: float
    mol_acc: float
    SIS: float | None
    max_SIS: float | None
    SIS_star: float | None
    validity: float
    stability: float
    connectivity: float
    n_stable: int
    sis_unavailable: int


COLUMNS = [f.name for f in fields(SpectrumReport)]


def _perceive(geom: Geometry | None) -> MolecularGraph | None:
    if geom is None:  # diverged during sampling
        return None
    try:
        graph = perceive_bonds(geom)
    except Exception:  # a sample whose perception fails counts as invalid
        return None
    return graph


def _mean(values: Sequence[float]) -> float | None:
    return math.fsum(values) / len(values) if values else None


def evaluate_spectrum(spectrum_id: str, samples: Sequence[Geometry | None], store: DatasetStore) -> SpectrumReport:
    if not samples:
        raise EvaluationError(f"no samples for spectrum {spectrum_id}")
    ref = store.by_id.get(spectrum_id)
    if ref is None:
        raise EvaluationError(f"spectrum {spectrum_id} is not in the store")
    graphs = [_perceive(g) for g in samples]
    sims, sis_vals, star_vals = [], [], []
    valid = stable = connected = missing = 0
    hit = False
    for g in graphs:
        if g is None:
            sims.append(0.0)
            continue
        sims.append(graph_similarity(g, ref.graph))
        key = canonical_key(g)
        hit |= key == ref.key
        valid += check_validity(g) and g.resolved
        connected += check_connectivity(g)
        if g.resolved and check_stability(g):
            stable += 1
            oracle = store.by_key.get(key)
            if oracle is None:
                missing += 1
                continue
            sis_vals.append(sis(oracle.spectrum, ref.spectrum))
            star_vals.append(sis_star(oracle.spectrum, ref.spectrum))
    n = len(samples)
    return SpectrumReport(
        spectrum_id, n, _mean(sims), max(sims), float(hit),
        _mean(sis_vals), max(sis_vals) if sis_vals else None, _mean(star_vals),
        valid / n, stable / n, connected / n, stable, missing,
    )


@dataclass
class EvaluationReport:
    rows: list[SpectrumReport]

    def aggregate(self) -> dict:
        rows = self.rows
        n = sum(r.n_samples for r in rows)
        with_sis = [r for r in rows if r.SIS is not None]
        return {
            "spectrum_id": "ALL",
            "n_samples": n,
            "sim_g": _mean([r.sim_g for r in rows]),
            "max_sim_g": _mean([r.max_sim_g for r in rows]),
            "mol_acc": _mean([r.mol_acc for r in rows]),
            "SIS": _mean([r.SIS for r in with_sis]),
            "max_SIS": _mean([r.max_SIS for r in with_sis]),
            "SIS_star": _mean([r.SIS_star for r in with_sis]),
            "validity": math.fsum(r.validity * r.n_samples for r in rows) / n,
            "stability": math.fsum(r.stability * r.n_samples for r in rows) / n,
            "connectivity": math.fsum(r.connectivity * r.n_samples for r in rows) / n,
            "n_stable": sum(r.n_stable for r in rows),
            "sis_unavailable": sum(r.sis_unavailable for r in rows),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for row in [r.__dict__ for r in self.rows] + [self.aggregate()]:
            w.writerow([_cell(row[c]) for c in COLUMNS])
        return buf.getvalue()


def _cell(v) -> str:
    if v is None:
        return UNAVAILABLE
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def evaluate(samples: Mapping[str, Sequence[Geometry | None]], store: DatasetStore) -> EvaluationReport:
    """Score every spectrum's sample list against its stored reference."""
    if not samples or not any(samples.values()):
        raise EvaluationError("empty sample set")
    return EvaluationReport([evaluate_spectrum(sid, samples[sid], store) for sid in sorted(samples)])
