"""On-disk dataset store and ingestion with screening.

A store is a directory holding ``records.jsonl`` (one molecule per line, sorted
by id), ``xyz/<id>.xyz`` copies of the geometries, ``ingest_log.csv`` and
``store.json`` with the record count, content hash and functional-group names.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .chem import (
    Geometry, MolecularGraph, XYZParseError, check_connectivity, check_validity, parse_xyz,
    perceive_bonds, write_xyz,
)
from .fingerprint import canonical_key
from .smarts import FunctionalGroupSet, default_groups, label_functional_groups
from .spectra import DEFAULT_GRID, ModeList, Spectrum, SpectrumRecord, broaden, parse_spectrum_record

log = logging.getLogger(__name__)

RECORDS = "records.jsonl"
META = "store.json"
LOG = "ingest_log.csv"


class StoreError(RuntimeError):
    pass


@dataclass(frozen=True)
class StoreRecord:
    id: str
    geometry: Geometry
    graph: MolecularGraph
    key: str
    labels: np.ndarray
    modes: ModeList | None = None
    intensities: np.ndarray | None = None

    @property
    def formula(self) -> str:
        return self.geometry.formula()

    @cached_property
    def spectrum(self) -> Spectrum:
        if self.intensities is not None:
            return Spectrum(self.intensities, DEFAULT_GRID)
        return broaden(self.modes, DEFAULT_GRID)

    def to_json(self) -> str:
        d = {
            "id": self.id,
            "elements": list(self.geometry.elements),
            "coords": self.geometry.coords.tolist(),
            "formula": self.formula,
            "graph": self.graph.to_dict(),
            "key": self.key,
            "labels": [int(v) for v in self.labels],
        }
        if self.modes is not None:
            d["modes"] = [[float(x), float(y)] for x, y in zip(self.modes.wavenumbers, self.modes.intensities)]
        if self.intensities is not None:
            d["intensities"] = [float(v) for v in self.intensities]
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "StoreRecord":
        d = json.loads(line)
        geom = Geometry(np.array(d["coords"], dtype=np.float64), tuple(d["elements"]))
        modes = ModeList.from_pairs(d["modes"]) if "modes" in d else None
        inten = np.array(d["intensities"], dtype=np.float64) if "intensities" in d else None
        return cls(d["id"], geom, MolecularGraph.from_dict(d["graph"]), d["key"],
                   np.array(d["labels"], dtype=np.int64), modes, inten)


@dataclass
class DatasetStore:
    path: Path
    records: list[StoreRecord]
    group_names: tuple[str, ...]
    hash: str

    @classmethod
    def open(cls, path: str | Path) -> "DatasetStore":
        path = Path(path)
        meta_file = path / META
        if not meta_file.exists():
            raise StoreError(f"{path} is not a dataset store (no {META})")
        meta = json.loads(meta_file.read_text())
        with open(path / RECORDS) as fh:
            records = [StoreRecord.from_json(line) for line in fh if line.strip()]
        return cls(path, records, tuple(meta["groups"]), meta["hash"])

    def __len__(self) -> int:
        return len(self.records)

    @cached_property
    def by_id(self) -> dict[str, StoreRecord]:
        return {r.id: r for r in self.records}

    @cached_property
    def by_key(self) -> dict[str, StoreRecord]:
        """First record for each canonical key: the oracle spectrum table."""
        out: dict[str, StoreRecord] = {}
        for r in self.records:
            out.setdefault(r.key, r)
        return out

    def select(self, ids: Sequence[str] | None) -> list[StoreRecord]:
        if ids is None:
            return list(self.records)
        missing = [i for i in ids if i not in self.by_id]
        if missing:
            raise StoreError(f"unknown record ids: {', '.join(missing)}")
        return [self.by_id[i] for i in ids]


@dataclass(frozen=True)
class Drop:
    id: str
    reason: str


def screen_geometry(geom: Geometry, reference_key: str | None = None,
                    delta_pm: float = 40.0) -> tuple[MolecularGraph | None, str]:
    """Perceive the graph and apply the store's acceptance rules; returns (graph, reason)."""
    try:
        graph = perceive_bonds(geom, delta_pm)
    except Exception as exc:  # any perception failure is a screening failure
        return None, f"perception failed: {exc}"
    if not graph.resolved:
        return None, "valence unresolved"
    if not check_validity(graph):
        return None, "valence exceeded"
    if not check_connectivity(graph):
        return None, "disconnected"
    if reference_key is not None and canonical_key(graph) != reference_key:
        return None, "graph differs from reference"
    return graph, ""


def _reference_key(spec: dict) -> str | None:
    if "key" in spec:
        return str(spec["key"])
    if "graph" in spec:
        return canonical_key(MolecularGraph.from_dict(spec["graph"]))
    return None


def _read_spectra(path: Path | None) -> tuple[dict[str, tuple[SpectrumRecord, dict]], list[Drop]]:
    out: dict[str, tuple[SpectrumRecord, dict]] = {}
    drops: list[Drop] = []
    if path is None:
        return out, drops
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise StoreError(f"cannot read spectra file {path}: {exc}") from exc
    for n, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = parse_spectrum_record(line)
            raw = json.loads(line)
        except (ValueError, KeyError, TypeError) as exc:
            drops.append(Drop(f"<line {n}>", f"unreadable spectrum record: {exc}"))
            continue
        if rec.id in out:
            drops.append(Drop(rec.id, "duplicate spectrum id"))
            continue
        out[rec.id] = (rec, raw)
    return out, drops


def build_records(geometries: dict[str, Geometry], spectra: dict[str, tuple[SpectrumRecord, dict]],
                  groups: FunctionalGroupSet, delta_pm: float = 40.0) -> tuple[list[StoreRecord], list[Drop]]:
    records, drops = [], []
    for rid in sorted(set(geometries) | set(spectra)):
        if rid not in spectra:
            drops.append(Drop(rid, "no spectrum"))
            continue
        if rid not in geometries:
            drops.append(Drop(rid, "no geometry"))
            continue
        spec, raw = spectra[rid]
        try:
            spectrum = spec.spectrum(DEFAULT_GRID)
        except ValueError as exc:
            drops.append(Drop(rid, f"bad spectrum: {exc}"))
            continue
        if not spectrum.intensities.sum() > 0:
            drops.append(Drop(rid, "all-zero spectrum"))
            continue
        geom = geometries[rid]
        graph, reason = screen_geometry(geom, _reference_key(raw), delta_pm)
        if graph is None:
            drops.append(Drop(rid, reason))
            continue
        labels = label_functional_groups(graph, groups)
        records.append(StoreRecord(rid, geom, graph, canonical_key(graph), labels,
                                   spec.modes, spec.intensities if spec.modes is None else None))
    return records, drops


def _content_hash(lines: Iterable[str]) -> str:
    h = hashlib.sha256()
    for line in lines:
        h.update(line.encode())
        h.update(b"\n")
    return h.hexdigest()


def write_store(out: str | Path, records: Sequence[StoreRecord], drops: Sequence[Drop],
                groups: FunctionalGroupSet) -> DatasetStore:
    out = Path(out)
    (out / "xyz").mkdir(parents=True, exist_ok=True)
    for stale in (out / "xyz").glob("*.xyz"):
        stale.unlink()
    records = sorted(records, key=lambda r: r.id)
    lines = [r.to_json() for r in records]
    (out / RECORDS).write_text("".join(line + "\n" for line in lines))
    for r in records:
        (out / "xyz" / f"{r.id}.xyz").write_text(write_xyz(r.geometry, r.id))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "status", "reason"])
    for r in records:
        w.writerow([r.id, "kept", ""])
    for d in drops:
        w.writerow([d.id, "dropped", d.reason])
    (out / LOG).write_text(buf.getvalue())
    digest = _content_hash([json.dumps(groups.names)] + lines)
    meta = {"n_records": len(records), "n_dropped": len(drops), "hash": digest,
            "groups": list(groups.names), "grid": [DEFAULT_GRID.start, DEFAULT_GRID.count, DEFAULT_GRID.spacing]}
    (out / META).write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return DatasetStore(out, list(records), tuple(groups.names), digest)


def ingest(xyz_dir: str | Path, spectra_file: str | Path | None, out_store: str | Path,
           groups: FunctionalGroupSet | None = None, delta_pm: float = 40.0) -> tuple[DatasetStore, list[Drop]]:
    """Build a store from ``<id>.xyz`` files plus a JSON-lines spectrum file.

    Spectrum lines carry ``id`` and either ``modes`` (wavenumber, intensity
    pairs) or ``intensities`` on the standard grid. An optional ``graph`` or
    ``key`` field gives the reference structure the perceived graph must match.
    Records failing any check are dropped and logged, never fatal.
    """
    groups = groups or default_groups()
    xyz_dir = Path(xyz_dir)
    if not xyz_dir.is_dir():
        raise StoreError(f"{xyz_dir} is not a directory")
    geometries: dict[str, Geometry] = {}
    drops: list[Drop] = []
    for f in sorted(xyz_dir.glob("*.xyz")):
        try:
            geometries[f.stem] = parse_xyz(f.read_text())
        except (XYZParseError, ValueError, OSError) as exc:
            drops.append(Drop(f.stem, f"unreadable geometry: {exc}"))
    spectra, spec_drops = _read_spectra(Path(spectra_file) if spectra_file else None)
    drops += spec_drops
    unreadable = {d.id for d in drops}
    geometries = {k: v for k, v in geometries.items() if k not in unreadable}
    spectra = {k: v for k, v in spectra.items() if k not in unreadable}
    records, more = build_records(geometries, spectra, groups, delta_pm)
    drops += more
    if not records and not drops:
        log.warning("ingest found no input records; writing an empty store")
    for d in drops:
        log.warning("dropped %s: %s", d.id, d.reason)
    return write_store(out_store, records, drops, groups), drops
