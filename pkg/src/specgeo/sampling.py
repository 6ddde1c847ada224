"""Sampling campaigns: k geometries per stored spectrum, written as XYZ plus manifests."""
from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint
from .chem import Geometry, parse_xyz, write_xyz
from .store import DatasetStore
from .training import load_model, to_example

SAMPLES = "samples.jsonl"
MANIFEST = "sampling_manifest.json"


def spectrum_seed(seed: int, spectrum_id: str) -> np.random.SeedSequence:
    """Per-spectrum stream, independent of which other spectra are sampled."""
    return np.random.SeedSequence([int(seed), zlib.crc32(spectrum_id.encode())])


@dataclass(frozen=True)
class SampleEntry:
    spectrum: str
    index: int
    seed: int
    path: str | None  # None when the trajectory diverged
    status: str = "ok"


def run_sampling(store: DatasetStore, ckpt: str | Path, out_dir: str | Path, k: int = 50,
                 seed: int = 0, ids: Sequence[str] | None = None) -> list[SampleEntry]:
    if k < 1:
        raise ValueError("need at least one sample per spectrum")
    out_dir = Path(out_dir)
    model, _, _ = load_model(ckpt, expect_stage="ldm")
    records = store.select(ids)
    entries: list[SampleEntry] = []
    schedule = model.schedule()
    for rec in records:
        ex = to_example(rec)
        _, enc = model.encode_spectra([ex])
        rng = np.random.default_rng(spectrum_seed(seed, rec.id))
        geoms = model.sample(ex.elements, enc, 0, k, rng, schedule)
        folder = out_dir / "xyz" / rec.id
        folder.mkdir(parents=True, exist_ok=True)
        for j, g in enumerate(geoms):
            if g is None:
                entries.append(SampleEntry(rec.id, j, int(seed), None, "diverged"))
                continue
            rel = f"xyz/{rec.id}/{rec.id}_{j:03d}.xyz"
            (out_dir / rel).write_text(write_xyz(g, f"{rec.id} sample {j} seed {seed}"))
            entries.append(SampleEntry(rec.id, j, int(seed), rel))
    lines = "".join(json.dumps(e.__dict__, sort_keys=True) + "\n" for e in entries)
    (out_dir / SAMPLES).write_text(lines)
    digest = hashlib.sha256()
    for e in entries:
        digest.update((out_dir / e.path).read_bytes() if e.path else b"diverged")
    doc = {"kind": "sample", "seed": int(seed), "k": k, "ids": [r.id for r in records],
           "inputs": {"store": {"path": str(store.path), "hash": store.hash},
                      "checkpoint": {"path": str(ckpt), "hash": checkpoint.file_hash(ckpt)}},
           "outputs": {"samples": {"path": SAMPLES, "hash": hashlib.sha256(lines.encode()).hexdigest()},
                       "xyz_hash": digest.hexdigest()}}
    (out_dir / MANIFEST).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return entries


def load_samples(sample_dir: str | Path) -> dict[str, list[Geometry | None]]:
    """Geometries grouped by spectrum id, in sample-index order; None marks a diverged draw."""
    sample_dir = Path(sample_dir)
    groups: dict[str, list[tuple[int, Geometry]]] = {}
    with open(sample_dir / SAMPLES) as fh:
        for line in fh:
            if not line.strip():
                continue
            e = json.loads(line)
            geom = parse_xyz((sample_dir / e["path"]).read_text()) if e.get("path") else None
            groups.setdefault(e["spectrum"], []).append((int(e["index"]), geom))
    return {sid: [g for _, g in sorted(items, key=lambda p: p[0])] for sid, items in groups.items()}


def replay_sampling(manifest_path: str | Path, out_dir: str | Path) -> bool:
    """Regenerate a sample set from its manifest; True when the XYZ bytes match."""
    doc = json.loads(Path(manifest_path).read_text())
    store = DatasetStore.open(doc["inputs"]["store"]["path"])
    run_sampling(store, doc["inputs"]["checkpoint"]["path"], out_dir, doc["k"], doc["seed"], doc["ids"])
    new = json.loads((Path(out_dir) / MANIFEST).read_text())
    return new["outputs"] == doc["outputs"]
