"""A short walk through the chemistry side without any training.

Perceives bonds for a few toy molecules, prints their canonical keys and
functional-group labels, broadens their mode lists onto the standard grid and
compares the resulting spectra with SIS and SIS*.

    python3 demos/chemistry_tour.py
"""
import json
from pathlib import Path

import numpy as np

from specgeo.chem import parse_xyz, perceive_bonds
from specgeo.fingerprint import canonical_key, graph_similarity
from specgeo.smarts import default_groups, label_functional_groups
from specgeo.spectra import ModeList, broaden, sis, sis_star

DATA = Path(__file__).resolve().parents[1] / "tests" / "data" / "toy10.jsonl"


def main():
    records = [json.loads(line) for line in DATA.read_text().splitlines() if line.strip()]
    groups = default_groups()
    graphs, spectra = {}, {}
    for rec in records:
        geom = parse_xyz(rec["xyz"])
        graph = perceive_bonds(geom)
        graphs[rec["id"]] = graph
        spectra[rec["id"]] = broaden(ModeList.from_pairs(rec["modes"]))
        present = [n for n, v in zip(groups.names, label_functional_groups(graph, groups)) if v]
        print(f"{rec['id']:18s} {geom.formula():8s} {canonical_key(graph)[:16]}  {', '.join(present) or '-'}")

    ids = list(graphs)
    print("\nSIS between broadened spectra (rows vs columns):")
    print(" " * 18 + "".join(f"{i[:7]:>8s}" for i in ids))
    for a in ids:
        print(f"{a:18s}" + "".join(f"{sis(spectra[a], spectra[b]):8.3f}" for b in ids))

    a, b = "methanol", "methylamine"
    print(f"\n{a} vs {b}: SIS {sis(spectra[a], spectra[b]):.3f}, SIS* {sis_star(spectra[a], spectra[b]):.3f}, "
          f"Tanimoto {graph_similarity(graphs[a], graphs[b]):.3f}")
    peak = spectra[a].grid.points[int(np.argmax(spectra[a].intensities))]
    print(f"strongest {a} band at {peak:.1f} cm-1")


if __name__ == "__main__":
    main()
