"""Regenerate src/specgeo/data/bond_lengths.txt from covalent radii.

Radii (pm) are the self-consistent single/double/triple bond covalent radii
of Pyykkö and Atsumi (Chem. Eur. J. 2009). Reference length of a bond is the
sum of the two radii for its order.
"""
from itertools import combinations_with_replacement
from pathlib import Path

RADII = {
    "H": (32, None, None),
    "B": (85, 78, 73),
    "C": (75, 67, 60),
    "N": (71, 60, 54),
    "O": (63, 57, 53),
    "F": (64, None, None),
    "Si": (116, 107, 102),
    "P": (111, 102, 94),
    "S": (103, 94, 95),
    "Cl": (99, None, None),
    "As": (121, 114, 106),
    "Se": (116, 107, 107),
    "Br": (114, None, None),
}

lines = ["# element  element  order  reference length (pm); symmetric in the element pair"]
for a, b in combinations_with_replacement(RADII, 2):
    for order in (1, 2, 3):
        ra, rb = RADII[a][order - 1], RADII[b][order - 1]
        if ra is None or rb is None:
            continue
        lines.append(f"{a:<3}{b:<3}{order}  {ra + rb}")
out = Path(__file__).resolve().parents[1] / "src" / "specgeo" / "data" / "bond_lengths.txt"
out.write_text("\n".join(lines) + "\n")
print(f"wrote {len(lines) - 1} entries to {out}")
