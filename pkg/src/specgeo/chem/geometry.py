"""Atom coordinates plus element symbols, and the XYZ text format."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .tables import ATOMIC_NUMBERS


class XYZParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class UnknownElementError(XYZParseError):
    pass


@dataclass(frozen=True)
class Geometry:
    """``coords`` is N×3 in Ångström; ``elements`` holds N symbols."""

    coords: np.ndarray
    elements: tuple[str, ...]

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] != 3 or coords.shape[0] != len(self.elements):
            raise ValueError(f"coords shape {coords.shape} does not match {len(self.elements)} elements")
        if coords.shape[0] < 1:
            raise ValueError("a geometry needs at least one atom")
        if not np.isfinite(coords).all():
            raise ValueError("non-finite coordinates")
        for el in self.elements:
            if el not in ATOMIC_NUMBERS:
                raise UnknownElementError(f"unsupported element {el!r}")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "elements", tuple(self.elements))

    def __len__(self) -> int:
        return len(self.elements)

    def distances(self) -> np.ndarray:
        diff = self.coords[:, None, :] - self.coords[None, :, :]
        return np.sqrt((diff * diff).sum(-1))

    def transformed(self, rotation: np.ndarray | None = None, shift=None) -> "Geometry":
        x = self.coords
        if rotation is not None:
            x = x @ np.asarray(rotation).T
        if shift is not None:
            x = x + np.asarray(shift)
        return Geometry(x, self.elements)

    def permuted(self, perm) -> "Geometry":
        perm = list(perm)
        return Geometry(self.coords[perm], tuple(self.elements[i] for i in perm))

    def formula(self) -> str:
        return hill_formula(self.elements)


def hill_formula(elements) -> str:
    """Hill-order formula: C first, H second, then alphabetical; no C means fully alphabetical."""
    counts = Counter(elements)
    order = []
    if "C" in counts:
        order = ["C"] + (["H"] if "H" in counts else [])
    order += sorted(el for el in counts if el not in order)
    return "".join(el + (str(counts[el]) if counts[el] > 1 else "") for el in order)


def _normalise_symbol(token: str) -> str:
    return token[:1].upper() + token[1:].lower()


def parse_xyz(text: str) -> Geometry:
    """Parse one XYZ block: atom count, comment line, then ``El x y z`` lines."""
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise XYZParseError("empty input", 1)
    try:
        count = int(lines[0].split()[0])
    except (ValueError, IndexError):
        raise XYZParseError(f"expected atom count, got {lines[0]!r}", 1) from None
    body = lines[2:]
    if len(body) != count:
        raise XYZParseError(f"declared {count} atoms but found {len(body)} atom lines", 1)
    elements, coords = [], []
    for k, line in enumerate(body, start=3):
        fields = line.split()
        if len(fields) < 4:
            raise XYZParseError(f"expected element and three coordinates, got {line!r}", k)
        symbol = _normalise_symbol(fields[0])
        if symbol not in ATOMIC_NUMBERS:
            raise UnknownElementError(f"unknown element {fields[0]!r}", k)
        try:
            xyz = [float(v) for v in fields[1:4]]
        except ValueError:
            raise XYZParseError(f"malformed number in {line!r}", k) from None
        if not np.isfinite(xyz).all():
            raise XYZParseError(f"non-finite coordinate in {line!r}", k)
        elements.append(symbol)
        coords.append(xyz)
    return Geometry(np.array(coords), tuple(elements))


def write_xyz(geom: Geometry, comment: str = "") -> str:
    out = [str(len(geom)), comment.replace("\n", " ")]
    for el, (x, y, z) in zip(geom.elements, geom.coords):
        out.append(f"{el:<2} {x: .10f} {y: .10f} {z: .10f}")
    return "\n".join(out) + "\n"
