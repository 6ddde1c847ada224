"""Element, valence and reference bond-length tables."""
from __future__ import annotations

from functools import lru_cache
from importlib import resources

ATOMIC_NUMBERS = {
    "H": 1, "B": 5, "C": 6, "N": 7, "O": 8, "F": 9, "Si": 14, "P": 15,
    "S": 16, "Cl": 17, "As": 33, "Se": 34, "Br": 35,
}
SUPPORTED_ELEMENTS = tuple(ATOMIC_NUMBERS)
SYMBOLS = {z: s for s, z in ATOMIC_NUMBERS.items()}


class TableError(KeyError):
    """A lookup hit a pair or element the tables do not cover."""


def _data_lines(name: str):
    text = resources.files("specgeo.data").joinpath(name).read_text()
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            yield line.split()


@lru_cache(maxsize=None)
def valence_table() -> dict[str, tuple[int, ...]]:
    table = {fields[0]: tuple(sorted(int(v) for v in fields[1:])) for fields in _data_lines("valences.txt")}
    for el in SUPPORTED_ELEMENTS:
        if not table.get(el):
            raise TableError(f"no allowed valence for {el}")
    return table


@lru_cache(maxsize=None)
def bond_length_table() -> dict[tuple[str, str, int], float]:
    table: dict[tuple[str, str, int], float] = {}
    for a, b, order, length in _data_lines("bond_lengths.txt"):
        table[(a, b, int(order))] = float(length)
        table[(b, a, int(order))] = float(length)
    return table


def allowed_valences(element: str) -> tuple[int, ...]:
    try:
        return valence_table()[element]
    except KeyError:
        raise TableError(f"unsupported element {element!r}") from None


def max_valence(element: str) -> int:
    return allowed_valences(element)[-1]


def bond_length(a: str, b: str, order: int = 1) -> float:
    """Reference length in pm; falls back to lower orders if ``order`` is not tabulated."""
    table = bond_length_table()
    for o in range(order, 0, -1):
        if (a, b, o) in table:
            return table[(a, b, o)]
    raise TableError(f"no reference bond length for {a}-{b}")
