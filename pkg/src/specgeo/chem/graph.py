"""Molecular graphs with integer (Kekulé) bond orders and aromatic flags."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

from .tables import ATOMIC_NUMBERS, allowed_valences, max_valence


def _pair(i: int, j: int) -> tuple[int, int]:
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True, eq=False)
class MolecularGraph:
    """Atoms plus bonds.

    ``bonds`` maps ``(i, j)`` with ``i < j`` to an order in {1, 2, 3}. Aromatic
    bonds keep a Kekulé order for valence bookkeeping and are additionally
    listed in ``aromatic``. ``resolved`` is False when bond perception gave up.
    """

    elements: tuple[str, ...]
    bonds: dict = field(default_factory=dict)
    aromatic: frozenset = frozenset()
    resolved: bool = True

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))
        clean = {}
        for (i, j), order in dict(self.bonds).items():
            if i == j:
                raise ValueError(f"self-bond on atom {i}")
            key = _pair(int(i), int(j))
            if key in clean:
                raise ValueError(f"duplicate bond {key}")
            if int(order) < 1:
                raise ValueError(f"bond {key} has non-positive order {order}")
            clean[key] = int(order)
        object.__setattr__(self, "bonds", clean)
        arom = frozenset(_pair(*p) for p in self.aromatic)
        missing = arom - set(clean)
        if missing:
            raise ValueError(f"aromatic flags on absent bonds {sorted(missing)}")
        object.__setattr__(self, "aromatic", arom)
        for el in self.elements:
            if el not in ATOMIC_NUMBERS:
                raise ValueError(f"unsupported element {el!r}")

    @classmethod
    def from_bonds(cls, elements, bonds, aromatic=()) -> "MolecularGraph":
        """Build from ``[(i, j, order), ...]``."""
        return cls(tuple(elements), {(i, j): o for i, j, o in bonds}, frozenset(aromatic))

    def __len__(self) -> int:
        return len(self.elements)

    @cached_property
    def adjacency(self) -> tuple[tuple[int, ...], ...]:
        nbrs: list[list[int]] = [[] for _ in self.elements]
        for i, j in sorted(self.bonds):
            nbrs[i].append(j)
            nbrs[j].append(i)
        return tuple(tuple(sorted(n)) for n in nbrs)

    def neighbors(self, i: int) -> tuple[int, ...]:
        return self.adjacency[i]

    def order(self, i: int, j: int) -> int:
        return self.bonds.get(_pair(i, j), 0)

    def is_aromatic_bond(self, i: int, j: int) -> bool:
        return _pair(i, j) in self.aromatic

    @cached_property
    def aromatic_atoms(self) -> frozenset:
        return frozenset(a for pair in self.aromatic for a in pair)

    def valence(self, i: int) -> int:
        return sum(self.order(i, j) for j in self.adjacency[i])

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])

    def h_count(self, i: int) -> int:
        return sum(1 for j in self.adjacency[i] if self.elements[j] == "H")

    def bond_list(self) -> list[tuple[int, int, int, bool]]:
        return [(i, j, o, (i, j) in self.aromatic) for (i, j), o in sorted(self.bonds.items())]

    def permuted(self, perm) -> "MolecularGraph":
        """Graph whose atom ``k`` is this graph's atom ``perm[k]``."""
        perm = list(perm)
        inverse = {old: new for new, old in enumerate(perm)}
        bonds = {(inverse[i], inverse[j]): o for (i, j), o in self.bonds.items()}
        arom = frozenset(_pair(inverse[i], inverse[j]) for i, j in self.aromatic)
        return MolecularGraph(tuple(self.elements[k] for k in perm), bonds, arom, self.resolved)

    def components(self) -> list[list[int]]:
        seen = [False] * len(self.elements)
        comps = []
        for start in range(len(self.elements)):
            if seen[start]:
                continue
            stack, comp = [start], []
            seen[start] = True
            while stack:
                a = stack.pop()
                comp.append(a)
                for b in self.adjacency[a]:
                    if not seen[b]:
                        seen[b] = True
                        stack.append(b)
            comps.append(sorted(comp))
        return comps

    def to_dict(self) -> dict:
        return {
            "elements": list(self.elements),
            "bonds": [[i, j, o] for (i, j), o in sorted(self.bonds.items())],
            "aromatic": [list(p) for p in sorted(self.aromatic)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MolecularGraph":
        return cls.from_bonds(d["elements"], [tuple(b) for b in d["bonds"]], [tuple(p) for p in d.get("aromatic", [])])


def check_connectivity(graph: MolecularGraph) -> bool:
    return len(graph.components()) == 1


def check_validity(graph: MolecularGraph) -> bool:
    """No atom above its maximum valence, and one connected component."""
    if any(graph.valence(i) > max_valence(el) for i, el in enumerate(graph.elements)):
        return False
    return check_connectivity(graph)


def check_stability(graph: MolecularGraph) -> bool:
    """Every atom's total bond order is exactly one of its allowed valences."""
    return all(graph.valence(i) in allowed_valences(el) for i, el in enumerate(graph.elements))
