"""Valence-guided bond perception from 3D coordinates.

The procedure runs in passes over a mutable bond-order table:

1. single bonds wherever the distance is below the reference single-bond
   length plus a tolerance ``delta_pm``;
2. terminal atoms raise the order of their one remaining open bond;
3. rings passing the 4n+2 pi-electron count are kekulised and flagged aromatic;
4. unsaturated C and N atoms pair up, most unsaturated first, shortest bond
   among equally unsaturated partners;
5. remaining invalid atoms take any bond increase a neighbour can accept.

If valences are still violated, the longest-stretched bond (more than 15 pm
beyond its reference) is deleted and the passes restart from the adjacency.
"""
from __future__ import annotations

import logging

import networkx as nx
import numpy as np

from .geometry import Geometry
from .graph import MolecularGraph, _pair
from .tables import allowed_valences, bond_length, max_valence

log = logging.getLogger(__name__)

MAX_RESTARTS = 10
REMOVAL_THRESHOLD_PM = 15.0
TERMINAL_ELEMENTS = ("C", "N", "O")
HYPERVALENT = ("S", "P", "As", "Se")


def initial_adjacency(geom: Geometry, delta_pm: float = 40.0) -> MolecularGraph:
    """Single bonds between every pair closer than ``L(i, j) + delta_pm``."""
    if delta_pm < 0:
        raise ValueError("delta_pm must be non-negative")
    dist_pm = 100.0 * geom.distances()
    els = geom.elements
    bonds = {}
    for i in range(len(els)):
        for j in range(i + 1, len(els)):
            if dist_pm[i, j] < bond_length(els[i], els[j], 1) + delta_pm:
                bonds[(i, j)] = 1
    return MolecularGraph(els, bonds)


class _State:
    """Mutable bond orders over a fixed adjacency."""

    def __init__(self, elements, pairs, dist_pm):
        self.elements = elements
        self.dist = dist_pm
        self.order = {p: 1 for p in pairs}
        self.nbrs = [[] for _ in elements]
        for i, j in sorted(pairs):
            self.nbrs[i].append(j)
            self.nbrs[j].append(i)
        self.val = [len(n) for n in self.nbrs]
        self.aromatic: set = set()

    def bump(self, i, j, by=1):
        self.order[_pair(i, j)] += by
        self.val[i] += by
        self.val[j] += by

    def get(self, i, j):
        return self.order[_pair(i, j)]

    def target(self, i):
        """Smallest allowed valence >= current valence, or None if above the maximum."""
        for v in allowed_valences(self.elements[i]):
            if v >= self.val[i]:
                return v
        return None

    def deficit(self, i):
        t = self.target(i)
        return 0 if t is None else t - self.val[i]

    def saturated(self, i):
        return self.val[i] in allowed_valences(self.elements[i])

    def room(self, i):
        return max_valence(self.elements[i]) - self.val[i]

    def violations(self):
        return sum(1 for i in range(len(self.elements)) if not self.saturated(i))


def _saturate_terminals(st: _State) -> None:
    changed = True
    while changed:
        changed = False
        for i, el in enumerate(st.elements):
            if st.saturated(i) or st.deficit(i) <= 0:
                continue
            if el in TERMINAL_ELEMENTS:
                open_nbrs = [j for j in st.nbrs[i] if not st.saturated(j)]
                if len(open_nbrs) != 1:
                    continue
                j = open_nbrs[0]
            elif el == "S" and len(st.nbrs[i]) == 1:
                j = st.nbrs[i][0]
            else:
                continue
            inc = min(st.deficit(i), st.room(j), 3 - st.get(i, j))
            if inc > 0:
                st.bump(i, j, inc)
                changed = True


def _ring_pi_electrons(st: _State, ring: list[int]) -> int | None:
    ring_set = set(ring)
    pi = 0
    for a in ring:
        el = st.elements[a]
        ring_nbrs = [b for b in st.nbrs[a] if b in ring_set]
        endo = any(st.get(a, b) >= 2 for b in ring_nbrs)
        exo = any(st.get(a, b) >= 2 for b in st.nbrs[a] if b not in ring_set)
        deficit = st.deficit(a)
        if endo:
            pi += 1
        elif exo:
            continue
        elif deficit == 1:
            pi += 1
        elif deficit == 0 and el in ("N", "P", "As") and len(st.nbrs[a]) == 3:
            pi += 2
        elif deficit == 0 and el in ("O", "S", "Se") and len(st.nbrs[a]) == 2:
            pi += 2
        elif deficit == 0 and el == "B" and len(st.nbrs[a]) == 3:
            continue
        else:
            return None
    return pi


def _rings(st: _State) -> list[list[int]]:
    g = nx.Graph()
    g.add_nodes_from(range(len(st.elements)))
    g.add_edges_from(p for p in st.order if st.elements[p[0]] != "H" and st.elements[p[1]] != "H")
    rings = [list(c) for c in nx.chordless_cycles(g, length_bound=8)]
    return sorted((r for r in rings if len(r) >= 3), key=lambda r: (len(r), sorted(r)))


def _assign_aromatic(st: _State) -> None:
    aromatic_rings = []
    for ring in _rings(st):
        pi = _ring_pi_electrons(st, ring)
        if pi is not None and pi >= 2 and (pi - 2) % 4 == 0:
            aromatic_rings.append(ring)
    if not aromatic_rings:
        return
    ring_bonds = set()
    for ring in aromatic_rings:
        for k in range(len(ring)):
            ring_bonds.add(_pair(ring[k], ring[k - 1]))
    atoms = sorted({a for p in ring_bonds for a in p})
    needy = [a for a in atoms if st.deficit(a) > 0]
    g = nx.Graph()
    g.add_nodes_from(needy)
    needy_set = set(needy)
    g.add_edges_from(p for p in sorted(ring_bonds) if p[0] in needy_set and p[1] in needy_set and st.order[p] == 1)
    matching = nx.max_weight_matching(g, maxcardinality=True)
    if 2 * len(matching) != len(needy) or any(st.deficit(a) != 1 for a in needy):
        return
    for i, j in matching:
        st.bump(i, j)
    st.aromatic |= ring_bonds


def _update_carbon_nitrogen(st: _State) -> None:
    while True:
        candidates = [i for i, el in enumerate(st.elements) if el in ("C", "N") and st.deficit(i) > 0]
        candidates.sort(key=lambda i: (-st.deficit(i), i))
        progressed = False
        for i in candidates:
            partners = [j for j in st.nbrs[i]
                        if st.deficit(j) > 0 and st.get(i, j) < 3 and _pair(i, j) not in st.aromatic]
            if not partners:
                partners = [j for j in st.nbrs[i]
                            if st.elements[j] in HYPERVALENT and st.room(j) > 0 and st.get(i, j) < 3]
            if not partners:
                continue
            j = min(partners, key=lambda j: (-st.deficit(j), st.dist[i, j], j))
            st.bump(i, j)
            progressed = True
            break
        if not progressed:
            return


def _refine(st: _State) -> None:
    while True:
        progressed = False
        for i in range(len(st.elements)):
            if st.saturated(i) or st.target(i) is None:
                continue
            partners = [j for j in st.nbrs[i] if st.room(j) > 0 and st.get(i, j) < 3]
            if not partners:
                continue
            j = min(partners, key=lambda j: (-st.deficit(j), st.dist[i, j], j))
            st.bump(i, j)
            progressed = True
            break
        if not progressed:
            return


def _deviation(st: _State, pair) -> float:
    i, j = pair
    return st.dist[i, j] - bond_length(st.elements[i], st.elements[j], st.order[pair])


def _assign(elements, pairs, dist_pm) -> _State:
    st = _State(elements, pairs, dist_pm)
    _saturate_terminals(st)
    _assign_aromatic(st)
    _update_carbon_nitrogen(st)
    _refine(st)
    return st


def perceive_bonds(geom: Geometry, delta_pm: float = 40.0, max_restarts: int = MAX_RESTARTS) -> MolecularGraph:
    """Bonds and bond orders for a neutral, closed-shell molecule.

    Never raises on chemically impossible input: the attempt with the fewest
    valence violations is returned with ``resolved=False``.
    """
    adjacency = initial_adjacency(geom, delta_pm)
    dist_pm = 100.0 * geom.distances()
    pairs = set(adjacency.bonds)
    best = None
    for attempt in range(max_restarts + 1):
        st = _assign(geom.elements, pairs, dist_pm)
        bad = st.violations()
        if best is None or bad < best[0]:
            best = (bad, st)
        if bad == 0:
            break
        if not pairs:
            break
        worst = max(sorted(pairs), key=lambda p: _deviation(st, p))
        if _deviation(st, worst) <= REMOVAL_THRESHOLD_PM:
            break
        pairs = pairs - {worst}
    bad, st = best
    if bad:
        log.warning("bond perception left %d atoms with invalid valence", bad)
    return MolecularGraph(geom.elements, dict(st.order), frozenset(st.aromatic), resolved=bad == 0)
