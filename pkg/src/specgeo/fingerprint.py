"""Circular fingerprints, Tanimoto similarity and canonical graph identity."""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Sequence

from .chem.graph import MolecularGraph
from .chem.tables import ATOMIC_NUMBERS

N_BITS = 2048
RADIUS = 2
AROMATIC_BOND = 4


@dataclass(frozen=True)
class HeavyGraph:
    """Hydrogen-collapsed view: terminal H atoms become counts on their neighbour.

    ``labels[k]`` is ``(atomic number, H count, aromatic flag)``; ``atoms[k]``
    is the index in the source graph. Bond labels are 1/2/3 or 4 for aromatic.
    """

    atoms: tuple[int, ...]
    labels: tuple[tuple[int, int, int], ...]
    edges: dict
    nbrs: tuple[tuple[int, ...], ...]
    valence: tuple[int, ...]


def _collapsible(graph: MolecularGraph, i: int) -> bool:
    if graph.elements[i] != "H" or graph.degree(i) != 1:
        return False
    return graph.elements[graph.neighbors(i)[0]] != "H"


def collapse_hydrogens(graph: MolecularGraph) -> HeavyGraph:
    keep = [i for i in range(len(graph)) if not _collapsible(graph, i)]
    index = {a: k for k, a in enumerate(keep)}
    labels, valence = [], []
    for a in keep:
        h = sum(1 for j in graph.neighbors(a) if _collapsible(graph, j))
        labels.append((ATOMIC_NUMBERS[graph.elements[a]], h, int(a in graph.aromatic_atoms)))
        valence.append(graph.valence(a))
    edges = {}
    nbrs: list[list[int]] = [[] for _ in keep]
    for (i, j), order in graph.bonds.items():
        if i in index and j in index:
            u, v = sorted((index[i], index[j]))
            edges[(u, v)] = AROMATIC_BOND if graph.is_aromatic_bond(i, j) else order
            nbrs[u].append(v)
            nbrs[v].append(u)
    return HeavyGraph(tuple(keep), tuple(labels), edges, tuple(tuple(sorted(n)) for n in nbrs), tuple(valence))


def _edge(h: HeavyGraph, u: int, v: int) -> int:
    return h.edges[(u, v) if u < v else (v, u)]


# ---------------------------------------------------------------------------
# Morgan fingerprints
# ---------------------------------------------------------------------------

def hash32(values: Sequence[int]) -> int:
    """Stable 32-bit hash of an integer sequence."""
    blob = struct.pack(f"<{len(values)}q", *values)
    return int.from_bytes(hashlib.blake2b(blob, digest_size=4).digest(), "little")


@dataclass(frozen=True)
class Fingerprint:
    bits: frozenset
    n_bits: int = N_BITS
    radius: int = RADIUS

    def __len__(self) -> int:
        return len(self.bits)


def atom_invariants(h: HeavyGraph) -> list[tuple[int, ...]]:
    """(atomic number, heavy degree, total bond order, attached H, aromatic flag) per heavy atom."""
    return [(z, len(h.nbrs[k]), h.valence[k], hcount, arom)
            for k, (z, hcount, arom) in enumerate(h.labels)]


def morgan_identifiers(graph: MolecularGraph, radius: int = RADIUS) -> list[int]:
    """Unfolded environment identifiers, duplicates of an already-seen bond set dropped."""
    h = collapse_hydrogens(graph)
    ids = [hash32(inv) for inv in atom_invariants(h)]
    features = list(ids)
    envs = [frozenset() for _ in ids]
    seen: set = set()
    for r in range(1, radius + 1):
        new_ids, new_envs = [], []
        for a in range(len(ids)):
            nb = sorted((_edge(h, a, b), ids[b]) for b in h.nbrs[a])
            new_ids.append(hash32([r, ids[a]] + [x for pair in nb for x in pair]))
            env = set(envs[a])
            for b in h.nbrs[a]:
                env.add((min(a, b), max(a, b)))
                env |= envs[b]
            new_envs.append(frozenset(env))
        for a in sorted(range(len(ids)), key=lambda a: (new_ids[a], a)):
            env = new_envs[a]
            if env == envs[a] or env in seen:
                continue
            seen.add(env)
            features.append(new_ids[a])
        ids, envs = new_ids, new_envs
    return features


def morgan_fingerprint(graph: MolecularGraph, radius: int = RADIUS, n_bits: int = N_BITS) -> Fingerprint:
    return Fingerprint(frozenset(i % n_bits for i in morgan_identifiers(graph, radius)), n_bits, radius)


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    """|a ∩ b| / |a ∪ b|; two empty fingerprints are identical (1.0)."""
    union = len(a.bits | b.bits)
    if union == 0:
        return 1.0
    return len(a.bits & b.bits) / union


def graph_similarity(a: MolecularGraph, b: MolecularGraph) -> float:
    return tanimoto(morgan_fingerprint(a), morgan_fingerprint(b))


# ---------------------------------------------------------------------------
# canonical identity
# ---------------------------------------------------------------------------

def _refine(h: HeavyGraph, colors: list[int]) -> list[int]:
    while True:
        sigs = [(colors[v], tuple(sorted((_edge(h, v, u), colors[u]) for u in h.nbrs[v])))
                for v in range(len(colors))]
        rank = {s: k for k, s in enumerate(sorted(set(sigs)))}
        new = [rank[s] for s in sigs]
        if len(rank) == len(set(colors)):
            return new
        colors = new


def _certificate(h: HeavyGraph, colors: list[int]):
    order = sorted(range(len(colors)), key=lambda v: colors[v])
    pos = {v: k for k, v in enumerate(order)}
    labels = tuple(h.labels[v] for v in order)
    edges = tuple(sorted((min(pos[u], pos[v]), max(pos[u], pos[v]), lab) for (u, v), lab in h.edges.items()))
    return (labels, edges), order


def _search(h: HeavyGraph, colors: list[int]):
    colors = _refine(h, colors)
    if len(set(colors)) == len(colors):
        return _certificate(h, colors)
    counts: dict[int, int] = {}
    for c in colors:
        counts[c] = counts.get(c, 0) + 1
    target = min(c for c, n in counts.items() if n > 1)
    best = None
    for v in (v for v in range(len(colors)) if colors[v] == target):
        split = [2 * c for c in colors]
        split[v] -= 1
        result = _search(h, split)
        if best is None or result[0] < best[0]:
            best = result
    return best


def canonical_form(graph: MolecularGraph):
    """Canonical certificate and the heavy-graph vertex order that realises it."""
    h = collapse_hydrogens(graph)
    if not h.labels:
        return ((), ()), [], h
    initial = sorted(set(h.labels))
    colors = [initial.index(lab) for lab in h.labels]
    (cert, order) = _search(h, colors)
    return cert, order, h


def canonical_key(graph: MolecularGraph) -> str:
    """String identity of the 2D graph: equal exactly for isomorphic graphs."""
    (labels, edges), _, _ = canonical_form(graph)
    atoms = ".".join(f"{z}h{hc}{'a' if ar else ''}" for z, hc, ar in labels)
    bonds = ",".join(f"{u}-{v}:{'a' if lab == AROMATIC_BOND else lab}" for u, v, lab in edges)
    return f"{atoms}|{bonds}"


def isomorphic(a: MolecularGraph, b: MolecularGraph) -> bool:
    """Key comparison followed by an explicit check of the induced atom mapping."""
    cert_a, order_a, ha = canonical_form(a)
    cert_b, order_b, hb = canonical_form(b)
    if cert_a != cert_b:
        return False
    mapping = dict(zip(order_a, order_b))
    if any(ha.labels[u] != hb.labels[mapping[u]] for u in mapping):
        return False
    if len(ha.edges) != len(hb.edges):
        return False
    for (u, v), lab in ha.edges.items():
        x, y = sorted((mapping[u], mapping[v]))
        if hb.edges.get((x, y)) != lab:
            return False
    return True


def molecular_accuracy(samples_per_spectrum: Sequence[Sequence[MolecularGraph]],
                       references: Sequence[MolecularGraph]) -> float:
    """Fraction of cases where at least one sample has the reference's canonical key."""
    if len(samples_per_spectrum) != len(references):
        raise ValueError(f"{len(samples_per_spectrum)} sample sets for {len(references)} references")
    if not references:
        return 0.0
    hits = 0
    for samples, ref in zip(samples_per_spectrum, references):
        key = canonical_key(ref)
        if any(canonical_key(s) == key for s in samples):
            hits += 1
    return hits / len(references)
