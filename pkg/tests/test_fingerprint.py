import itertools

import networkx as nx
import numpy as np
import pytest

from conftest import DATA, reference
from specgeo.chem import MolecularGraph
from specgeo.fingerprint import (
    Fingerprint, canonical_key, graph_similarity, isomorphic, molecular_accuracy,
    morgan_fingerprint, tanimoto,
)


def golden():
    out = {}
    for line in (DATA / "morgan_golden.txt").read_text().splitlines():
        name, bits = line.split(":")
        out[name] = frozenset(int(b) for b in bits.split())
    return out


def fp(*bits):
    return Fingerprint(frozenset(bits))


def nx_graph(g: MolecularGraph):
    h = nx.Graph()
    for i, el in enumerate(g.elements):
        h.add_node(i, el=el, arom=i in g.aromatic_atoms)
    for (i, j), o in g.bonds.items():
        h.add_edge(i, j, o=4 if (i, j) in g.aromatic else o)
    return h


class TestTanimoto:
    def test_identical(self):
        assert tanimoto(fp(1, 2), fp(1, 2)) == 1.0

    def test_disjoint(self):
        assert tanimoto(fp(1), fp(2)) == 0.0

    def test_half(self):
        assert tanimoto(fp(1, 2, 3), fp(2, 3, 4)) == 0.5

    def test_both_empty(self):
        assert tanimoto(fp(), fp()) == 1.0

    def test_symmetric_and_bounded(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            a = fp(*rng.integers(0, 50, 10))
            b = fp(*rng.integers(0, 50, 10))
            t = tanimoto(a, b)
            assert t == tanimoto(b, a) and 0 <= t <= 1


class TestMorgan:
    def test_golden(self, bond_corpus):
        gold = golden()
        assert len(gold) == len(bond_corpus)
        for rec in bond_corpus:
            assert morgan_fingerprint(reference(rec)).bits == gold[rec["id"]], rec["id"]

    def test_bits_in_range(self, bond_corpus):
        for rec in bond_corpus:
            assert all(0 <= b < 2048 for b in morgan_fingerprint(reference(rec)).bits)

    def test_methane_vs_ethane(self, bond_corpus):
        by = {r["id"]: reference(r) for r in bond_corpus}
        assert morgan_fingerprint(by["methane"]).bits != morgan_fingerprint(by["ethane"]).bits

    def test_permutation_invariance(self, bond_corpus):
        rng = np.random.default_rng(1)
        for rec in bond_corpus:
            g = reference(rec)
            h = g.permuted(rng.permutation(len(g)))
            assert morgan_fingerprint(g) == morgan_fingerprint(h)
            assert graph_similarity(g, h) == 1.0


class TestCanonical:
    def test_water_key(self):
        water = MolecularGraph.from_bonds("OHH", [(0, 1, 1), (0, 2, 1)])
        assert canonical_key(water) == "8h2|"

    def test_twenty_permutations(self, pattern_corpus):
        rng = np.random.default_rng(2)
        for rec in pattern_corpus:
            g = reference(rec)
            key = canonical_key(g)
            for _ in range(20):
                h = g.permuted(rng.permutation(len(g)))
                assert canonical_key(h) == key
                assert isomorphic(g, h)

    def test_ethanol_vs_dimethyl_ether(self, pattern_corpus):
        by = {r["id"]: reference(r) for r in pattern_corpus}
        assert canonical_key(by["ethanol"]) != canonical_key(by["dimethyl_ether"])

    def test_enantiomers_share_key(self, pattern_corpus):
        # keys use only the graph; mirrored coordinates produce the same graph
        g = reference(next(r for r in pattern_corpus if r["id"] == "glycidol"))
        assert canonical_key(g) == canonical_key(g.permuted(list(range(len(g)))[::-1]))

    def test_keys_agree_with_exact_isomorphism(self, pattern_corpus, toy200):
        graphs = [reference(r) for r in pattern_corpus + toy200[:60]]
        keys = [canonical_key(g) for g in graphs]
        nxg = [nx_graph(g) for g in graphs]
        match = nx.algorithms.isomorphism.categorical_node_match(["el", "arom"], [None, None])
        edge = nx.algorithms.isomorphism.categorical_edge_match("o", None)
        for a, b in itertools.combinations(range(len(graphs)), 2):
            if len(graphs[a]) != len(graphs[b]):
                assert keys[a] != keys[b]
                continue
            iso = nx.is_isomorphic(nxg[a], nxg[b], node_match=match, edge_match=edge)
            assert (keys[a] == keys[b]) == iso
            assert isomorphic(graphs[a], graphs[b]) == iso

    def test_regular_graphs_need_individualization(self):
        # two 6-vertex 2-regular carbon skeletons: one hexagon versus two triangles
        ring6 = MolecularGraph.from_bonds("CCCCCC", [(k, (k + 1) % 6, 1) for k in range(6)])
        two3 = MolecularGraph.from_bonds("CCCCCC", [(0, 1, 1), (1, 2, 1), (0, 2, 1),
                                                    (3, 4, 1), (4, 5, 1), (3, 5, 1)])
        assert canonical_key(ring6) != canonical_key(two3)
        assert not isomorphic(ring6, two3)


class TestAccuracy:
    def graphs(self, corpus):
        return [reference(r) for r in corpus[:4]]

    def test_all_hit(self, bond_corpus):
        refs = self.graphs(bond_corpus)
        assert molecular_accuracy([[g] for g in refs], refs) == 1.0

    def test_none_hit(self, bond_corpus):
        refs = self.graphs(bond_corpus)
        wrong = [[refs[(k + 1) % 4]] for k in range(4)]
        assert molecular_accuracy(wrong, refs) == 0.0

    def test_half(self, bond_corpus):
        refs = self.graphs(bond_corpus)
        samples = [[refs[0]], [refs[0]], [refs[3], refs[2]], [refs[0]]]
        assert molecular_accuracy(samples, refs) == 0.5

    def test_length_mismatch(self, bond_corpus):
        refs = self.graphs(bond_corpus)
        with pytest.raises(ValueError):
            molecular_accuracy([[refs[0]]], refs)
