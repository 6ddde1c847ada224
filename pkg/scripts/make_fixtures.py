"""Regenerate the committed test and demo fixtures.

Needs RDKit, which is only used here: it embeds and relaxes 3D geometries
(ETKDG + MMFF), supplies reference bond graphs and a substructure cross-check,
and provides the force field whose numerical Hessian yields the mode lists
(intensities from fixed Gasteiger charges).
Golden Morgan bits come from a deliberately naive re-implementation below that
shares no code with the package.

    python3 scripts/make_fixtures.py
"""
from __future__ import annotations

import hashlib
import itertools
import json
import struct
from pathlib import Path

import numpy as np
from rdkit import Chem, RDLogger
from rdkit.Chem import AllChem
from rdkit.Chem import rdForceFieldHelpers as ffh

RDLogger.DisableLog("rdApp.*")

ROOT = Path(__file__).resolve().parents[1]
OUT = ROOT / "tests" / "data"

BOND_CORPUS = {
    "methane": "C", "ethane": "CC", "propane": "CCC", "isobutane": "CC(C)C",
    "cyclopropane": "C1CC1", "cyclohexane": "C1CCCCC1", "ethene": "C=C",
    "propene": "CC=C", "butadiene": "C=CC=C", "cyclopentene": "C1CC=CC1",
    "ethyne": "C#C", "propyne": "CC#C", "butadiyne": "C#CC#C",
    "acetonitrile": "CC#N", "acrylonitrile": "C=CC#N", "malononitrile": "N#CCC#N",
    "benzene": "c1ccccc1", "toluene": "Cc1ccccc1", "pyridine": "c1ccncc1",
    "furan": "c1ccoc1", "pyrrole": "c1cc[nH]c1", "dimethyl_ether": "COC",
    "diethyl_ether": "CCOCC", "thf": "C1CCOC1", "ethylene_oxide": "C1CO1",
    "methyl_vinyl_ether": "COC=C", "methyl_acetate": "COC(C)=O",
    "ethyl_formate": "CCOC=O", "propiolactone": "O=C1CCO1", "anisole": "COc1ccccc1",
}

PATTERN_EXTRA = {
    "ethanol": "CCO", "methanol": "CO", "methylamine": "CN", "dimethylamine": "CNC",
    "trimethylamine": "CN(C)C", "ethanimine": "CC=N", "acetamide": "CC(N)=O",
    "formamide": "NC=O", "acetaldehyde": "CC=O", "formaldehyde": "C=O",
    "acetone": "CC(C)=O", "fluoromethane": "CF", "acetyl_fluoride": "CC(F)=O",
    "imidazole": "c1c[nH]cn1", "pyrazole": "c1cn[nH]c1", "oxazole": "c1cocn1",
    "isoxazole": "c1cnoc1", "formic_acid": "OC=O", "acetic_acid": "CC(O)=O",
    "dimethyl_peroxide": "COOC", "cyclopropanol": "OC1CC1", "glycidol": "OCC1CO1",
    "propargyl_alcohol": "C#CCO", "aminoacetonitrile": "NCC#N", "phenol": "Oc1ccccc1",
}

TOY10 = {
    "methane": "C", "hydrogen_cyanide": "C#N", "formaldehyde": "C=O", "acetylene": "C#C",
    "ethylene": "C=C", "methanol": "CO", "fluoromethane": "CF", "acetonitrile": "CC#N",
    "ethane": "CC", "methylamine": "CN",
}

# fragments joined pairwise to build the classifier corpus
FRAGMENTS = ["C", "CC", "C=C", "C#C", "C#N", "O", "OC", "N", "NC", "C=O", "C(C)=O",
             "C(=O)OC", "C(N)=O", "F", "c1ccccc1", "C1CC1", "C1CO1", "c1ccoc1", "c1ccncc1",
             "C=N", "OC=O", "CF"]


def embed(smiles: str, seed: int = 42):
    mol = Chem.AddHs(Chem.MolFromSmiles(smiles))
    params = AllChem.ETKDGv3()
    params.randomSeed = seed
    if AllChem.EmbedMolecule(mol, params) != 0:
        raise RuntimeError(f"embedding failed for {smiles}")
    ffh.MMFFOptimizeMolecule(mol, maxIters=5000)
    return mol


def xyz_text(mol, comment: str) -> str:
    pos = mol.GetConformer().GetPositions()
    lines = [str(mol.GetNumAtoms()), comment]
    for atom, (x, y, z) in zip(mol.GetAtoms(), pos):
        lines.append(f"{atom.GetSymbol():<2} {x: .8f} {y: .8f} {z: .8f}")
    return "\n".join(lines) + "\n"


def reference_graph(mol) -> dict:
    kek = Chem.Mol(mol)
    Chem.Kekulize(kek, clearAromaticFlags=False)
    bonds, arom = [], []
    for b in kek.GetBonds():
        i, j = sorted((b.GetBeginAtomIdx(), b.GetEndAtomIdx()))
        bonds.append([i, j, int(b.GetBondTypeAsDouble())])
        if b.GetIsAromatic():
            arom.append([i, j])
    return {"elements": [a.GetSymbol() for a in kek.GetAtoms()],
            "bonds": sorted(bonds), "aromatic": sorted(arom)}


def rdkit_labels(smiles: str, smarts: list[str]) -> list[int]:
    mol = Chem.MolFromSmiles(smiles)
    return [int(mol.HasSubstructMatch(Chem.MolFromSmarts(s))) for s in smarts]


# --- vibrational modes from the force-field Hessian ------------------------------

KCAL_PER_MOL = 4184.0 / 6.02214076e23
AMU = 1.66053906660e-27
C_CM = 2.99792458e10


def modes(mol, step: float = 1e-3) -> list[list[float]]:
    props = ffh.MMFFGetMoleculeProperties(mol)
    ff = ffh.MMFFGetMoleculeForceField(mol, props)
    x0 = np.array(ff.Positions(), dtype=float)
    n3 = x0.size
    energy = lambda x: ff.CalcEnergy(x.tolist())
    e0 = energy(x0)
    hess = np.zeros((n3, n3))
    for a in range(n3):
        for b in range(a, n3):
            if a == b:
                xp, xm = x0.copy(), x0.copy()
                xp[a] += step
                xm[a] -= step
                hess[a, a] = (energy(xp) - 2 * e0 + energy(xm)) / step**2
                continue
            vals = []
            for sa, sb in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                x = x0.copy()
                x[a] += sa * step
                x[b] += sb * step
                vals.append(energy(x))
            hess[a, b] = hess[b, a] = (vals[0] - vals[1] - vals[2] + vals[3]) / (4 * step**2)
    hess = 0.5 * (hess + hess.T)
    masses = np.array([a.GetMass() for a in mol.GetAtoms()])
    inv_sqrt_m = np.repeat(1 / np.sqrt(masses), 3)
    mw = hess * np.outer(inv_sqrt_m, inv_sqrt_m)

    # project out rigid translations and rotations
    pos = x0.reshape(-1, 3)
    com = (masses[:, None] * pos).sum(0) / masses.sum()
    r = pos - com
    vecs = []
    for a in range(3):
        t = np.zeros_like(pos)
        t[:, a] = 1
        vecs.append((t * np.sqrt(masses)[:, None]).ravel())
    for a in range(3):
        axis = np.eye(3)[a]
        vecs.append((np.cross(axis, r) * np.sqrt(masses)[:, None]).ravel())
    u, s, _ = np.linalg.svd(np.array(vecs).T, full_matrices=False)
    rigid = u[:, s > 1e-6 * s.max()]
    proj = np.eye(n3) - rigid @ rigid.T
    evals, evecs = np.linalg.eigh(proj @ mw @ proj)
    order = np.argsort(np.abs(evals))
    keep = np.sort(order[rigid.shape[1]:])

    # Gasteiger charges: MMFF leaves C and H neutral, which silences hydrocarbons
    AllChem.ComputeGasteigerCharges(mol)
    charges = np.array([a.GetDoubleProp("_GasteigerCharge") for a in mol.GetAtoms()])
    out = []
    for k in keep:
        lam = evals[k] * KCAL_PER_MOL / 1e-20 / AMU
        if lam <= 0:
            continue
        wavenumber = np.sqrt(lam) / (2 * np.pi * C_CM)
        cart = (evecs[:, k] * inv_sqrt_m).reshape(-1, 3)
        dmu = (charges[:, None] * cart).sum(0)
        out.append([round(float(wavenumber), 4), round(float(100.0 * dmu @ dmu), 6)])
    return out


# --- golden Morgan bits (independent naive version) ---------------------------------

def _h32(seq) -> int:
    return int.from_bytes(hashlib.blake2b(struct.pack(f"<{len(seq)}q", *seq), digest_size=4).digest(), "little")


def naive_morgan(graph: dict, radius: int = 2, n_bits: int = 2048) -> list[int]:
    els = graph["elements"]
    order = {}
    for i, j, o in graph["bonds"]:
        order[(i, j)] = order[(j, i)] = o
    arom = {tuple(p) for p in graph["aromatic"]} | {tuple(p[::-1]) for p in graph["aromatic"]}
    heavy = [i for i, e in enumerate(els) if e != "H"]
    nb = {i: [j for j in heavy if (i, j) in order] for i in heavy}
    z = {"H": 1, "B": 5, "C": 6, "N": 7, "O": 8, "F": 9, "Si": 14, "P": 15, "S": 16,
         "Cl": 17, "As": 33, "Se": 34, "Br": 35}
    ids = {}
    for i in heavy:
        hs = sum(1 for j in range(len(els)) if els[j] == "H" and (i, j) in order)
        val = sum(o for (a, _), o in order.items() if a == i)
        ar = int(any((i, j) in arom for j in range(len(els))))
        ids[i] = _h32([z[els[i]], len(nb[i]), val, hs, ar])
    feats = list(ids.values())
    env = {i: frozenset() for i in heavy}
    seen = set()
    for r in range(1, radius + 1):
        nid, nenv = {}, {}
        for i in heavy:
            pairs = sorted((4 if (i, j) in arom else order[(i, j)], ids[j]) for j in nb[i])
            flat = [v for p in pairs for v in p]
            nid[i] = _h32([r, ids[i]] + flat)
            e = set(env[i])
            for j in nb[i]:
                e.add((min(i, j), max(i, j)))
                e.update(env[j])
            nenv[i] = frozenset(e)
        for i in sorted(heavy, key=lambda i: (nid[i], heavy.index(i))):
            if nenv[i] == env[i] or nenv[i] in seen:
                continue
            seen.add(nenv[i])
            feats.append(nid[i])
        ids, env = nid, nenv
    return sorted({f % n_bits for f in feats})


def corpus_records(table: dict, smarts: list[str] | None = None, with_modes=False) -> list[dict]:
    recs = []
    for name, smi in table.items():
        mol = embed(smi)
        rec = {"id": name, "smiles": smi, "xyz": xyz_text(mol, name), "graph": reference_graph(mol)}
        if smarts is not None:
            rec["rdkit_labels"] = rdkit_labels(smi, smarts)
        if with_modes:
            rec["modes"] = modes(mol)
        recs.append(rec)
    return recs


def toy_corpus(n: int = 200) -> dict:
    smiles = {}
    for a, b in itertools.product(FRAGMENTS, repeat=2):
        mol = Chem.MolFromSmiles(a + b) if not a[0].isdigit() else None
        if mol is None:
            continue
        can = Chem.MolToSmiles(mol)
        if can not in smiles.values() and mol.GetNumHeavyAtoms() <= 12:
            smiles[f"toy{len(smiles):03d}"] = can
    for a, b, c in itertools.product(FRAGMENTS[:12], repeat=3):
        if len(smiles) >= n:
            break
        mol = Chem.MolFromSmiles(a + b + c)
        if mol is None:
            continue
        can = Chem.MolToSmiles(mol)
        if can not in smiles.values() and mol.GetNumHeavyAtoms() <= 12:
            smiles[f"toy{len(smiles):03d}"] = can
    return dict(list(smiles.items())[:n])


def write_jsonl(path: Path, recs: list[dict]) -> None:
    path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in recs))


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    groups = [line.split("\t")[1] for line in
              (ROOT / "src/specgeo/data/functional_groups.tsv").read_text().splitlines()
              if line and not line.startswith("#")]

    bond = corpus_records(BOND_CORPUS, groups)
    write_jsonl(OUT / "bond_corpus.jsonl", bond)
    write_jsonl(OUT / "pattern_corpus.jsonl", corpus_records(PATTERN_EXTRA, groups))

    golden = [f"{r['id']}: {' '.join(map(str, naive_morgan(r['graph'])))}" for r in bond]
    (OUT / "morgan_golden.txt").write_text("\n".join(golden) + "\n")

    toy10 = corpus_records(TOY10, groups, with_modes=True)
    write_jsonl(OUT / "toy10.jsonl", toy10)
    toy = corpus_records(toy_corpus(), groups, with_modes=True)
    write_jsonl(OUT / "toy200.jsonl", toy)
    print(f"wrote {len(bond)} bond, {len(toy10)} toy10, {len(toy)} toy200 records to {OUT}")


if __name__ == "__main__":
    main()
