"""A SMARTS subset: parser, normaliser and substructure matcher.

Supported: organic-subset and aromatic atom symbols, ``*``, bracket atoms with
element symbols, ``#n``, ``X<n>``, ``H<n>``, ``a``/``A``, ``!``, ``&``/implicit
and, ``,``, ``;``, one-level recursive ``$(...)``; bonds ``- = # : ~`` and the
implicit single-or-aromatic bond; branches; ring closures 1-9.

Counting conventions on explicit-hydrogen graphs: ``X`` counts all neighbours
including hydrogens, ``H`` counts hydrogen neighbours. Hydrogen atoms of the
target are only matched by atoms that ask for atomic number 1, so matching
behaves as on a hydrogen-suppressed graph.
"""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from typing import Union

import numpy as np

from .chem.graph import MolecularGraph
from .chem.tables import ATOMIC_NUMBERS, SYMBOLS


class SmartsError(ValueError):
    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} at offset {offset}")


# --- atom expression nodes ----------------------------------------------------

@dataclass(frozen=True)
class Elem:
    z: int
    aromatic: bool | None  # None: either (the #n form)


@dataclass(frozen=True)
class Count:
    kind: str  # "X" or "H"
    n: int


@dataclass(frozen=True)
class Flag:
    kind: str  # "*", "a", "A"


@dataclass(frozen=True)
class Recursive:
    pattern: "Pattern"


@dataclass(frozen=True)
class Not:
    arg: "Expr"


@dataclass(frozen=True)
class And:
    args: tuple
    low: bool = False  # ';' rather than '&'


@dataclass(frozen=True)
class Or:
    args: tuple


Expr = Union[Elem, Count, Flag, Recursive, Not, And, Or]

BOND_SYMBOLS = {"-": "single", "=": "double", "#": "triple", ":": "aromatic", "~": "any"}
BOND_TEXT = {v: k for k, v in BOND_SYMBOLS.items()}
DEFAULT_BOND = "default"


@dataclass(frozen=True)
class Pattern:
    atoms: tuple
    bonds: tuple  # (i, j, bond kind)

    def neighbors(self, i: int):
        for a, b, kind in self.bonds:
            if a == i:
                yield b, kind
            elif b == i:
                yield a, kind

    def __str__(self) -> str:
        return normalize(self)


_ORGANIC = {"Cl": 17, "Br": 35, "B": 5, "C": 6, "N": 7, "O": 8, "P": 15, "S": 16, "F": 9}
_AROMATIC_ORGANIC = {"b": 5, "c": 6, "n": 7, "o": 8, "p": 15, "s": 16}
_BRACKET_AROMATIC = {"se": 34, "as": 33, **_AROMATIC_ORGANIC}
_BRACKET_ELEMENTS = {s: z for s, z in ATOMIC_NUMBERS.items() if s != "H"}


class _Parser:
    def __init__(self, text: str, base: int = 0, depth: int = 0):
        self.text = text
        self.pos = 0
        self.base = base
        self.depth = depth

    def error(self, msg: str, pos: int | None = None):
        raise SmartsError(msg, self.base + (self.pos if pos is None else pos))

    def peek(self, k: int = 0) -> str:
        i = self.pos + k
        return self.text[i] if i < len(self.text) else ""

    # -- chain level ---------------------------------------------------------
    def parse(self) -> Pattern:
        atoms: list = []
        bonds: list = []
        rings: dict[int, tuple[int, str | None, int]] = {}
        stack: list[int] = []
        prev: int | None = None
        pending_bond: str | None = None
        if not self.text:
            self.error("empty pattern")
        while self.pos < len(self.text):
            ch = self.peek()
            if ch == "(":
                if prev is None:
                    self.error("branch before any atom")
                stack.append(prev)
                self.pos += 1
            elif ch == ")":
                if not stack or pending_bond is not None:
                    self.error("unbalanced ')'")
                prev = stack.pop()
                self.pos += 1
            elif ch in BOND_SYMBOLS:
                if prev is None or pending_bond is not None:
                    self.error(f"misplaced bond {ch!r}")
                pending_bond = BOND_SYMBOLS[ch]
                self.pos += 1
            elif ch.isdigit():
                if prev is None:
                    self.error("ring closure before any atom")
                digit = int(ch)
                if digit == 0:
                    self.error("ring closure 0 unsupported")
                if digit in rings:
                    other, kind, _ = rings.pop(digit)
                    kind = pending_bond or kind or DEFAULT_BOND
                    if other == prev:
                        self.error("ring closure onto the same atom")
                    bonds.append((other, prev, kind))
                else:
                    rings[digit] = (prev, pending_bond, self.pos)
                pending_bond = None
                self.pos += 1
            elif ch == "%":
                self.error("two-digit ring closures unsupported")
            elif ch == ".":
                self.error("disconnected patterns unsupported")
            else:
                atom = self.parse_atom()
                atoms.append(atom)
                idx = len(atoms) - 1
                if prev is not None:
                    bonds.append((prev, idx, pending_bond or DEFAULT_BOND))
                pending_bond = None
                prev = idx
        if stack:
            self.error("unclosed branch")
        if rings:
            self.error("unclosed ring", next(iter(rings.values()))[2])
        if pending_bond is not None:
            self.error("dangling bond")
        return Pattern(tuple(atoms), tuple(bonds))

    def parse_atom(self) -> Expr:
        ch = self.peek()
        if ch == "[":
            return self.parse_bracket()
        if ch == "*":
            self.pos += 1
            return Flag("*")
        two = self.text[self.pos:self.pos + 2]
        if two in ("Cl", "Br"):
            self.pos += 2
            return Elem(_ORGANIC[two], False)
        if ch in _ORGANIC:
            self.pos += 1
            return Elem(_ORGANIC[ch], False)
        if ch in _AROMATIC_ORGANIC:
            self.pos += 1
            return Elem(_AROMATIC_ORGANIC[ch], True)
        self.error(f"unsupported atom {ch!r}")

    # -- bracket expressions --------------------------------------------------
    def parse_bracket(self) -> Expr:
        start = self.pos
        depth = 0
        end = self.pos
        while end < len(self.text):
            c = self.text[end]
            if c == "[":
                depth += 1
            elif c == "]":
                depth -= 1
                if depth == 0:
                    break
            end += 1
        else:
            self.error("unclosed '['", start)
        body = self.text[start + 1:end]
        if not body:
            self.error("empty bracket atom", start)
        if body == "H":
            self.pos = end + 1
            return Elem(1, False)
        self.pos = start + 1
        expr = self.parse_low()
        if self.pos != end:
            self.error(f"unexpected {self.peek()!r} in bracket atom")
        self.pos = end + 1
        return expr

    def parse_low(self) -> Expr:
        args = [self.parse_or()]
        while self.peek() == ";":
            self.pos += 1
            args.append(self.parse_or())
        return args[0] if len(args) == 1 else And(tuple(args), low=True)

    def parse_or(self) -> Expr:
        args = [self.parse_high()]
        while self.peek() == ",":
            self.pos += 1
            args.append(self.parse_high())
        return args[0] if len(args) == 1 else Or(tuple(args))

    def parse_high(self) -> Expr:
        args = [self.parse_not()]
        while self.peek() and self.peek() not in ",;]":
            if self.peek() == "&":
                self.pos += 1
            args.append(self.parse_not())
        return args[0] if len(args) == 1 else And(tuple(args))

    def parse_not(self) -> Expr:
        if self.peek() == "!":
            self.pos += 1
            return Not(self.parse_not())
        return self.parse_primitive()

    def _digits(self) -> int | None:
        start = self.pos
        while self.peek().isdigit():
            self.pos += 1
        return int(self.text[start:self.pos]) if self.pos > start else None

    def parse_primitive(self) -> Expr:
        ch = self.peek()
        start = self.pos
        if ch == "#":
            self.pos += 1
            n = self._digits()
            if n is None:
                self.error("'#' without atomic number", start)
            if n not in SYMBOLS:
                self.error(f"unsupported atomic number {n}", start)
            return Elem(n, None)
        if ch in ("X", "H"):
            self.pos += 1
            n = self._digits()
            return Count(ch, 1 if n is None else n)
        if ch == "$":
            if self.peek(1) != "(":
                self.error("'$' must be followed by '('")
            if self.depth >= 1:
                self.error("recursive SMARTS nested more than one level")
            depth, end = 0, self.pos + 1
            while end < len(self.text):
                if self.text[end] == "(":
                    depth += 1
                elif self.text[end] == ")":
                    depth -= 1
                    if depth == 0:
                        break
                end += 1
            else:
                self.error("unclosed '$('", start)
            inner = _Parser(self.text[self.pos + 2:end], self.base + self.pos + 2, self.depth + 1).parse()
            self.pos = end + 1
            return Recursive(inner)
        if ch in ("*",):
            self.pos += 1
            return Flag("*")
        if ch in ("a", "A") and self.text[self.pos:self.pos + 2] != "As":
            self.pos += 1
            return Flag(ch)
        two = self.text[self.pos:self.pos + 2]
        if two in _BRACKET_ELEMENTS:
            self.pos += 2
            return Elem(_BRACKET_ELEMENTS[two], False)
        if two in _BRACKET_AROMATIC:
            self.pos += 2
            return Elem(_BRACKET_AROMATIC[two], True)
        if ch in _BRACKET_ELEMENTS:
            self.pos += 1
            return Elem(_BRACKET_ELEMENTS[ch], False)
        if ch in _BRACKET_AROMATIC:
            self.pos += 1
            return Elem(_BRACKET_AROMATIC[ch], True)
        self.error(f"unsupported construct {ch!r}")


def parse_pattern(text: str) -> Pattern:
    return _Parser(text.strip()).parse()


# --- normaliser ---------------------------------------------------------------

def _expr_text(e: Expr) -> str:
    if isinstance(e, Elem):
        if e.aromatic is None:
            return f"#{e.z}"
        sym = SYMBOLS[e.z]
        return sym.lower() if e.aromatic else sym
    if isinstance(e, Count):
        return f"{e.kind}{e.n}"
    if isinstance(e, Flag):
        return e.kind
    if isinstance(e, Recursive):
        return f"$({normalize(e.pattern)})"
    if isinstance(e, Not):
        return "!" + _expr_text(e.arg)
    if isinstance(e, Or):
        return ",".join(_expr_text(a) for a in e.args)
    if isinstance(e, And):
        if e.low:
            return ";".join(_expr_text(a) for a in e.args)
        return "&".join(_wrap_high(a) for a in e.args)
    raise TypeError(e)


def _wrap_high(e: Expr) -> str:
    # an Or/low-And under '&' cannot be written without changing precedence
    if isinstance(e, (Or,)) or (isinstance(e, And) and e.low):
        raise ValueError("expression not expressible in SMARTS precedence")
    return _expr_text(e)


def normalize(p: Pattern) -> str:
    """Canonical text: every atom bracketed, every bond explicit, DFS from atom 0."""
    adj: dict[int, list[tuple[int, str]]] = {i: [] for i in range(len(p.atoms))}
    for a, b, kind in p.bonds:
        adj[a].append((b, kind))
        adj[b].append((a, kind))
    for i in adj:
        adj[i].sort()
    visited: set[int] = set()
    used_edges: set = set()
    ring_digits: dict = {}
    free = list(range(1, 10))

    def bond_text(kind):
        return "" if kind == DEFAULT_BOND else BOND_TEXT[kind]

    # first pass: spanning tree to find ring bonds
    tree_parent = {0: None}
    order = [0]
    seen = {0}
    ring_edges = []

    def dfs(v):
        for u, kind in adj[v]:
            key = (min(u, v), max(u, v))
            if u not in seen:
                seen.add(u)
                tree_parent[u] = v
                order.append(u)
                used_edges.add(key)
                dfs(u)
            elif key not in used_edges:
                used_edges.add(key)
                ring_edges.append((key, kind))

    dfs(0)
    closures: dict[int, list] = {i: [] for i in adj}
    for key, kind in ring_edges:
        closures[key[0]].append((key, kind))
        closures[key[1]].append((key, kind))

    def emit(v) -> str:
        visited.add(v)
        out = "[" + _expr_text(p.atoms[v]) + "]"
        for key, kind in sorted(closures[v]):
            if key in ring_digits:
                out += bond_text(kind) + str(ring_digits.pop(key))
            else:
                if not free:
                    raise ValueError("more than 9 open ring closures")
                d = free.pop(0)
                ring_digits[key] = d
                out += str(d)
                ring_digits[key] = d
        children = [(u, kind) for u, kind in adj[v] if tree_parent.get(u) == v and u not in visited]
        for k, (u, kind) in enumerate(children):
            text = bond_text(kind) + emit(u)
            out += text if k == len(children) - 1 else f"({text})"
        return out

    text = emit(0)
    return text


# --- matching -----------------------------------------------------------------

def _mentions_hydrogen(e: Expr) -> bool:
    if isinstance(e, Elem):
        return e.z == 1
    if isinstance(e, Not):
        return False
    if isinstance(e, (And, Or)):
        return any(_mentions_hydrogen(a) for a in e.args)
    return False


class _Matcher:
    def __init__(self, graph: MolecularGraph):
        self.g = graph
        self.z = [ATOMIC_NUMBERS[el] for el in graph.elements]
        self.arom = graph.aromatic_atoms
        self.rec_cache: dict = {}

    def atom_ok(self, e: Expr, i: int) -> bool:
        if isinstance(e, Elem):
            if self.z[i] != e.z:
                return False
            return e.aromatic is None or e.aromatic == (i in self.arom)
        if isinstance(e, Count):
            return (self.g.degree(i) if e.kind == "X" else self.g.h_count(i)) == e.n
        if isinstance(e, Flag):
            if e.kind == "*":
                return True
            return (i in self.arom) == (e.kind == "a")
        if isinstance(e, Recursive):
            key = (id(e.pattern), i)
            if key not in self.rec_cache:
                self.rec_cache[key] = any(True for _ in self.embeddings(e.pattern, first=i))
            return self.rec_cache[key]
        if isinstance(e, Not):
            return not self.atom_ok(e.arg, i)
        if isinstance(e, And):
            return all(self.atom_ok(a, i) for a in e.args)
        if isinstance(e, Or):
            return any(self.atom_ok(a, i) for a in e.args)
        raise TypeError(e)

    def candidate(self, e: Expr, i: int) -> bool:
        if self.z[i] == 1 and not _mentions_hydrogen(e):
            return False
        return self.atom_ok(e, i)

    def bond_ok(self, kind: str, i: int, j: int) -> bool:
        order = self.g.order(i, j)
        if order == 0:
            return False
        arom = self.g.is_aromatic_bond(i, j)
        if kind == "any":
            return True
        if kind == "aromatic":
            return arom
        if kind == DEFAULT_BOND:
            return arom or order == 1
        if arom:
            return False
        return order == {"single": 1, "double": 2, "triple": 3}[kind]

    def embeddings(self, p: Pattern, first: int | None = None):
        n = len(p.atoms)
        # connect each pattern atom (k > 0) to an earlier one
        earlier = [[(j, kind) for j, kind in p.neighbors(k) if j < k] for k in range(n)]
        mapping = [-1] * n
        used: set[int] = set()

        def extend(k):
            if k == n:
                yield tuple(mapping)
                return
            if k == 0:
                pool = [first] if first is not None else range(len(self.g))
            else:
                if not earlier[k]:
                    pool = range(len(self.g))
                else:
                    pool = self.g.neighbors(mapping[earlier[k][0][0]])
            for t in pool:
                if t in used or not self.candidate(p.atoms[k], t):
                    continue
                if not all(self.bond_ok(kind, mapping[j], t) for j, kind in earlier[k]):
                    continue
                mapping[k] = t
                used.add(t)
                yield from extend(k + 1)
                used.discard(t)
                mapping[k] = -1

        yield from extend(0)


def match_pattern(pattern: Pattern, graph: MolecularGraph, unique: bool = True) -> list[tuple[int, ...]]:
    """All embeddings of ``pattern`` in ``graph`` as tuples ``target[pattern_atom]``.

    With ``unique`` the embeddings are reduced to one per distinct target atom set.
    """
    out, seen = [], set()
    for m in _Matcher(graph).embeddings(pattern):
        key = frozenset(m)
        if unique and key in seen:
            continue
        seen.add(key)
        out.append(m)
    return out


# --- functional groups ----------------------------------------------------------

@dataclass(frozen=True)
class FunctionalGroupSet:
    names: tuple[str, ...]
    smarts: tuple[str, ...]
    patterns: tuple[Pattern, ...]

    def __len__(self) -> int:
        return len(self.names)

    @classmethod
    def from_lines(cls, text: str) -> "FunctionalGroupSet":
        names, smarts = [], []
        for line in text.splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            name, pat = line.split("\t")
            names.append(name.strip())
            smarts.append(pat.strip())
        return cls(tuple(names), tuple(smarts), tuple(parse_pattern(s) for s in smarts))


def default_groups() -> FunctionalGroupSet:
    text = resources.files("specgeo.data").joinpath("functional_groups.tsv").read_text()
    return FunctionalGroupSet.from_lines(text)


def label_functional_groups(graph: MolecularGraph, groups: FunctionalGroupSet | None = None) -> np.ndarray:
    """Multi-hot vector: entry k is 1 iff group k has at least one embedding."""
    groups = groups or default_groups()
    matcher = _Matcher(graph)
    return np.array([int(next(matcher.embeddings(p), None) is not None) for p in groups.patterns], dtype=np.int64)
