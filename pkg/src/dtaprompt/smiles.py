"""SMILES to molecular graph.

Hydrogens stay implicit (counted on the heavy atom). Stereo marks are
read and dropped; aromaticity is taken from lowercase atom symbols as written.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor
from .errors import ParseError

ORGANIC = {"B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"}
AROMATIC_ORGANIC = {"b": "B", "c": "C", "n": "N", "o": "O", "p": "P", "s": "S"}
AROMATIC_BRACKET = {"b", "c", "n", "o", "p", "s", "se", "as", "te", "si"}
STANDARD_VALENCE = {"C": 4, "N": 3, "O": 2, "S": 2, "F": 1, "Cl": 1, "Br": 1, "I": 1, "B": 3, "P": 3}

BOND_SYMBOLS = {"-": "single", "=": "double", "#": "triple", ":": "aromatic", "/": "single", "\\": "single"}
BOND_ORDER = {"single": 1.0, "double": 2.0, "triple": 3.0, "aromatic": 1.5}

ELEMENTS = ["C", "N", "O", "S", "F", "P", "Cl", "Br", "I", "B", "Si", "Se"]
N_ATOM_FEATURES = len(ELEMENTS) + 1 + 7 + 5 + 5 + 1

# Bracket element symbols: two-letter first so "Cl" wins over "C".
_PERIODIC = (
    "He Li Be Ne Na Mg Al Si Cl Ar Ca Sc Ti Cr Mn Fe Co Ni Cu Zn Ga Ge As Se Br Kr Rb Sr Zr Nb Mo Tc "
    "Ru Rh Pd Ag Cd In Sn Sb Te Xe Cs Ba La Ce Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta Re Os Ir "
    "Pt Au Hg Tl Pb Bi Po At Rn Fr Ra Ac Th Pa Np Pu Am Cm Bk Cf Es Fm Md No Lr Rf Db Sg Bh Hs Mt Ds "
    "Rg Cn Nh Fl Mc Lv Ts Og H B C N O F P S K V Y I W U"
).split()
_BRACKET = re.compile(
    r"\[(?P<iso>\d+)?"
    r"(?P<sym>" + "|".join(sorted(_PERIODIC, key=len, reverse=True)) + r"|se|as|te|si|b|c|n|o|p|s|\*)"
    r"(?P<chiral>@(?:@|TH[12]|AL[12]|SP[123]|TB\d{1,2}|OH\d{1,2})?)?"
    r"(?P<h>H\d?)?"
    r"(?P<charge>[+-](?:\d+|[+-]*))?"
    r"(?::(?P<cls>\d+))?\]"
)


@dataclass
class AtomRecord:
    element: str
    aromatic: bool = False
    charge: int = 0
    explicit_h: int | None = None
    isotope: int | None = None
    in_ring: bool = False
    degree: int = 0
    bracket: bool = False
    implicit_h: int = 0

    @property
    def total_h(self) -> int:
        return self.explicit_h if self.explicit_h is not None else self.implicit_h


@dataclass
class MolGraph:
    smiles: str
    atoms: list[AtomRecord] = field(default_factory=list)
    bonds: list[tuple[int, int, str]] = field(default_factory=list)
    features: Tensor | None = None

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    def edge_list(self) -> list[tuple[int, int]]:
        return [(i, j) for i, j, _ in self.bonds]


def _ring_bonds(n: int, edges: list[tuple[int, int]]) -> set[tuple[int, int]]:
    """Edges lying on a cycle, i.e. the non-bridges (iterative Tarjan)."""
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for k, (i, j) in enumerate(edges):
        adj[i].append((j, k))
        adj[j].append((i, k))
    disc = [-1] * n
    low = [0] * n
    bridges = set()
    timer = 0
    for root in range(n):
        if disc[root] != -1:
            continue
        disc[root] = low[root] = timer
        timer += 1
        stack = [(root, -1, iter(adj[root]))]
        while stack:
            v, parent_edge, it = stack[-1]
            advanced = False
            for w, k in it:
                if k == parent_edge:
                    continue
                if disc[w] == -1:
                    disc[w] = low[w] = timer
                    timer += 1
                    stack.append((w, k, iter(adj[w])))
                    advanced = True
                    break
                low[v] = min(low[v], disc[w])
            if advanced:
                continue
            stack.pop()
            if stack:
                u = stack[-1][0]
                low[u] = min(low[u], low[v])
                if low[v] > disc[u]:
                    bridges.add(parent_edge)
    return {edges[k] for k in range(len(edges)) if k not in bridges}


def _parse_charge(text: str | None) -> int:
    if not text:
        return 0
    sign = 1 if text[0] == "+" else -1
    rest = text[1:]
    if rest.isdigit():
        return sign * int(rest)
    return sign * (1 + len(rest))


def parse_smiles(s: str) -> MolGraph:
    """Parse ``s`` into a :class:`MolGraph` with atoms in token order.

    Raises :class:`ParseError` (with a byte offset) on unknown symbols,
    unbalanced parentheses, dangling bonds and unclosed ring bonds.
    """
    if not isinstance(s, str) or not s:
        raise ParseError("empty SMILES", 0)
    try:
        s.encode("ascii")
    except UnicodeEncodeError:
        raise ParseError("non-ASCII character", 0) from None

    atoms: list[AtomRecord] = []
    bonds: dict[tuple[int, int], str] = {}
    explicit_bond: dict[tuple[int, int], bool] = {}
    prev: int | None = None
    pending: str | None = None
    pending_pos = 0
    branch_stack: list[tuple[int | None, int]] = []
    rings: dict[int, tuple[int, str | None, int]] = {}
    i = 0
    n = len(s)

    def add_bond(a: int, b: int, sym: str | None, pos: int) -> None:
        if a == b:
            raise ParseError("atom bonded to itself", pos)
        key = (min(a, b), max(a, b))
        if key in bonds:
            raise ParseError(f"duplicate bond between atoms {key[0]} and {key[1]}", pos)
        if sym is not None:
            order = BOND_SYMBOLS[sym]
        elif atoms[a].aromatic and atoms[b].aromatic:
            order = "aromatic"
        else:
            order = "single"
        bonds[key] = order
        explicit_bond[key] = sym is not None

    def new_atom(rec: AtomRecord, pos: int) -> None:
        nonlocal prev, pending
        atoms.append(rec)
        idx = len(atoms) - 1
        if prev is not None:
            add_bond(prev, idx, pending, pos)
        elif pending is not None:
            raise ParseError("dangling bond", pending_pos)
        pending = None
        prev = idx

    while i < n:
        ch = s[i]
        if ch == "[":
            m = _BRACKET.match(s, i)
            if not m:
                raise ParseError(f"malformed bracket atom {s[i:s.find(']', i) + 1 or n]!r}", i)
            sym = m.group("sym")
            aromatic = sym in AROMATIC_BRACKET
            element = sym.capitalize() if aromatic else sym
            h = m.group("h")
            rec = AtomRecord(
                element=element,
                aromatic=aromatic,
                charge=_parse_charge(m.group("charge")),
                explicit_h=(int(h[1:]) if len(h) > 1 else 1) if h else 0,
                isotope=int(m.group("iso")) if m.group("iso") else None,
                bracket=True,
            )
            new_atom(rec, i)
            i = m.end()
        elif ch.isalpha() or ch == "*":
            two = s[i : i + 2]
            if two in ("Cl", "Br"):
                new_atom(AtomRecord(element=two), i)
                i += 2
            elif ch in ORGANIC:
                new_atom(AtomRecord(element=ch), i)
                i += 1
            elif ch in AROMATIC_ORGANIC:
                new_atom(AtomRecord(element=AROMATIC_ORGANIC[ch], aromatic=True), i)
                i += 1
            else:
                raise ParseError(f"unknown symbol {ch!r}", i)
        elif ch in BOND_SYMBOLS:
            if prev is None or pending is not None:
                raise ParseError("dangling bond", i)
            pending, pending_pos = ch, i
            i += 1
        elif ch == "(":
            if prev is None:
                raise ParseError("branch opened before any atom", i)
            if pending is not None:
                raise ParseError("dangling bond", pending_pos)
            branch_stack.append((prev, i))
            i += 1
        elif ch == ")":
            if not branch_stack:
                raise ParseError("unbalanced parentheses", i)
            if pending is not None:
                raise ParseError("dangling bond", pending_pos)
            if s[i - 1] == "(":
                raise ParseError("empty branch", i)
            prev, _ = branch_stack.pop()
            i += 1
        elif ch.isdigit() or ch == "%":
            if prev is None:
                raise ParseError("ring bond before any atom", i)
            if ch == "%":
                num_txt = s[i + 1 : i + 3]
                if len(num_txt) != 2 or not num_txt.isdigit():
                    raise ParseError("malformed %nn ring bond", i)
                num, width = int(num_txt), 3
            else:
                num, width = int(ch), 1
            if num in rings:
                other, sym, opos = rings.pop(num)
                if pending is not None and sym is not None and pending != sym:
                    raise ParseError(f"conflicting bond symbols on ring bond {num}", i)
                add_bond(other, prev, pending if pending is not None else sym, i)
            else:
                rings[num] = (prev, pending, i)
            pending = None
            i += width
        elif ch == ".":
            if pending is not None:
                raise ParseError("dangling bond", pending_pos)
            if prev is None:
                raise ParseError("fragment separator before any atom", i)
            prev = None
            i += 1
        else:
            raise ParseError(f"unknown symbol {ch!r}", i)

    if pending is not None:
        raise ParseError("dangling bond", pending_pos)
    if branch_stack:
        raise ParseError("unbalanced parentheses", branch_stack[-1][1])
    if rings:
        num = min(rings)
        raise ParseError(f"unclosed ring bond {num}", n)
    if s[-1] == ".":
        raise ParseError("empty fragment", n - 1)

    bond_list = sorted((i, j, o) for (i, j), o in bonds.items())
    g = MolGraph(smiles=s, atoms=atoms, bonds=bond_list)
    order_sum = [0.0] * len(atoms)
    for a, b, o in bond_list:
        atoms[a].degree += 1
        atoms[b].degree += 1
        order_sum[a] += BOND_ORDER[o]
        order_sum[b] += BOND_ORDER[o]
    ring = _ring_bonds(len(atoms), [(a, b) for a, b, _ in bond_list])
    for a, b in ring:
        atoms[a].in_ring = atoms[b].in_ring = True
    for k, at in enumerate(atoms):
        if not at.bracket:
            val = STANDARD_VALENCE.get(at.element, 0)
            at.implicit_h = max(0, math.floor(val - order_sum[k] + 1e-9))
    g.features = featurize_atoms(g)
    return g


def _one_hot(k: int, n: int) -> list[float]:
    v = [0.0] * n
    v[k] = 1.0
    return v


def atom_feature_vector(at: AtomRecord) -> list[float]:
    el = ELEMENTS.index(at.element) if at.element in ELEMENTS else len(ELEMENTS)
    return (
        _one_hot(el, len(ELEMENTS) + 1)
        + _one_hot(min(at.degree, 6), 7)
        + _one_hot(min(at.total_h, 4), 5)
        + _one_hot(max(-2, min(2, at.charge)) + 2, 5)
        + [1.0 if at.aromatic else 0.0]
    )


def featurize_atoms(g: MolGraph) -> Tensor:
    """(n_atoms x 31): element | degree 0-6 | H count 0-4 | charge -2..2 | aromatic."""
    rows = [atom_feature_vector(a) for a in g.atoms]
    return Tensor(np.array(rows, dtype=np.float64).reshape(len(rows), N_ATOM_FEATURES))
