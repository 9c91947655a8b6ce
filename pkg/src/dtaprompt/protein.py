"""Protein sequence to residue graph and token sequence."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autograd import Tensor
from .errors import InputError

log = logging.getLogger(__name__)

AMINO_ACIDS = "ACDEFGHIKLMNPQRSTVWY"
ALPHABET = AMINO_ACIDS + "X"
PAD = 0
TOKEN = {aa: i + 1 for i, aa in enumerate(ALPHABET)}  # A=1 .. Y=20, X=21
VOCAB_SIZE = len(ALPHABET) + 1
MAX_SEQ_LEN = 1000

# Charged residues count as polar as well.
RESIDUE_FLAGS = {
    "hydrophobic": set("AVLIMFWC"),
    "polar": set("STNQYH") | set("KRDE"),
    "charged_positive": set("KRH"),
    "charged_negative": set("DE"),
    "aromatic": set("FWYH"),
    "small": set("AGSC"),
    "proline": set("P"),
}
N_RESIDUE_FEATURES = len(ALPHABET) + len(RESIDUE_FLAGS)


@dataclass
class ProteinGraph:
    residues: list[str]
    edges: list[tuple[int, int]]
    tokens: list[int]
    features: Tensor | None = None
    unknown_count: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def n_residues(self) -> int:
        return len(self.residues)


def clean_sequence(seq: str) -> tuple[list[str], int]:
    """Upper-case residues; anything outside the 20 canonical letters becomes X."""
    out, unknown = [], 0
    for ch in seq.strip().upper():
        if ch in TOKEN:
            out.append(ch)
        else:
            out.append("X")
            unknown += 1
    return out, unknown


def tokenize(seq: str, max_len: int = MAX_SEQ_LEN) -> list[int]:
    residues, _ = clean_sequence(seq)
    return [TOKEN[r] for r in residues[:max_len]]


def build_protein_graph(
    seq: str,
    contact_map=None,
    threshold: float = 0.5,
    window: int = 2,
    direction: str = "ge",
    max_len: int = MAX_SEQ_LEN,
) -> ProteinGraph:
    """Residue graph from a contact map, or a banded chain graph without one.

    ``direction`` is ``"ge"`` when map values are contact probabilities and
    ``"le"`` when they are distances. Backbone edges (i, i+1) are always kept.
    """
    residues, unknown = clean_sequence(seq)
    if not residues:
        raise InputError("empty protein sequence")
    if unknown:
        log.warning("%d residue(s) outside the canonical alphabet mapped to X", unknown)
    n = len(residues)
    edges = {(i, i + 1) for i in range(n - 1)}
    if contact_map is None:
        for k in range(2, window + 1):
            edges.update((i, i + k) for i in range(n - k))
    else:
        cm = np.asarray(contact_map, dtype=np.float64)
        if cm.shape != (n, n):
            raise InputError(f"contact map shape {cm.shape} does not match sequence length {n}")
        if not np.all(np.isfinite(cm)):
            raise InputError("contact map has non-finite entries")
        if direction == "ge":
            hit = cm >= threshold
        elif direction == "le":
            hit = cm <= threshold
        else:
            raise InputError(f"unknown threshold direction {direction!r}")
        hit = hit | hit.T
        ii, jj = np.nonzero(np.triu(hit, k=2))
        edges.update(zip(ii.tolist(), jj.tolist()))
    g = ProteinGraph(
        residues=residues,
        edges=sorted(edges),
        tokens=[TOKEN[r] for r in residues[:max_len]],
        unknown_count=unknown,
    )
    g.features = featurize_residues(g)
    return g


def featurize_residues(g: ProteinGraph) -> Tensor:
    """(n x 28): residue one-hot over 21 codes then 7 physicochemical flags."""
    x = np.zeros((g.n_residues, N_RESIDUE_FEATURES))
    for i, r in enumerate(g.residues):
        x[i, ALPHABET.index(r)] = 1.0
        for k, members in enumerate(RESIDUE_FLAGS.values()):
            if r in members:
                x[i, len(ALPHABET) + k] = 1.0
    return Tensor(x)


def read_contact_map(path) -> np.ndarray:
    """File layout: first line n, then n rows of n whitespace-separated floats."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise InputError(f"{path}: empty contact map file")
    try:
        n = int(lines[0].strip())
        rows = [[float(v) for v in ln.split()] for ln in lines[1:]]
    except ValueError as e:
        raise InputError(f"{path}: {e}") from None
    if len(rows) != n or any(len(r) != n for r in rows):
        raise InputError(f"{path}: expected {n} rows of {n} values")
    return np.array(rows, dtype=np.float64)


def write_contact_map(path, cm) -> None:
    cm = np.asarray(cm, dtype=np.float64)
    with open(path, "w") as fh:
        fh.write(f"{cm.shape[0]}\n")
        for row in cm:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
