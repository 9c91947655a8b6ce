"""Dataset model, canonical TSV interchange and raw matrix conversion."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import pickle
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

TSV_COLUMNS = ("drug_id", "smiles", "target_id", "sequence", "affinity", "split")
SPLITS = ("train", "test")


@dataclass(frozen=True)
class Sample:
    drug_id: str
    target_id: str
    affinity: float
    split: str


@dataclass
class DtaDataset:
    drugs: dict[str, str] = field(default_factory=dict)
    targets: dict[str, str] = field(default_factory=dict)
    samples: list[Sample] = field(default_factory=list)
    contact_maps: dict[str, str] = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def validate(self) -> None:
        seen = set()
        for s in self.samples:
            if s.drug_id not in self.drugs or s.target_id not in self.targets:
                raise DataError(f"sample ({s.drug_id}, {s.target_id}) references an unregistered id")
            if not math.isfinite(s.affinity):
                raise DataError(f"sample ({s.drug_id}, {s.target_id}) has non-finite affinity")
            if s.split not in SPLITS:
                raise DataError(f"unknown split {s.split!r}")
            key = (s.drug_id, s.target_id, s.split)
            if key in seen:
                raise DataError(f"duplicate sample {key}")
            seen.add(key)

    def split(self, name: str) -> list[Sample]:
        return [s for s in self.samples if s.split == name]

    def counts(self) -> dict[str, int]:
        return {name: sum(1 for s in self.samples if s.split == name) for name in SPLITS}

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for s in self.samples:
            h.update(
                f"{s.drug_id}\t{self.drugs[s.drug_id]}\t{s.target_id}\t{self.targets[s.target_id]}"
                f"\t{s.affinity!r}\t{s.split}\n".encode()
            )
        return h.hexdigest()

    def subsample(self, fraction: float, seed: int) -> DtaDataset:
        """Seeded per-split subsample; keeps at least one sample per non-empty split."""
        if fraction >= 1.0:
            return self
        rng = np.random.default_rng(seed)
        keep = []
        for name in SPLITS:
            idx = [i for i, s in enumerate(self.samples) if s.split == name]
            if not idx:
                continue
            k = max(1, int(round(fraction * len(idx))))
            keep.extend(sorted(rng.choice(idx, size=k, replace=False).tolist()))
        keep.sort()
        samples = [self.samples[i] for i in keep]
        used_d = {s.drug_id for s in samples}
        used_t = {s.target_id for s in samples}
        prov = dict(self.provenance, subsample=fraction, subsample_seed=seed)
        return DtaDataset(
            drugs={k: v for k, v in self.drugs.items() if k in used_d},
            targets={k: v for k, v in self.targets.items() if k in used_t},
            samples=samples,
            contact_maps={k: v for k, v in self.contact_maps.items() if k in used_t},
            provenance=prov,
        )


def load_canonical_tsv(path) -> DtaDataset:
    """Read the canonical six-column TSV. NaN affinities are skipped and counted."""
    path = Path(path)
    ds = DtaDataset(provenance={"source": "canonical_tsv", "path": str(path)})
    skipped = 0
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        header = [h.strip() for h in header]
        for col in TSV_COLUMNS:
            if col not in header:
                raise DataError(f"{path}: missing column {col!r}")
        pos = {c: header.index(c) for c in TSV_COLUMNS}
        seen = set()
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            rec = {c: row[pos[c]].strip() for c in TSV_COLUMNS}
            try:
                y = float(rec["affinity"])
            except ValueError:
                raise DataError(f"{path}:{lineno}: affinity {rec['affinity']!r} is not a number") from None
            if math.isnan(y):
                skipped += 1
                continue
            if not math.isfinite(y):
                raise DataError(f"{path}:{lineno}: affinity must be finite")
            if rec["split"] not in SPLITS:
                raise DataError(f"{path}:{lineno}: split must be one of {SPLITS}, got {rec['split']!r}")
            for kind, ident, value, table in (
                ("drug", rec["drug_id"], rec["smiles"], ds.drugs),
                ("target", rec["target_id"], rec["sequence"], ds.targets),
            ):
                if not ident or not value:
                    raise DataError(f"{path}:{lineno}: empty {kind} id or string")
                if table.setdefault(ident, value) != value:
                    what = "SMILES" if kind == "drug" else "sequence"
                    raise DataError(f"{path}:{lineno}: conflicting {what} for {kind} id {ident!r}")
            key = (rec["drug_id"], rec["target_id"], rec["split"])
            if key in seen:
                raise DataError(f"{path}:{lineno}: duplicate row for {key}")
            seen.add(key)
            ds.samples.append(Sample(rec["drug_id"], rec["target_id"], y, rec["split"]))
    ds.provenance["skipped_nan"] = skipped
    ds.validate()
    return ds


def write_canonical_tsv(ds: DtaDataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(TSV_COLUMNS) + "\n")
        for s in ds.samples:
            fh.write(
                f"{s.drug_id}\t{ds.drugs[s.drug_id]}\t{s.target_id}\t{ds.targets[s.target_id]}\t{s.affinity!r}\t{s.split}\n"
            )


def kd_to_pkd(kd_nm):
    """pKd = -log10(Kd / 1e9) for Kd in nM, evaluated as 9 - log10(Kd)."""
    kd = np.asarray(kd_nm, dtype=np.float64)
    if np.any(kd <= 0):
        raise DataError("Kd must be positive for the pKd transform")
    out = 9.0 - np.log10(kd)
    return float(out) if out.ndim == 0 else out


def convert_matrix_format(
    smiles_list,
    sequence_list,
    affinity_matrix,
    transform: str = "none",
    split_spec: dict | None = None,
    drug_ids=None,
    target_ids=None,
) -> DtaDataset:
    """Flatten a drug x target matrix into samples.

    Finite cells are enumerated row-major; ``split_spec`` is either
    ``{"train": [...], "test": [...]}`` (indices into that enumeration) or
    ``{"seed": s, "train_fraction": f}``.
    """
    y = np.asarray(affinity_matrix, dtype=np.float64)
    if y.shape != (len(smiles_list), len(sequence_list)):
        raise DataError(f"matrix shape {y.shape} does not match {len(smiles_list)} drugs x {len(sequence_list)} targets")
    drug_ids = list(drug_ids) if drug_ids is not None else [f"D{i}" for i in range(len(smiles_list))]
    target_ids = list(target_ids) if target_ids is not None else [f"T{j}" for j in range(len(sequence_list))]
    rows, cols = np.nonzero(np.isfinite(y))
    values = y[rows, cols]
    if transform == "kd_to_pkd":
        values = kd_to_pkd(values)
    elif transform != "none":
        raise DataError(f"unknown transform {transform!r}")
    values = np.atleast_1d(values)
    n = len(rows)
    split_spec = split_spec or {"seed": 0, "train_fraction": 0.837}
    labels = np.full(n, "", dtype=object)
    if "train" in split_spec or "test" in split_spec:
        for name in SPLITS:
            for k in split_spec.get(name, []):
                if not 0 <= k < n:
                    raise DataError(f"split index {k} out of range for {n} samples")
                if labels[k]:
                    raise DataError(f"sample index {k} assigned to more than one split")
                labels[k] = name
    else:
        rng = np.random.default_rng(split_spec.get("seed", 0))
        perm = rng.permutation(n)
        n_train = int(round(split_spec.get("train_fraction", 0.837) * n))
        labels[perm[:n_train]] = "train"
        labels[perm[n_train:]] = "test"
    ds = DtaDataset(
        drugs={d: s for d, s in zip(drug_ids, smiles_list)},
        targets={t: s for t, s in zip(target_ids, sequence_list)},
        provenance={"source": "matrix", "transform": transform, "split": _describe(split_spec)},
    )
    for k in range(n):
        if labels[k]:
            ds.samples.append(Sample(drug_ids[rows[k]], target_ids[cols[k]], float(values[k]), labels[k]))
    ds.provenance["unassigned"] = int(sum(1 for v in labels if not v))
    ds.validate()
    return ds


def _describe(spec: dict) -> dict:
    if "train" in spec or "test" in spec:
        return {"explicit": True, "n_train": len(spec.get("train", [])), "n_test": len(spec.get("test", []))}
    return {"seed": spec.get("seed", 0), "train_fraction": spec.get("train_fraction", 0.837)}


def load_deepdta_dir(path, transform: str | None = None, split: str = "official", seed: int = 0) -> DtaDataset:
    """Raw Davis/KIBA layout: ligands_can.txt, proteins.txt, Y and optional folds/.

    Davis ``Y`` holds Kd in nM and is converted to pKd; KIBA scores are used
    as-is. With ``split="official"`` the fold files define train/test.
    """
    path = Path(path)
    ligands = json.loads((path / "ligands_can.txt").read_text(), object_pairs_hook=dict)
    proteins = json.loads((path / "proteins.txt").read_text(), object_pairs_hook=dict)
    with open(path / "Y", "rb") as fh:
        y = pickle.load(fh, encoding="latin1")
    y = np.asarray(y, dtype=np.float64)
    if transform is None:
        transform = "kd_to_pkd" if np.nanmax(y) > 100 else "none"
    spec: dict
    folds = path / "folds"
    if split == "official" and (folds / "test_fold_setting1.txt").exists():
        train_folds = json.loads((folds / "train_fold_setting1.txt").read_text())
        spec = {
            "train": [int(i) for fold in train_folds for i in fold],
            "test": [int(i) for i in json.loads((folds / "test_fold_setting1.txt").read_text())],
        }
    else:
        spec = {"seed": seed, "train_fraction": 0.837}
    ds = convert_matrix_format(
        list(ligands.values()), list(proteins.values()), y, transform, spec, list(ligands), list(proteins)
    )
    ds.provenance.update(source="deepdta_dir", path=str(path))
    return ds
