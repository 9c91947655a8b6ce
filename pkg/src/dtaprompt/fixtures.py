"""Small synthetic datasets and a curated SMILES corpus for tests and demos."""

from __future__ import annotations

import numpy as np

from .data import DtaDataset, Sample
from .protein import AMINO_ACIDS

SMILES_CORPUS = [
    "CCO",
    "C1CC1",
    "c1ccccc1",
    "CC(=O)Oc1ccccc1C(=O)O",
    "CN1C=NC2=C1C(=O)N(C(=O)N2C)C",
    "CC(C)Cc1ccc(cc1)C(C)C(=O)O",
    "CC(=O)Nc1ccc(O)cc1",
    "O=C(O)c1ccccc1O",
    "C1CCCCC1",
    "c1ccc2ccccc2c1",
    "c1ccncc1",
    "c1cc[nH]c1",
    "c1ccoc1",
    "c1ccsc1",
    "C#N",
    "CC#CC",
    "C=CC=C",
    "OC(=O)CCC(=O)O",
    "[NH4+]",
    "[O-]C(=O)C",
    "C[N+](C)(C)C",
    "[Na+].[Cl-]",
    "CC(C)(C)OC(=O)N",
    "FC(F)(F)c1ccccc1",
    "Clc1ccc(Br)cc1I",
    "OCC(O)CO",
    "N[C@@H](C)C(=O)O",
    "F/C=C/F",
    "C1CC2CCC1C2",
    "C12CCCCC1CCCC2",
    "C%10CCCCC%10",
    "CS(=O)(=O)N",
    "OP(=O)(O)O",
    "B(O)(O)c1ccccc1",
    "[2H]C([2H])([2H])O",
    "[Si](C)(C)(C)C",
    "[Se]1C=CC=C1",
    "CN(C)CCc1c[nH]c2ccc(O)cc12",
    "COc1ccc2[nH]cc(CCNC(C)=O)c2c1",
    "Cc1ccc(cc1Nc1nccc(n1)-c1cccnc1)NC(=O)c1ccc(CN2CCN(C)CC2)cc1",
    "CC1=C(C(=O)Nc2ccccc2)C(c2ccccc2[N+](=O)[O-])C(C(=O)OC)=C(C)N1",
    "CN1CCC[C@H]1c1cccnc1",
    "O=C1NC(=O)C(N1)(c1ccccc1)c1ccccc1",
    "CCN(CC)CC(=O)Nc1c(C)cccc1C",
    "C1=CC=C(C=C1)C=O",
    "OC1=CC=CC=C1",
    "NC(=N)NCCC[C@H](N)C(=O)O",
    "c1ccc(cc1)-c1ccccc1",
    "CC(=O)OCC[N+](C)(C)C",
    "COC(=O)C1=CC=CC=C1N",
]


FIXTURE_DRUGS = {
    "D0": "CC(=O)Oc1ccccc1C(=O)O",
    "D1": "CN1C=NC2=C1C(=O)N(C(=O)N2C)C",
    "D2": "CC(C)Cc1ccc(cc1)C(C)C(=O)O",
    "D3": "CC(=O)Nc1ccc(O)cc1",
    "D4": "CN(C)CCc1c[nH]c2ccc(O)cc12",
    "D5": "FC(F)(F)c1ccccc1",
    "D6": "Clc1ccc(Br)cc1I",
    "D7": "CN1CCC[C@H]1c1cccnc1",
}


def random_sequence(rng: np.random.Generator, length: int) -> str:
    return "".join(rng.choice(list(AMINO_ACIDS), size=length))


def synthetic_dataset(
    n_drugs: int = 8,
    n_targets: int = 4,
    seed: int = 0,
    seq_len=(24, 40),
    test_pairs: int = 0,
    low: float = 5.0,
    high: float = 9.0,
) -> DtaDataset:
    """Every drug paired with every target; labels drawn uniformly in [low, high].

    The first ``test_pairs`` pairs of a seeded permutation go to the test split.
    """
    rng = np.random.default_rng(seed)
    drug_ids = list(FIXTURE_DRUGS)[:n_drugs]
    drugs = {d: FIXTURE_DRUGS[d] for d in drug_ids}
    targets = {f"T{j}": random_sequence(rng, int(rng.integers(seq_len[0], seq_len[1] + 1))) for j in range(n_targets)}
    pairs = [(d, t) for d in drugs for t in targets]
    labels = rng.uniform(low, high, size=len(pairs))
    test = set(rng.permutation(len(pairs))[:test_pairs].tolist())
    samples = [
        Sample(d, t, float(round(y, 3)), "test" if k in test else "train") for k, ((d, t), y) in enumerate(zip(pairs, labels))
    ]
    ds = DtaDataset(drugs=drugs, targets=targets, samples=samples, provenance={"source": "synthetic", "seed": seed})
    ds.validate()
    return ds


def four_pair_fixture(seed: int = 0) -> DtaDataset:
    return synthetic_dataset(2, 2, seed=seed)


def overfit_fixture(seed: int = 0) -> DtaDataset:
    return synthetic_dataset(8, 4, seed=seed)
