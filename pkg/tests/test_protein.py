import numpy as np
import pytest

from dtaprompt.errors import InputError
from dtaprompt.protein import (
    ALPHABET,
    N_RESIDUE_FEATURES,
    build_protein_graph,
    read_contact_map,
    tokenize,
    write_contact_map,
)

FLAG = {name: 21 + k for k, name in enumerate(
    ["hydrophobic", "polar", "charged_positive", "charged_negative", "aromatic", "small", "proline"]
)}


def test_chain_graph_window_two():
    assert build_protein_graph("ACD", window=2).edges == [(0, 1), (0, 2), (1, 2)]


def test_contact_map_adds_long_range_edge():
    cm = np.zeros((4, 4))
    cm[0, 3] = 0.9
    g = build_protein_graph("ACDE", cm, threshold=0.5)
    assert g.edges == [(0, 1), (0, 3), (1, 2), (2, 3)]


def test_threshold_above_all_entries_gives_chain_only():
    cm = np.random.default_rng(0).uniform(0, 1, (6, 6))
    g = build_protein_graph("ACDEFG", cm, threshold=1.1)
    assert g.edges == [(i, i + 1) for i in range(5)]


def test_near_diagonal_map_entries_ignored():
    cm = np.ones((4, 4))
    g = build_protein_graph("ACDE", cm, threshold=0.5)
    # |i - j| = 1 is backbone anyway; the rest come from the map
    assert g.edges == [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]


def test_distance_direction():
    cm = np.full((4, 4), 20.0)
    cm[0, 3] = cm[3, 0] = 5.0
    g = build_protein_graph("ACDE", cm, threshold=8.0, direction="le")
    assert (0, 3) in g.edges and (0, 2) not in g.edges


def test_map_shape_mismatch():
    with pytest.raises(InputError):
        build_protein_graph("ACD", np.zeros((4, 4)))


def test_non_finite_map_rejected():
    cm = np.zeros((3, 3))
    cm[0, 2] = np.nan
    with pytest.raises(InputError):
        build_protein_graph("ACD", cm)


def test_empty_sequence_rejected():
    with pytest.raises(InputError):
        build_protein_graph("")


def test_unknown_letters_map_to_x_and_are_counted():
    g = build_protein_graph("ACZB")
    assert g.residues == ["A", "C", "X", "X"]
    assert g.unknown_count == 2
    assert g.tokens[-1] == 21


def test_lysine_flags():
    row = build_protein_graph("K").features.data[0]
    assert row[FLAG["charged_positive"]] == 1
    assert row[FLAG["polar"]] == 1
    assert row[FLAG["hydrophobic"]] == 0


def test_unknown_residue_flags_all_zero():
    row = build_protein_graph("X").features.data[0]
    assert row[ALPHABET.index("X")] == 1
    assert row[21:].sum() == 0


def test_feature_rows():
    g = build_protein_graph(ALPHABET)
    x = g.features.data
    assert x.shape == (21, N_RESIDUE_FEATURES) == (21, 28)
    assert np.all(x[:, :21].sum(axis=1) == 1)
    assert np.all((x.sum(axis=1) >= 1) & (x.sum(axis=1) <= 8))


def test_tokenize_table():
    assert tokenize("ACD") == [1, 2, 3]
    assert tokenize("Y") == [20] and tokenize("X") == [21]


def test_tokenize_truncates():
    assert len(tokenize("A" * 1200, 1000)) == 1000


def test_long_sequence_graph_keeps_all_residues_but_truncates_tokens():
    g = build_protein_graph("ACDEFGHIKL" * 120, max_len=1000)
    assert g.n_residues == 1200 and len(g.tokens) == 1000


@pytest.mark.parametrize("seed", range(5))
def test_chain_connectivity_and_monotone_thresholds(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 30))
    seq = "".join(rng.choice(list(ALPHABET[:20]), n))
    cm = rng.uniform(0, 1, (n, n))
    cm = (cm + cm.T) / 2
    prev = None
    for t in (0.9, 0.7, 0.5, 0.3):
        e = set(build_protein_graph(seq, cm, threshold=t).edges)
        assert all((i, i + 1) in e for i in range(n - 1))
        assert all(i < j for i, j in e)
        if prev is not None:
            assert prev <= e
        prev = e


def test_contact_map_file_round_trip(tmp_path):
    cm = np.random.default_rng(1).uniform(0, 1, (5, 5))
    path = tmp_path / "t.cmap"
    write_contact_map(path, cm)
    assert np.array_equal(read_contact_map(path), cm)


def test_contact_map_file_errors(tmp_path):
    p = tmp_path / "bad.cmap"
    p.write_text("3\n1 2 3\n4 5 6\n")
    with pytest.raises(InputError):
        read_contact_map(p)
    p.write_text("")
    with pytest.raises(InputError):
        read_contact_map(p)
