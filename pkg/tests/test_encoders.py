import numpy as np
import pytest

from dtaprompt.affinity import normalize_adjacency
from dtaprompt.autograd import SparseMatrix, Tensor
from dtaprompt.encoders import (
    FusionMap,
    GcnStack,
    TransformerEncoder,
    fuse_affinity_into_protein,
    gcn_forward,
    gmp_readout,
    transformer_forward,
)
from dtaprompt.errors import ContractError, DomainError, ModelConfigError
from dtaprompt.protein import PAD, tokenize
from dtaprompt.smiles import parse_smiles


def relu(x):
    return np.maximum(x, 0)


def _random_graph(rng, n, p=0.3):
    return [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]


def test_drug_stack_dims():
    s = GcnStack(np.random.default_rng(0), [31, 128, 128, 128])
    assert [w.shape for w in s.layers] == [(31, 128), (128, 128), (128, 128)]


def test_single_atom_identity_adjacency():
    rng = np.random.default_rng(1)
    stack = GcnStack(rng, [31, 8, 8, 8])
    g = parse_smiles("[Na+]")
    adj = normalize_adjacency([], 1)
    out = gcn_forward(adj, g.features, stack).data
    x = g.features.data
    w = [l.data for l in stack.layers]
    np.testing.assert_allclose(out, relu(relu(relu(x @ w[0]) @ w[1]) @ w[2]), rtol=0, atol=1e-14)


def test_zero_features_zero_output():
    stack = GcnStack(np.random.default_rng(2), [5, 4, 4])
    out = gcn_forward(normalize_adjacency([(0, 1)], 3), Tensor(np.zeros((3, 5))), stack)
    assert not out.data.any()


@pytest.mark.parametrize("seed", range(5))
def test_gcn_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 12))
    edges = _random_graph(rng, n)
    x = rng.normal(size=(n, 31))
    stack = GcnStack(rng, [31, 16, 16, 16])
    perm = rng.permutation(n)
    inv = np.argsort(perm)  # old index -> new index
    out = gcn_forward(normalize_adjacency(edges, n), Tensor(x), stack).data
    p_edges = [(inv[i], inv[j]) for i, j in edges]
    p_out = gcn_forward(normalize_adjacency(p_edges, n), Tensor(x[perm]), stack).data
    assert np.max(np.abs(p_out - out[perm])) < 1e-9


def test_gcn_dimension_errors():
    stack = GcnStack(np.random.default_rng(0), [4, 3])
    with pytest.raises(ModelConfigError):
        gcn_forward(normalize_adjacency([], 2), Tensor(np.zeros((2, 5))), stack)
    with pytest.raises(ModelConfigError):
        gcn_forward(normalize_adjacency([], 3), Tensor(np.zeros((2, 4))), stack)


def test_fusion_cold_start_duplicates_rows():
    rng = np.random.default_rng(0)
    f = FusionMap(rng, 6)
    h = Tensor(rng.normal(size=(4, 6)))
    out = fuse_affinity_into_protein(h, np.zeros(6), f).data
    np.testing.assert_array_equal(out, np.hstack([h.data, h.data]))


def test_fusion_zero_nodes():
    rng = np.random.default_rng(1)
    f = FusionMap(rng, 6)
    a = rng.normal(size=6)
    out = fuse_affinity_into_protein(Tensor(np.zeros((3, 6))), a, f).data
    fa = a @ f.w.data
    np.testing.assert_array_equal(out, np.tile(np.concatenate([fa, -fa]), (3, 1)))


def test_fusion_reconstruction():
    rng = np.random.default_rng(2)
    f = FusionMap(rng, 8)
    h = Tensor(rng.integers(-4, 5, size=(5, 8)) / 4.0)
    a = rng.integers(-4, 5, size=8) / 4.0
    f.w.data = rng.integers(-4, 5, size=(8, 8)) / 8.0
    out = fuse_affinity_into_protein(h, a, f).data
    assert np.array_equal((out[:, :8] + out[:, 8:]) / 2, h.data)
    assert out.shape == (5, 16)


def test_gmp_examples():
    assert gmp_readout(Tensor([[1, 5], [3, 2]])).data.tolist() == [3.0, 5.0]
    v = [[0.5, -1.0, 2.0]]
    assert gmp_readout(Tensor(v)).data.tolist() == v[0]
    with pytest.raises(DomainError):
        gmp_readout(Tensor(np.zeros((0, 3))))


@pytest.mark.parametrize("seed", range(5))
def test_gmp_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(9, 7))
    assert np.max(np.abs(gmp_readout(Tensor(x[rng.permutation(9)])).data - gmp_readout(Tensor(x)).data)) < 1e-9


# -- transformer ----------------------------------------------------------


@pytest.fixture(scope="module")
def encoder():
    return TransformerEncoder(np.random.default_rng(0), d_model=32, n_heads=4, d_ff=64, n_blocks=2, max_len=64)


def test_default_transformer_shapes():
    enc = TransformerEncoder(np.random.default_rng(0))
    assert enc.embed.shape == (22, 128)
    assert len(enc.blocks) == 2 and enc.blocks[0].n_heads == 4
    assert enc.blocks[0].ff1.w.shape == (128, 256)
    assert transformer_forward(enc, tokenize("MKTAYIAK")).shape == (1, 128)


def test_single_position_attention_is_one(encoder):
    log = []
    transformer_forward(encoder, [5], attn_log=log)
    assert log and all(a.shape == (1, 1) and a[0, 0] == 1.0 for a in log)


@pytest.mark.parametrize("n_pad", [1, 5, 20])
def test_padding_invariance(encoder, n_pad):
    toks = tokenize("MKTAYIAKQRQISFVK")
    base = transformer_forward(encoder, toks).data
    padded = transformer_forward(encoder, toks + [PAD] * n_pad).data
    assert np.max(np.abs(base - padded)) < 1e-9


def test_explicit_mask_padding_invariance(encoder):
    toks = tokenize("ACDEFGHIK")
    junk = toks + [3, 7, 9]
    mask = np.array([True] * len(toks) + [False] * 3)
    a = transformer_forward(encoder, toks).data
    b = transformer_forward(encoder, junk, mask).data
    assert np.max(np.abs(a - b)) < 1e-9


def test_attention_rows_sum_to_one_over_unmasked(encoder):
    toks = tokenize("MKTAYIAKQR") + [PAD] * 4
    log = []
    transformer_forward(encoder, toks, attn_log=log)
    for a in log:
        assert np.all(np.abs(a.sum(axis=1) - 1.0) <= 1e-12)
        assert np.all(a[:, 10:] == 0.0)


def test_all_masked_is_contract_error(encoder):
    with pytest.raises(ContractError):
        transformer_forward(encoder, [PAD, PAD])
    with pytest.raises(ContractError):
        transformer_forward(encoder, [])
    with pytest.raises(ContractError):
        transformer_forward(encoder, [1] * 65)


def test_heads_must_divide_width():
    with pytest.raises(ModelConfigError):
        TransformerEncoder(np.random.default_rng(0), d_model=30, n_heads=4)
