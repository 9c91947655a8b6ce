"""Graph and sequence encoders for drugs and proteins."""

from __future__ import annotations

import math

import numpy as np

from .autograd import (
    SparseMatrix,
    Tensor,
    add,
    concat_cols,
    gather_rows,
    layer_norm_rows,
    matmul,
    max_over_rows,
    relu,
    scale,
    slice_cols,
    softmax_rows,
    spmm,
    sub,
    transpose,
)
from .errors import ContractError, DomainError, ModelConfigError
from .nn import Linear, Module, weight
from .protein import PAD, VOCAB_SIZE


class GcnStack(Module):
    """Bias-free GCN layers, H <- ReLU(A_hat H W).

    ``dims`` chains widths (``[31, 128, 128, 128]``); ``shapes`` gives explicit
    (in, out) pairs when a layer's input is widened between layers.
    """

    def __init__(self, rng: np.random.Generator, dims: list[int] | None = None, shapes=None):
        if shapes is None:
            shapes = list(zip(dims[:-1], dims[1:]))
        self.shapes = [tuple(s) for s in shapes]
        self.layers = [weight(rng, a, b) for a, b in self.shapes]

    def __len__(self):
        return len(self.layers)


def gcn_forward(adj: SparseMatrix, x: Tensor, stack: GcnStack, start: int = 0, stop: int | None = None) -> Tensor:
    """Apply layers ``start:stop`` of ``stack``."""
    if adj.n_rows != x.shape[0] or adj.n_cols != x.shape[0]:
        raise ModelConfigError(f"adjacency {adj.shape} does not match {x.shape[0]} nodes")
    h = x
    for w in stack.layers[start:stop]:
        if h.shape[1] != w.shape[0]:
            raise ModelConfigError(f"GCN layer expects width {w.shape[0]}, got {h.shape[1]}")
        h = relu(spmm(adj, matmul(h, w)))
    return h


class FusionMap(Module):
    """Bias-free linear map applied to a target's affinity embedding, so f(0) = 0."""

    def __init__(self, rng: np.random.Generator, dim: int):
        self.w = weight(rng, dim, dim)

    def __call__(self, a: Tensor) -> Tensor:
        return matmul(a, self.w)


def fuse_rows(h: Tensor, fa: Tensor) -> Tensor:
    """[h + fa] || [h - fa], row by row."""
    return concat_cols([add(h, fa), sub(h, fa)])


def fuse_affinity_into_protein(h_nodes: Tensor, h_aff_pos_t, f: FusionMap) -> Tensor:
    """Broadcast one target's affinity row (1 x d) over all residues and fuse."""
    a = h_aff_pos_t if isinstance(h_aff_pos_t, Tensor) else Tensor(np.reshape(h_aff_pos_t, (1, -1)))
    fa = gather_rows(f(a), np.zeros(h_nodes.shape[0], dtype=np.int64))
    return fuse_rows(h_nodes, fa)


def gmp_readout(node_embeds: Tensor) -> Tensor:
    if node_embeds.shape[0] == 0:
        raise DomainError("global max pooling over an empty graph")
    return max_over_rows(node_embeds)


def sinusoidal_positions(max_len: int, dim: int) -> np.ndarray:
    pos = np.arange(max_len)[:, None]
    rate = np.exp(-math.log(10000.0) * (np.arange(0, dim, 2) / dim))
    table = np.zeros((max_len, dim))
    table[:, 0::2] = np.sin(pos * rate)
    table[:, 1::2] = np.cos(pos * rate)
    return table


class EncoderBlock(Module):
    def __init__(self, rng, d_model: int, n_heads: int, d_ff: int):
        self.n_heads = n_heads
        self.wq = weight(rng, d_model, d_model)
        self.wk = weight(rng, d_model, d_model)
        self.wv = weight(rng, d_model, d_model)
        self.out = Linear(rng, d_model, d_model)
        self.ln1_gamma = Tensor(np.ones(d_model), requires_grad=True)
        self.ln1_beta = Tensor(np.zeros(d_model), requires_grad=True)
        self.ff1 = Linear(rng, d_model, d_ff)
        self.ff2 = Linear(rng, d_ff, d_model)
        self.ln2_gamma = Tensor(np.ones(d_model), requires_grad=True)
        self.ln2_beta = Tensor(np.zeros(d_model), requires_grad=True)

    def __call__(self, x: Tensor, mask: np.ndarray, eps: float, attn_log: list | None = None) -> Tensor:
        d = x.shape[1]
        dh = d // self.n_heads
        # scaling q (L x d) is cheaper than scaling the L x L score matrix
        q = scale(matmul(x, self.wq), 1.0 / math.sqrt(dh))
        k, v = matmul(x, self.wk), matmul(x, self.wv)
        heads = []
        for h in range(self.n_heads):
            lo, hi = h * dh, (h + 1) * dh
            scores = matmul(slice_cols(q, lo, hi), transpose(slice_cols(k, lo, hi)))
            attn = softmax_rows(scores, mask[None, :])
            if attn_log is not None:
                attn_log.append(attn.data)
            heads.append(matmul(attn, slice_cols(v, lo, hi)))
        x = layer_norm_rows(add(x, self.out(concat_cols(heads))), self.ln1_gamma, self.ln1_beta, eps)
        ff = self.ff2(relu(self.ff1(x)))
        return layer_norm_rows(add(x, ff), self.ln2_gamma, self.ln2_beta, eps)


class TransformerEncoder(Module):
    """Token embedding + sinusoidal positions, post-norm blocks, masked mean pooling."""

    def __init__(
        self,
        rng: np.random.Generator,
        d_model: int = 128,
        n_heads: int = 4,
        d_ff: int = 256,
        n_blocks: int = 2,
        max_len: int = 1000,
        vocab_size: int = VOCAB_SIZE,
        eps: float = 1e-5,
    ):
        if d_model % n_heads:
            raise ModelConfigError(f"d_model {d_model} is not divisible by {n_heads} heads")
        self.max_len = max_len
        self.eps = eps
        self.embed = weight(rng, vocab_size, d_model)
        self.positions = sinusoidal_positions(max_len, d_model)
        self.blocks = [EncoderBlock(rng, d_model, n_heads, d_ff) for _ in range(n_blocks)]

    def __call__(self, tokens, mask=None, attn_log: list | None = None) -> Tensor:
        return transformer_forward(self, tokens, mask, attn_log)


def transformer_forward(enc: TransformerEncoder, tokens, mask=None, attn_log: list | None = None) -> Tensor:
    """Encode one token sequence into a (1 x d_model) vector.

    ``mask`` marks real positions; by default every non-pad token is real.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 1 or not 1 <= len(tokens) <= enc.max_len:
        raise ContractError(f"token sequence length must be in [1, {enc.max_len}], got {tokens.shape}")
    mask = tokens != PAD if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ContractError("transformer input is entirely masked")
    x = add(gather_rows(enc.embed, tokens), Tensor(enc.positions[: len(tokens)]))
    for block in enc.blocks:
        x = block(x, mask, enc.eps, attn_log)
    w = (mask / mask.sum()).reshape(1, -1)
    return matmul(Tensor(w), x)


def mlp2(first: Linear, second: Linear, x: Tensor) -> Tensor:
    return second(relu(first(x)))
