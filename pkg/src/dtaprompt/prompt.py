"""Projection into the shared space, dynamic prompts, integration and the regression head."""

from __future__ import annotations

import numpy as np

from .autograd import Tensor, add, concat_cols, dropout, relu
from .errors import ModelConfigError
from .nn import Linear, Module


class ProjectionHeads(Module):
    """Affine maps of the concatenated views; the target side widens by one block with the transformer on."""

    def __init__(self, rng: np.random.Generator, dim: int = 128, trans: bool = True):
        self.trans = trans
        self.drug = Linear(rng, 3 * dim, dim)
        self.target = Linear(rng, (4 if trans else 3) * dim, dim)


def project(drug_views: list[Tensor], target_views: list[Tensor], heads: ProjectionHeads):
    """``drug_views`` = [mol, aff+, aff-]; ``target_views`` = [prot, aff+, aff-(, seq)]."""
    xd = concat_cols(drug_views)
    xt = concat_cols(target_views)
    if xd.shape[1] != heads.drug.in_dim:
        raise ModelConfigError(f"drug projection expects width {heads.drug.in_dim}, got {xd.shape[1]}")
    if xt.shape[1] != heads.target.in_dim:
        raise ModelConfigError(
            f"target projection expects width {heads.target.in_dim}, got {xt.shape[1]} (trans={heads.trans})"
        )
    return heads.drug(xd), heads.target(xt)


class PromptGenerator(Module):
    def __init__(self, rng: np.random.Generator, dim: int = 128):
        self.drug1, self.drug2 = Linear(rng, dim, dim), Linear(rng, dim, dim)
        self.target1, self.target2 = Linear(rng, dim, dim), Linear(rng, dim, dim)
        self.pair1, self.pair2 = Linear(rng, 2 * dim, dim), Linear(rng, dim, dim)


def generate_prompts(z_d: Tensor, z_t: Tensor, gen: PromptGenerator):
    p_d = gen.drug2(relu(gen.drug1(z_d)))
    p_t = gen.target2(relu(gen.target1(z_t)))
    p_aff = gen.pair2(relu(gen.pair1(concat_cols([z_d, z_t]))))
    return p_d, p_t, p_aff


def zero_prompts(z_d: Tensor):
    shape = z_d.shape
    return Tensor(np.zeros(shape)), Tensor(np.zeros(shape)), Tensor(np.zeros(shape))


def integrate(z_d: Tensor, z_t: Tensor, prompts, dp_enabled: bool = True):
    """Add prompts to the projections. With ``dp_enabled`` off the prompts are exact zeros."""
    p_d, p_t, p_aff = prompts if dp_enabled else zero_prompts(z_d)
    return add(z_d, p_d), add(z_t, p_t), add(add(z_d, z_t), p_aff)


class AffinityHead(Module):
    def __init__(self, rng: np.random.Generator, in_dim: int = 384, hidden=(512, 128), dropout: float = 0.1):
        widths = [in_dim, *hidden]
        self.rate = dropout
        self.hidden = [Linear(rng, a, b) for a, b in zip(widths[:-1], widths[1:])]
        self.out = Linear(rng, widths[-1], 1)


def predict_pair(z_finals, head: AffinityHead, rng: np.random.Generator | None = None) -> Tensor:
    """(B x 1) predictions. ``rng=None`` is evaluation mode (dropout off)."""
    x = concat_cols(list(z_finals))
    for layer in head.hidden:
        x = dropout(relu(layer(x)), head.rate, rng)
    return head.out(x)
