"""The full drug-target affinity model and its per-entity graph cache."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .affinity import AffinityGraph, encode_affinity, normalize_adjacency
from .autograd import (
    SparseMatrix,
    Tensor,
    block_diag,
    concat_cols,
    concat_rows,
    gather_rows,
    mul,
    recompute,
    segment_max,
)
from .config import TrainConfig
from .encoders import FusionMap, GcnStack, TransformerEncoder, fuse_rows, gcn_forward
from .errors import ModelConfigError, ParseError
from .nn import Module, weight
from .prompt import (
    AffinityHead,
    ProjectionHeads,
    PromptGenerator,
    generate_prompts,
    integrate,
    predict_pair,
    project,
    zero_prompts,
)
from .protein import N_RESIDUE_FEATURES, ProteinGraph, build_protein_graph, read_contact_map
from .smiles import N_ATOM_FEATURES, parse_smiles

log = logging.getLogger(__name__)


@dataclass
class DrugEntry:
    features: np.ndarray
    adj: SparseMatrix


@dataclass
class TargetEntry:
    graph: ProteinGraph
    features: np.ndarray
    adj: SparseMatrix
    tokens: list[int]


class GraphCache:
    """Parsed, featurised and normalised graphs keyed by entity id, built once."""

    def __init__(self, config: TrainConfig, contact_maps: dict[str, str] | None = None):
        self.config = config
        self.contact_maps = contact_maps or {}
        self.drugs: dict[str, DrugEntry] = {}
        self.targets: dict[str, TargetEntry] = {}

    def add_drug(self, drug_id: str, smiles: str) -> DrugEntry:
        if drug_id not in self.drugs:
            try:
                g = parse_smiles(smiles)
            except ParseError as e:
                raise ParseError(f"drug {drug_id!r}: {e.reason}", e.offset) from None
            self.drugs[drug_id] = DrugEntry(g.features.data, normalize_adjacency(g.edge_list(), g.n_atoms))
        return self.drugs[drug_id]

    def add_target(self, target_id: str, sequence: str, contact_map=None) -> TargetEntry:
        if target_id not in self.targets:
            c = self.config
            if contact_map is None and target_id in self.contact_maps:
                contact_map = read_contact_map(self.contact_maps[target_id])
            g = build_protein_graph(
                sequence,
                contact_map,
                threshold=c.contact_threshold,
                window=c.chain_window,
                direction=c.contact_direction,
                max_len=c.max_seq_len,
            )
            self.targets[target_id] = TargetEntry(
                g, g.features.data, normalize_adjacency(g.edges, g.n_residues), g.tokens
            )
        return self.targets[target_id]

    def add_dataset(self, ds) -> GraphCache:
        for d, smi in ds.drugs.items():
            self.add_drug(d, smi)
        for t, seq in ds.targets.items():
            self.add_target(t, seq)
        return self


@dataclass
class ForwardOutput:
    preds: Tensor
    z_proj_d: Tensor
    z_proj_t: Tensor
    prompts: tuple
    fused: Tensor
    cold_drug: np.ndarray
    cold_target: np.ndarray


class DtaModel(Module):
    """Drug GCN, protein GCN with affinity fusion, optional transformer, prompts and MLP head.

    Parameters are created in a fixed order from ``default_rng(seed)`` so the
    initial state depends only on the config and graph size, never on the
    ablation flags ``dp`` (``trans`` changes one projection width).
    """

    def __init__(self, config: TrainConfig, graph: AffinityGraph, seed: int | None = None):
        c = config
        rng = np.random.default_rng(c.seed if seed is None else seed)
        d = c.embed_dim
        self.config = c
        self.graph = graph
        self.node_embed = graph.init_embeddings(rng, d)
        self.aff_pos = [weight(rng, d, d), weight(rng, d, d)]
        self.aff_neg = [weight(rng, d, d), weight(rng, d, d)]
        self.drug_gcn = GcnStack(rng, [N_ATOM_FEATURES, d, d, d])
        # layer 2 reads the fused [h + f(a)] || [h - f(a)] rows, hence 2d wide
        self.prot_gcn = GcnStack(rng, shapes=[(N_RESIDUE_FEATURES, d), (2 * d, d), (d, d)])
        self.fusion = FusionMap(rng, d)
        self.transformer = (
            TransformerEncoder(rng, d, c.n_heads, c.d_ff, c.n_blocks, c.max_seq_len) if c.trans else None
        )
        self.projection = ProjectionHeads(rng, d, trans=c.trans)
        self.prompt_gen = PromptGenerator(rng, d)
        self.head = AffinityHead(rng, 3 * d, c.head_hidden, c.dropout)
        self.hard_zero_prompts = False

    # -- helpers -------------------------------------------------------

    def _aff_rows(self, h: Tensor, nodes: list[int | None]) -> Tensor:
        idx = np.array([0 if n is None else n for n in nodes], dtype=np.int64)
        rows = gather_rows(h, idx)
        if all(n is not None for n in nodes):
            return rows
        keep = np.array([[0.0 if n is None else 1.0] for n in nodes]) * np.ones((1, h.shape[1]))
        return mul(rows, Tensor(keep))

    def encode_drugs(self, entries: list[DrugEntry]) -> Tensor:
        x = Tensor(np.concatenate([e.features for e in entries], axis=0))
        adj = block_diag([e.adj for e in entries])
        h = gcn_forward(adj, x, self.drug_gcn)
        if h.shape[1] != self.config.embed_dim:
            raise ModelConfigError(f"drug embedding width {h.shape[1]} != {self.config.embed_dim}")
        offsets = np.cumsum([0] + [e.features.shape[0] for e in entries])
        return segment_max(h, offsets)

    def encode_targets(self, entries: list[TargetEntry], aff_pos_rows: Tensor) -> Tensor:
        d = self.config.embed_dim
        sizes = [e.features.shape[0] for e in entries]
        x = Tensor(np.concatenate([e.features for e in entries], axis=0))
        adj = block_diag([e.adj for e in entries])
        h = gcn_forward(adj, x, self.prot_gcn, 0, 1)
        owner = np.repeat(np.arange(len(entries)), sizes)
        h = fuse_rows(h, gather_rows(self.fusion(aff_pos_rows), owner))
        if h.shape[1] != 2 * d:
            raise ModelConfigError(f"fused protein width {h.shape[1]} != {2 * d}")
        h = gcn_forward(adj, h, self.prot_gcn, 1, None)
        return segment_max(h, np.cumsum([0] + sizes))

    def encode_sequences(self, entries: list[TargetEntry]) -> Tensor:
        # attention maps are O(L^2) per head; replaying each sequence during
        # backward keeps one sequence's intermediates alive instead of a batch's
        params = list(self.transformer.parameters().values())
        return concat_rows(
            [recompute(lambda e=e: self.transformer(e.tokens), params, "transformer") for e in entries]
        )

    # -- forward -------------------------------------------------------

    def forward(self, pairs, cache: GraphCache, rng: np.random.Generator | None = None) -> ForwardOutput:
        """Predict a batch of (drug_id, target_id) pairs.

        ``rng`` drives dropout; pass ``None`` for evaluation.
        """
        g = self.graph
        h_pos, h_neg = encode_affinity(g, self.aff_pos, self.aff_neg, self.node_embed)

        drug_ids = list(dict.fromkeys(p[0] for p in pairs))
        target_ids = list(dict.fromkeys(p[1] for p in pairs))
        d_slot = {k: i for i, k in enumerate(drug_ids)}
        t_slot = {k: i for i, k in enumerate(target_ids)}
        d_nodes = [g.drug_node(k) for k in drug_ids]
        t_nodes = [g.target_node(k) for k in target_ids]
        t_entries = [cache.targets[k] for k in target_ids]

        mol_d = self.encode_drugs([cache.drugs[k] for k in drug_ids])
        t_pos = self._aff_rows(h_pos, t_nodes)
        mol_t = self.encode_targets(t_entries, t_pos)

        pd = np.array([d_slot[p[0]] for p in pairs], dtype=np.int64)
        pt = np.array([t_slot[p[1]] for p in pairs], dtype=np.int64)
        drug_views = [
            gather_rows(mol_d, pd),
            gather_rows(self._aff_rows(h_pos, d_nodes), pd),
            gather_rows(self._aff_rows(h_neg, d_nodes), pd),
        ]
        target_views = [
            gather_rows(mol_t, pt),
            gather_rows(t_pos, pt),
            gather_rows(self._aff_rows(h_neg, t_nodes), pt),
        ]
        if self.config.trans:
            target_views.append(gather_rows(self.encode_sequences(t_entries), pt))
        z_d, z_t = project(drug_views, target_views, self.projection)

        if self.config.dp and not self.hard_zero_prompts:
            prompts = generate_prompts(z_d, z_t, self.prompt_gen)
        else:
            prompts = zero_prompts(z_d)
        fused_parts = list(integrate(z_d, z_t, prompts))
        preds = predict_pair(fused_parts, self.head, rng)
        return ForwardOutput(
            preds=preds,
            z_proj_d=z_d,
            z_proj_t=z_t,
            prompts=prompts,
            fused=concat_cols(fused_parts),
            cold_drug=np.array([d_nodes[d_slot[p[0]]] is None for p in pairs]),
            cold_target=np.array([t_nodes[t_slot[p[1]]] is None for p in pairs]),
        )
