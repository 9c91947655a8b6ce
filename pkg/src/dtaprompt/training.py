"""Mini-batch training, evaluation, prediction and checkpoints."""

from __future__ import annotations

import io
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .affinity import AffinityGraph, build_affinity_graph
from .autograd import AdamState, Tape, adam_step, no_grad
from .config import TrainConfig
from .data import DtaDataset, Sample
from .errors import CheckpointError, ContractError, DataError, TrainingError
from .metrics import EvalReport, evaluate_predictions, mse_loss, prompt_loss, total_loss
from .model import DtaModel, ForwardOutput, GraphCache

log = logging.getLogger(__name__)

MAGIC = b"HGTD"
FORMAT_VERSION = 1
EVAL_BATCH = 256


def batch_iter(samples: Sequence, batch_size: int, seed: int, epoch: int) -> list[list]:
    """Shuffle with a Philox stream keyed by (seed, epoch); the last short batch is kept."""
    if batch_size < 1:
        raise ContractError("batch_size must be >= 1")
    bitgen = np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, epoch & 0xFFFFFFFFFFFFFFFF])
    order = np.random.Generator(bitgen).permutation(len(samples))
    return [[samples[i] for i in order[k : k + batch_size]] for k in range(0, len(samples), batch_size)]


def dropout_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, 1], counter=[step, 0, 0, 0]))


@dataclass
class Checkpoint:
    config: TrainConfig
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    epoch: int = 0
    step: int = 0
    dataset_fingerprint: str = ""
    drugs: dict[str, str] = field(default_factory=dict)
    targets: dict[str, str] = field(default_factory=dict)
    contact_maps: dict[str, str] = field(default_factory=dict)
    pos_edges: list = field(default_factory=list)
    neg_edges: list = field(default_factory=list)

    @property
    def config_fingerprint(self) -> str:
        return self.config.fingerprint()

    # -- binary container ---------------------------------------------

    def to_bytes(self) -> bytes:
        out = io.BytesIO()
        out.write(MAGIC)
        out.write(struct.pack("<I", FORMAT_VERSION))
        for text in (self.config_fingerprint, self.dataset_fingerprint, self._meta_json()):
            raw = text.encode("utf-8")
            out.write(struct.pack("<Q", len(raw)))
            out.write(raw)
        arrays = [("param/" + k, v) for k, v in self.params.items()]
        arrays += [("adam_m/" + k, v) for k, v in self.adam_m.items()]
        arrays += [("adam_v/" + k, v) for k, v in self.adam_v.items()]
        out.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays:
            raw = name.encode("utf-8")
            arr = np.ascontiguousarray(arr, dtype="<f8")
            out.write(struct.pack("<I", len(raw)))
            out.write(raw)
            out.write(struct.pack("<I", arr.ndim))
            out.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            out.write(arr.tobytes())
        return out.getvalue()

    def _meta_json(self) -> str:
        meta = {
            "config": self.config.to_dict(),
            "epoch": self.epoch,
            "step": self.step,
            "drugs": list(self.drugs.items()),
            "targets": list(self.targets.items()),
            "contact_maps": sorted(self.contact_maps.items()),
            "pos_edges": [list(e) for e in self.pos_edges],
            "neg_edges": [list(e) for e in self.neg_edges],
        }
        return json.dumps(meta, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_bytes(cls, blob: bytes) -> Checkpoint:
        buf = io.BytesIO(blob)

        def take(n):
            b = buf.read(n)
            if len(b) != n:
                raise CheckpointError("truncated checkpoint")
            return b

        if take(4) != MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic bytes)")
        (version,) = struct.unpack("<I", take(4))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        texts = []
        for _ in range(3):
            (n,) = struct.unpack("<Q", take(8))
            texts.append(take(n).decode("utf-8"))
        cfg_fp, ds_fp, meta_txt = texts
        meta = json.loads(meta_txt)
        ck = cls(
            config=TrainConfig.from_dict(meta["config"]),
            params={},
            epoch=meta["epoch"],
            step=meta["step"],
            dataset_fingerprint=ds_fp,
            drugs=dict(meta["drugs"]),
            targets=dict(meta["targets"]),
            contact_maps=dict(meta["contact_maps"]),
            pos_edges=[tuple(e) for e in meta["pos_edges"]],
            neg_edges=[tuple(e) for e in meta["neg_edges"]],
        )
        if ck.config_fingerprint != cfg_fp:
            raise CheckpointError("config fingerprint does not match the stored config")
        (n_arrays,) = struct.unpack("<I", take(4))
        for _ in range(n_arrays):
            (n,) = struct.unpack("<I", take(4))
            name = take(n).decode("utf-8")
            (ndim,) = struct.unpack("<I", take(4))
            shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
            count = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
            kind, key = name.split("/", 1)
            {"param": ck.params, "adam_m": ck.adam_m, "adam_v": ck.adam_v}[kind][key] = arr
        if buf.read(1):
            raise CheckpointError("trailing bytes after checkpoint payload")
        return ck

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> Checkpoint:
        return cls.from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------


class Trainer:
    """Holds the model, graph cache and optimiser state for one dataset."""

    def __init__(self, dataset: DtaDataset, config: TrainConfig):
        self.config = config
        self.dataset = dataset
        train = dataset.split("train")
        if not train:
            raise DataError("dataset has an empty train split")
        self.graph = build_affinity_graph(
            [(s.drug_id, s.target_id, s.affinity) for s in train],
            config.threshold_p,
            list(dataset.drugs),
            list(dataset.targets),
        )
        self.model = DtaModel(config, self.graph)
        self.params = self.model.parameters()
        self.cache = GraphCache(config, dataset.contact_maps).add_dataset(dataset)
        self.adam = AdamState()
        self.epoch = 0
        self.step = 0
        # start the output bias at the mean training label
        self.model.head.out.b.data[...] = float(np.mean([s.affinity for s in train]))

    def loss_terms(self, batch: Sequence[Sample], rng=None):
        out = self.model.forward([(s.drug_id, s.target_id) for s in batch], self.cache, rng)
        l_mse = mse_loss(out.preds, [s.affinity for s in batch])
        l_prompt = prompt_loss(*out.prompts)
        return out, l_mse, l_prompt, total_loss(l_mse, l_prompt, self.config.alpha)

    def train_step(self, batch: Sequence[Sample], batch_index: int = 0):
        c = self.config
        for p in self.params.values():
            p.grad = None
        tape = Tape()
        with tape:
            _, l_mse, l_prompt, loss = self.loss_terms(batch, dropout_rng(c.seed, self.step))
        if not math.isfinite(loss.item()):
            raise TrainingError(f"non-finite loss at epoch {self.epoch + 1}, batch {batch_index}")
        tape.backward(loss)
        grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in self.params.items()}
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if c.clip_norm > 0 and norm > c.clip_norm:
            factor = c.clip_norm / norm
            grads = {k: g * factor for k, g in grads.items()}
            log.info("gradient norm %.4g clipped to %.4g (epoch %d, batch %d)", norm, c.clip_norm, self.epoch + 1, batch_index)
        self.step += 1
        adam_step(self.params, grads, self.adam, c.lr)
        return l_mse.item(), l_prompt.item(), loss.item()

    def run_epoch(self) -> tuple[float, float, float]:
        c = self.config
        train = self.dataset.split("train")
        sums = np.zeros(3)
        for k, batch in enumerate(batch_iter(train, c.batch_size, c.seed, self.epoch + 1)):
            sums += np.array(self.train_step(batch, k)) * len(batch)
        self.epoch += 1
        return tuple(float(v) for v in sums / len(train))

    def predict_samples(self, samples: Sequence[Sample]) -> np.ndarray:
        return predict_pairs(self.model, self.cache, [(s.drug_id, s.target_id) for s in samples])

    def evaluate(self, split: str) -> EvalReport:
        samples = self.dataset.split(split)
        if not samples:
            raise DataError(f"split {split!r} is empty")
        preds = self.predict_samples(samples)
        return evaluate_predictions([s.affinity for s in samples], preds, self.config.flags)

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            config=self.config,
            params={k: p.data.copy() for k, p in self.params.items()},
            adam_m={k: v.copy() for k, v in self.adam.m.items()},
            adam_v={k: v.copy() for k, v in self.adam.v.items()},
            epoch=self.epoch,
            step=self.step,
            dataset_fingerprint=self.dataset.fingerprint(),
            drugs=dict(self.dataset.drugs),
            targets=dict(self.dataset.targets),
            contact_maps=dict(self.dataset.contact_maps),
            pos_edges=list(self.graph.pos_edges),
            neg_edges=list(self.graph.neg_edges),
        )

    def restore(self, ck: Checkpoint) -> None:
        if ck.config_fingerprint != self.config.fingerprint():
            raise CheckpointError("config fingerprint mismatch on resume")
        if ck.dataset_fingerprint != self.dataset.fingerprint():
            raise CheckpointError("dataset fingerprint mismatch on resume")
        load_params(self.model, ck.params)
        self.adam = AdamState(m={k: v.copy() for k, v in ck.adam_m.items()}, v={k: v.copy() for k, v in ck.adam_v.items()}, t=ck.step)
        self.epoch, self.step = ck.epoch, ck.step


def predict_pairs(model: DtaModel, cache: GraphCache, pairs, batch_size: int = EVAL_BATCH) -> np.ndarray:
    out = []
    with no_grad():
        for k in range(0, len(pairs), batch_size):
            out.append(model.forward(pairs[k : k + batch_size], cache, None).preds.data.reshape(-1))
    return np.concatenate(out) if out else np.zeros(0)


def load_params(model: DtaModel, params: dict[str, np.ndarray]) -> None:
    own = model.parameters()
    if set(own) != set(params):
        missing = sorted(set(own) ^ set(params))
        raise CheckpointError(f"parameter sets differ: {missing[:5]}")
    for k, p in own.items():
        if p.shape != params[k].shape:
            raise CheckpointError(f"parameter {k} has shape {params[k].shape}, model expects {p.shape}")
        p.data = params[k].copy()


def format_log_line(epoch: int, terms, report: EvalReport | None = None) -> str:
    cols = [str(epoch)] + [repr(float(v)) for v in terms]
    if report is not None:
        cols += [repr(report.mse), repr(report.ci), repr(report.r2m), repr(report.pearson)]
    return "\t".join(cols)


LOG_HEADER = "epoch\tl_mse\tl_prompt\ttotal\tmse\tci\tr2m\tpearson"


def train(
    dataset: DtaDataset,
    config: TrainConfig,
    resume: Checkpoint | None = None,
    on_epoch: Callable[[str], None] | None = None,
) -> tuple[Checkpoint, list[str]]:
    """Train for ``config.epochs`` epochs. Returns the final checkpoint and the epoch log lines."""
    if config.subsample < 1.0:
        dataset = dataset.subsample(config.subsample, config.seed)
    trainer = Trainer(dataset, config)
    if resume is not None:
        trainer.restore(resume)
    lines = []
    eval_split = "test" if dataset.split("test") else "train"
    while trainer.epoch < config.epochs:
        terms = trainer.run_epoch()
        report = None
        if config.eval_every and trainer.epoch % config.eval_every == 0:
            report = trainer.evaluate(eval_split)
        line = format_log_line(trainer.epoch, terms, report)
        lines.append(line)
        if on_epoch is not None:
            on_epoch(line)
    return trainer.checkpoint(), lines


# ---------------------------------------------------------------------------
# inference from a checkpoint


class Predictor:
    """Rebuilds the model from a checkpoint for evaluation, prediction and embedding export."""

    def __init__(self, ck: Checkpoint):
        self.checkpoint = ck
        c = ck.config
        self.graph = AffinityGraph(list(ck.drugs), list(ck.targets), ck.pos_edges, ck.neg_edges, c.threshold_p)
        self.model = DtaModel(c, self.graph)
        load_params(self.model, ck.params)
        self.cache = GraphCache(c, ck.contact_maps)
        self._smiles_to_id = {}
        self._seq_to_id = {}
        for d, smi in ck.drugs.items():
            self._smiles_to_id.setdefault(smi, d)
        for t, seq in ck.targets.items():
            self._seq_to_id.setdefault(seq, t)

    def _ensure(self, ds: DtaDataset) -> None:
        for s in ds.samples:
            self.cache.add_drug(s.drug_id, ds.drugs[s.drug_id])
            self.cache.add_target(s.target_id, ds.targets[s.target_id], None)

    def forward_samples(self, ds: DtaDataset, samples: Sequence[Sample]) -> list[ForwardOutput]:
        self._ensure(ds)
        pairs = [(s.drug_id, s.target_id) for s in samples]
        outs = []
        with no_grad():
            for k in range(0, len(pairs), EVAL_BATCH):
                outs.append(self.model.forward(pairs[k : k + EVAL_BATCH], self.cache, None))
        return outs

    def evaluate(self, ds: DtaDataset, split: str) -> EvalReport:
        samples = ds.split(split)
        if not samples:
            raise DataError(f"split {split!r} is empty")
        outs = self.forward_samples(ds, samples)
        preds = np.concatenate([o.preds.data.reshape(-1) for o in outs])
        return evaluate_predictions([s.affinity for s in samples], preds, self.checkpoint.config.flags)

    def embed(self, ds: DtaDataset, split: str) -> tuple[list[Sample], np.ndarray]:
        samples = ds.split(split)
        outs = self.forward_samples(ds, samples)
        fused = np.concatenate([o.fused.data for o in outs], axis=0) if outs else np.zeros((0, 0))
        return samples, fused

    def predict(self, smiles: str, sequence: str, contact_map=None) -> tuple[float, bool, bool]:
        """Returns (affinity, drug_is_cold, target_is_cold)."""
        drug_id = self._smiles_to_id.get(smiles, f"__query_drug__:{smiles}")
        target_id = self._seq_to_id.get(sequence, f"__query_target__:{sequence}")
        self.cache.add_drug(drug_id, smiles)
        if contact_map is not None:
            self.cache.targets.pop(target_id, None)
        self.cache.add_target(target_id, sequence, contact_map)
        with no_grad():
            out = self.model.forward([(drug_id, target_id)], self.cache, None)
        return float(out.preds.data[0, 0]), bool(out.cold_drug[0]), bool(out.cold_target[0])


def evaluate_with(predict_fn: Callable[[Sequence[Sample]], np.ndarray], samples: Sequence[Sample], flags=None) -> EvalReport:
    """Evaluate an arbitrary predictor (used for stub injection)."""
    if not samples:
        raise DataError("cannot evaluate an empty split")
    preds = np.asarray(predict_fn(samples), dtype=np.float64)
    return evaluate_predictions([s.affinity for s in samples], preds, flags)
