"""Drug-target binding affinity prediction with graph encoders, a protein
transformer and dynamic prompts, on a small numpy autodiff engine."""

from .config import RunConfig, TrainConfig, load_config
from .data import DtaDataset, Sample, convert_matrix_format, kd_to_pkd, load_canonical_tsv, write_canonical_tsv
from .errors import DtaError
from .metrics import EvalReport, concordance_index, pearson, r2m
from .smiles import parse_smiles
from .protein import build_protein_graph
from .training import Checkpoint, Predictor, Trainer, train

__version__ = "0.1.0"

__all__ = [
    "Checkpoint",
    "DtaDataset",
    "DtaError",
    "EvalReport",
    "Predictor",
    "RunConfig",
    "Sample",
    "TrainConfig",
    "Trainer",
    "build_protein_graph",
    "concordance_index",
    "convert_matrix_format",
    "kd_to_pkd",
    "load_canonical_tsv",
    "load_config",
    "parse_smiles",
    "pearson",
    "r2m",
    "train",
    "write_canonical_tsv",
]
