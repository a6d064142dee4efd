"""CKA-guided multi-layer pruning on a small numpy autodiff core."""

from .checkpoint import load_checkpoint, save_checkpoint
from .cka import CkaChain, CkaMatrix, center, cka, cka_chain, cka_full_matrix, gram, hsic
from .clusters import ClusterSet, all_singletons, get_candidates
from .data import Dataset, load_csv, make_synthetic_dataset, seed_batches
from .nn import BlockKind, BlockSpec, Model, build_model, capture_activations, delete_block, forward
from .orchestrator import PruneConfig, RunHistory, iterate_until_fixpoint, mpruner_run
from .pruner import PruneOutcome, magnitude_sparsify, prune, select_deletions
from .trainer import MetricsReport, TrainConfig, freezer, get_accuracy, train

__all__ = [
    "BlockKind", "BlockSpec", "CkaChain", "CkaMatrix", "ClusterSet", "Dataset", "MetricsReport",
    "Model", "PruneConfig", "PruneOutcome", "RunHistory", "TrainConfig", "all_singletons",
    "build_model", "capture_activations", "center", "cka", "cka_chain", "cka_full_matrix",
    "delete_block", "forward", "freezer", "get_accuracy", "get_candidates", "gram", "hsic",
    "iterate_until_fixpoint", "load_checkpoint", "load_csv", "magnitude_sparsify",
    "make_synthetic_dataset", "mpruner_run", "prune", "save_checkpoint", "seed_batches",
    "select_deletions", "train",
]
