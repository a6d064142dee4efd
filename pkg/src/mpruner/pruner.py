"""Cluster-driven block deletion and an activation-aware magnitude sparsifier."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .clusters import ClusterSet
from .errors import InvalidArgumentError, StructuralError
from .nn import Model, delete_block, run


@dataclass
class PruneOutcome:
    pruned_model: Model
    deleted: list[int]
    freeze_set: list[int]
    adjacent: list[int] = field(default_factory=list)
    params_before: int = 0
    params_after: int = 0

    def summary(self) -> dict:
        return {
            "deleted": self.deleted,
            "freeze_set": self.freeze_set,
            "adjacent": self.adjacent,
            "params_before": self.params_before,
            "params_after": self.params_after,
        }


def select_deletions(cluster: Sequence[int], k: int) -> list[int]:
    """Members after the first, taking one then skipping ``k - 1``.

    k=1 drops every member but the first; k=2 drops every other one.
    """
    if k < 1:
        raise InvalidArgumentError(f"granularity k must be >= 1, got {k}")
    return [cluster[i] for i in range(1, len(cluster)) if (i - 1) % k == 0]


def _out_dim(model: Model, idx: int) -> int:
    return model.width if idx < 0 else model.blocks[idx].out_width


def _in_dim(model: Model, idx: int) -> int:
    if idx >= model.num_blocks:
        return model.head["weight"].shape[1]
    return model.blocks[idx].in_width


def _renumber(index: int, deleted: Sequence[int]) -> int:
    return index - sum(1 for d in deleted if d < index)


def prune(model: Model, clusters: ClusterSet, k: int, protect_last_cluster: bool = False) -> PruneOutcome:
    """Delete redundant blocks inside each candidate cluster.

    A deletion happens only when the predecessor's output width matches the
    successor's input width; otherwise the block and its predecessor go into
    the freeze set. The last cluster is skipped when ``protect_last_cluster``.
    ``freeze_set`` and ``adjacent`` use post-prune block numbering;
    ``deleted`` uses the original numbering.
    """
    if clusters.flatten() != list(model.hook_positions):
        raise InvalidArgumentError(
            f"clusters {clusters.clusters} do not cover the model hooks {model.hook_positions}"
        )
    candidates = clusters.clusters[:-1] if protect_last_cluster else clusters.clusters
    deleted: list[int] = []
    frozen: set[int] = set()
    for cluster in candidates:
        for idx in select_deletions(cluster, k):
            if _out_dim(model, idx - 1) == _in_dim(model, idx + 1):
                deleted.append(idx)
            else:
                frozen.update({idx - 1, idx})
    if len(deleted) >= model.num_blocks:
        raise StructuralError("prune would delete every block")

    pruned = model
    for idx in sorted(deleted, reverse=True):
        pruned = delete_block(pruned, idx)

    survivors = [i for i in range(model.num_blocks) if i not in set(deleted)]
    # a frozen block that was itself deleted hands its slot to the nearest surviving predecessor
    freeze_set = set()
    for idx in frozen:
        while idx >= 0 and idx not in survivors:
            idx -= 1
        if idx >= 0:
            freeze_set.add(_renumber(idx, deleted))
    adjacent = set()
    for idx in deleted:
        before = [s for s in survivors if s < idx]
        after = [s for s in survivors if s > idx]
        if before:
            adjacent.add(_renumber(before[-1], deleted))
        if after:
            adjacent.add(_renumber(after[0], deleted))
    return PruneOutcome(
        pruned,
        sorted(deleted),
        sorted(freeze_set),
        sorted(adjacent),
        model.parameter_count(),
        pruned.parameter_count(),
    )


def wanda_scores(weight: np.ndarray, input_sq_norm: np.ndarray) -> np.ndarray:
    """|W_ij| * ||X_j||_2 for weight laid out (out_features, in_features)."""
    return np.abs(weight.astype(np.float64)) * np.sqrt(input_sq_norm)[None, :]


def sparsify_rows(weight: np.ndarray, scores: np.ndarray, sparsity: float) -> np.ndarray:
    drop = int(np.floor(sparsity * weight.shape[1]))
    out = weight.copy()
    if drop == 0:
        return out
    # stable sort keeps ties deterministic (lower column index is dropped first)
    order = np.argsort(scores, axis=1, kind="stable")[:, :drop]
    np.put_along_axis(out, order, 0.0, axis=1)
    return out


def magnitude_sparsify(
    model: Model, sparsity: float, calibration, include_embed_head: bool = False
) -> Model:
    """Zero the lowest-scoring ``sparsity`` fraction of each row of every block linear weight."""
    if not 0.0 <= sparsity < 1.0:
        raise InvalidArgumentError(f"sparsity must lie in [0, 1), got {sparsity}")
    calibration = np.asarray(calibration)
    if calibration.ndim != 2 or len(calibration) == 0:
        raise InvalidArgumentError("calibration batch must be a non-empty 2-d array")
    out = model.copy()
    if sparsity == 0.0:
        return out
    sq_norms: dict[str, np.ndarray] = {}
    run(model, calibration, linear_sq_norms=sq_norms)
    for name, weight in model.named_parameters():
        if name not in sq_norms:
            continue
        if not include_embed_head and not name.startswith("blocks."):
            continue
        out.set_parameter(name, sparsify_rows(weight, wanda_scores(weight, sq_norms[name]), sparsity))
    return out
