"""The analyse -> cluster -> prune -> freeze -> retrain -> evaluate loop."""

from __future__ import annotations

import logging
import time
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .cka import cka_chain
from .clusters import all_singletons, get_candidates
from .data import Dataset, seed_batches
from .errors import InvalidArgumentError, StructuralError, TrainingDivergedError
from .nn import Model, validate_hooks
from .pruner import prune
from .trainer import TrainConfig, freezer, get_accuracy, train

log = logging.getLogger(__name__)

MAX_OUTER_ITERATIONS = 10


@dataclass(frozen=True)
class PruneConfig:
    tau: float = 0.98
    gamma: float = 0.02
    k_max: int = 3
    freeze: bool = False
    seeds_per_chain: int = 8
    seed_batch_size: int = 32
    seed: int = 0
    protect_last_cluster: bool = False

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise InvalidArgumentError(f"tau must lie in (0, 1], got {self.tau}")
        if self.k_max < 1:
            raise InvalidArgumentError("k_max must be >= 1")
        if self.seeds_per_chain < 1 or self.seed_batch_size < 2:
            raise InvalidArgumentError("need at least one seed batch of two or more samples")


@dataclass
class IterationRecord:
    """One pass of the inner loop.

    ``status`` is ``accepted``, ``rejected``, ``converged`` (every cluster is a
    singleton), ``nothing-to-prune`` (multi-layer clusters exist but none is
    prunable) or ``refused`` (the prune would empty the model).
    """

    k: int
    status: str
    chain: list[float]
    clusters: list[list[int]]
    deleted: list[int] = field(default_factory=list)
    freeze_set: list[int] = field(default_factory=list)
    acc_o: float = 0.0
    acc_pr: float | None = None
    params_before: int = 0
    params_after: int = 0
    blocks_after: int = 0
    train_time_s: float = 0.0
    eval_time_s: float = 0.0

    @property
    def accepted(self) -> bool:
        return self.status == "accepted"

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "status": self.status,
            "accepted": self.accepted,
            "chain": self.chain,
            "clusters": self.clusters,
            "deletions": self.deleted,
            "freeze_set": self.freeze_set,
            "acc_o": self.acc_o,
            "acc_pr": self.acc_pr,
            "params_before": self.params_before,
            "params_after": self.params_after,
            "blocks_after": self.blocks_after,
        }


@dataclass
class RunHistory:
    acc_o: float
    tau: float
    gamma: float
    iterations: list[IterationRecord] = field(default_factory=list)
    baseline_params: int = 0
    baseline_blocks: int = 0
    final: dict | None = None
    final_eval_time_s: float = 0.0

    @property
    def accepted_count(self) -> int:
        return sum(r.accepted for r in self.iterations)

    @property
    def rejected_count(self) -> int:
        return sum(r.status == "rejected" for r in self.iterations)

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "gamma": self.gamma,
            "acc_o": self.acc_o,
            "baseline_params": self.baseline_params,
            "baseline_blocks": self.baseline_blocks,
            "iterations": [r.to_dict() for r in self.iterations],
            "final": self.final,
        }

    def timings(self) -> dict:
        return {
            "train_time_s": sum(r.train_time_s for r in self.iterations),
            "eval_time_s": self.final_eval_time_s,
            "iterations": [{"train_time_s": r.train_time_s, "eval_time_s": r.eval_time_s} for r in self.iterations],
        }


class PruningAborted(TrainingDivergedError):
    """Training diverged mid-run; carries the history gathered so far."""

    def __init__(self, cause: TrainingDivergedError, history: RunHistory):
        super().__init__(cause.epoch, cause.step)
        self.history = history


def mpruner_run(
    model: Model,
    data: Dataset,
    hooks: Sequence[int] | None,
    cfg: PruneConfig,
    tcfg: TrainConfig,
) -> tuple[Model, RunHistory]:
    """One run of the pruning loop; returns the last accepted model and its history.

    Candidates are always computed on the accepted model. A rejected candidate
    is discarded and granularity ``k`` grows; the loop ends when every cluster
    is a singleton, nothing is prunable, or ``k`` exceeds ``cfg.k_max``.
    """
    current = model.copy()
    current.hook_positions = validate_hooks(current, current.hook_positions if hooks is None else hooks)
    seeds = seed_batches(data, cfg.seeds_per_chain, cfg.seed_batch_size, cfg.seed)
    base = get_accuracy(current, data)
    history = RunHistory(base.accuracy, cfg.tau, cfg.gamma,
                         baseline_params=current.parameter_count(), baseline_blocks=current.num_blocks)
    k = 1
    while k <= cfg.k_max:
        chain = cka_chain(current, current.hook_positions, seeds)
        clusters = get_candidates(chain, current.hook_positions, cfg.tau)
        record = IterationRecord(
            k, "converged", chain.values, clusters.clusters, acc_o=base.accuracy,
            params_before=current.parameter_count(), params_after=current.parameter_count(),
            blocks_after=current.num_blocks,
        )
        history.iterations.append(record)
        if all_singletons(clusters):
            break
        try:
            outcome = prune(current, clusters, k, cfg.protect_last_cluster)
        except StructuralError as exc:
            log.info("k=%d: prune refused (%s)", k, exc)
            record.status = "refused"
            k += 1
            continue
        if not outcome.deleted:
            record.status = "nothing-to-prune"
            break
        record.deleted, record.freeze_set = outcome.deleted, outcome.freeze_set
        candidate = freezer(outcome.pruned_model, outcome.freeze_set, outcome.pruned_model.hook_positions,
                            cfg.freeze, outcome.adjacent)
        start = time.perf_counter()
        try:
            candidate = train(candidate, data, tcfg)
        except TrainingDivergedError as exc:
            raise PruningAborted(exc, history) from exc
        record.train_time_s = time.perf_counter() - start
        metrics = get_accuracy(candidate, data)
        record.acc_pr = metrics.accuracy
        record.eval_time_s = metrics.eval_time
        record.params_after = candidate.parameter_count()
        record.blocks_after = candidate.num_blocks
        if base.accuracy - metrics.accuracy <= cfg.gamma:
            record.status = "accepted"
            current = candidate.unfreeze()
            log.info("k=%d: accepted, %d blocks, acc %.4f", k, current.num_blocks, metrics.accuracy)
        else:
            record.status = "rejected"
            log.info("k=%d: rejected, acc %.4f vs baseline %.4f", k, metrics.accuracy, base.accuracy)
            k += 1
    final = get_accuracy(current, data)
    history.final = {"accuracy": final.accuracy, "parameter_count": final.parameter_count,
                     "block_count": final.block_count}
    history.final_eval_time_s = final.eval_time
    return current, history


def iterate_until_fixpoint(
    model: Model,
    data: Dataset,
    hooks: Sequence[int] | None,
    cfg: PruneConfig,
    tcfg: TrainConfig,
    max_outer: int = MAX_OUTER_ITERATIONS,
) -> tuple[Model, list[RunHistory]]:
    """Repeat :func:`mpruner_run`, re-baselining each time, until a run accepts nothing."""
    histories: list[RunHistory] = []
    current = model
    for _ in range(max_outer):
        current, history = mpruner_run(current, data, hooks if not histories else None, cfg, tcfg)
        histories.append(history)
        if history.accepted_count == 0:
            break
    return current, histories


def count_similar_pairs(chain_values: Sequence[float], tau: float) -> int:
    return int(np.sum(np.asarray(chain_values) >= tau))
