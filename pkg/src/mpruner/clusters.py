"""Segment hooks into pruning-candidate clusters by thresholding adjacent CKA."""

from __future__ import annotations

import json
from collections.abc import Sequence
from dataclasses import dataclass

from .cka import CkaChain
from .errors import InvalidArgumentError


@dataclass
class ClusterSet:
    clusters: list[list[int]]
    tau: float

    def flatten(self) -> list[int]:
        return [h for c in self.clusters for h in c]

    def boundaries(self) -> set[int]:
        """Hook indices that open a new cluster (excluding the first)."""
        return {c[0] for c in self.clusters[1:]}

    def to_dict(self) -> dict:
        return {"tau": self.tau, "clusters": self.clusters}

    @classmethod
    def from_dict(cls, obj: dict) -> ClusterSet:
        return cls([list(map(int, c)) for c in obj["clusters"]], float(obj["tau"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def get_candidates(chain: CkaChain | Sequence[float], hooks: Sequence[int], tau: float) -> ClusterSet:
    """Greedy left-to-right segmentation.

    A hook joins the open cluster when its CKA with the previous hook is at
    least ``tau``; otherwise the open cluster is closed. The trailing cluster
    is always emitted.
    """
    values = list(chain.values if isinstance(chain, CkaChain) else chain)
    hooks = list(hooks)
    if not hooks:
        raise InvalidArgumentError("hook list is empty")
    if len(values) != len(hooks) - 1:
        raise InvalidArgumentError(f"chain has {len(values)} values for {len(hooks)} hooks")
    if not 0.0 < tau <= 1.0:
        raise InvalidArgumentError(f"tau must lie in (0, 1], got {tau}")
    clusters: list[list[int]] = []
    cluster = [hooks[0]]
    for j, value in zip(hooks[1:], values):
        if value >= tau:
            cluster.append(j)
        else:
            clusters.append(cluster)
            cluster = [j]
    clusters.append(cluster)
    return ClusterSet(clusters, float(tau))


def all_singletons(clusters: ClusterSet) -> bool:
    return all(len(c) == 1 for c in clusters.clusters)
