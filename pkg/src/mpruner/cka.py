"""Linear CKA between layer activations, averaged over seed batches."""

from __future__ import annotations

import json
import os
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateActivationError, InvalidArgumentError, MPrunerError, ShapeError
from .nn import Model, capture_activations, validate_hooks

DEGENERATE_HSIC = 1e-12
CLAMP_SLACK = 1e-4


def gram(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected a 2-d activation matrix, got shape {x.shape}")
    if x.shape[0] < 2:
        raise InvalidArgumentError("gram needs at least 2 samples")
    return x @ x.T


def centering_matrix(n: int) -> np.ndarray:
    return np.eye(n) - np.full((n, n), 1.0 / n)


def center(k) -> np.ndarray:
    """H K H with H = I - J/n."""
    k = np.asarray(k, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise ShapeError(f"center needs a square matrix, got shape {k.shape}")
    h = centering_matrix(k.shape[0])
    return h @ k @ h


def hsic(k, l) -> float:
    """Biased HSIC estimate tr(Kc Lc) / (n-1)^2 on (uncentered) Gram matrices.

    Because H is idempotent this equals tr(Kc H Lc H) / (n-1)^2.
    """
    k = np.asarray(k, dtype=np.float64)
    l = np.asarray(l, dtype=np.float64)
    if k.shape != l.shape:
        raise ShapeError(f"Gram matrices differ in shape: {k.shape} vs {l.shape}")
    n = k.shape[0]
    if n < 2:
        raise InvalidArgumentError("hsic needs n >= 2")
    # tr(A B) for symmetric A, B is the elementwise inner product
    return float(np.sum(center(k) * center(l).T) / (n - 1) ** 2)


def _aligned(kc: np.ndarray, lc: np.ndarray, hxx: float, hyy: float, scale: float) -> float:
    if hxx < DEGENERATE_HSIC or hyy < DEGENERATE_HSIC:
        raise DegenerateActivationError("constant activations give zero self-HSIC")
    value = float(np.sum(kc * lc)) / scale / np.sqrt(hxx * hyy)
    if value < -CLAMP_SLACK or value > 1 + CLAMP_SLACK:
        raise MPrunerError(f"CKA {value} escaped [0, 1] beyond rounding slack")
    return min(max(value, 0.0), 1.0)


def cka(x, y) -> float:
    """HSIC(K, L) / sqrt(HSIC(K, K) HSIC(L, L)) for linear kernels, clamped to [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] != y.shape[0]:
        raise ShapeError(f"activation batches differ in size: {x.shape[0]} vs {y.shape[0]}")
    kc, lc = center(gram(x)), center(gram(y))
    scale = (x.shape[0] - 1) ** 2
    return _aligned(kc, lc, float(np.sum(kc * kc)) / scale, float(np.sum(lc * lc)) / scale, scale)


@dataclass
class CkaChain:
    hooks: list[int]
    values: list[float]
    seed_count: int

    def to_csv(self) -> str:
        lines = ["hook_i,hook_j,cka"]
        for a, b, v in zip(self.hooks, self.hooks[1:], self.values):
            lines.append(f"{a},{b},{v:.9g}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str, seed_count: int = 1) -> CkaChain:
        rows = [line.split(",") for line in text.strip().splitlines()[1:]]
        if not rows:
            raise InvalidArgumentError("chain CSV has no rows")
        hooks = [int(rows[0][0])] + [int(r[1]) for r in rows]
        return cls(hooks, [float(r[2]) for r in rows], seed_count)


@dataclass
class CkaMatrix:
    hooks: list[int]
    matrix: np.ndarray
    seed_count: int = field(default=1)

    def to_json(self) -> str:
        return json.dumps({"hooks": self.hooks,
                           "matrix": [[float(f"{v:.9g}") for v in row] for row in self.matrix]})

    def to_csv(self) -> str:
        header = "," + ",".join(str(h) for h in self.hooks)
        rows = [f"{h}," + ",".join(f"{v:.9g}" for v in row) for h, row in zip(self.hooks, self.matrix)]
        return "\n".join([header, *rows]) + "\n"

    @classmethod
    def from_json(cls, text: str) -> CkaMatrix:
        obj = json.loads(text)
        return cls(list(obj["hooks"]), np.array(obj["matrix"], dtype=np.float64))

    def superdiagonal(self) -> list[float]:
        return [float(self.matrix[i, i + 1]) for i in range(len(self.hooks) - 1)]


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("MPRUNER_THREADS", "1")))
    except ValueError:
        return 1


def _per_batch(model: Model, hooks: list[int], batch, pairs: list[tuple[int, int]]) -> list[float]:
    acts = capture_activations(model, batch, hooks)
    scale = (len(batch) - 1) ** 2
    centered = {h: center(gram(a)) for h, a in acts.items()}
    del acts
    self_hsic = {h: float(np.sum(c * c)) / scale for h, c in centered.items()}
    for h in hooks:
        if self_hsic[h] < DEGENERATE_HSIC:
            raise DegenerateActivationError("constant activations give zero self-HSIC", hook=h)
    return [
        _aligned(centered[hooks[a]], centered[hooks[b]], self_hsic[hooks[a]], self_hsic[hooks[b]], scale)
        for a, b in pairs
    ]


def _streamed_mean(model: Model, hooks, seeds, pairs) -> tuple[np.ndarray, int]:
    if len(seeds) == 0:
        raise InvalidArgumentError("at least one seed batch is required")
    for batch in seeds:
        if len(batch) < 2:
            raise InvalidArgumentError("each seed batch needs at least 2 samples")
    values = np.zeros(len(pairs))
    workers = min(_threads(), len(seeds))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = pool.map(lambda b: _per_batch(model, hooks, b, pairs), seeds)
            for idx, vals in enumerate(results):
                values = (values * idx + np.asarray(vals)) / (idx + 1)
    else:
        for idx, batch in enumerate(seeds):
            vals = np.asarray(_per_batch(model, hooks, batch, pairs))
            values = (values * idx + vals) / (idx + 1)
    return np.clip(values, 0.0, 1.0), len(seeds)


def cka_chain(model: Model, hooks: Sequence[int] | None, seeds: Sequence) -> CkaChain:
    """Adjacent-hook CKA, running mean over seed batches."""
    hooks = validate_hooks(model, model.hook_positions if hooks is None else hooks)
    pairs = [(i, i + 1) for i in range(len(hooks) - 1)]
    values, count = _streamed_mean(model, hooks, seeds, pairs)
    return CkaChain(hooks, [float(v) for v in values], count)


def cka_full_matrix(model: Model, hooks: Sequence[int] | None, seeds: Sequence) -> CkaMatrix:
    hooks = validate_hooks(model, model.hook_positions if hooks is None else hooks)
    m = len(hooks)
    pairs = [(i, j) for i in range(m) for j in range(i + 1, m)]
    values, count = _streamed_mean(model, hooks, seeds, pairs)
    mat = np.eye(m)
    for (i, j), v in zip(pairs, values):
        mat[i, j] = mat[j, i] = v
    return CkaMatrix(hooks, mat, count)


def write_matrix(matrix: CkaMatrix, out_dir) -> None:
    out_dir = Path(out_dir)
    (out_dir / "cka_matrix.json").write_text(matrix.to_json())
    (out_dir / "cka_matrix.csv").write_text(matrix.to_csv())
