"""Freeze-aware training with AdamW, plus evaluation."""

from __future__ import annotations

import time
from collections.abc import Iterable
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, cross_entropy
from .data import Dataset
from .errors import InvalidArgumentError, ShapeError, TrainingDivergedError
from .nn import Model, forward, run


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-5
    batch_size: int = 32
    epochs: int = 3
    seed: int = 0
    optimizer: str = "adamw"
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InvalidArgumentError("learning_rate must be > 0")
        if self.epochs < 0:
            raise InvalidArgumentError("epochs must be >= 0")
        if self.batch_size < 1:
            raise InvalidArgumentError("batch_size must be >= 1")
        if self.optimizer.lower() != "adamw":
            raise InvalidArgumentError(f"unsupported optimizer {self.optimizer!r}")


@dataclass
class MetricsReport:
    accuracy: float
    eval_time: float
    train_time: float
    parameter_count: int
    block_count: int
    nonzero_parameters: int = 0
    eval_samples: int = 0

    @property
    def eval_time_per_sample(self) -> float:
        return self.eval_time / max(self.eval_samples, 1)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "eval_time_s": self.eval_time,
            "train_time_s": self.train_time,
            "parameter_count": self.parameter_count,
            "nonzero_parameters": self.nonzero_parameters,
            "block_count": self.block_count,
        }


def freezer(
    model: Model,
    freeze_set: Iterable[int],
    hooks: Iterable[int] | None = None,
    b: bool = False,
    adjacent: Iterable[int] = (),
) -> Model:
    """Mark which parameters retraining may update.

    With ``b`` false everything trains. With ``b`` true only the blocks in
    ``freeze_set`` (layers flagged by the pruner), the blocks in ``adjacent``
    (neighbours of deletion sites) and the head train. ``hooks`` is accepted
    for call-shape parity with the pruning loop and only range-checked.
    """
    out = model.unfreeze()
    freeze_set = set(freeze_set)
    adjacent = set(adjacent)
    for idx in list(freeze_set) + list(adjacent) + list(hooks or ()):
        if not 0 <= idx < model.num_blocks:
            raise InvalidArgumentError(f"block index {idx} invalid for {model.num_blocks} blocks")
    if not b:
        return out
    out.embed_trainable = False
    for i, block in enumerate(out.blocks):
        block.trainable = i in freeze_set or i in adjacent
    return out


def trainable_mask(model: Model) -> dict[str, bool]:
    return {name: model.is_trainable(name) for name, _ in model.named_parameters()}


class AdamW:
    """Decoupled-weight-decay Adam over a dict of float arrays."""

    def __init__(self, params: dict[str, np.ndarray], lr: float, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.wd = weight_decay
        self.m = {k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()}
        self.v = {k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for name, p in params.items():
            g = grads[name].astype(np.float64)
            self.m[name] = self.b1 * self.m[name] + (1 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1 - self.b2) * g * g
            update = (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)
            new = p.astype(np.float64) * (1 - self.lr * self.wd) - self.lr * update
            p[...] = new.astype(p.dtype)


def _check_dims(model: Model, data: Dataset) -> None:
    if data.input_dim != model.input_dim:
        raise ShapeError(f"dataset has {data.input_dim} features, model expects {model.input_dim}")
    if data.num_classes > model.num_classes:
        raise ShapeError(f"dataset has {data.num_classes} classes, model head has {model.num_classes}")


def train(model: Model, data: Dataset, cfg: TrainConfig, log: list | None = None) -> Model:
    """Minimise cross-entropy on the train split; frozen parameters are never touched.

    Returns a new model. When ``log`` is a list, one record per epoch
    ``{"epoch", "loss", "train_time_s"}`` is appended to it.
    """
    _check_dims(model, data)
    out = model.copy()
    x, y = data.subset("train")
    if len(x) == 0:
        raise InvalidArgumentError("train split is empty")
    names = [n for n, _ in out.named_parameters() if out.is_trainable(n)]
    arrays = dict(out.named_parameters())
    live = {n: arrays[n] for n in names}
    opt = AdamW(live, cfg.learning_rate, cfg.betas, cfg.eps, cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        order = rng.permutation(len(x))
        total, seen = 0.0, 0
        for step, lo in enumerate(range(0, len(x), cfg.batch_size)):
            idx = order[lo:lo + cfg.batch_size]
            params = {n: Tensor(a, requires_grad=n in live) for n, a in arrays.items()}
            logits, _ = run(out, x[idx], params)
            loss = cross_entropy(logits, y[idx])
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDivergedError(epoch, step)
            if live:
                loss.backward()
                grads = {n: params[n].grad if params[n].grad is not None else np.zeros_like(live[n])
                         for n in live}
                opt.step(live, grads)
            total += value * len(idx)
            seen += len(idx)
        if log is not None:
            log.append({"epoch": epoch, "loss": total / seen, "train_time_s": time.perf_counter() - start})
    return out


def predict(model: Model, inputs: np.ndarray, chunk: int = 1024) -> np.ndarray:
    preds = [np.argmax(forward(model, inputs[i:i + chunk]), axis=1) for i in range(0, len(inputs), chunk)]
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def get_accuracy(
    model: Model, data: Dataset, split: str = "eval", timing_repeats: int = 1, train_time: float = 0.0
) -> MetricsReport:
    """Top-1 accuracy on ``split``; ``eval_time`` is the fastest of ``timing_repeats`` passes."""
    x, y = data.subset(split)
    if len(x) == 0:
        raise InvalidArgumentError(f"{split} split is empty")
    best = float("inf")
    for _ in range(max(1, timing_repeats)):
        start = time.perf_counter()
        preds = predict(model, x)
        best = min(best, time.perf_counter() - start)
    return MetricsReport(
        accuracy=float(np.mean(preds == y)),
        eval_time=best,
        train_time=train_time,
        parameter_count=model.parameter_count(),
        block_count=model.num_blocks,
        nonzero_parameters=model.nonzero_parameter_count(),
        eval_samples=len(x),
    )
