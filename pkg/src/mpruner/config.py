"""Run configuration: one YAML/JSON file, CLI flags override individual fields.

Schema (every key optional; defaults shown)::

    seed: 0                  # drives data, init, shuffling and seed-batch selection
    out: mpruner-out         # output directory
    checkpoint: null         # input .mprk; otherwise <out>/baseline.mprk, otherwise trained here
    dataset:
      kind: gaussian_clusters  # gaussian_clusters | ring_xor | csv
      n: 4000
      input_dim: 8
      num_classes: 4
      separation: 3.0
      csv_path: null         # required when kind == csv
      label_column: -1
    model:
      block_kind: ResidualMlpBlock   # or EncoderBlock
      num_blocks: 12
      width: 32
      inner_width: 64
      tokens: 4
    pretrain: {learning_rate: 0.001, batch_size: 32, epochs: 20}
    train:    {learning_rate: 5.0e-05, batch_size: 32, epochs: 3}
    prune:
      tau: [0.98]            # analyze reports every value; prune uses the first
      gamma: 0.02            # tolerated accuracy drop, as a fraction
      k_max: 3
      freeze: false
      protect_last_cluster: false
      seeds_per_chain: 8
      seed_batch_size: 32
    sparsify: {levels: [0.1, 0.2, 0.3, 0.4, 0.5], calibration_size: 128}
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path

import yaml

from .errors import MPrunerError


class ConfigError(MPrunerError):
    pass


@dataclass
class DatasetSection:
    kind: str = "gaussian_clusters"
    n: int = 4000
    input_dim: int = 8
    num_classes: int = 4
    separation: float = 3.0
    csv_path: str | None = None
    label_column: int = -1


@dataclass
class ModelSection:
    block_kind: str = "ResidualMlpBlock"
    num_blocks: int = 12
    width: int = 32
    inner_width: int = 64
    tokens: int = 4


@dataclass
class TrainSection:
    learning_rate: float = 5e-5
    batch_size: int = 32
    epochs: int = 3


@dataclass
class PruneSection:
    tau: list[float] = field(default_factory=lambda: [0.98])
    gamma: float = 0.02
    k_max: int = 3
    freeze: bool = False
    protect_last_cluster: bool = False
    seeds_per_chain: int = 8
    seed_batch_size: int = 32


@dataclass
class SparsifySection:
    levels: list[float] = field(default_factory=lambda: [0.1, 0.2, 0.3, 0.4, 0.5])
    calibration_size: int = 128


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "mpruner-out"
    checkpoint: str | None = None
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelSection = field(default_factory=ModelSection)
    pretrain: TrainSection = field(default_factory=lambda: TrainSection(1e-3, 32, 20))
    train: TrainSection = field(default_factory=TrainSection)
    prune: PruneSection = field(default_factory=PruneSection)
    sparsify: SparsifySection = field(default_factory=SparsifySection)

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> RunConfig:
        taus = self.prune.tau
        if not taus or any(not 0.0 < t <= 1.0 for t in taus):
            raise ConfigError(f"every tau must lie in (0, 1], got {taus}")
        if self.prune.k_max < 1:
            raise ConfigError("prune.k_max must be >= 1")
        if any(not 0.0 <= s < 1.0 for s in self.sparsify.levels):
            raise ConfigError("sparsify levels must lie in [0, 1)")
        if self.dataset.kind == "csv" and not self.dataset.csv_path:
            raise ConfigError("dataset.csv_path is required when dataset.kind is csv")
        for section in (self.pretrain, self.train):
            if section.learning_rate <= 0 or section.epochs < 0 or section.batch_size < 1:
                raise ConfigError(f"invalid training section {section}")
        return self


def _coerce(value, current, where: str):
    if isinstance(current, bool):
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{where}: expected true/false, got {value!r}")
    if isinstance(current, float) and not isinstance(value, bool):
        # PyYAML reads exponent literals without a dot (1e-3) as strings
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{where}: expected a number, got {value!r}") from None
    if isinstance(current, int) and isinstance(value, int) and not isinstance(value, bool):
        return value
    if isinstance(current, list):
        if isinstance(value, (int, float)):
            value = [value]
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return [float(v) for v in value]
    if current is None or isinstance(current, str):
        if value is None or isinstance(value, str):
            return value
        raise ConfigError(f"{where}: expected a string, got {value!r}")
    raise ConfigError(f"{where}: cannot use {value!r}")


def _merge(obj, data: dict, where: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping")
    known = {f.name for f in fields(obj)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys at {where or 'top level'}: {sorted(unknown)}")
    updates = {}
    for key, value in data.items():
        current = getattr(obj, key)
        path = f"{where}.{key}" if where else key
        updates[key] = _merge(current, value, path) if is_dataclass(current) else _coerce(value, current, path)
    return replace(obj, **updates)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        cfg = _merge(cfg, data)
    for dotted, value in (overrides or {}).items():
        cfg = _merge(cfg, _nest(dotted, value))
    return cfg.validate()


def _nest(dotted: str, value) -> dict:
    out: dict = {}
    node = out
    parts = dotted.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value
    return out
