"""Command-line entry point: ``mpruner {train,analyze,prune,sparsify,report}``.

Exit codes: 0 success, 2 configuration error, 3 runtime error (including
training divergence).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .checkpoint import read_checkpoint, write_checkpoint
from .cka import cka_chain, cka_full_matrix, write_matrix
from .clusters import get_candidates
from .config import ConfigError, RunConfig, load_config
from .data import Dataset, load_csv, make_synthetic_dataset, seed_batches
from .errors import InvalidArgumentError, MPrunerError
from .nn import BlockSpec, Model, build_model
from .orchestrator import PruneConfig, PruningAborted, iterate_until_fixpoint
from .pruner import magnitude_sparsify
from .report import sparsify_table, summary_table
from .trainer import TrainConfig, get_accuracy, train

log = logging.getLogger("mpruner")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in {"1", "true", "yes", "on"}:
        return True
    if lowered in {"0", "false", "no", "off"}:
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML or JSON run configuration")
    common.add_argument("--tau", type=float, action="append", help="CKA threshold (repeatable)")
    common.add_argument("--gamma", type=float, help="tolerated accuracy drop (fraction)")
    common.add_argument("--freeze", type=_bool, help="retrain only layers next to pruning sites")
    common.add_argument("--k-max", type=int, help="largest pruning granularity")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mpruner", description="CKA-guided multi-layer pruning")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train the baseline model")
    sub.add_parser("analyze", parents=[common], help="emit CKA chain, matrix and clusters")
    sub.add_parser("prune", parents=[common], help="run the pruning loop to its fixpoint")
    sp = sub.add_parser("sparsify", parents=[common], help="compare magnitude sparsification of baseline and pruned models")
    sp.add_argument("--levels", type=float, nargs="+", help="sparsity levels (default from config)")
    sub.add_parser("report", parents=[common], help="re-render summary.md from history.json")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = {}
    for flag, key in [("tau", "prune.tau"), ("gamma", "prune.gamma"), ("freeze", "prune.freeze"),
                      ("k_max", "prune.k_max"), ("seed", "seed"), ("out", "out"),
                      ("levels", "sparsify.levels")]:
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = str(value) if isinstance(value, Path) else value
    return load_config(args.config, overrides)


# -- building blocks -------------------------------------------------------------


def load_dataset(cfg: RunConfig) -> Dataset:
    ds = cfg.dataset
    try:
        if ds.kind == "csv":
            return load_csv(ds.csv_path, ds.label_column, cfg.seed)
        return make_synthetic_dataset(ds.kind, ds.n, ds.input_dim, ds.num_classes, cfg.seed, ds.separation)
    except InvalidArgumentError as exc:
        raise ConfigError(f"dataset: {exc}") from exc


def build_from_config(cfg: RunConfig, data: Dataset) -> Model:
    m = cfg.model
    try:
        spec = BlockSpec(m.block_kind, m.width, m.inner_width, tokens=m.tokens)
        return build_model(data.input_dim, m.num_blocks, spec, data.num_classes, cfg.seed)
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from exc


def prune_config(cfg: RunConfig, tau: float | None = None) -> PruneConfig:
    p = cfg.prune
    return PruneConfig(tau if tau is not None else p.tau[0], p.gamma, p.k_max, p.freeze,
                       p.seeds_per_chain, p.seed_batch_size, cfg.seed, p.protect_last_cluster)


def train_config(section, seed: int) -> TrainConfig:
    return TrainConfig(section.learning_rate, section.batch_size, section.epochs, seed)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _pretrain(cfg: RunConfig, data: Dataset, model: Model, out: Path) -> tuple[Model, float]:
    records: list[dict] = []
    start = time.perf_counter()
    model = train(model, data, train_config(cfg.pretrain, cfg.seed), log=records)
    elapsed = time.perf_counter() - start
    with (out / "train_log.jsonl").open("w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    write_checkpoint(model, out / "baseline.mprk")
    return model, elapsed


def resolve_baseline(cfg: RunConfig, data: Dataset, out: Path) -> tuple[Model, float | None]:
    """Configured checkpoint, else ``<out>/baseline.mprk``, else a freshly trained baseline."""
    if cfg.checkpoint:
        return read_checkpoint(cfg.checkpoint), None
    existing = out / "baseline.mprk"
    if existing.exists():
        return read_checkpoint(existing), None
    log.info("no checkpoint found; training a baseline")
    return _pretrain(cfg, data, build_from_config(cfg, data), out)


# -- commands ---------------------------------------------------------------------


def cmd_train(cfg: RunConfig) -> None:
    out = cfg.out_dir
    data = load_dataset(cfg)
    model = read_checkpoint(cfg.checkpoint) if cfg.checkpoint else build_from_config(cfg, data)
    model, elapsed = _pretrain(cfg, data, model, out)
    metrics = get_accuracy(model, data, train_time=elapsed)
    _write_json(out / "metrics.json", metrics.to_dict())
    print(f"baseline accuracy {metrics.accuracy:.4f} with {metrics.block_count} blocks -> {out / 'baseline.mprk'}")


def cmd_analyze(cfg: RunConfig) -> None:
    out = cfg.out_dir
    data = load_dataset(cfg)
    model, _ = resolve_baseline(cfg, data, out)
    seeds = seed_batches(data, cfg.prune.seeds_per_chain, cfg.prune.seed_batch_size, cfg.seed)
    chain = cka_chain(model, None, seeds)
    matrix = cka_full_matrix(model, None, seeds)
    (out / "chain.csv").write_text(chain.to_csv())
    write_matrix(matrix, out)
    reports = [get_candidates(chain, chain.hooks, tau).to_dict() for tau in cfg.prune.tau]
    _write_json(out / "clusters.json", {"hooks": chain.hooks, "reports": reports})
    for rep in reports:
        print(f"tau={rep['tau']}: {rep['clusters']}")


def _run_prune(cfg: RunConfig, data: Dataset, out: Path) -> Model:
    baseline, pretrain_time = resolve_baseline(cfg, data, out)
    base_metrics = get_accuracy(baseline, data, timing_repeats=3)
    document = {
        # the output location is left out so reruns elsewhere stay byte-identical
        "config": {k: v for k, v in cfg.to_dict().items() if k != "out"},
        "baseline": {"accuracy": base_metrics.accuracy, "parameter_count": base_metrics.parameter_count,
                     "block_count": base_metrics.block_count},
        "runs": [],
        "status": "complete",
    }
    timings = {"baseline_eval_time_s": base_metrics.eval_time, "baseline_train_time_s": pretrain_time, "runs": []}
    try:
        final, histories = iterate_until_fixpoint(
            baseline, data, None, prune_config(cfg), train_config(cfg.train, cfg.seed))
    except PruningAborted as exc:
        document["status"] = f"aborted: {exc}"
        document["runs"].append(exc.history.to_dict())
        _write_json(out / "history.json", document)
        raise
    document["runs"] = [h.to_dict() for h in histories]
    timings["runs"] = [h.timings() for h in histories]
    write_checkpoint(final, out / "model.mprk")
    _write_json(out / "history.json", document)
    _write_json(out / "timings.json", timings)
    (out / "summary.md").write_text(summary_table(document, timings))
    return final


def cmd_prune(cfg: RunConfig) -> None:
    out = cfg.out_dir
    data = load_dataset(cfg)
    _run_prune(cfg, data, out)
    print((out / "summary.md").read_text(), end="")


def calibration_batch(data: Dataset, size: int, seed: int) -> np.ndarray:
    x, _ = data.subset("train")
    order = np.random.default_rng(seed).permutation(len(x))
    return x[order[:size]]


def cmd_sparsify(cfg: RunConfig) -> None:
    out = cfg.out_dir
    data = load_dataset(cfg)
    baseline, _ = resolve_baseline(cfg, data, out)
    pruned_path = out / "model.mprk"
    pruned = read_checkpoint(pruned_path) if pruned_path.exists() else _run_prune(cfg, data, out)
    calib = calibration_batch(data, cfg.sparsify.calibration_size, cfg.seed)
    levels = sorted({0.0, *cfg.sparsify.levels})
    rows = []
    for level in levels:
        for variant, model in (("baseline", baseline), ("pruned", pruned)):
            sparse = magnitude_sparsify(model, level, calib)
            metrics = get_accuracy(sparse, data, timing_repeats=3)
            rows.append({
                "sparsity": level,
                "variant": variant,
                "accuracy": metrics.accuracy,
                "parameter_count": metrics.parameter_count,
                "nonzero_parameters": metrics.nonzero_parameters,
                "eval_time_per_sample_s": metrics.eval_time_per_sample,
            })
            if level > 0:
                write_checkpoint(sparse, out / f"sparse_{variant}_{level:g}.mprk")
    _write_json(out / "sparsify.json", {"rows": [{k: v for k, v in r.items() if "time" not in k} for r in rows]})
    table = sparsify_table(rows)
    (out / "sparsify.md").write_text(table)
    print(table, end="")


def cmd_report(cfg: RunConfig) -> None:
    out = cfg.out_dir
    path = out / "history.json"
    try:
        document = json.loads(path.read_text())
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror}") from exc
    timings_path = out / "timings.json"
    timings = json.loads(timings_path.read_text()) if timings_path.exists() else None
    table = summary_table(document, timings)
    (out / "summary.md").write_text(table)
    print(table, end="")


COMMANDS = {
    "train": cmd_train,
    "analyze": cmd_analyze,
    "prune": cmd_prune,
    "sparsify": cmd_sparsify,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
    except (ConfigError, InvalidArgumentError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: cannot create output directory: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MPrunerError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
