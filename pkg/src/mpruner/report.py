"""Markdown summary tables for prune and sparsify runs."""

from __future__ import annotations


def _row(cells) -> str:
    return "| " + " | ".join(str(c) for c in cells) + " |"


SUMMARY_HEADER = ["Model", "Blocks", "Parameters", "Performance (%)", "Evaluation time (s)", "Training time (s)"]


def summary_table(history: dict, timings: dict | None = None) -> str:
    """One baseline row plus one row per outer pruning iteration.

    ``history`` is the JSON form written to history.json; ``timings`` the
    optional timings.json content (wall-clock numbers kept out of the history
    so that file stays byte-reproducible).
    """
    timings = timings or {}
    runs = history["runs"]
    base = history["baseline"]
    lines = [_row(SUMMARY_HEADER), _row(["---"] * len(SUMMARY_HEADER))]
    lines.append(_row([
        "baseline", base["block_count"], base["parameter_count"], f"{100 * base['accuracy']:.2f}",
        _fmt(timings.get("baseline_eval_time_s")), _fmt(timings.get("baseline_train_time_s")),
    ]))
    run_times = timings.get("runs", [])
    for i, run in enumerate(runs):
        t = run_times[i] if i < len(run_times) else {}
        final = run["final"]
        lines.append(_row([
            f"iteration {i + 1}", final["block_count"], final["parameter_count"],
            f"{100 * final['accuracy']:.2f}", _fmt(t.get("eval_time_s")), _fmt(t.get("train_time_s")),
        ]))
    return "\n".join(lines) + "\n"


def sparsify_table(rows: list[dict]) -> str:
    header = ["Sparsity", "Variant", "Performance (%)", "Parameters (nonzero)", "Eval time / sample (s)"]
    lines = [_row(header), _row(["---"] * len(header))]
    for r in rows:
        lines.append(_row([
            f"{r['sparsity']:.2f}", r["variant"], f"{100 * r['accuracy']:.2f}",
            r["nonzero_parameters"], f"{r['eval_time_per_sample_s']:.3e}",
        ]))
    return "\n".join(lines) + "\n"


def _fmt(value) -> str:
    return "-" if value is None else f"{value:.3f}"
