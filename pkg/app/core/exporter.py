"""
Run artifact export (metrics CSV + JSON summary) and report aggregation.

Metrics CSV columns: ``epoch, split, metric, value, seed, config_fingerprint``.
Per-epoch rows carry the epoch index; end-of-run test metrics use
``epoch = -1``.
"""
import io
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, List, Tuple

import pandas as pd

from app.core.errors import ReportError, UsageError
from app.core.schemas import PRESET_NAMES, ReportBundle, RunMetrics

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["epoch", "split", "metric", "value", "seed", "config_fingerprint"]
FINAL_EPOCH = -1
RUNS_DIR = "runs"
CHECKPOINTS_DIR = "checkpoints"
REPORT_DIR = "report"
SUITE_KINDS = ("exp-augment", "exp-distill", "exp-transfer")


def atomic_write_bytes(path: Path, payload: bytes) -> None:
    """Write to a temp file in the target directory, then rename over ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def _frame_to_csv(frame: pd.DataFrame) -> str:
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, lineterminator="\n")
    return buffer.getvalue()


def metrics_frame(metrics: RunMetrics) -> pd.DataFrame:
    """Long-format table of every measurement in a run."""
    rows: List[Tuple[int, str, str, float]] = []
    for record in metrics.epochs:
        rows.append((record.epoch, "train", "loss", record.train_loss))
        if record.val_accuracy is not None:
            rows.append((record.epoch, "val", "accuracy", record.val_accuracy))
        if record.val_agreement is not None:
            rows.append((record.epoch, "val", "agreement", record.val_agreement))
    if metrics.test_accuracy is not None:
        rows.append((FINAL_EPOCH, "test", "accuracy", metrics.test_accuracy))
    if metrics.test_agreement is not None:
        rows.append((FINAL_EPOCH, "test", "agreement", metrics.test_agreement))
    for cls, value in enumerate(metrics.per_class_accuracy):
        if value is not None:
            rows.append((FINAL_EPOCH, "test", f"accuracy_class{cls}", value))
    frame = pd.DataFrame(rows, columns=["epoch", "split", "metric", "value"])
    frame["seed"] = metrics.seed
    frame["config_fingerprint"] = metrics.config_fingerprint
    return frame[CSV_COLUMNS]


def to_csv(metrics: RunMetrics) -> str:
    """Export a run's measurements to CSV text."""
    return _frame_to_csv(metrics_frame(metrics))


def to_json(metrics: RunMetrics) -> str:
    """Export the run summary (everything except per-epoch rows) to JSON text."""
    data = metrics.model_dump(mode="json", exclude={"epochs"})
    data["epoch_count"] = len(metrics.epochs)
    return json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False)


def write_run_artifacts(metrics: RunMetrics, out_dir: Path) -> Tuple[Path, Path]:
    """Write ``runs/<run_id>.metrics.csv`` and ``runs/<run_id>.summary.json`` under ``out_dir``."""
    runs = Path(out_dir) / RUNS_DIR
    csv_path = runs / f"{metrics.run_id}.metrics.csv"
    summary_path = runs / f"{metrics.run_id}.summary.json"
    atomic_write_bytes(csv_path, to_csv(metrics).encode("utf-8"))
    atomic_write_bytes(summary_path, (to_json(metrics) + "\n").encode("utf-8"))
    logger.info(f"Wrote metrics for {metrics.run_id} to {runs}")
    return csv_path, summary_path


def checkpoint_path(out_dir: Path, run_id: str) -> Path:
    return Path(out_dir) / CHECKPOINTS_DIR / f"{run_id}.ckpt"


# Report


def _group_key(labels: Dict[str, Any]) -> str:
    return ";".join(f"{k}={labels[k]}" for k in sorted(labels))


def load_final_metrics(directory: Path) -> pd.DataFrame:
    """One row per (run, end-of-run test metric), joined with each run's summary."""
    directory = Path(directory)
    runs_dir = directory / RUNS_DIR if (directory / RUNS_DIR).is_dir() else directory
    csv_files = sorted(runs_dir.glob("*.metrics.csv")) if runs_dir.is_dir() else []
    if not csv_files:
        raise UsageError(f"no run metrics CSV files under {directory}")

    records: List[Dict[str, Any]] = []
    for csv_file in csv_files:
        run_id = csv_file.name[: -len(".metrics.csv")]
        summary_file = csv_file.with_name(f"{run_id}.summary.json")
        if not summary_file.is_file():
            raise ReportError(f"run {run_id} has a metrics CSV but no summary file")
        summary = json.loads(summary_file.read_text(encoding="utf-8"))
        frame = pd.read_csv(csv_file)
        missing = set(CSV_COLUMNS) - set(frame.columns)
        if missing:
            raise ReportError(f"{csv_file.name} lacks columns {sorted(missing)}")
        final = frame[(frame["epoch"] == FINAL_EPOCH) & (frame["split"] == "test")]
        losses = frame[(frame["split"] == "train") & (frame["metric"] == "loss")]
        if not losses.empty:
            last = losses[losses["epoch"] == losses["epoch"].max()].assign(metric="final_train_loss")
            final = pd.concat([last, final], ignore_index=True)
        labels = summary.get("labels", {})
        for _, row in final.iterrows():
            records.append({
                "run_id": run_id,
                "experiment": summary["experiment"],
                "stage": summary["stage"],
                "group": _group_key(labels),
                "labels": labels,
                "seed": int(row["seed"]),
                "metric": row["metric"],
                "value": float(row["value"]),
            })
    columns = ["run_id", "experiment", "stage", "group", "labels", "seed", "metric", "value"]
    return pd.DataFrame(records, columns=columns)


def _aggregate(frame: pd.DataFrame, keys: List[str]) -> pd.DataFrame:
    grouped = frame.groupby(keys, sort=True)["value"]
    out = grouped.agg(["mean", "count"]).reset_index()
    sd = grouped.std(ddof=1).reset_index(drop=True).fillna(0.0)
    out["sd"] = sd.values
    return out.rename(columns={"count": "n"})


def check_experiment_kinds(final: pd.DataFrame) -> None:
    """Refuse reports that mix experiment suites with each other or with standalone runs.

    Standalone kinds (pretrain, finetune, distill, transfer) may share a
    directory as one chain; an ``exp-*`` suite must be reported alone.
    """
    kinds = sorted(set(final["experiment"]))
    suites = [kind for kind in kinds if kind in SUITE_KINDS]
    if suites and len(kinds) > 1:
        raise ReportError(f"cannot aggregate mixed experiment kinds in one report: {', '.join(kinds)}")
    per_group = final.groupby(["stage", "group"])["experiment"].nunique()
    mixed = per_group[per_group > 1]
    if not mixed.empty:
        stage, group = mixed.index[0]
        raise ReportError(f"runs of different experiment kinds share stage '{stage}' and labels '{group}'")


def summary_table(final: pd.DataFrame) -> pd.DataFrame:
    """Mean ± sd across seeds for every (stage, label group, metric)."""
    check_experiment_kinds(final)
    table = _aggregate(final, ["stage", "group", "metric"])
    experiments = final.groupby(["stage", "group"])["experiment"].first()
    table.insert(0, "experiment", [experiments[(s, g)] for s, g in zip(table["stage"], table["group"])])
    return table[["experiment", "stage", "group", "metric", "mean", "sd", "n"]]


def _with_label(final: pd.DataFrame, label: str) -> pd.DataFrame:
    mask = final["labels"].map(lambda labels: label in labels).astype(bool)
    out = final[mask].copy()
    out[label] = out["labels"].map(lambda labels: labels[label])
    return out


def augment_series(final: pd.DataFrame) -> pd.DataFrame:
    """Accuracy per augmentation preset, in ablation-table row order."""
    rows = _with_label(final[(final["stage"] == "finetune") & (final["metric"] == "accuracy")], "preset")
    rows = rows[~rows["labels"].map(lambda labels: "role" in labels).astype(bool)]
    if rows.empty:
        return pd.DataFrame(columns=["series", "x", "y", "sd", "n"])
    agg = _aggregate(rows, ["preset"])
    agg["order"] = agg["preset"].map(lambda p: PRESET_NAMES.index(p) if p in PRESET_NAMES else len(PRESET_NAMES))
    agg = agg.sort_values(["order", "preset"], kind="stable")
    return pd.DataFrame({"series": "accuracy", "x": agg["preset"], "y": agg["mean"], "sd": agg["sd"], "n": agg["n"]})


def transfer_series(final: pd.DataFrame) -> pd.DataFrame:
    """Accuracy against class count, one series per batch size."""
    rows = final[(final["stage"] == "transfer") & (final["metric"] == "accuracy")]
    rows = _with_label(_with_label(rows, "num_classes"), "batch_size")
    if rows.empty:
        return pd.DataFrame(columns=["series", "x", "y", "sd", "n"])
    rows["num_classes"] = rows["num_classes"].astype(int)
    rows["batch_size"] = rows["batch_size"].astype(int)
    agg = _aggregate(rows, ["batch_size", "num_classes"])
    return pd.DataFrame({
        "series": agg["batch_size"].map(lambda b: f"batch_size={b}"),
        "x": agg["num_classes"],
        "y": agg["mean"],
        "sd": agg["sd"],
        "n": agg["n"],
    })


def distill_series(final: pd.DataFrame) -> pd.DataFrame:
    """Test teacher-agreement per student architecture."""
    rows = _with_label(final[(final["stage"] == "distill") & (final["metric"] == "agreement")], "student")
    if rows.empty:
        return pd.DataFrame(columns=["series", "x", "y", "sd", "n"])
    agg = _aggregate(rows, ["student"])
    return pd.DataFrame({"series": "agreement", "x": agg["student"], "y": agg["mean"], "sd": agg["sd"], "n": agg["n"]})


def build_report(directory: Path) -> ReportBundle:
    """
    Aggregate every run under ``directory`` into ``report/``.

    Args:
        directory: Experiment output directory (or its runs/ subdirectory)

    Returns:
        ReportBundle naming the summary table and the series files written
    """
    directory = Path(directory)
    final = load_final_metrics(directory)
    report_dir = directory / REPORT_DIR
    table_path = report_dir / "summary_table.csv"
    atomic_write_bytes(table_path, _frame_to_csv(summary_table(final)).encode("utf-8"))

    series_files: List[str] = []
    for name, builder in (("augment", augment_series), ("transfer", transfer_series), ("distill", distill_series)):
        series = builder(final)
        if series.empty:
            continue
        path = report_dir / f"series_{name}.csv"
        atomic_write_bytes(path, _frame_to_csv(series).encode("utf-8"))
        series_files.append(str(path))

    run_count = int(final["run_id"].nunique())
    logger.info(f"Report for {run_count} runs written to {report_dir}")
    return ReportBundle(summary_table=str(table_path), series_files=series_files, run_count=run_count)
