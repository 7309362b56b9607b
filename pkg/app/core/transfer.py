"""
Transfer evaluation: fine-tune one pretrained encoder on several datasets
over a batch-size × seed grid and tabulate accuracy against class count.
"""
import logging
from dataclasses import dataclass
from multiprocessing import Pool
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, TypeVar

import pandas as pd

from app.core.augment import AugmentPipeline
from app.core.errors import ConfigError, ContractError
from app.core.learn import RunTag, finetune
from app.core.schemas import Checkpoint, FinetuneConfig, ImageDataset, LabelBudget, RunMetrics
from app.services.splits import split_and_subsample

logger = logging.getLogger(__name__)

J = TypeVar("J")
R = TypeVar("R")


def grid_map(fn: Callable[[J], R], jobs: Iterable[J], threads: int = 1) -> List[R]:
    """Map over independent jobs, in worker processes when ``threads`` > 1; result order follows ``jobs``."""
    jobs = list(jobs)
    if threads <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with Pool(min(threads, len(jobs))) as pool:
        return pool.map(fn, jobs)


@dataclass
class TransferJob:
    encoder_ckpt: Checkpoint
    labeled: ImageDataset
    val: ImageDataset
    test: ImageDataset
    pipeline: AugmentPipeline
    mode: str
    cfg: FinetuneConfig
    seed: int
    tag: RunTag


def run_transfer_job(job: TransferJob) -> RunMetrics:
    result = finetune(
        job.encoder_ckpt, job.labeled, job.pipeline, job.mode, job.cfg, job.seed,
        val=job.val, test=job.test, tag=job.tag,
    )
    return result.metrics.model_copy(update={"stage": "transfer"})


@dataclass
class TransferResult:
    runs: List[RunMetrics]
    table: pd.DataFrame

    def series(self) -> Dict[int, List[Tuple[int, float]]]:
        """Per batch size: (class count, mean accuracy) points in class-count order."""
        out: Dict[int, List[Tuple[int, float]]] = {}
        for column in self.table.columns:
            if column in ("dataset", "num_classes"):
                continue
            out[int(column)] = [
                (int(row["num_classes"]), float(row[column])) for _, row in self.table.iterrows()
            ]
        return out


def transfer_table(runs: Sequence[RunMetrics]) -> pd.DataFrame:
    """Rows = datasets sorted by class count, columns = batch sizes, cells = mean test accuracy over seeds."""
    unscored = [run.run_id for run in runs if run.test_accuracy is None]
    if unscored:
        raise ContractError(f"transfer runs without a test accuracy: {', '.join(unscored)}")
    frame = pd.DataFrame(
        [
            {
                "dataset": run.labels["dataset"],
                "num_classes": int(run.labels["num_classes"]),
                "batch_size": int(run.labels["batch_size"]),
                "accuracy": run.test_accuracy,
            }
            for run in runs
        ]
    )
    table = (
        frame.groupby(["dataset", "num_classes", "batch_size"])["accuracy"]
        .mean()
        .unstack("batch_size")
        .reset_index()
        .sort_values(["num_classes", "dataset"], kind="stable")
        .reset_index(drop=True)
    )
    table.columns.name = None
    return table


def transfer_run(
    encoder_ckpt: Checkpoint,
    datasets: Sequence[ImageDataset],
    mode: str,
    cfg: FinetuneConfig,
    batch_sizes: Sequence[int],
    seeds: Sequence[int],
    pipeline: AugmentPipeline,
    budget: Optional[LabelBudget] = None,
    experiment: str = "transfer",
    fingerprint: str = "",
    threads: int = 1,
) -> TransferResult:
    """
    Fine-tune and evaluate ``encoder_ckpt`` for every (dataset, batch size, seed).

    Args:
        encoder_ckpt: Pretrained encoder
        datasets: Target datasets with train/val/test tags
        mode: "linear_probe" or "full"
        cfg: Optimizer, epochs and iteration cap (batch size is taken from the grid)
        batch_sizes: Batch sizes to sweep
        seeds: Seeds per grid point
        pipeline: Training-time augmentation
        budget: Labeled fraction of each training split
        experiment: Experiment kind recorded on every run
        fingerprint: Config fingerprint recorded on every run
        threads: Worker processes for the grid

    Returns:
        TransferResult with one RunMetrics per grid point and the summary table
    """
    if not datasets or not batch_sizes or not seeds:
        raise ConfigError("transfer needs at least one dataset, batch size and seed")
    budget = budget or LabelBudget()
    jobs: List[TransferJob] = []
    for ds in datasets:
        parts = split_and_subsample(ds, budget)
        if len(parts.test) == 0:
            raise ContractError(f"{ds.name} has an empty test split; transfer accuracy is undefined")
        for batch_size in batch_sizes:
            for seed in seeds:
                labels = {"dataset": ds.name, "num_classes": ds.num_classes, "batch_size": batch_size,
                          "preset": pipeline.name, "mode": mode}
                tag = RunTag(
                    run_id=f"transfer-{ds.name}-b{batch_size}-s{seed}", experiment=experiment,
                    fingerprint=fingerprint, labels=labels,
                )
                jobs.append(TransferJob(
                    encoder_ckpt, parts.labeled, parts.val, parts.test, pipeline, mode,
                    cfg.model_copy(update={"batch_size": batch_size}), seed, tag,
                ))
    logger.info(f"Transfer grid: {len(datasets)} datasets × {len(batch_sizes)} batch sizes × {len(seeds)} seeds")
    runs = grid_map(run_transfer_job, jobs, threads)
    return TransferResult(runs, transfer_table(runs))
