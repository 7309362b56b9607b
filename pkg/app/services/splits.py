"""
Labeled-fraction subsampling and validation carving.
"""
import logging
from typing import NamedTuple

import numpy as np

from app.core.errors import ConfigError
from app.core.schemas import SPLIT_VAL, ImageDataset, LabelBudget

logger = logging.getLogger(__name__)


class SplitResult(NamedTuple):
    labeled: ImageDataset
    unlabeled: ImageDataset
    val: ImageDataset
    test: ImageDataset


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def stratified_quotas(counts: np.ndarray, total: int) -> np.ndarray:
    """Split ``total`` across classes proportionally to ``counts`` (largest remainder, ties to lower index)."""
    counts = np.asarray(counts, dtype=np.int64)
    n = int(counts.sum())
    if n == 0 or total == 0:
        return np.zeros_like(counts)
    exact = counts * total / n
    quotas = np.floor(exact).astype(np.int64)
    remainder = total - int(quotas.sum())
    if remainder:
        # stable sort keeps lower class indices first among equal remainders
        order = np.argsort(-(exact - quotas), kind="stable")
        quotas[order[:remainder]] += 1
    return np.minimum(quotas, counts)


def _draw(train_idx: np.ndarray, labels: np.ndarray, num_classes: int, total: int,
          stratified: bool, rng: np.random.Generator) -> np.ndarray:
    if not stratified:
        return np.sort(rng.permutation(train_idx)[:total])
    counts = np.bincount(labels[train_idx], minlength=num_classes)
    quotas = stratified_quotas(counts, total)
    chosen = []
    for cls in range(num_classes):
        members = train_idx[labels[train_idx] == cls]
        chosen.append(rng.permutation(members)[: quotas[cls]])
    return np.sort(np.concatenate(chosen)) if chosen else np.zeros(0, dtype=np.int64)


def split_and_subsample(ds: ImageDataset, budget: LabelBudget) -> SplitResult:
    """
    Select the labeled share of the training split.

    Args:
        ds: Dataset with split tags
        budget: Fraction in (0, 1], seed and stratification flag

    Returns:
        SplitResult of (labeled, unlabeled remainder, val, test); labeled and
        unlabeled partition the training split
    """
    if not 0.0 < budget.fraction <= 1.0:
        raise ConfigError(f"label fraction must lie in (0, 1], got {budget.fraction}", key="label_budget.fraction")
    train_idx = ds.indices("train")
    total = round_half_up(budget.fraction * len(train_idx))
    rng = np.random.default_rng(budget.seed)
    labeled_idx = _draw(train_idx, ds.labels, ds.num_classes, total, budget.stratified, rng)
    unlabeled_idx = np.setdiff1d(train_idx, labeled_idx)

    logger.info(
        f"{ds.name}: {len(labeled_idx)} labeled / {len(unlabeled_idx)} unlabeled of {len(train_idx)} "
        f"train images (fraction {budget.fraction}, seed {budget.seed})"
    )
    return SplitResult(
        labeled=ds.subset(labeled_idx, name=f"{ds.name}:labeled"),
        unlabeled=ds.subset(unlabeled_idx, name=f"{ds.name}:unlabeled"),
        val=ds.split("val"),
        test=ds.split("test"),
    )


def carve_validation(ds: ImageDataset, fraction: float = 0.1, seed: int = 0) -> ImageDataset:
    """Move a stratified ``fraction`` of the training split to validation."""
    if not 0.0 <= fraction < 1.0:
        raise ConfigError(f"validation fraction must lie in [0, 1), got {fraction}", key="dataset.val_fraction")
    train_idx = ds.indices("train")
    total = round_half_up(fraction * len(train_idx))
    if total == 0:
        return ds
    moved = _draw(train_idx, ds.labels, ds.num_classes, total, True, np.random.default_rng(seed))
    splits = ds.splits.copy()
    splits[moved] = SPLIT_VAL
    logger.info(f"{ds.name}: carved {len(moved)} validation images from {len(train_idx)} train images")
    return ImageDataset(name=ds.name, images=ds.images, labels=ds.labels, num_classes=ds.num_classes, splits=splits)
