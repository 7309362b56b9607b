"""
CIFAR-10 / CIFAR-100 binary batch loader.
"""
import logging
from pathlib import Path
from typing import List, Tuple

import numpy as np

from app.core.errors import ConfigError, FormatError, IngestionError
from app.core.schemas import SPLIT_TEST, SPLIT_TRAIN, ImageDataset

logger = logging.getLogger(__name__)

IMAGE_BYTES = 32 * 32 * 3

# variant -> (label bytes per record, index of the label used, classes, train files, test files)
LAYOUTS = {
    "cifar10": (1, 0, 10, [f"data_batch_{i}.bin" for i in range(1, 6)], ["test_batch.bin"]),
    "cifar100": (2, 1, 100, ["train.bin"], ["test.bin"]),
}


def record_length(variant: str) -> int:
    return LAYOUTS[variant][0] + IMAGE_BYTES


def _resolve_dir(path: Path, first_file: str) -> Path:
    # accept either the batch directory itself or its parent as shipped in the archive
    if (path / first_file).exists():
        return path
    for child in ("cifar-10-batches-bin", "cifar-100-binary"):
        if (path / child / first_file).exists():
            return path / child
    return path


def read_batch_file(path: Path, variant: str) -> Tuple[np.ndarray, np.ndarray]:
    """
    Parse one binary batch file.

    Args:
        path: Batch file
        variant: "cifar10" or "cifar100"

    Returns:
        (images N×32×32×3 uint8, labels N int64)
    """
    label_bytes, label_index, classes, _, _ = LAYOUTS[variant]
    length = label_bytes + IMAGE_BYTES
    try:
        raw = np.fromfile(path, dtype=np.uint8)
    except OSError as e:
        raise IngestionError(f"cannot read {path}: {e}") from e

    if raw.size % length:
        offset = raw.size - raw.size % length
        raise FormatError(
            f"{path.name}: truncated record at byte offset {offset} "
            f"({raw.size % length} of {length} bytes)"
        )
    records = raw.reshape(-1, length)
    labels = records[:, label_index].astype(np.int64)
    bad = np.flatnonzero(labels >= classes)
    if bad.size:
        raise FormatError(f"{path.name}: label {labels[bad[0]]} out of range at byte offset {bad[0] * length}")
    images = records[:, label_bytes:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return np.ascontiguousarray(images), labels


def load_cifar(path: str, variant: str) -> ImageDataset:
    """
    Load the published CIFAR binary batches.

    Train and test tags follow the file each record came from; no validation
    split is carved here (see ``carve_validation``).

    Args:
        path: Directory holding the batch files (or the directory the archive unpacked into)
        variant: "cifar10" or "cifar100"

    Returns:
        ImageDataset with train/test split tags
    """
    if variant not in LAYOUTS:
        raise ConfigError(f"unknown CIFAR variant '{variant}'", key="dataset.kind")
    _, _, classes, train_files, test_files = LAYOUTS[variant]
    directory = _resolve_dir(Path(path), train_files[0])

    images: List[np.ndarray] = []
    labels: List[np.ndarray] = []
    splits: List[np.ndarray] = []
    for names, tag in ((train_files, SPLIT_TRAIN), (test_files, SPLIT_TEST)):
        for name in names:
            file_path = directory / name
            if not file_path.is_file():
                raise IngestionError(f"missing CIFAR batch file {file_path}")
            batch_images, batch_labels = read_batch_file(file_path, variant)
            images.append(batch_images)
            labels.append(batch_labels)
            splits.append(np.full(batch_labels.shape[0], tag, dtype=np.int8))

    dataset = ImageDataset(
        name=variant,
        images=np.concatenate(images),
        labels=np.concatenate(labels),
        num_classes=classes,
        splits=np.concatenate(splits),
    )
    logger.info(
        f"Loaded {variant} from {directory}: {len(dataset.indices('train'))} train / "
        f"{len(dataset.indices('test'))} test images"
    )
    return dataset
