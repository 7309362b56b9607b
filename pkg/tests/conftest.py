"""
Shared fixtures: small hand-built datasets and architectures that keep the
training tests fast.
"""
from pathlib import Path

import numpy as np
import pytest

from app.core.schemas import (
    SPLIT_TEST,
    SPLIT_TRAIN,
    SPLIT_VAL,
    ContrastConfig,
    EncoderArch,
    FinetuneConfig,
    ImageDataset,
    SgdHyper,
)

from tests.augment_reference import fill_reference_outputs

TINY_SIZE = 8


def color_blobs(per_class: int, num_classes: int = 2, size: int = TINY_SIZE, seed: int = 0) -> ImageDataset:
    """Class k is a noisy image dominated by channel k % 3; splits cycle train, train, train, val, test."""
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(num_classes), per_class)
    images = rng.uniform(0.0, 0.3, size=(len(labels), size, size, 3))
    for i, label in enumerate(labels):
        images[i, :, :, label % 3] += 0.6 + 0.1 * (label // 3)
    images = np.round(np.clip(images, 0.0, 1.0) * 255).astype(np.uint8)
    cycle = np.array([SPLIT_TRAIN, SPLIT_TRAIN, SPLIT_TRAIN, SPLIT_VAL, SPLIT_TEST], dtype=np.int8)
    splits = np.resize(cycle, len(labels))
    order = rng.permutation(len(labels))
    return ImageDataset(
        name="blobs", images=images[order], labels=labels[order], num_classes=num_classes, splits=splits[order]
    )


@pytest.fixture
def blobs() -> ImageDataset:
    return color_blobs(per_class=20)


@pytest.fixture
def tiny_arch() -> EncoderArch:
    return EncoderArch(family="mini_res", width=4, depth=2)


@pytest.fixture
def fast_contrast() -> ContrastConfig:
    return ContrastConfig(
        temperature=0.5, batch_size=8, epochs=1, projection_dim=8,
        optimizer=SgdHyper(learning_rate=0.05, epochs=1),
    )


@pytest.fixture
def fast_finetune() -> FinetuneConfig:
    return FinetuneConfig(batch_size=8, optimizer=SgdHyper(learning_rate=0.1, epochs=2))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


GOLDEN_DIR = Path(__file__).resolve().parent / "golden"


@pytest.fixture(scope="session")
def golden_dir() -> Path:
    """Committed golden corpus; outputs missing from a fresh checkout are produced by the loop reference."""
    fill_reference_outputs(GOLDEN_DIR)
    return GOLDEN_DIR
