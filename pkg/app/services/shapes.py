"""
Procedural K-class image dataset for class-count sweeps.

Each class is a distinct template: a shape (disc, square, triangle, cross,
ring, diamond) at one of two sizes, drawn in a class-specific hue on a dark
background. Images are the template plus independent Gaussian pixel noise,
quantized to uint8.
"""
import colorsys
import logging
from typing import Callable, Dict

import numpy as np

from app.core.errors import ConfigError
from app.core.schemas import SPLIT_TEST, SPLIT_TRAIN, SPLIT_VAL, ImageDataset, SyntheticShapesSpec

logger = logging.getLogger(__name__)

BACKGROUND = 0.1

_Y, _X = np.mgrid[0:32, 0:32].astype(np.float64) + 0.5
_CY = _CX = 16.0


def _disc(r: float) -> np.ndarray:
    return (_Y - _CY) ** 2 + (_X - _CX) ** 2 <= r * r


def _square(r: float) -> np.ndarray:
    return (np.abs(_Y - _CY) <= r) & (np.abs(_X - _CX) <= r)


def _triangle(r: float) -> np.ndarray:
    top, bottom = _CY - r, _CY + r
    half_width = (_Y - top) / (2 * r) * r
    return (_Y >= top) & (_Y <= bottom) & (np.abs(_X - _CX) <= half_width)


def _cross(r: float) -> np.ndarray:
    arm = max(r / 3.0, 1.5)
    return ((np.abs(_Y - _CY) <= arm) & (np.abs(_X - _CX) <= r)) | ((np.abs(_X - _CX) <= arm) & (np.abs(_Y - _CY) <= r))


def _ring(r: float) -> np.ndarray:
    d2 = (_Y - _CY) ** 2 + (_X - _CX) ** 2
    return (d2 <= r * r) & (d2 >= (0.55 * r) ** 2)


def _diamond(r: float) -> np.ndarray:
    return np.abs(_Y - _CY) + np.abs(_X - _CX) <= r


SHAPES: Dict[str, Callable[[float], np.ndarray]] = {
    "disc": _disc,
    "square": _square,
    "triangle": _triangle,
    "cross": _cross,
    "ring": _ring,
    "diamond": _diamond,
}
RADII = (11.0, 6.5)


def _template(k: int, num_classes: int) -> np.ndarray:
    shape_fn = list(SHAPES.values())[k % len(SHAPES)]
    radius = RADII[(k // len(SHAPES)) % len(RADII)]
    color = np.array(colorsys.hsv_to_rgb(k / num_classes, 0.9, 0.95))
    image = np.full((32, 32, 3), BACKGROUND)
    image[shape_fn(radius)] = color
    return image


def templates(spec: SyntheticShapesSpec) -> np.ndarray:
    """Noise-free class templates, K×32×32×3 uint8."""
    if spec.num_classes < 2:
        raise ConfigError(f"synthetic datasets need at least 2 classes, got {spec.num_classes}", key="dataset.num_classes")
    stack = np.stack([_template(k, spec.num_classes) for k in range(spec.num_classes)])
    return np.round(stack * 255.0).astype(np.uint8)


def generate_shapes(spec: SyntheticShapesSpec) -> ImageDataset:
    """
    Generate the synthetic dataset described by ``spec``.

    Args:
        spec: Class count, images per class, noise level, seed and split fractions

    Returns:
        ImageDataset with K·per_class images, shuffled, with train/val/test tags
        assigned per class
    """
    base = templates(spec).astype(np.float64) / 255.0
    k, n = spec.num_classes, spec.per_class
    n_test = int(np.floor(spec.test_fraction * n + 0.5))
    # validation is a share of the images left after the test hold-out
    n_val = int(np.floor(spec.val_fraction * (n - n_test) + 0.5))
    if n - n_test - n_val < 1:
        raise ConfigError(f"per_class={n} leaves no training images after val/test", key="dataset.per_class")

    rng = np.random.default_rng(spec.seed)
    labels = np.repeat(np.arange(k), n)
    noise = rng.standard_normal((k * n, 32, 32, 3)) * spec.noise_std
    images = np.clip(base[labels] + noise, 0.0, 1.0)
    images = np.round(images * 255.0).astype(np.uint8)

    splits = np.full(k * n, SPLIT_TRAIN, dtype=np.int8)
    for cls in range(k):
        members = rng.permutation(np.flatnonzero(labels == cls))
        splits[members[:n_test]] = SPLIT_TEST
        splits[members[n_test : n_test + n_val]] = SPLIT_VAL

    order = rng.permutation(k * n)
    dataset = ImageDataset(
        name=spec.name, images=images[order], labels=labels[order], num_classes=k, splits=splits[order]
    )
    logger.info(f"Generated {spec.name}: {k}×{n} images, noise_std={spec.noise_std}, seed={spec.seed}")
    return dataset


def nearest_template_accuracy(dataset: ImageDataset, class_templates: np.ndarray) -> float:
    """Accuracy of assigning every image to its closest template (squared L2, ties to the lowest class)."""
    if len(dataset) == 0:
        return 0.0
    flat = dataset.images.reshape(len(dataset), -1).astype(np.float64)
    refs = class_templates.reshape(class_templates.shape[0], -1).astype(np.float64)
    distances = (flat**2).sum(axis=1)[:, None] - 2.0 * flat @ refs.T + (refs**2).sum(axis=1)[None, :]
    predicted = np.argmin(distances, axis=1)
    return float(np.mean(predicted == dataset.labels))


def template_ceiling(spec: SyntheticShapesSpec) -> float:
    """Nearest-template accuracy over the whole generated dataset."""
    return nearest_template_accuracy(generate_shapes(spec), templates(spec))
