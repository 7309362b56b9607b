"""
Seedable image augmentation: random crop + resize, horizontal flip and color
distortion, the seven ablation presets, and X1/X2 view-pair generation.

All randomness comes from an explicit ``RngStream``. Streams are derived from
(seed, epoch, image index, view) so an image's views do not depend on which
batch it lands in or on iteration order.

Resize is bilinear with corner-aligned sampling: output pixel ``y`` of an
``out``-pixel axis reads source coordinate ``y * (src - 1) / (out - 1)``
(coordinate 0 when ``out == 1``); the four neighbours are blended as
``(1-wy)(1-wx)·I[y0,x0] + (1-wy)wx·I[y0,x1] + wy(1-wx)·I[y1,x0] + wy·wx·I[y1,x1]``.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.core.errors import ConfigError, ShapeError
from app.core.schemas import PRESET_NAMES, AugmentSettings

logger = logging.getLogger(__name__)

# Aspect ratio range for random crops
ASPECT_MIN = 3.0 / 4.0
ASPECT_MAX = 4.0 / 3.0

# Color distortion ranges, scaled by strength s
JITTER_SCALE = 0.8  # brightness/contrast/saturation factor in [1 - 0.8s, 1 + 0.8s]
HUE_SCALE = 0.2  # hue shift in [-0.2s, 0.2s] turns
GRAYSCALE_PROBABILITY = 0.2
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

_RGB_TO_YIQ = np.array([
    [0.299, 0.587, 0.114],
    [0.596, -0.274, -0.322],
    [0.211, -0.523, 0.312],
])
_YIQ_TO_RGB = np.linalg.inv(_RGB_TO_YIQ)


@dataclass(frozen=True)
class RngStream:
    """Splittable random stream: a seed plus a path of integer keys."""
    seed: int
    path: Tuple[int, ...] = ()

    def child(self, *keys: int) -> "RngStream":
        return RngStream(self.seed, self.path + tuple(int(k) for k in keys))

    def generator(self) -> np.random.Generator:
        sequence = np.random.SeedSequence(entropy=self.seed & (2**64 - 1), spawn_key=self.path)
        return np.random.Generator(np.random.PCG64(sequence))


class RandomCropResize(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")
    kind: Literal["crop"] = "crop"
    min_area_fraction: float = Field(0.3, gt=0, le=1)
    max_area_fraction: float = Field(1.0, gt=0, le=1)

    @model_validator(mode="after")
    def _ordered(self) -> "RandomCropResize":
        if self.min_area_fraction > self.max_area_fraction:
            raise ValueError("min_area_fraction must not exceed max_area_fraction")
        return self


class RandomHorizontalFlip(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")
    kind: Literal["flip"] = "flip"
    probability: float = Field(0.5, ge=0, le=1)


class ColorDistortion(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")
    kind: Literal["color"] = "color"
    strength: float = Field(0.5, ge=0)


AugmentOp = Union[RandomCropResize, RandomHorizontalFlip, ColorDistortion]


class AugmentPipeline(BaseModel):
    """Ordered transforms; application order is list order."""
    model_config = ConfigDict(frozen=True)
    name: str
    ops: List[AugmentOp] = Field(default_factory=list)


@dataclass
class ViewPair:
    x1: np.ndarray
    x2: np.ndarray
    source_index: int


def preset(name: str, settings: Optional[AugmentSettings] = None) -> AugmentPipeline:
    """Build one of the seven ablation presets."""
    settings = settings or AugmentSettings()
    crop = RandomCropResize(min_area_fraction=settings.crop_min_area, max_area_fraction=settings.crop_max_area)
    flip = RandomHorizontalFlip(probability=settings.flip_probability)
    color = ColorDistortion(strength=settings.color_strength)
    table = {
        "crop": [crop],
        "flip": [flip],
        "color": [color],
        "crop_color": [crop, color],
        "flip_crop": [flip, crop],
        "all": [crop, flip, color],
        "none": [],
    }
    if name not in table:
        raise ConfigError(f"unknown augmentation preset '{name}' (expected one of {', '.join(PRESET_NAMES)})")
    return AugmentPipeline(name=name, ops=table[name])


def to_float_image(img: np.ndarray) -> np.ndarray:
    """uint8 images scale to [0, 1]; float images are taken as already scaled."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ShapeError(f"expected an H×W×3 image, got {list(img.shape)}")
    if img.dtype == np.uint8:
        return img.astype(np.float64) / 255.0
    return img.astype(np.float64)


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resize of an H×W×C float image."""
    h, w = img.shape[:2]

    def axis(src: int, out: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        if out > 1:
            coords = np.arange(out, dtype=np.float64) * (src - 1) / (out - 1)
        else:
            coords = np.zeros(1)
        lo = np.floor(coords).astype(np.int64)
        hi = np.minimum(lo + 1, src - 1)
        return lo, hi, coords - lo

    y0, y1, wy = axis(h, out_h)
    x0, x1, wx = axis(w, out_w)
    wy = wy[:, None, None]
    wx = wx[None, :, None]
    return (
        (1 - wy) * (1 - wx) * img[y0][:, x0]
        + (1 - wy) * wx * img[y0][:, x1]
        + wy * (1 - wx) * img[y1][:, x0]
        + wy * wx * img[y1][:, x1]
    )


def luminance(img: np.ndarray) -> np.ndarray:
    return img[..., 0] * LUMA_WEIGHTS[0] + img[..., 1] * LUMA_WEIGHTS[1] + img[..., 2] * LUMA_WEIGHTS[2]


def to_grayscale(img: np.ndarray) -> np.ndarray:
    lum = luminance(img)
    return np.stack([lum, lum, lum], axis=-1)


def hue_rotate(img: np.ndarray, turns: float) -> np.ndarray:
    """Rotate chroma in YIQ space by ``turns`` of a full circle."""
    angle = 2.0 * math.pi * turns
    cos, sin = math.cos(angle), math.sin(angle)
    rotation = np.array([[1.0, 0.0, 0.0], [0.0, cos, -sin], [0.0, sin, cos]])
    matrix = _YIQ_TO_RGB @ rotation @ _RGB_TO_YIQ
    # fixed channel summation order, no BLAS reduction
    return np.stack(
        [img[..., 0] * row[0] + img[..., 1] * row[1] + img[..., 2] * row[2] for row in matrix], axis=-1
    )


def _crop_resize(img: np.ndarray, op: RandomCropResize, gen: np.random.Generator) -> np.ndarray:
    h, w = img.shape[:2]
    area = gen.uniform(op.min_area_fraction, op.max_area_fraction) * h * w
    ratio = gen.uniform(ASPECT_MIN, ASPECT_MAX)
    crop_w = min(max(int(round(math.sqrt(area * ratio))), 1), w)
    crop_h = min(max(int(round(math.sqrt(area / ratio))), 1), h)
    top = int(gen.integers(0, h - crop_h + 1))
    left = int(gen.integers(0, w - crop_w + 1))
    return resize_bilinear(img[top : top + crop_h, left : left + crop_w], h, w)


def _flip(img: np.ndarray, op: RandomHorizontalFlip, gen: np.random.Generator) -> np.ndarray:
    if gen.random() < op.probability:
        return img[:, ::-1]
    return img


def _color(img: np.ndarray, op: ColorDistortion, gen: np.random.Generator) -> np.ndarray:
    s = op.strength
    brightness = gen.uniform(1 - JITTER_SCALE * s, 1 + JITTER_SCALE * s)
    contrast = gen.uniform(1 - JITTER_SCALE * s, 1 + JITTER_SCALE * s)
    saturation = gen.uniform(1 - JITTER_SCALE * s, 1 + JITTER_SCALE * s)
    hue = gen.uniform(-HUE_SCALE * s, HUE_SCALE * s)
    gray_draw = gen.random()

    out = img * brightness
    mean = math.fsum(luminance(out).ravel().tolist()) / (out.shape[0] * out.shape[1])
    out = (out - mean) * contrast + mean
    lum = luminance(out)[..., None]
    out = (out - lum) * saturation + lum
    out = np.clip(hue_rotate(out, hue), 0.0, 1.0)
    if gray_draw < GRAYSCALE_PROBABILITY:
        out = to_grayscale(out)
    return np.clip(out, 0.0, 1.0)


_KERNELS = {"crop": _crop_resize, "flip": _flip, "color": _color}


def apply(pipeline: AugmentPipeline, img: np.ndarray, rng: RngStream) -> np.ndarray:
    """Run the pipeline on one H×W×3 image; returns float32 values in [0, 1]."""
    out = to_float_image(img)
    gen = rng.generator()
    for op in pipeline.ops:
        out = _KERNELS[op.kind](out, op, gen)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def make_view_pair(img: np.ndarray, pipeline: AugmentPipeline, rng: RngStream, source_index: int = 0) -> ViewPair:
    """Two independent draws of the pipeline on the same image."""
    return ViewPair(
        x1=apply(pipeline, img, rng.child(0)),
        x2=apply(pipeline, img, rng.child(1)),
        source_index=source_index,
    )


def to_nchw(images: Sequence[np.ndarray]) -> np.ndarray:
    """Stack H×W×3 float images into an N×3×H×W batch."""
    return np.stack(images, axis=0).transpose(0, 3, 1, 2).astype(np.float32)


def augment_batch(images: np.ndarray, indices: Sequence[int], pipeline: AugmentPipeline,
                  stream: RngStream) -> np.ndarray:
    """One augmented view per image, each drawn from ``stream.child(index)``."""
    return to_nchw([apply(pipeline, images[i], stream.child(i)) for i in indices])


def view_pair_batch(images: np.ndarray, indices: Sequence[int], pipeline: AugmentPipeline,
                    stream: RngStream) -> np.ndarray:
    """2N×3×H×W batch interleaved as (x1_0, x2_0, x1_1, x2_1, ...)."""
    views: List[np.ndarray] = []
    for i in indices:
        pair = make_view_pair(images[i], pipeline, stream.child(i), source_index=int(i))
        views.extend([pair.x1, pair.x2])
    return to_nchw(views)


def images_to_batch(images: np.ndarray) -> np.ndarray:
    """Unaugmented N×H×W×3 uint8 images as an N×3×H×W float32 batch in [0, 1]."""
    images = np.asarray(images)
    if images.ndim != 4 or images.shape[3] != 3:
        raise ShapeError(f"expected N×H×W×3 images, got {list(images.shape)}")
    return (images.astype(np.float64) / 255.0).astype(np.float32).transpose(0, 3, 1, 2)
