"""
Pydantic models for datasets, architectures, training configs, metrics and
experiment files.
"""
from typing import Annotated, Dict, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# Augmentation preset names, in the order of the fine-tuning ablation table
PRESET_NAMES = ("crop", "flip", "color", "crop_color", "flip_crop", "all", "none")

# Split tag codes stored per image index
SPLIT_TRAIN = 0
SPLIT_VAL = 1
SPLIT_TEST = 2
SPLIT_CODES = {"train": SPLIT_TRAIN, "val": SPLIT_VAL, "test": SPLIT_TEST}


class StrictModel(BaseModel):
    """Base for config-file models: unknown keys are errors."""
    model_config = ConfigDict(extra="forbid")


class SgdHyper(StrictModel):
    """SGD with momentum; defaults follow the distillation hyper-parameter table."""
    learning_rate: float = Field(0.01, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    weight_decay: float = Field(0.0001, ge=0)
    epochs: int = Field(100, gt=0)


class LabelBudget(StrictModel):
    """Share of the training split whose labels are visible to supervised stages."""
    fraction: float = 1.0  # (0, 1], checked by split_and_subsample
    seed: int = 0
    stratified: bool = True


class SyntheticShapesSpec(StrictModel):
    """Procedural K-class dataset: one shape/hue template per class plus pixel noise."""
    kind: Literal["shapes"] = "shapes"
    num_classes: int = 5  # >= 2, checked by generate_shapes
    per_class: int = Field(100, gt=0)
    image_size: Literal[32] = 32
    noise_std: float = Field(0.0, ge=0)
    seed: int = 0
    val_fraction: float = Field(0.1, ge=0, lt=1)
    test_fraction: float = Field(0.2, ge=0, lt=1)

    @property
    def name(self) -> str:
        return f"shapes_k{self.num_classes}"


class CifarSpec(StrictModel):
    """CIFAR binary batches on disk."""
    kind: Literal["cifar10", "cifar100"]
    path: str
    val_fraction: float = Field(0.1, ge=0, lt=1)
    seed: int = 0

    @property
    def name(self) -> str:
        return self.kind

    @property
    def num_classes(self) -> int:
        return 10 if self.kind == "cifar10" else 100


DatasetSpec = Annotated[Union[SyntheticShapesSpec, CifarSpec], Field(discriminator="kind")]


class ImageDataset(BaseModel):
    """Images (N×H×W×3, uint8) with labels in [0, K) and a split tag per index."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    name: str
    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    splits: np.ndarray

    @model_validator(mode="after")
    def _check_invariants(self) -> "ImageDataset":
        n = self.images.shape[0]
        if self.images.ndim != 4 or self.images.shape[3] != 3 or self.images.dtype != np.uint8:
            raise ValueError(f"images must be uint8 N×H×W×3, got {self.images.dtype} {list(self.images.shape)}")
        if self.labels.shape != (n,) or self.splits.shape != (n,):
            raise ValueError("labels and split tags need one entry per image")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if n and not np.isin(self.splits, list(SPLIT_CODES.values())).all():
            raise ValueError("unknown split tag")
        return self

    def __len__(self) -> int:
        return int(self.images.shape[0])

    def indices(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.splits == SPLIT_CODES[split])

    def subset(self, indices: np.ndarray, name: Optional[str] = None) -> "ImageDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return ImageDataset(
            name=name or self.name,
            images=self.images[indices],
            labels=self.labels[indices],
            num_classes=self.num_classes,
            splits=self.splits[indices],
        )

    def split(self, split: str) -> "ImageDataset":
        return self.subset(self.indices(split), name=f"{self.name}:{split}")

    def class_counts(self) -> List[int]:
        return np.bincount(self.labels, minlength=self.num_classes).tolist()


class AugmentSettings(StrictModel):
    """Constants shared by the augmentation presets."""
    crop_min_area: float = Field(0.3, gt=0, le=1)
    crop_max_area: float = Field(1.0, gt=0, le=1)
    flip_probability: float = Field(0.5, ge=0, le=1)
    color_strength: float = Field(0.5, ge=0)

    @model_validator(mode="after")
    def _check_area(self) -> "AugmentSettings":
        if self.crop_min_area > self.crop_max_area:
            raise ValueError("crop_min_area must not exceed crop_max_area")
        return self


class EncoderArch(StrictModel):
    """Desk-scale encoder: residual (mini_res) or plain (mini_plain) conv stages."""
    family: Literal["mini_res", "mini_plain"] = "mini_res"
    width: int = 16  # >= 4, checked by build_encoder
    depth: int = 3  # 1..5, checked by build_encoder

    @property
    def feature_dim(self) -> int:
        return self.width * 2 ** (self.depth - 1)


class ContrastConfig(StrictModel):
    """Contrastive pretraining settings; batch_size counts source images."""
    temperature: float = Field(1.0, gt=0)
    batch_size: int = Field(32, ge=2)
    epochs: int = Field(10, gt=0)
    optimizer: SgdHyper = Field(default_factory=SgdHyper)
    projection_hidden: Optional[int] = None  # defaults to the encoder feature_dim
    projection_dim: int = Field(32, gt=0)


class DistillConfig(StrictModel):
    """Teacher-forcing distillation settings."""
    temperature: float = Field(1.0, gt=0)
    alpha: float = Field(0.0, ge=0, le=1)
    optimizer: SgdHyper = Field(default_factory=SgdHyper)
    early_stop_patience: int = Field(10, gt=0)
    batch_size: int = Field(64, gt=0)
    augment_preset: Optional[str] = None  # None: unaugmented batches
    student_init: Literal["pretrained", "random"] = "pretrained"
    student_head_hidden: int = Field(64, gt=0)
    student_pretrain_epochs: int = Field(3, gt=0)

    @field_validator("augment_preset")
    @classmethod
    def _known_preset(cls, value: Optional[str]) -> Optional[str]:
        if value is not None and value not in PRESET_NAMES:
            raise ValueError(f"unknown augmentation preset '{value}'")
        return value


class FinetuneConfig(StrictModel):
    """Supervised stage on top of an encoder."""
    mode: Literal["linear_probe", "full"] = "linear_probe"
    optimizer: SgdHyper = Field(default_factory=lambda: SgdHyper(epochs=30))
    batch_size: int = Field(32, gt=0)
    max_iterations: Optional[int] = Field(None, gt=0)  # caps optimizer steps when set


class EpochRecord(BaseModel):
    """Per-epoch measurements."""
    epoch: int
    train_loss: float
    val_accuracy: Optional[float] = None
    val_agreement: Optional[float] = None


class EvaluationResult(BaseModel):
    """Top-1 accuracy with its per-class breakdown."""
    accuracy: float
    per_class_accuracy: List[Optional[float]]
    count: int


class RunMetrics(BaseModel):
    """Everything one training run measured."""
    run_id: str
    stage: str  # pretrain / finetune / distill / transfer
    experiment: str
    seed: int
    config_fingerprint: str
    epochs: List[EpochRecord] = Field(default_factory=list)
    test_accuracy: Optional[float] = None
    test_agreement: Optional[float] = None
    per_class_accuracy: List[Optional[float]] = Field(default_factory=list)
    best_epoch: Optional[int] = None
    steps: int = 0
    wall_clock_s: float = 0.0
    labels: Dict[str, Union[str, int, float]] = Field(default_factory=dict)


class Checkpoint(BaseModel):
    """Named parameter arrays plus the descriptor needed to rebuild the model."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    params: Dict[str, np.ndarray]
    descriptor: str
    step: int = 0
    config_fingerprint: str = ""


class PretrainSection(StrictModel):
    preset: str = "all"
    contrast: ContrastConfig = Field(default_factory=ContrastConfig)

    @field_validator("preset")
    @classmethod
    def _known_preset(cls, value: str) -> str:
        if value not in PRESET_NAMES:
            raise ValueError(f"unknown augmentation preset '{value}'")
        return value


class FinetuneSection(FinetuneConfig):
    presets: List[str] = Field(default_factory=lambda: ["all"])
    label_budget: LabelBudget = Field(default_factory=LabelBudget)

    @field_validator("presets")
    @classmethod
    def _known_presets(cls, value: List[str]) -> List[str]:
        unknown = [p for p in value if p not in PRESET_NAMES]
        if unknown or not value:
            raise ValueError(f"unknown or empty augmentation presets: {unknown}")
        return value


class DistillSection(DistillConfig):
    teacher: EncoderArch = Field(default_factory=lambda: EncoderArch(family="mini_res", width=32))
    students: List[EncoderArch] = Field(
        default_factory=lambda: [EncoderArch(family="mini_res", width=16), EncoderArch(family="mini_plain", width=16)]
    )


class TransferSection(FinetuneConfig):
    """Transfer defaults: lr 0.1, no weight decay, 30 epochs, crop+flip, batch sizes 32 and 64."""
    optimizer: SgdHyper = Field(default_factory=lambda: SgdHyper(learning_rate=0.1, weight_decay=0.0, epochs=30))
    datasets: List[DatasetSpec] = Field(default_factory=list)
    batch_sizes: List[int] = Field(default_factory=lambda: [32, 64])
    preset: str = "flip_crop"
    label_budget: LabelBudget = Field(default_factory=LabelBudget)

    @field_validator("preset")
    @classmethod
    def _known_preset(cls, value: str) -> str:
        if value not in PRESET_NAMES:
            raise ValueError(f"unknown augmentation preset '{value}'")
        return value


ExperimentKind = Literal["pretrain", "finetune", "distill", "transfer", "exp-augment", "exp-distill", "exp-transfer"]


class ExperimentConfig(StrictModel):
    """Declarative description of one CLI run."""
    kind: ExperimentKind
    name: str = "simcl"
    dataset: DatasetSpec = Field(default_factory=SyntheticShapesSpec)
    encoder: EncoderArch = Field(default_factory=EncoderArch)
    augment: AugmentSettings = Field(default_factory=AugmentSettings)
    pretrain: PretrainSection = Field(default_factory=PretrainSection)
    finetune: FinetuneSection = Field(default_factory=FinetuneSection)
    distill: DistillSection = Field(default_factory=DistillSection)
    transfer: TransferSection = Field(default_factory=TransferSection)
    seeds: List[int] = Field(default_factory=lambda: [0])
    encoder_checkpoint: Optional[str] = None
    teacher_checkpoint: Optional[str] = None
    output_dir: Optional[str] = None

    @field_validator("seeds")
    @classmethod
    def _non_empty(cls, value: List[int]) -> List[int]:
        if not value:
            raise ValueError("at least one seed is required")
        return value


class ReportBundle(BaseModel):
    """Paths written by `simcl report`."""
    summary_table: str
    series_files: List[str] = Field(default_factory=list)
    run_count: int = 0
