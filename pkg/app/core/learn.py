"""
Training procedures: contrastive pretraining, supervised fine-tuning,
teacher-forcing distillation, and evaluation.
"""
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from app.core.augment import AugmentPipeline, RngStream, augment_batch, images_to_batch, preset, view_pair_batch
from app.core.errors import ConfigError, ContractError, NumericError, ShapeError, TrainingStepError
from app.core.losses import cross_entropy, distillation_loss, nt_xent_loss
from app.core.nets import (
    ModelAssembly,
    assemble,
    assembly_checkpoint,
    build_encoder,
    dense_head,
    encoder_checkpoint,
    forward,
    linear_head,
    load_encoder_weights,
    parse_descriptor,
    projection_head,
)
from app.core.optim import SgdOptimizer
from app.core.schemas import (
    AugmentSettings,
    Checkpoint,
    ContrastConfig,
    DistillConfig,
    EncoderArch,
    EpochRecord,
    EvaluationResult,
    FinetuneConfig,
    ImageDataset,
    RunMetrics,
)
from app.core.tensor import Tape, Tensor, backward

logger = logging.getLogger(__name__)

EVAL_BATCH = 256


@dataclass
class RunTag:
    """Identity of one run inside an experiment."""
    run_id: str = "run"
    experiment: str = "adhoc"
    fingerprint: str = ""
    labels: Dict[str, object] = field(default_factory=dict)

    def metrics(self, stage: str, seed: int) -> RunMetrics:
        return RunMetrics(
            run_id=self.run_id,
            stage=stage,
            experiment=self.experiment,
            seed=seed,
            config_fingerprint=self.fingerprint,
            labels=dict(self.labels),
        )


@dataclass
class TrainResult:
    assembly: ModelAssembly
    checkpoint: Checkpoint
    metrics: RunMetrics


def _train_step(procedure: str, step: int, assembly: ModelAssembly, optimizer: SgdOptimizer,
                compute_loss: Callable[[], Tensor]) -> float:
    """Forward under a fresh tape, backward, one optimizer update of the trainable parameters."""
    try:
        trainable = assembly.trainable_params()
        with Tape() as tape:
            loss = compute_loss()
        grads = backward(loss, tape, wrt=trainable.values())
        assembly.update(optimizer.step(trainable, grads))
        return loss.item()
    except (ShapeError, NumericError) as e:
        raise TrainingStepError(procedure, step, e) from e


def _batches(order: np.ndarray, batch_size: int, min_size: int = 1) -> List[np.ndarray]:
    chunks = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    return [c for c in chunks if len(c) >= min_size]


# Evaluation


def predict(assembly: ModelAssembly, images: np.ndarray, batch_size: int = EVAL_BATCH) -> np.ndarray:
    """Eval-mode outputs for uint8 images, computed in fixed-size chunks."""
    outputs = [
        forward(assembly, images_to_batch(images[i : i + batch_size]), training=False).numpy()
        for i in range(0, len(images), batch_size)
    ]
    if not outputs:
        width = assembly.head.spec.out_dim if assembly.head is not None else assembly.encoder.feature_dim
        return np.zeros((0, width), dtype=np.float32)
    return np.concatenate(outputs)


def accuracy_from_logits(logits: np.ndarray, labels: np.ndarray, num_classes: int) -> EvaluationResult:
    """Top-1 accuracy; argmax ties go to the lowest class index."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.shape != (len(labels), num_classes):
        raise ShapeError(f"logits {list(logits.shape)} do not match {len(labels)} labels × {num_classes} classes")
    predicted = np.argmax(logits, axis=1)
    correct = predicted == labels
    per_class: List[Optional[float]] = []
    for cls in range(num_classes):
        members = labels == cls
        per_class.append(float(correct[members].mean()) if members.any() else None)
    accuracy = float(correct.mean()) if len(labels) else 0.0
    return EvaluationResult(accuracy=accuracy, per_class_accuracy=per_class, count=int(len(labels)))


def evaluate(assembly: ModelAssembly, dataset: ImageDataset) -> EvaluationResult:
    if assembly.head is None or assembly.head.spec.kind == "projection":
        raise ContractError("evaluate needs a classifier head")
    return accuracy_from_logits(predict(assembly, dataset.images), dataset.labels, assembly.head.spec.out_dim)


def agreement_rate(student_logits: np.ndarray, teacher_predictions: np.ndarray) -> float:
    """Share of samples where the student's top-1 class equals the teacher's."""
    if len(teacher_predictions) == 0:
        return 0.0
    return float(np.mean(np.argmax(student_logits, axis=1) == teacher_predictions))


# Contrastive pretraining


def pretrain(
    unlabeled: ImageDataset,
    pipeline: AugmentPipeline,
    cfg: ContrastConfig,
    seed: int,
    arch: Optional[EncoderArch] = None,
    tag: Optional[RunTag] = None,
) -> TrainResult:
    """
    NT-Xent pretraining of an encoder plus projection head.

    Every step samples ``cfg.batch_size`` images, draws an (x1, x2) view pair
    per image from its own stream, and minimizes NT-Xent over the 2N
    embeddings. The returned checkpoint holds the encoder only.

    Args:
        unlabeled: Images to learn from (labels are ignored)
        pipeline: Augmentation used for both views
        cfg: Temperature, batch size, epochs and optimizer
        seed: Controls initialization, batch order and augmentation draws
        arch: Encoder architecture (defaults to mini_res w16 d3)
        tag: Run identity for the metrics record

    Returns:
        TrainResult with the encoder checkpoint and per-epoch loss
    """
    arch = arch or EncoderArch()
    tag = tag or RunTag(run_id=f"pretrain-s{seed}")
    if len(unlabeled) < 2:
        raise ContractError(f"pretraining needs at least 2 images, got {len(unlabeled)}")
    if not pipeline.ops:
        logger.warning("Pretraining with an empty augmentation pipeline: both views are identical")

    encoder = build_encoder(arch, seed)
    assembly = assemble(
        encoder, projection_head(encoder.feature_dim, cfg.projection_hidden, cfg.projection_dim), False, seed=seed
    )
    optimizer = SgdOptimizer(cfg.optimizer)
    order_rng = np.random.default_rng([seed, 2])
    views = RngStream(seed).child(0)
    metrics = tag.metrics("pretrain", seed)
    images = unlabeled.images
    start = time.time()
    step = 0

    for epoch in range(cfg.epochs):
        losses = []
        for idx in _batches(order_rng.permutation(len(unlabeled)), cfg.batch_size, min_size=2):
            batch = view_pair_batch(images, idx, pipeline, views.child(epoch))
            loss = _train_step(
                "pretrain", step, assembly, optimizer,
                lambda: nt_xent_loss(forward(assembly, batch, training=True), cfg.temperature),
            )
            losses.append(loss)
            step += 1
        metrics.epochs.append(EpochRecord(epoch=epoch, train_loss=float(np.mean(losses))))
        logger.info(f"[{tag.run_id}] pretrain epoch {epoch + 1}/{cfg.epochs}: loss {np.mean(losses):.4f}")

    metrics.steps = step
    metrics.wall_clock_s = time.time() - start
    ckpt = encoder_checkpoint(assembly, step=step, fingerprint=tag.fingerprint)
    return TrainResult(assembly, ckpt, metrics)


# Supervised fine-tuning


def finetune(
    encoder_ckpt: Checkpoint,
    labeled: ImageDataset,
    pipeline: AugmentPipeline,
    mode: str,
    cfg: FinetuneConfig,
    seed: int,
    val: Optional[ImageDataset] = None,
    test: Optional[ImageDataset] = None,
    tag: Optional[RunTag] = None,
) -> TrainResult:
    """
    Train a linear classifier on a pretrained encoder.

    ``linear_probe`` freezes the encoder; ``full`` trains everything. Training
    images pass through ``pipeline`` each epoch; evaluation is unaugmented.
    Training stops after ``cfg.optimizer.epochs`` epochs or
    ``cfg.max_iterations`` steps, whichever comes first.
    """
    tag = tag or RunTag(run_id=f"finetune-s{seed}")
    if len(labeled) == 0:
        raise ConfigError("fine-tuning needs a non-empty labeled set", key="finetune.label_budget")
    if mode not in ("linear_probe", "full"):
        raise ConfigError(f"unknown fine-tuning mode '{mode}'", key="finetune.mode")

    arch, _ = parse_descriptor(encoder_ckpt.descriptor)
    encoder = build_encoder(arch, seed)
    assembly = assemble(
        encoder, linear_head(encoder.feature_dim, labeled.num_classes), mode == "linear_probe", seed=seed
    )
    load_encoder_weights(assembly, encoder_ckpt)

    hyper = cfg.optimizer
    optimizer = SgdOptimizer(hyper)
    order_rng = np.random.default_rng([seed, 3])
    views = RngStream(seed).child(1)
    metrics = tag.metrics("finetune", seed)
    start = time.time()
    step = 0
    limit = cfg.max_iterations

    for epoch in range(hyper.epochs):
        losses = []
        for idx in _batches(order_rng.permutation(len(labeled)), cfg.batch_size):
            if limit is not None and step >= limit:
                break
            batch = augment_batch(labeled.images, idx, pipeline, views.child(epoch))
            targets = labeled.labels[idx]
            losses.append(_train_step(
                "finetune", step, assembly, optimizer,
                lambda: cross_entropy(forward(assembly, batch, training=True), targets),
            ))
            step += 1
        if not losses:
            break
        record = EpochRecord(epoch=epoch, train_loss=float(np.mean(losses)))
        if val is not None and len(val):
            record.val_accuracy = evaluate(assembly, val).accuracy
        metrics.epochs.append(record)
        logger.info(
            f"[{tag.run_id}] finetune epoch {epoch + 1}/{hyper.epochs}: loss {record.train_loss:.4f}"
            + (f", val acc {record.val_accuracy:.3f}" if record.val_accuracy is not None else "")
        )

    if test is not None and len(test):
        result = evaluate(assembly, test)
        metrics.test_accuracy = result.accuracy
        metrics.per_class_accuracy = result.per_class_accuracy
    metrics.steps = step
    metrics.wall_clock_s = time.time() - start
    return TrainResult(assembly, assembly_checkpoint(assembly, step=step, fingerprint=tag.fingerprint), metrics)


# Distillation


def build_student(
    arch: EncoderArch,
    unlabeled: ImageDataset,
    cfg: DistillConfig,
    num_classes: int,
    seed: int,
    contrast: ContrastConfig,
    pipeline: AugmentPipeline,
) -> ModelAssembly:
    """Frozen student base with a trainable dense head.

    The base is a short contrastive pretrain on ``unlabeled`` when
    ``cfg.student_init == "pretrained"``, otherwise a random initialization.
    """
    if cfg.student_init == "pretrained":
        short = contrast.model_copy(update={"epochs": cfg.student_pretrain_epochs})
        base = pretrain(
            unlabeled, pipeline, short, seed, arch, RunTag(run_id=f"student-base-{arch.family}-s{seed}")
        ).assembly.encoder
    else:
        base = build_encoder(arch, seed)
    return assemble(base, dense_head(base.feature_dim, num_classes, cfg.student_head_hidden), True, seed=seed)


def frozen_copy(assembly: ModelAssembly) -> ModelAssembly:
    """Same weights with every component frozen (teacher role)."""
    return assemble(assembly.encoder, assembly.head, freeze_encoder=True, freeze_head=True)


def distill(
    teacher: ModelAssembly,
    student: ModelAssembly,
    unlabeled: ImageDataset,
    cfg: DistillConfig,
    seed: int,
    val: Optional[ImageDataset] = None,
    test: Optional[ImageDataset] = None,
    tag: Optional[RunTag] = None,
    settings: Optional[AugmentSettings] = None,
) -> TrainResult:
    """
    Teach ``student`` to reproduce ``teacher``'s softened predictions.

    The teacher runs in evaluation mode and is never updated. After every
    epoch the student's top-1 agreement with the teacher is measured on
    ``val`` (on ``unlabeled`` when no validation images exist); training stops
    after ``cfg.early_stop_patience`` epochs without improvement and the
    best-agreement weights are restored and returned.
    """
    tag = tag or RunTag(run_id=f"distill-s{seed}")
    for role, model in (("teacher", teacher), ("student", student)):
        if model.head is None or model.head.spec.kind == "projection":
            raise ConfigError(f"{role} needs a classifier head")
    if teacher.head.spec.out_dim != student.head.spec.out_dim:
        raise ConfigError(
            f"teacher predicts {teacher.head.spec.out_dim} classes but student predicts {student.head.spec.out_dim}"
        )
    if len(unlabeled) == 0:
        raise ConfigError("distillation needs a non-empty transfer set")

    pipeline = preset(cfg.augment_preset or "none", settings)
    monitor = val if val is not None and len(val) else unlabeled
    if monitor is unlabeled:
        logger.warning(f"[{tag.run_id}] no validation images; early stopping on the transfer set")
    teacher_monitor = np.argmax(predict(teacher, monitor.images), axis=1)

    hyper = cfg.optimizer
    optimizer = SgdOptimizer(hyper)
    order_rng = np.random.default_rng([seed, 4])
    views = RngStream(seed).child(2)
    metrics = tag.metrics("distill", seed)
    start = time.time()
    step = 0
    best_agreement = -1.0
    best_state: Dict[str, np.ndarray] = student.state_dict()
    stale = 0

    for epoch in range(hyper.epochs):
        losses = []
        for idx in _batches(order_rng.permutation(len(unlabeled)), cfg.batch_size):
            batch = augment_batch(unlabeled.images, idx, pipeline, views.child(epoch))
            teacher_logits = forward(teacher, batch, training=False).data
            labels = unlabeled.labels[idx] if cfg.alpha > 0 else None
            losses.append(_train_step(
                "distill", step, student, optimizer,
                lambda: distillation_loss(
                    teacher_logits, forward(student, batch, training=True), cfg.temperature, cfg.alpha, labels
                ),
            ))
            step += 1

        agreement = agreement_rate(predict(student, monitor.images), teacher_monitor)
        metrics.epochs.append(EpochRecord(epoch=epoch, train_loss=float(np.mean(losses)), val_agreement=agreement))
        logger.info(
            f"[{tag.run_id}] distill epoch {epoch + 1}/{hyper.epochs}: loss {np.mean(losses):.4f}, "
            f"agreement {agreement:.3f}"
        )
        if agreement > best_agreement:
            best_agreement = agreement
            best_state = student.state_dict()
            metrics.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                logger.info(f"[{tag.run_id}] early stop after epoch {epoch + 1}; best epoch {metrics.best_epoch + 1}")
                break

    student.load_state(best_state)
    if test is not None and len(test):
        student_logits = predict(student, test.images)
        metrics.test_agreement = agreement_rate(student_logits, np.argmax(predict(teacher, test.images), axis=1))
        result = accuracy_from_logits(student_logits, test.labels, student.head.spec.out_dim)
        metrics.test_accuracy = result.accuracy
        metrics.per_class_accuracy = result.per_class_accuracy
    metrics.steps = step
    metrics.wall_clock_s = time.time() - start
    return TrainResult(student, assembly_checkpoint(student, step=step, fingerprint=tag.fingerprint), metrics)
