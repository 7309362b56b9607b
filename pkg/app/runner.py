"""
Experiment orchestration.

Binds an ExperimentConfig to the training procedures and writes, per run, a
metrics CSV, a JSON summary and (for trained models) a checkpoint under the
output directory.

Run kinds:
    pretrain      contrastive pretraining; one encoder checkpoint per seed
    finetune      fine-tune ``encoder_checkpoint`` once per preset in finetune.presets
    distill       distill ``teacher_checkpoint`` into every student architecture
    transfer      fine-tune ``encoder_checkpoint`` on each dataset × batch size
    exp-augment   pretrain + fine-tune with each of the seven presets
    exp-distill   pretrain and fine-tune the teacher, then distill
    exp-transfer  pretrain, then transfer to synthetic sets of 2, 5, 10 and 20 classes

Checkpoint paths may contain ``{seed}``, replaced by the run seed.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

from app.core.augment import AugmentPipeline, preset
from app.core.config import config_fingerprint
from app.core.errors import ConfigError
from app.core.exporter import checkpoint_path, write_run_artifacts
from app.core.learn import RunTag, TrainResult, build_student, distill, finetune, frozen_copy, pretrain
from app.core.nets import ModelAssembly, assembly_from_checkpoint, encoder_descriptor, param_count
from app.core.schemas import (
    PRESET_NAMES,
    Checkpoint,
    EncoderArch,
    ExperimentConfig,
    ImageDataset,
    RunMetrics,
    SyntheticShapesSpec,
)
from app.core.transfer import grid_map, transfer_run
from app.services.checkpoint import load_checkpoint, save_checkpoint
from app.services.datasets import load_dataset
from app.services.splits import SplitResult, split_and_subsample

logger = logging.getLogger(__name__)

SWEEP_CLASS_COUNTS = (2, 5, 10, 20)


@dataclass
class RunContext:
    """One seed's share of an experiment."""
    cfg: ExperimentConfig
    out_dir: Path
    fingerprint: str
    seed: int

    def tag(self, label: str, stage: str, labels: Optional[Dict[str, object]] = None) -> RunTag:
        return RunTag(
            run_id=f"{stage}-{label}-s{self.seed}",
            experiment=self.cfg.kind,
            fingerprint=self.fingerprint,
            labels=labels or {},
        )

    def pipeline(self, name: str) -> AugmentPipeline:
        return preset(name, self.cfg.augment)

    def record(self, result: TrainResult) -> RunMetrics:
        write_run_artifacts(result.metrics, self.out_dir)
        save_checkpoint(result.checkpoint, str(checkpoint_path(self.out_dir, result.metrics.run_id)))
        return result.metrics

    def checkpoint_file(self, template: Optional[str], key: str) -> str:
        if not template:
            raise ConfigError(f"a '{self.cfg.kind}' run needs a checkpoint path", key=key)
        return template.replace("{seed}", str(self.seed))


def _parts(ds: ImageDataset, ctx: RunContext) -> SplitResult:
    return split_and_subsample(ds, ctx.cfg.finetune.label_budget)


def _pretrain_encoder(
    ctx: RunContext, ds: ImageDataset, preset_name: str, arch: EncoderArch, label: str, runs: List[RunMetrics]
) -> Checkpoint:
    result = pretrain(
        ds.split("train"), ctx.pipeline(preset_name), ctx.cfg.pretrain.contrast, ctx.seed, arch,
        ctx.tag(label, "pretrain", {"preset": preset_name, "encoder": encoder_descriptor(arch)}),
    )
    runs.append(ctx.record(result))
    return result.checkpoint


def _finetune_preset(
    ctx: RunContext, encoder_ckpt: Checkpoint, parts: SplitResult, preset_name: str, label: str,
    extra: Optional[Dict[str, object]] = None,
) -> TrainResult:
    section = ctx.cfg.finetune
    labels: Dict[str, object] = {"preset": preset_name, "mode": section.mode, **(extra or {})}
    return finetune(
        encoder_ckpt, parts.labeled, ctx.pipeline(preset_name), section.mode, section, ctx.seed,
        val=parts.val, test=parts.test, tag=ctx.tag(label, "finetune", labels),
    )


def _distill_students(ctx: RunContext, teacher: ModelAssembly, ds: ImageDataset, parts: SplitResult,
                      runs: List[RunMetrics]) -> None:
    section = ctx.cfg.distill
    # labels stay hidden from the student unless alpha > 0
    transfer_set = parts.unlabeled if len(parts.unlabeled) else ds.split("train")
    teacher_params = param_count(teacher)
    for arch in section.students:
        student = build_student(
            arch, transfer_set, section, ds.num_classes, ctx.seed, ctx.cfg.pretrain.contrast,
            ctx.pipeline(ctx.cfg.pretrain.preset),
        )
        label = encoder_descriptor(arch)
        labels = {
            "student": label,
            "teacher": teacher.encoder.descriptor,
            "student_params": param_count(student),
            "teacher_params": teacher_params,
        }
        logger.info(f"[seed {ctx.seed}] distilling {teacher.descriptor} ({teacher_params} params) into "
                    f"{student.descriptor} ({labels['student_params']} params)")
        result = distill(
            teacher, student, transfer_set, section, ctx.seed, val=parts.val, test=parts.test,
            tag=ctx.tag(label, "distill", labels), settings=ctx.cfg.augment,
        )
        runs.append(ctx.record(result))


def _transfer(ctx: RunContext, encoder_ckpt: Checkpoint, datasets: Sequence[ImageDataset],
              runs: List[RunMetrics]) -> None:
    section = ctx.cfg.transfer
    result = transfer_run(
        encoder_ckpt, datasets, section.mode, section, section.batch_sizes, [ctx.seed],
        ctx.pipeline(section.preset), section.label_budget, experiment=ctx.cfg.kind, fingerprint=ctx.fingerprint,
    )
    for metrics in result.runs:
        write_run_artifacts(metrics, ctx.out_dir)
        runs.append(metrics)
    logger.info(f"[seed {ctx.seed}] transfer table:\n{result.table.to_string(index=False)}")


def _transfer_datasets(ctx: RunContext, default: ImageDataset) -> List[ImageDataset]:
    specs = ctx.cfg.transfer.datasets
    if specs:
        return [load_dataset(spec) for spec in specs]
    if ctx.cfg.kind == "exp-transfer":
        if not isinstance(ctx.cfg.dataset, SyntheticShapesSpec):
            raise ConfigError("exp-transfer without transfer.datasets needs a synthetic base dataset", key="dataset")
        return [load_dataset(ctx.cfg.dataset.model_copy(update={"num_classes": k})) for k in SWEEP_CLASS_COUNTS]
    return [default]


# Run kinds


def _run_pretrain(ctx: RunContext) -> List[RunMetrics]:
    runs: List[RunMetrics] = []
    name = ctx.cfg.pretrain.preset
    _pretrain_encoder(ctx, load_dataset(ctx.cfg.dataset), name, ctx.cfg.encoder, name, runs)
    return runs


def _run_finetune(ctx: RunContext) -> List[RunMetrics]:
    path = ctx.checkpoint_file(ctx.cfg.encoder_checkpoint, "encoder_checkpoint")
    encoder_ckpt = load_checkpoint(path, expected_descriptor=encoder_descriptor(ctx.cfg.encoder))
    parts = _parts(load_dataset(ctx.cfg.dataset), ctx)
    return [
        ctx.record(_finetune_preset(ctx, encoder_ckpt, parts, name, name))
        for name in ctx.cfg.finetune.presets
    ]


def _run_distill(ctx: RunContext) -> List[RunMetrics]:
    path = ctx.checkpoint_file(ctx.cfg.teacher_checkpoint, "teacher_checkpoint")
    teacher = assembly_from_checkpoint(load_checkpoint(path), freeze_encoder=True, freeze_head=True)
    ds = load_dataset(ctx.cfg.dataset)
    runs: List[RunMetrics] = []
    _distill_students(ctx, teacher, ds, _parts(ds, ctx), runs)
    return runs


def _run_transfer(ctx: RunContext) -> List[RunMetrics]:
    path = ctx.checkpoint_file(ctx.cfg.encoder_checkpoint, "encoder_checkpoint")
    encoder_ckpt = load_checkpoint(path, expected_descriptor=encoder_descriptor(ctx.cfg.encoder))
    runs: List[RunMetrics] = []
    _transfer(ctx, encoder_ckpt, _transfer_datasets(ctx, load_dataset(ctx.cfg.dataset)), runs)
    return runs


def _run_exp_augment(ctx: RunContext) -> List[RunMetrics]:
    ds = load_dataset(ctx.cfg.dataset)
    parts = _parts(ds, ctx)
    runs: List[RunMetrics] = []
    for name in PRESET_NAMES:
        encoder_ckpt = _pretrain_encoder(ctx, ds, name, ctx.cfg.encoder, name, runs)
        runs.append(ctx.record(_finetune_preset(ctx, encoder_ckpt, parts, name, name)))
    return runs


def _run_exp_distill(ctx: RunContext) -> List[RunMetrics]:
    ds = load_dataset(ctx.cfg.dataset)
    parts = _parts(ds, ctx)
    runs: List[RunMetrics] = []
    arch = ctx.cfg.distill.teacher
    name = ctx.cfg.pretrain.preset
    encoder_ckpt = _pretrain_encoder(ctx, ds, name, arch, "teacher", runs)
    trained = _finetune_preset(ctx, encoder_ckpt, parts, ctx.cfg.finetune.presets[0], "teacher", {"role": "teacher"})
    runs.append(ctx.record(trained))
    _distill_students(ctx, frozen_copy(trained.assembly), ds, parts, runs)
    return runs


def _run_exp_transfer(ctx: RunContext) -> List[RunMetrics]:
    ds = load_dataset(ctx.cfg.dataset)
    runs: List[RunMetrics] = []
    name = ctx.cfg.pretrain.preset
    encoder_ckpt = _pretrain_encoder(ctx, ds, name, ctx.cfg.encoder, name, runs)
    _transfer(ctx, encoder_ckpt, _transfer_datasets(ctx, ds), runs)
    return runs


RUN_KINDS: Dict[str, Callable[[RunContext], List[RunMetrics]]] = {
    "pretrain": _run_pretrain,
    "finetune": _run_finetune,
    "distill": _run_distill,
    "transfer": _run_transfer,
    "exp-augment": _run_exp_augment,
    "exp-distill": _run_exp_distill,
    "exp-transfer": _run_exp_transfer,
}


def run_seed(ctx: RunContext) -> List[RunMetrics]:
    logger.info(f"Running {ctx.cfg.kind} '{ctx.cfg.name}' with seed {ctx.seed}")
    return RUN_KINDS[ctx.cfg.kind](ctx)


def run_experiment(
    cfg: ExperimentConfig,
    out_dir: Path,
    seeds: Optional[Sequence[int]] = None,
    threads: int = 1,
) -> List[RunMetrics]:
    """
    Execute every seed of an experiment.

    Args:
        cfg: Validated experiment config
        out_dir: Output directory (runs/ and checkpoints/ are created inside)
        seeds: Seeds overriding ``cfg.seeds``
        threads: Worker processes; seeds run concurrently when > 1

    Returns:
        RunMetrics of every run, seed-major in config order
    """
    seeds = list(seeds) if seeds else list(cfg.seeds)
    contexts = [RunContext(cfg, Path(out_dir), config_fingerprint(cfg), seed) for seed in seeds]
    per_seed = grid_map(run_seed, contexts, threads)
    runs = [metrics for group in per_seed for metrics in group]
    logger.info(f"{cfg.kind} '{cfg.name}': {len(runs)} runs over {len(seeds)} seeds written to {out_dir}")
    return runs
