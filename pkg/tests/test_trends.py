"""
Learning-signal checks on the synthetic shapes data. Slow: run with ``pytest -m slow``.

The experiment-suite tests run the shipped ``exp_*`` configs end to end and
check the qualitative trends the suites exist to reproduce.
"""
from pathlib import Path

import numpy as np
import pytest

from app.core.augment import preset
from app.core.config import load_config
from app.core.exporter import augment_series, distill_series, load_final_metrics, transfer_series
from app.core.learn import build_student, distill, finetune, frozen_copy, predict, pretrain
from app.core.nets import assemble, build_encoder, encoder_checkpoint
from app.core.schemas import (
    ContrastConfig,
    DistillConfig,
    EncoderArch,
    FinetuneConfig,
    LabelBudget,
    SgdHyper,
    SyntheticShapesSpec,
)
from app.runner import run_experiment
from app.services.shapes import generate_shapes
from app.services.splits import split_and_subsample

pytestmark = pytest.mark.slow

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"
ARCH = EncoderArch(family="mini_res", width=8, depth=2)
SINGLE_OPS = ("crop", "flip", "color")
TWO_OPS = ("crop_color", "flip_crop")


@pytest.fixture(scope="module")
def shapes():
    return generate_shapes(SyntheticShapesSpec(num_classes=3, per_class=40, noise_std=0.05, seed=0))


@pytest.fixture(scope="module")
def pretrained(shapes):
    cfg = ContrastConfig(
        temperature=0.5, batch_size=16, epochs=6, projection_dim=16,
        optimizer=SgdHyper(learning_rate=0.05, epochs=6),
    )
    return pretrain(shapes.split("train"), preset("all"), cfg, seed=0, arch=ARCH)


def _suite(tmp_path_factory, name):
    out = tmp_path_factory.mktemp(name)
    run_experiment(load_config(str(CONFIG_DIR / f"{name}.yaml")), out)
    return load_final_metrics(out)


def test_contrastive_loss_decreases(pretrained):
    losses = [record.train_loss for record in pretrained.metrics.epochs]
    assert losses[-1] < losses[0]


def test_contrastive_loss_decreases_on_500_images():
    ds = generate_shapes(SyntheticShapesSpec(num_classes=5, per_class=100, seed=7))
    assert len(ds) == 500
    cfg = ContrastConfig(epochs=10, optimizer=SgdHyper(epochs=10))
    result = pretrain(ds, preset("all"), cfg, seed=7, arch=EncoderArch())
    losses = [record.train_loss for record in result.metrics.epochs]
    assert len(losses) == 10
    assert losses[-1] < losses[0]


def test_separating_frozen_encoder_classifies_exactly():
    ds = generate_shapes(SyntheticShapesSpec(num_classes=2, per_class=20))
    encoder = assemble(build_encoder(ARCH, seed=0), None, freeze_encoder=True)
    # noiseless classes collapse to one feature vector each; two distinct vectors separate them
    features = predict(encoder, ds.images)
    centres = [features[ds.labels == k].mean(axis=0) for k in range(2)]
    for k in range(2):
        np.testing.assert_allclose(features[ds.labels == k] - centres[k], 0.0, atol=1e-5)
    assert np.abs(centres[0] - centres[1]).max() > 1e-3

    cfg = FinetuneConfig(batch_size=8, optimizer=SgdHyper(learning_rate=0.1, weight_decay=0.0, epochs=30))
    result = finetune(
        encoder_checkpoint(encoder), ds.split("train"), preset("none"), "linear_probe", cfg, seed=0,
        test=ds.split("test"),
    )
    assert result.metrics.test_accuracy == 1.0


def test_frozen_encoder_classifier_beats_chance(pretrained, shapes):
    cfg = FinetuneConfig(batch_size=16, optimizer=SgdHyper(learning_rate=0.1, weight_decay=0.0, epochs=15))
    result = finetune(
        pretrained.checkpoint, shapes.split("train"), preset("flip"), "linear_probe", cfg, seed=0,
        test=shapes.split("test"),
    )
    assert result.metrics.test_accuracy > 0.6


def test_student_learns_to_agree_with_teacher(pretrained, shapes):
    parts = split_and_subsample(shapes, LabelBudget(fraction=0.5, seed=0))
    cfg = FinetuneConfig(batch_size=16, optimizer=SgdHyper(learning_rate=0.05, epochs=10))
    teacher = frozen_copy(finetune(pretrained.checkpoint, parts.labeled, preset("flip"), "full", cfg, seed=0).assembly)

    distill_cfg = DistillConfig(
        temperature=2.0, batch_size=16, early_stop_patience=5, student_init="random", student_head_hidden=32,
        optimizer=SgdHyper(learning_rate=0.05, weight_decay=0.0, epochs=15),
    )
    student = build_student(
        EncoderArch(family="mini_plain", width=8, depth=2), parts.unlabeled, distill_cfg, 3, 0,
        ContrastConfig(), preset("all"),
    )
    result = distill(teacher, student, parts.unlabeled, distill_cfg, seed=0, val=parts.val, test=parts.test)
    agreements = [record.val_agreement for record in result.metrics.epochs]
    assert max(agreements) >= agreements[0]
    assert result.metrics.test_agreement > 0.5
    assert np.isfinite([record.train_loss for record in result.metrics.epochs]).all()


# Experiment suites


def test_composed_augmentation_beats_none_and_single_ops(tmp_path_factory):
    final = _suite(tmp_path_factory, "exp_augment")
    series = augment_series(final).set_index("x")
    assert (series["n"] == 3).all()
    accuracy = series["y"]
    assert accuracy["all"] > accuracy["none"]
    best_single = max(accuracy[name] for name in SINGLE_OPS)
    for name in TWO_OPS:
        assert accuracy[name] >= best_single - 0.01, name


def test_matched_student_agrees_at_least_as_well(tmp_path_factory):
    final = _suite(tmp_path_factory, "exp_distill")
    students = final[(final["stage"] == "distill") & (final["metric"] == "agreement")]
    assert len(students) == 6
    assert (students["value"] >= 0.90).all(), students[["run_id", "value"]].to_string()

    sizes = [labels["student_params"] for labels in students["labels"]]
    assert max(sizes) <= 1.1 * min(sizes)

    agreement = distill_series(final).set_index("x")["y"]
    assert agreement["mini_res-w16-d3"] >= agreement["mini_plain-w16-d3"] - 0.01


def test_accuracy_falls_with_class_count(tmp_path_factory):
    final = _suite(tmp_path_factory, "exp_transfer")
    series = transfer_series(final)
    assert set(series["series"]) == {"batch_size=32", "batch_size=64"}
    for name, curve in series.groupby("series"):
        curve = curve.sort_values("x")
        assert curve["x"].tolist() == [2, 5, 10, 20]
        assert (curve["n"] == 3).all()
        values = curve["y"].tolist()
        rises = [after - before for before, after in zip(values, values[1:]) if after > before]
        assert len(rises) <= 1, (name, values)
        assert all(rise <= 0.02 for rise in rises), (name, values)
        assert values[0] >= 0.99, (name, values)
