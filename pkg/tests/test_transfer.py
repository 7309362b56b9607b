import numpy as np
import pytest

from app.core.augment import preset
from app.core.errors import ConfigError, ContractError
from app.core.nets import assemble, build_encoder, encoder_checkpoint
from app.core.schemas import SPLIT_TEST, SPLIT_TRAIN, FinetuneConfig, LabelBudget, RunMetrics, SgdHyper
from app.core.transfer import TransferResult, grid_map, transfer_run, transfer_table

from tests.conftest import color_blobs


def _run(dataset, num_classes, batch_size, seed, accuracy):
    return RunMetrics(
        run_id=f"transfer-{dataset}-b{batch_size}-s{seed}", stage="transfer", experiment="exp-transfer", seed=seed,
        config_fingerprint="f", test_accuracy=accuracy,
        labels={"dataset": dataset, "num_classes": num_classes, "batch_size": batch_size},
    )


@pytest.fixture
def encoder_ckpt(tiny_arch):
    return encoder_checkpoint(assemble(build_encoder(tiny_arch, seed=0), None, False))


@pytest.fixture
def targets():
    return [
        color_blobs(per_class=10, num_classes=3, seed=1).model_copy(update={"name": "blobs_k3"}),
        color_blobs(per_class=10, num_classes=2, seed=2).model_copy(update={"name": "blobs_k2"}),
    ]


def test_grid_map_keeps_job_order():
    jobs = [-3, 1, -2, 5, -8]
    assert grid_map(abs, jobs, threads=1) == [3, 1, 2, 5, 8]
    assert grid_map(abs, jobs, threads=2) == [3, 1, 2, 5, 8]
    assert grid_map(abs, [], threads=4) == []


def test_table_averages_seeds_and_sorts_by_class_count():
    runs = [
        _run("shapes_k10", 10, 32, 0, 0.6),
        _run("shapes_k10", 10, 32, 1, 0.8),
        _run("shapes_k2", 2, 32, 0, 1.0),
        _run("shapes_k2", 2, 64, 0, 0.9),
        _run("shapes_k10", 10, 64, 0, 0.5),
    ]
    table = transfer_table(runs)
    assert table["num_classes"].tolist() == [2, 10]
    assert table[32].tolist() == pytest.approx([1.0, 0.7])
    assert table[64].tolist() == pytest.approx([0.9, 0.5])

    series = TransferResult(runs, table).series()
    assert series[32] == [(2, 1.0), (10, pytest.approx(0.7))]
    assert series[64] == [(2, 0.9), (10, 0.5)]


def test_transfer_grid(encoder_ckpt, targets):
    cfg = FinetuneConfig(optimizer=SgdHyper(learning_rate=0.1, weight_decay=0.0, epochs=1))
    result = transfer_run(
        encoder_ckpt, targets, "linear_probe", cfg, batch_sizes=[4, 8], seeds=[0], pipeline=preset("flip_crop"),
        budget=LabelBudget(fraction=1.0), experiment="exp-transfer", fingerprint="abc",
    )
    assert len(result.runs) == 4
    assert {run.stage for run in result.runs} == {"transfer"}
    assert {run.experiment for run in result.runs} == {"exp-transfer"}
    assert result.runs[0].run_id == "transfer-blobs_k3-b4-s0"
    assert result.runs[0].labels["preset"] == "flip_crop"
    assert result.table["dataset"].tolist() == ["blobs_k2", "blobs_k3"]
    assert sorted(result.series()) == [4, 8]
    assert all(0.0 <= run.test_accuracy <= 1.0 for run in result.runs)


def test_transfer_grid_is_identical_across_worker_counts(encoder_ckpt, targets):
    cfg = FinetuneConfig(optimizer=SgdHyper(learning_rate=0.1, epochs=1))
    kwargs = dict(batch_sizes=[8], seeds=[0, 1], pipeline=preset("flip"))
    serial = transfer_run(encoder_ckpt, targets, "linear_probe", cfg, threads=1, **kwargs)
    parallel = transfer_run(encoder_ckpt, targets, "linear_probe", cfg, threads=2, **kwargs)
    assert [r.run_id for r in serial.runs] == [r.run_id for r in parallel.runs]
    assert [r.test_accuracy for r in serial.runs] == [r.test_accuracy for r in parallel.runs]
    assert [r.epochs[0].train_loss for r in serial.runs] == [r.epochs[0].train_loss for r in parallel.runs]


def test_transfer_needs_a_grid(encoder_ckpt, targets):
    cfg = FinetuneConfig()
    with pytest.raises(ConfigError):
        transfer_run(encoder_ckpt, [], "linear_probe", cfg, [32], [0], preset("flip"))
    with pytest.raises(ConfigError):
        transfer_run(encoder_ckpt, targets, "linear_probe", cfg, [], [0], preset("flip"))


def test_transfer_needs_test_images(encoder_ckpt, targets):
    no_test = targets[0].model_copy(
        update={"splits": np.where(targets[0].splits == SPLIT_TEST, SPLIT_TRAIN, targets[0].splits).astype(np.int8)}
    )
    cfg = FinetuneConfig(optimizer=SgdHyper(epochs=1))
    with pytest.raises(ContractError, match="empty test split"):
        transfer_run(encoder_ckpt, [no_test], "linear_probe", cfg, [8], [0], preset("flip"))


def test_table_refuses_unscored_runs():
    with pytest.raises(ContractError):
        transfer_table([_run("shapes_k2", 2, 32, 0, 1.0), _run("shapes_k5", 5, 32, 0, None)])
