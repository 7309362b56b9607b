import numpy as np
import pytest

from app.core.errors import ShapeError
from app.core.optim import SgdOptimizer, init_velocity, sgd_step
from app.core.schemas import SgdHyper
from app.core.tensor import Tensor


def _grads(pairs):
    return {param.node_id: Tensor(grad) for param, grad in pairs}


def test_single_step_closed_form():
    p = Tensor([1.0, -2.0], requires_grad=True)
    hyper = SgdHyper(learning_rate=0.1, momentum=0.9, weight_decay=0.01)
    (updated,), (velocity,) = sgd_step([p], _grads([(p, [0.5, 0.5])]), init_velocity([p]), hyper)
    expected_v = np.array([0.5 + 0.01 * 1.0, 0.5 + 0.01 * -2.0])
    np.testing.assert_allclose(velocity, expected_v, rtol=1e-6)
    np.testing.assert_allclose(updated.data, np.array([1.0, -2.0]) - 0.1 * expected_v, rtol=1e-6)
    assert updated.requires_grad


def test_momentum_accumulates():
    hyper = SgdHyper(learning_rate=1.0, momentum=0.5, weight_decay=0.0)
    p = Tensor([0.0], requires_grad=True)
    state = init_velocity([p])
    (p1,), state = sgd_step([p], _grads([(p, [1.0])]), state, hyper)
    (p2,), state = sgd_step([p1], _grads([(p1, [1.0])]), state, hyper)
    assert p1.item() == pytest.approx(-1.0)
    assert p2.item() == pytest.approx(-2.5)
    assert state[0][0] == pytest.approx(1.5)


def test_missing_gradient_is_zero():
    hyper = SgdHyper(learning_rate=0.1, momentum=0.0, weight_decay=0.0)
    p = Tensor([3.0], requires_grad=True)
    (updated,), _ = sgd_step([p], {}, init_velocity([p]), hyper)
    assert updated.item() == 3.0


def test_shape_mismatches():
    hyper = SgdHyper()
    p = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ShapeError):
        sgd_step([p], _grads([(p, [1.0, 2.0, 3.0])]), init_velocity([p]), hyper)
    with pytest.raises(ShapeError):
        sgd_step([p], {}, [np.zeros(3)], hyper)
    with pytest.raises(ShapeError):
        sgd_step([p], {}, [], hyper)


def test_optimizer_keeps_velocity_by_name():
    opt = SgdOptimizer(SgdHyper(learning_rate=1.0, momentum=0.5, weight_decay=0.0))
    params = {"w": Tensor([0.0], requires_grad=True)}
    params = opt.step(params, _grads([(params["w"], [1.0])]))
    params = opt.step(params, _grads([(params["w"], [1.0])]))
    assert params["w"].item() == pytest.approx(-2.5)
    assert set(opt.velocity) == {"w"}


def test_hyper_validation():
    with pytest.raises(ValueError):
        SgdHyper(learning_rate=0.0)
    with pytest.raises(ValueError):
        SgdHyper(momentum=1.0)
