import itertools
import math

import numpy as np
import pytest

from app.core.errors import ConfigError, ContractError, ShapeError
from app.core.gradcheck import finite_diff_check
from app.core.losses import cross_entropy, distillation_loss, nt_xent_loss, positive_index
from app.core.tensor import Tensor, shadow_precision


def brute_force_nt_xent(z, temperature):
    """Scalar loops over every anchor and every candidate."""
    rows = len(z)
    unit = [row / math.sqrt(sum(v * v for v in row)) for row in z]
    total = 0.0
    for i in range(rows):
        partner = i + 1 if i % 2 == 0 else i - 1
        denominator = 0.0
        for k in range(rows):
            if k != i:
                denominator += math.exp(sum(a * b for a, b in zip(unit[i], unit[k])) / temperature)
        numerator = math.exp(sum(a * b for a, b in zip(unit[i], unit[partner])) / temperature)
        total += -math.log(numerator / denominator)
    return total / rows


def scalar_kl_distillation(teacher, student, temperature):
    """tau² · KL(softmax(t/tau) || softmax(s/tau)) averaged over rows, with plain loops."""
    total = 0.0
    for t_row, s_row in zip(teacher, student):
        t_exp = [math.exp(v / temperature) for v in t_row]
        s_exp = [math.exp(v / temperature) for v in s_row]
        p = [v / sum(t_exp) for v in t_exp]
        q = [v / sum(s_exp) for v in s_exp]
        total += sum(pi * math.log(pi / qi) for pi, qi in zip(p, q))
    return temperature**2 * total / len(teacher)


def test_positive_index_pairs_neighbours():
    np.testing.assert_array_equal(positive_index(6), [1, 0, 3, 2, 5, 4])


GRID = list(itertools.product(range(2, 9), (2, 8, 16), (0.1, 0.5, 1.0)))


@pytest.mark.parametrize("n,d,temperature", GRID)
def test_nt_xent_matches_brute_force(n, d, temperature):
    z = np.random.default_rng(n * 100 + d).standard_normal((2 * n, d))
    with shadow_precision():
        loss = nt_xent_loss(Tensor(z), temperature).item()
    assert loss == pytest.approx(brute_force_nt_xent(z, temperature), abs=1e-6)


@pytest.mark.parametrize("n", [2, 3, 5, 8])
def test_nt_xent_collapsed_embeddings(n):
    z = np.tile(np.array([[0.3, -1.2, 0.5]]), (2 * n, 1))
    with shadow_precision():
        loss = nt_xent_loss(Tensor(z), 0.5).item()
    assert loss == pytest.approx(math.log(2 * n - 1), abs=1e-6)


def test_nt_xent_orthogonal_pairs():
    z = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    with shadow_precision():
        loss = nt_xent_loss(Tensor(z), 1.0).item()
    assert loss == pytest.approx(math.log(1 + 2 * math.exp(-1)), abs=1e-6)


def test_nt_xent_is_scale_invariant():
    z = np.random.default_rng(3).standard_normal((6, 4))
    with shadow_precision():
        a = nt_xent_loss(Tensor(z), 0.5).item()
        b = nt_xent_loss(Tensor(z * 7.5), 0.5).item()
    assert a == pytest.approx(b, abs=1e-10)


def test_nt_xent_gradient():
    z = np.random.default_rng(4).standard_normal((6, 3))
    error = finite_diff_check(lambda t: nt_xent_loss(t[0], 0.5), [z], shadow=True, stencil=4, floor=1e-6)
    assert error < 1e-6


def test_nt_xent_float32_tracks_float64():
    z = np.random.default_rng(5).standard_normal((8, 16))
    with shadow_precision():
        exact = nt_xent_loss(Tensor(z), 0.1).item()
    assert nt_xent_loss(Tensor(z), 0.1).item() == pytest.approx(exact, rel=1e-5)


@pytest.mark.parametrize("rows", [2, 5])
def test_nt_xent_rejects_bad_row_counts(rows):
    with pytest.raises(ContractError):
        nt_xent_loss(Tensor(np.ones((rows, 3))), 0.5)


def test_nt_xent_rejects_non_positive_temperature():
    with pytest.raises(ConfigError):
        nt_xent_loss(Tensor(np.ones((4, 3))), 0.0)


def test_nt_xent_rejects_non_matrix():
    with pytest.raises(ShapeError):
        nt_xent_loss(Tensor(np.ones(4)), 0.5)


def test_cross_entropy_uniform_logits():
    loss = cross_entropy(Tensor(np.zeros((3, 4))), np.array([0, 1, 3])).item()
    assert loss == pytest.approx(math.log(4), rel=1e-6)


def test_cross_entropy_label_range():
    with pytest.raises(ShapeError):
        cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 3]))


@pytest.mark.parametrize("temperature", [0.5, 1.0, 2.0])
def test_distillation_zero_when_student_equals_teacher(temperature):
    logits = np.random.default_rng(6).standard_normal((5, 4)) * 3
    loss = distillation_loss(logits, Tensor(logits), temperature, alpha=0.0).item()
    assert abs(loss) <= 1e-6


def test_distillation_two_class_example():
    teacher, student = np.array([[2.0, 0.0]]), np.array([[0.0, 2.0]])
    with shadow_precision():
        loss = distillation_loss(teacher, Tensor(student), 1.0, alpha=0.0).item()
    assert loss == pytest.approx(scalar_kl_distillation(teacher, student, 1.0), abs=1e-6)
    assert loss == pytest.approx(2 * math.tanh(1.0), abs=1e-6)


@pytest.mark.parametrize("temperature", [0.5, 2.0, 4.0])
def test_distillation_matches_scalar_oracle(temperature):
    rng = np.random.default_rng(7)
    teacher, student = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    with shadow_precision():
        loss = distillation_loss(teacher, Tensor(student), temperature, alpha=0.0).item()
    assert loss == pytest.approx(scalar_kl_distillation(teacher, student, temperature), abs=1e-6)


def test_alpha_one_is_cross_entropy_and_ignores_teacher():
    rng = np.random.default_rng(8)
    student = rng.standard_normal((4, 3))
    labels = np.array([0, 2, 1, 1])
    with shadow_precision():
        a = distillation_loss(rng.standard_normal((4, 3)), Tensor(student), 2.0, 1.0, labels).item()
        b = distillation_loss(rng.standard_normal((4, 3)) * 10, Tensor(student), 2.0, 1.0, labels).item()
        ce = cross_entropy(Tensor(student), labels).item()
    assert abs(a - b) <= 1e-7
    assert a == pytest.approx(ce, abs=1e-12)


def test_mixed_alpha_interpolates():
    rng = np.random.default_rng(9)
    teacher, student = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    labels = np.array([3, 0, 1])
    with shadow_precision():
        soft = distillation_loss(teacher, Tensor(student), 2.0, 0.0).item()
        hard = cross_entropy(Tensor(student), labels).item()
        mixed = distillation_loss(teacher, Tensor(student), 2.0, 0.25, labels).item()
    assert mixed == pytest.approx(0.25 * hard + 0.75 * soft, abs=1e-10)


def test_distillation_gradient():
    rng = np.random.default_rng(10)
    teacher, student = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    build = lambda t: distillation_loss(teacher, t[0], 2.0, 0.0)  # noqa: E731
    assert finite_diff_check(build, [student], shadow=True, stencil=4, floor=1e-6) < 1e-6


def test_distillation_argument_checks():
    t = np.zeros((2, 3))
    with pytest.raises(ConfigError):
        distillation_loss(t, Tensor(t), 0.0, 0.0)
    with pytest.raises(ConfigError):
        distillation_loss(t, Tensor(t), 1.0, 1.5)
    with pytest.raises(ContractError):
        distillation_loss(t, Tensor(t), 1.0, 0.5)
    with pytest.raises(ShapeError):
        distillation_loss(np.zeros((2, 4)), Tensor(t), 1.0, 0.0)
