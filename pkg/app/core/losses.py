"""
Training objectives built from tensor primitives: NT-Xent for contrastive
pretraining, cross-entropy for supervised heads and the temperature-softened
distillation loss.
"""
import logging
from typing import Optional, Union

import numpy as np

from app.core.errors import ConfigError, ContractError, ShapeError
from app.core.tensor import (
    Tensor,
    add,
    constant,
    l2_normalize_rows,
    log_softmax_rows,
    log_softmax_rows_np,
    matmul,
    mean_all,
    mul,
    scale,
    transpose,
)

logger = logging.getLogger(__name__)

# Added to self-similarities so exp() underflows to zero
SELF_MASK_VALUE = -1e9

ArrayLike = Union[Tensor, np.ndarray]


def positive_index(rows: int) -> np.ndarray:
    """Partner row of every anchor under the (x1_i, x2_i) -> rows (2i, 2i+1) layout."""
    return np.arange(rows) ^ 1


def nt_xent_loss(z: Tensor, temperature: float) -> Tensor:
    """Mean over all 2N anchors of -log softmax_{k != i}(sim(z_i, z_k) / tau)[partner(i)].

    Rows are renormalized internally, so sim is cosine similarity. The
    softmax is row-wise with max subtraction.
    """
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    if z.ndim != 2:
        raise ShapeError(f"nt_xent_loss: expected 2N×d embeddings, got {list(z.shape)}")
    rows = z.shape[0]
    if rows < 4 or rows % 2:
        raise ContractError(f"nt_xent_loss needs an even number of rows >= 4, got {rows}")

    unit = l2_normalize_rows(z)
    sim = scale(matmul(unit, transpose(unit)), 1.0 / temperature)
    masked = add(sim, constant(np.diag(np.full(rows, SELF_MASK_VALUE))))
    log_probs = log_softmax_rows(masked)

    positives = np.zeros((rows, rows))
    positives[np.arange(rows), positive_index(rows)] = 1.0
    picked = mul(log_probs, constant(positives))
    # mean over rows*rows entries, rescaled to a mean over the rows anchors
    return scale(mean_all(picked), -float(rows))


def _as_array(x: ArrayLike) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _one_hot(labels: np.ndarray, rows: int, classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (rows,):
        raise ShapeError(f"expected {rows} labels, got shape {list(labels.shape)}")
    if rows and (labels.min() < 0 or labels.max() >= classes):
        raise ShapeError(f"labels must lie in [0, {classes})")
    out = np.zeros((rows, classes))
    out[np.arange(rows), labels] = 1.0
    return out


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits)."""
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy: expected N×K logits, got {list(logits.shape)}")
    rows, classes = logits.shape
    onehot = constant(_one_hot(labels, rows, classes))
    return scale(mean_all(mul(onehot, log_softmax_rows(logits))), -float(classes))


def _soft_target_term(teacher_logits: ArrayLike, student_logits: Tensor, temperature: float) -> Tensor:
    rows, classes = student_logits.shape
    dtype = student_logits.data.dtype
    factor = dtype.type(1.0 / temperature)
    # teacher side evaluated with the same kernels as the student side, so equal logits cancel exactly
    teacher_log_probs = log_softmax_rows_np(_as_array(teacher_logits).astype(dtype) * factor)
    teacher_probs = np.exp(teacher_log_probs)
    weight = float(temperature) ** 2 * classes

    entropy_mean = np.asarray((teacher_probs * teacher_log_probs).mean(), dtype=dtype)
    negative_entropy = constant(entropy_mean * dtype.type(weight))
    student_log_probs = log_softmax_rows(scale(student_logits, 1.0 / temperature))
    cross = mean_all(mul(constant(teacher_probs), student_log_probs))
    return add(scale(cross, -weight), negative_entropy)


def distillation_loss(
    teacher_logits: ArrayLike,
    student_logits: Tensor,
    temperature: float,
    alpha: float,
    labels: Optional[np.ndarray] = None,
) -> Tensor:
    """alpha·CE(labels, student) + (1 - alpha)·tau²·KL(softmax(t/tau) || softmax(s/tau)), batch mean.

    Teacher logits are treated as constants. Labels are required when alpha > 0
    and ignored otherwise.
    """
    if temperature <= 0:
        raise ConfigError(f"distillation temperature must be positive, got {temperature}")
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    teacher = _as_array(teacher_logits)
    if student_logits.ndim != 2 or teacher.shape != student_logits.shape:
        raise ShapeError(
            f"teacher logits {list(teacher.shape)} and student logits {list(student_logits.shape)} must match"
        )
    if alpha > 0 and labels is None:
        raise ContractError("alpha > 0 needs ground-truth labels")

    if alpha == 1.0:
        return cross_entropy(student_logits, labels)
    soft = _soft_target_term(teacher, student_logits, temperature)
    if alpha == 0.0:
        return soft
    hard = cross_entropy(student_logits, labels)
    return add(scale(hard, alpha), scale(soft, 1.0 - alpha))
