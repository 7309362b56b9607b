"""
Finite-difference gradient checking against the tape's analytic gradients.
"""
import logging
from typing import Callable, List, Sequence

import numpy as np

from app.core.errors import ContractError
from app.core.tensor import Tape, Tensor, backward, shadow_precision

logger = logging.getLogger(__name__)

GraphBuilder = Callable[[Sequence[Tensor]], Tensor]


def nudge_from_kinks(values: np.ndarray, margin: float) -> np.ndarray:
    """Push entries closer than ``margin`` to zero out to ±margin (ReLU kink)."""
    values = np.array(values, dtype=np.float64)
    close = np.abs(values) < margin
    values[close] = np.where(values[close] >= 0, margin, -margin)
    return values


def _analytic_gradients(build: GraphBuilder, values: Sequence[np.ndarray]) -> List[np.ndarray]:
    leaves = [Tensor(v, requires_grad=True) for v in values]
    with Tape() as tape:
        loss = build(leaves)
    grads = backward(loss, tape, wrt=leaves)
    return [grads[leaf.node_id].data.astype(np.float64) for leaf in leaves]


def _numeric_derivative(loss_at: Callable[[List[np.ndarray]], float], values: List[np.ndarray],
                        which: int, index: tuple, eps: float, stencil: int) -> float:
    def shifted(delta: float) -> float:
        trial = [v.copy() for v in values]
        trial[which][index] += delta
        return loss_at(trial)

    if stencil == 2:
        return (shifted(eps) - shifted(-eps)) / (2 * eps)
    # fourth-order central stencil
    return (8 * (shifted(eps) - shifted(-eps)) - (shifted(2 * eps) - shifted(-2 * eps))) / (12 * eps)


def finite_diff_check(
    build: GraphBuilder,
    params: Sequence[np.ndarray],
    eps: float = 1e-3,
    shadow: bool = False,
    stencil: int = 2,
    floor: float = 1e-8,
) -> float:
    """Max over all parameter entries of |analytic - numeric| / max(|analytic|, |numeric|, floor).

    ``build`` maps leaf tensors to a scalar loss and must be deterministic.
    Analytic gradients use float32 unless ``shadow`` is set; the numeric
    reference is always evaluated in float64.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    if stencil not in (2, 4):
        raise ContractError("stencil must be 2 or 4 points")
    values = [np.array(p, dtype=np.float64) for p in params]

    if shadow:
        with shadow_precision():
            analytic = _analytic_gradients(build, values)
    else:
        analytic = _analytic_gradients(build, values)

    def loss_at(trial: List[np.ndarray]) -> float:
        return build([Tensor(v) for v in trial]).item()

    worst = 0.0
    with shadow_precision():
        for which, base in enumerate(values):
            for index in np.ndindex(base.shape):
                numeric = _numeric_derivative(loss_at, values, which, index, eps, stencil)
                exact = float(analytic[which][index])
                error = abs(exact - numeric) / max(abs(exact), abs(numeric), floor)
                worst = max(worst, error)
    logger.debug(f"finite_diff_check: max relative error {worst:.3e} over {sum(v.size for v in values)} entries")
    return worst
