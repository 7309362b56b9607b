"""
SGD with momentum and weight decay.
"""
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from app.core.errors import ShapeError
from app.core.schemas import SgdHyper
from app.core.tensor import Tensor


def init_velocity(params: Sequence[Tensor]) -> List[np.ndarray]:
    return [np.zeros(p.shape, dtype=p.data.dtype) for p in params]


def sgd_step(
    params: Sequence[Tensor],
    grads: Mapping[int, Tensor],
    state: Sequence[np.ndarray],
    hyper: SgdHyper,
) -> Tuple[List[Tensor], List[np.ndarray]]:
    """One update: g' = g + wd·p; v <- momentum·v + g'; p <- p - lr·v.

    Weight decay applies to every parameter, normalization scales and biases
    included. A parameter missing from ``grads`` is treated as having a zero
    gradient.
    """
    if len(state) != len(params):
        raise ShapeError(f"{len(params)} parameters but {len(state)} velocity buffers")

    new_params: List[Tensor] = []
    new_state: List[np.ndarray] = []
    for param, velocity in zip(params, state):
        if velocity.shape != param.shape:
            raise ShapeError(f"velocity {list(velocity.shape)} does not match parameter {list(param.shape)}")
        grad_tensor = grads.get(param.node_id)
        if grad_tensor is None:
            grad = np.zeros(param.shape, dtype=param.data.dtype)
        elif grad_tensor.shape != param.shape:
            raise ShapeError(f"gradient {list(grad_tensor.shape)} does not match parameter {list(param.shape)}")
        else:
            grad = grad_tensor.data

        kind = param.data.dtype.type
        decayed = grad + kind(hyper.weight_decay) * param.data
        velocity = kind(hyper.momentum) * velocity.astype(param.data.dtype) + decayed
        updated = param.data - kind(hyper.learning_rate) * velocity
        new_params.append(Tensor._wrap(updated, requires_grad=param.requires_grad))
        new_state.append(velocity)
    return new_params, new_state


class SgdOptimizer:
    """Keeps one velocity buffer per named parameter across steps."""

    def __init__(self, hyper: SgdHyper):
        self.hyper = hyper
        self.velocity: Dict[str, np.ndarray] = {}

    def step(self, params: Mapping[str, Tensor], grads: Mapping[int, Tensor]) -> Dict[str, Tensor]:
        """Update the named parameters and return them under the same names."""
        names = list(params)
        tensors = [params[name] for name in names]
        state = [
            self.velocity.get(name, np.zeros(params[name].shape, dtype=params[name].data.dtype))
            for name in names
        ]
        updated, new_state = sgd_step(tensors, grads, state, self.hyper)
        for name, velocity in zip(names, new_state):
            self.velocity[name] = velocity
        return dict(zip(names, updated))
