"""
Dataset spec dispatch.
"""
import logging

from app.core.schemas import CifarSpec, DatasetSpec, ImageDataset
from app.services.cifar import load_cifar
from app.services.shapes import generate_shapes
from app.services.splits import carve_validation

logger = logging.getLogger(__name__)


def load_dataset(spec: DatasetSpec) -> ImageDataset:
    """
    Materialize a dataset from its config spec.

    Args:
        spec: Synthetic shapes spec or CIFAR spec

    Returns:
        ImageDataset with train/val/test tags; CIFAR gets a validation split
        carved from train
    """
    if isinstance(spec, CifarSpec):
        return carve_validation(load_cifar(spec.path, spec.kind), spec.val_fraction, spec.seed)
    return generate_shapes(spec)
