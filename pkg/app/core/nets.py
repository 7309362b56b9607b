"""
Desk-scale encoders, projection/classifier heads and freeze-aware assemblies.

Encoder layout (``width`` = w, ``depth`` = D; every conv is 3×3, padding 1,
no bias, followed by batch norm):

    stem:        conv 3→w, BN, ReLU
    stage s:     [s > 0] down: conv c/2→c, BN, ReLU, max_pool2     (c = w·2^s)
                 block:  conv c→c, BN, ReLU, conv c→c, BN,
                         (+ identity skip for mini_res), ReLU
    global average pooling → feature_dim = w·2^(D-1)

mini_res and mini_plain are layer-for-layer identical apart from the skip.

Architecture descriptors::

    descriptor := family "-w" width "-d" depth [ "+" head ]
    head       := "proj" hidden "x" out | "linear" K | "dense" hidden "x" K

e.g. ``mini_res-w16-d3+proj64x32``.
"""
import logging
import re
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Literal, Mapping, Optional, Tuple, Union

import numpy as np

from app.core.errors import CompatibilityError, ConfigError, FormatError, ShapeError
from app.core.schemas import Checkpoint, EncoderArch
from app.core.tensor import (
    BatchNormStats,
    Tensor,
    add,
    avg_pool_global,
    batch_norm,
    conv2d,
    l2_normalize_rows,
    matmul,
    max_pool2,
    relu,
)

logger = logging.getLogger(__name__)

MIN_WIDTH = 4
MAX_DEPTH = 5  # 32 px input halves at every stage after the first
KERNEL = 3

HeadKind = Literal["projection", "linear", "dense"]

_DESCRIPTOR_RE = re.compile(
    r"^(?P<family>mini_res|mini_plain)-w(?P<width>\d+)-d(?P<depth>\d+)"
    r"(?:\+(?:proj(?P<ph>\d+)x(?P<po>\d+)|linear(?P<lk>\d+)|dense(?P<dh>\d+)x(?P<dk>\d+)))?$"
)


@dataclass(frozen=True)
class HeadSpec:
    kind: HeadKind
    in_dim: int
    out_dim: int
    hidden: Optional[int] = None

    @property
    def descriptor(self) -> str:
        if self.kind == "projection":
            return f"proj{self.hidden}x{self.out_dim}"
        if self.kind == "linear":
            return f"linear{self.out_dim}"
        return f"dense{self.hidden}x{self.out_dim}"


def projection_head(feature_dim: int, hidden: Optional[int] = None, out_dim: int = 32) -> HeadSpec:
    return HeadSpec("projection", feature_dim, out_dim, hidden or feature_dim)


def linear_head(feature_dim: int, num_classes: int) -> HeadSpec:
    return HeadSpec("linear", feature_dim, num_classes)


def dense_head(feature_dim: int, num_classes: int, hidden: int = 64) -> HeadSpec:
    return HeadSpec("dense", feature_dim, num_classes, hidden)


def encoder_descriptor(arch: EncoderArch) -> str:
    return f"{arch.family}-w{arch.width}-d{arch.depth}"


def parse_descriptor(text: str) -> Tuple[EncoderArch, Optional[HeadSpec]]:
    """Inverse of ``ModelAssembly.descriptor``."""
    match = _DESCRIPTOR_RE.match(text or "")
    if not match:
        raise FormatError(f"malformed architecture descriptor '{text}'")
    arch = EncoderArch(family=match["family"], width=int(match["width"]), depth=int(match["depth"]))
    d = arch.feature_dim
    if match["ph"]:
        return arch, HeadSpec("projection", d, int(match["po"]), int(match["ph"]))
    if match["lk"]:
        return arch, HeadSpec("linear", d, int(match["lk"]))
    if match["dh"]:
        return arch, HeadSpec("dense", d, int(match["dk"]), int(match["dh"]))
    return arch, None


def _he_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _stage_units(arch: EncoderArch) -> Iterator[Tuple[str, int, int]]:
    """(unit name, in channels, out channels) in forward order."""
    yield "stem", 3, arch.width
    for s in range(arch.depth):
        c = arch.width * 2**s
        if s > 0:
            yield f"stage{s}.down", c // 2, c
        yield f"stage{s}.block.a", c, c
        yield f"stage{s}.block.b", c, c


@dataclass
class Encoder:
    arch: EncoderArch
    params: Dict[str, Tensor]
    stats: Dict[str, BatchNormStats]

    @property
    def descriptor(self) -> str:
        return encoder_descriptor(self.arch)

    @property
    def feature_dim(self) -> int:
        return self.arch.feature_dim


@dataclass
class Head:
    spec: HeadSpec
    params: Dict[str, Tensor]


def build_encoder(arch: EncoderArch, seed: int) -> Encoder:
    """He-uniform conv weights, BN scale 1 and shift 0, drawn in forward order from ``seed``."""
    if arch.width < MIN_WIDTH:
        raise ConfigError(f"encoder width must be >= {MIN_WIDTH}, got {arch.width}", key="encoder.width")
    if not 1 <= arch.depth <= MAX_DEPTH:
        raise ConfigError(f"encoder depth must lie in [1, {MAX_DEPTH}], got {arch.depth}", key="encoder.depth")
    rng = np.random.default_rng(seed)
    params: Dict[str, Tensor] = {}
    stats: Dict[str, BatchNormStats] = {}
    for unit, c_in, c_out in _stage_units(arch):
        name = f"encoder.{unit}"
        weights = _he_uniform(rng, (c_out, c_in, KERNEL, KERNEL), c_in * KERNEL * KERNEL)
        params[f"{name}.conv.w"] = Tensor(weights, requires_grad=True)
        params[f"{name}.bn.gamma"] = Tensor(np.ones(c_out), requires_grad=True)
        params[f"{name}.bn.beta"] = Tensor(np.zeros(c_out), requires_grad=True)
        stats[f"{name}.bn"] = BatchNormStats.fresh(c_out)
    encoder = Encoder(arch, params, stats)
    logger.debug(f"Built {encoder.descriptor} with {sum(p.size for p in params.values())} parameters")
    return encoder


def build_head(spec: HeadSpec, seed: int) -> Head:
    """Affine layers with He-uniform weights and zero biases."""
    if spec.in_dim < 1 or spec.out_dim < 1 or (spec.hidden is not None and spec.hidden < 1):
        raise ConfigError(f"invalid head dimensions {spec}")
    rng = np.random.default_rng([seed, 1])
    if spec.kind == "linear":
        layers = [("head.fc", spec.in_dim, spec.out_dim)]
    else:
        layers = [("head.fc1", spec.in_dim, spec.hidden), ("head.fc2", spec.hidden, spec.out_dim)]
    params: Dict[str, Tensor] = {}
    for name, fan_in, fan_out in layers:
        params[f"{name}.w"] = Tensor(_he_uniform(rng, (fan_in, fan_out), fan_in), requires_grad=True)
        params[f"{name}.b"] = Tensor(np.zeros(fan_out), requires_grad=True)
    return Head(spec, params)


@dataclass
class ModelAssembly:
    """Encoder plus optional head, each with a freeze flag.

    Frozen components hold tensors without gradient tracking and always run
    batch norm on their running statistics.
    """
    encoder: Encoder
    head: Optional[Head]
    frozen: Dict[str, bool] = field(default_factory=dict)

    @property
    def descriptor(self) -> str:
        if self.head is None:
            return self.encoder.descriptor
        return f"{self.encoder.descriptor}+{self.head.spec.descriptor}"

    @property
    def output_kind(self) -> str:
        if self.head is None:
            return "features"
        return "embeddings" if self.head.spec.kind == "projection" else "logits"

    def _components(self) -> List[Tuple[str, Dict[str, Tensor]]]:
        parts = [("encoder", self.encoder.params)]
        if self.head is not None:
            parts.append(("head", self.head.params))
        return parts

    def all_params(self) -> Dict[str, Tensor]:
        return {name: p for _, params in self._components() for name, p in params.items()}

    def trainable_params(self) -> Dict[str, Tensor]:
        return {
            name: p
            for component, params in self._components()
            if not self.frozen.get(component, False)
            for name, p in params.items()
        }

    def frozen_params(self) -> Dict[str, Tensor]:
        return {
            name: p
            for component, params in self._components()
            if self.frozen.get(component, False)
            for name, p in params.items()
        }

    def update(self, new_params: Mapping[str, Tensor]) -> None:
        """Swap in updated tensors for trainable parameters."""
        for name, tensor in new_params.items():
            component = name.split(".", 1)[0]
            if self.frozen.get(component, False):
                raise ConfigError(f"parameter {name} belongs to a frozen component")
            target = self.encoder.params if component == "encoder" else self.head.params
            if name not in target:
                raise ShapeError(f"unknown parameter {name}")
            if target[name].shape != tensor.shape:
                raise ShapeError(f"{name}: shape {list(tensor.shape)} does not match {list(target[name].shape)}")
            target[name] = tensor

    def state_dict(self) -> Dict[str, np.ndarray]:
        """Parameters plus batch-norm running statistics as plain arrays."""
        state = {name: p.numpy() for name, p in self.all_params().items()}
        for unit, stats in self.encoder.stats.items():
            state[f"{unit}.running_mean"] = stats.running_mean.copy()
            state[f"{unit}.running_var"] = stats.running_var.copy()
        return state

    def load_state(self, state: Mapping[str, np.ndarray], component: Optional[str] = None) -> None:
        """Overwrite parameters (optionally only one component) from a state dict."""
        for comp, params in self._components():
            if component is not None and comp != component:
                continue
            requires_grad = not self.frozen.get(comp, False)
            for name, current in params.items():
                if name not in state:
                    raise CompatibilityError(f"checkpoint has no tensor '{name}'")
                values = np.asarray(state[name])
                if values.shape != current.shape:
                    raise CompatibilityError(
                        f"'{name}' has shape {list(values.shape)} in the checkpoint, model expects {list(current.shape)}"
                    )
                params[name] = Tensor(values.astype(current.data.dtype), requires_grad=requires_grad)
        if component in (None, "encoder"):
            for unit, stats in self.encoder.stats.items():
                stats.running_mean = np.asarray(state[f"{unit}.running_mean"], dtype=np.float32).copy()
                stats.running_var = np.asarray(state[f"{unit}.running_var"], dtype=np.float32).copy()


def _set_requires_grad(params: Dict[str, Tensor], requires_grad: bool) -> Dict[str, Tensor]:
    return {name: Tensor._wrap(p.data, requires_grad=requires_grad) for name, p in params.items()}


def assemble(
    encoder: Encoder,
    head: Union[Head, HeadSpec, None],
    freeze_encoder: bool,
    freeze_head: bool = False,
    seed: int = 0,
) -> ModelAssembly:
    """Attach a head to an encoder and apply freeze flags.

    A ``HeadSpec`` is built with ``seed``. The encoder's tensors are shared
    by value, not copied; its running statistics are copied.
    """
    if isinstance(head, HeadSpec):
        head = build_head(head, seed)
    if head is not None and head.spec.in_dim != encoder.feature_dim:
        raise ShapeError(
            f"{head.spec.kind} head expects {head.spec.in_dim}-d input, encoder {encoder.descriptor} "
            f"produces {encoder.feature_dim}"
        )
    own_encoder = Encoder(
        encoder.arch,
        _set_requires_grad(encoder.params, not freeze_encoder),
        {unit: stats.copy() for unit, stats in encoder.stats.items()},
    )
    own_head = None if head is None else Head(head.spec, _set_requires_grad(head.params, not freeze_head))
    return ModelAssembly(own_encoder, own_head, {"encoder": freeze_encoder, "head": freeze_head})


def _conv_unit(x: Tensor, encoder: Encoder, unit: str, training: bool) -> Tensor:
    name = f"encoder.{unit}"
    params = encoder.params
    y = conv2d(x, params[f"{name}.conv.w"], stride=1, padding=1)
    return batch_norm(
        y, params[f"{name}.bn.gamma"], params[f"{name}.bn.beta"], training=training, stats=encoder.stats[f"{name}.bn"]
    )


def encode(encoder: Encoder, x: Tensor, training: bool) -> Tensor:
    """Encoder forward pass to N×feature_dim pooled features."""
    h = relu(_conv_unit(x, encoder, "stem", training))
    for s in range(encoder.arch.depth):
        if s > 0:
            h = max_pool2(relu(_conv_unit(h, encoder, f"stage{s}.down", training)))
        inner = relu(_conv_unit(h, encoder, f"stage{s}.block.a", training))
        inner = _conv_unit(inner, encoder, f"stage{s}.block.b", training)
        h = relu(add(inner, h) if encoder.arch.family == "mini_res" else inner)
    return avg_pool_global(h)


def _affine(h: Tensor, params: Dict[str, Tensor], name: str) -> Tensor:
    return add(matmul(h, params[f"{name}.w"]), params[f"{name}.b"])


def apply_head(head: Head, features: Tensor) -> Tensor:
    if head.spec.kind == "linear":
        return _affine(features, head.params, "head.fc")
    hidden = relu(_affine(features, head.params, "head.fc1"))
    out = _affine(hidden, head.params, "head.fc2")
    return l2_normalize_rows(out) if head.spec.kind == "projection" else out


def forward(assembly: ModelAssembly, batch: Union[Tensor, np.ndarray], training: bool = False) -> Tensor:
    """Embeddings (projection head), logits (classifier heads) or pooled features (no head).

    Batch norm uses batch statistics only when ``training`` is set and the
    encoder is not frozen.
    """
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    if x.ndim != 4 or x.shape[1] != 3:
        raise ShapeError(f"forward: expected an N×3×H×W batch, got {list(x.shape)}")
    encoder_training = training and not assembly.frozen.get("encoder", False)
    features = encode(assembly.encoder, x, encoder_training)
    if assembly.head is None:
        return features
    return apply_head(assembly.head, features)


def param_split(assembly: ModelAssembly) -> Tuple[int, int]:
    """(trainable, frozen) scalar parameter counts."""
    trainable = sum(p.size for p in assembly.trainable_params().values())
    frozen = sum(p.size for p in assembly.frozen_params().values())
    return trainable, frozen


def param_count(assembly: Union[ModelAssembly, Encoder]) -> int:
    """Exact number of scalar parameters (running statistics excluded)."""
    if isinstance(assembly, Encoder):
        return sum(p.size for p in assembly.params.values())
    return sum(param_split(assembly))


def assembly_checkpoint(assembly: ModelAssembly, step: int = 0, fingerprint: str = "") -> Checkpoint:
    return Checkpoint(
        params=assembly.state_dict(), descriptor=assembly.descriptor, step=step, config_fingerprint=fingerprint
    )


def assembly_from_checkpoint(
    ckpt: Checkpoint, freeze_encoder: bool = False, freeze_head: bool = False
) -> ModelAssembly:
    """Rebuild the exact model a checkpoint was saved from."""
    arch, head_spec = parse_descriptor(ckpt.descriptor)
    assembly = assemble(build_encoder(arch, 0), head_spec, freeze_encoder, freeze_head)
    assembly.load_state(ckpt.params)
    return assembly


def load_encoder_weights(assembly: ModelAssembly, ckpt: Checkpoint) -> None:
    """Copy encoder tensors and statistics from ``ckpt``; the head is untouched."""
    saved_encoder = ckpt.descriptor.split("+", 1)[0]
    if saved_encoder != assembly.encoder.descriptor:
        raise CompatibilityError(
            f"checkpoint encoder {saved_encoder} does not match model encoder {assembly.encoder.descriptor}"
        )
    assembly.load_state(ckpt.params, component="encoder")


def encoder_checkpoint(assembly: ModelAssembly, step: int = 0, fingerprint: str = "") -> Checkpoint:
    """Checkpoint of the encoder alone (head dropped), as produced by pretraining."""
    state = {name: values for name, values in assembly.state_dict().items() if name.startswith("encoder.")}
    return Checkpoint(params=state, descriptor=assembly.encoder.descriptor, step=step, config_fingerprint=fingerprint)
