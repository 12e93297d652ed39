"""
Tiny video classifiers with deliberately different temporal structure.

- early-pool averages the frames away in its first layer, so it is blind to frame order;
- full-3d uses spatio-temporal kernels in every convolution;
- late-temporal runs per-frame 2D convolutions and mixes time only in a final temporal head.
"""
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from tt_video_attack.container import read_container, write_container
from tt_video_attack.errors import FormatError, NumericFault, SpecError, TrainingFault
from tt_video_attack.gradcore.graph import ComputeGraph, forward
from tt_video_attack.gradcore.layers import Activation, AvgPool3d, Conv3d, Dense, Flatten, Layer
from tt_video_attack.gradcore.losses import softmax_cross_entropy
from tt_video_attack.gradcore.models import VideoClip
from tt_video_attack.logger import LOGGER as logger
from tt_video_attack.synthvid import EVAL, TRAIN, Dataset


EARLY_POOL = "early-pool"
FULL_3D = "full-3d"
LATE_TEMPORAL = "late-temporal"
ARCHITECTURES = (EARLY_POOL, FULL_3D, LATE_TEMPORAL)

CHECKPOINT_FORMAT = "tt-checkpoint"
EVAL_CHUNK = 32
HEAD_TIME_POOL = 2


@dataclass(frozen=True)
class ArchSpec:
    name: str
    input_shape: Tuple[int, int, int, int] = (16, 16, 16, 1)
    num_classes: int = 8
    channels: Tuple[int, int] = (8, 16)
    spatial_kernel: int = 3
    temporal_kernel: int = 3
    activation: str = "tanh"
    seed: int = 0
    precision: str = "float64"

    def layers(self) -> List[Layer]:
        """
        The layer chain of this family. Every head averages space away but keeps coarse time
        bins, so the final Dense layer reads class evidence per time bin.

        Raises:
            SpecError: unknown family or a chain that does not type-check.
        """
        frames, _, _, channels = self.input_shape
        first, second = self.channels
        k, kt = self.spatial_kernel, self.temporal_kernel
        act = self.activation
        if self.name == EARLY_POOL:
            body: List[Layer] = [
                AvgPool3d((frames, 1, 1)),
                Conv3d(channels, first, (1, k, k)),
                Activation(act),
                AvgPool3d((1, 2, 2)),
                Conv3d(first, second, (1, k, k)),
                Activation(act),
            ]
        elif self.name == FULL_3D:
            body = [
                Conv3d(channels, first, (kt, k, k)),
                Activation(act),
                AvgPool3d((2, 2, 2)),
                Conv3d(first, second, (kt, k, k)),
                Activation(act),
            ]
        elif self.name == LATE_TEMPORAL:
            body = [
                Conv3d(channels, first, (1, k, k)),
                Activation(act),
                AvgPool3d((1, 2, 2)),
                Conv3d(first, second, (1, k, k)),
                Activation(act),
                AvgPool3d((1, 2, 2)),
                Conv3d(second, second, (kt, 1, 1)),
                Activation(act),
            ]
        else:
            raise SpecError(f"Unknown architecture {self.name}; expected one of {ARCHITECTURES}")
        body.append(self._head_pool(body))
        body.append(Flatten())
        body.append(Dense(self._chain_shape(body)[0], self.num_classes))
        return body

    def _chain_shape(self, body: Sequence[Layer]) -> Tuple[int, ...]:
        shape = tuple(self.input_shape)
        for layer in body:
            shape = layer.output_shape(shape)
        return shape

    def _head_pool(self, body: Sequence[Layer]) -> AvgPool3d:
        frames, height, width, _ = self._chain_shape(body)
        return AvgPool3d((HEAD_TIME_POOL if frames % HEAD_TIME_POOL == 0 else 1, height, width))

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Dict) -> "ArchSpec":
        values = dict(values)
        for key in ("input_shape", "channels"):
            if key in values:
                values[key] = tuple(values[key])
        try:
            return cls(**values)
        except TypeError as e:
            raise SpecError(f"Invalid architecture spec: {e}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 16
    learning_rate: float = 0.1
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise SpecError(f"Invalid training config: {self}")
        return self


@dataclass(eq=False)
class Checkpoint:
    arch: ArchSpec
    params: "OrderedDict[str, np.ndarray]"
    metadata: Dict = field(default_factory=dict)

    def __eq__(self, other):
        if other.__class__ is not self.__class__:
            return NotImplemented
        return (
            self.arch == other.arch
            and self.metadata == other.metadata
            and list(self.params) == list(other.params)
            and all(
                self.params[name].dtype == other.params[name].dtype
                and np.array_equal(self.params[name], other.params[name])
                for name in self.params
            )
        )


def build_model(spec: ArchSpec) -> ComputeGraph:
    """Graph for `spec` with parameters drawn deterministically from `spec.seed`."""
    graph = ComputeGraph(spec.layers(), spec.input_shape, name=spec.name, precision=spec.precision)
    graph.initialize(spec.seed)
    graph.arch = spec
    return graph


def label_from_logits(logits: np.ndarray) -> int:
    """Arg-max; ties go to the lowest class index."""
    return int(np.argmax(logits))


def predict(model: ComputeGraph, clip: VideoClip) -> int:
    return label_from_logits(forward(model, clip))


def predict_batch(model: ComputeGraph, frames: np.ndarray, chunk: int = EVAL_CHUNK) -> np.ndarray:
    labels = [np.argmax(model.forward_batch(frames[i:i + chunk]), axis=1) for i in range(0, len(frames), chunk)]
    model.clear_cache()
    return np.concatenate(labels) if labels else np.zeros((0,), dtype=np.int64)


def mean_loss(model: ComputeGraph, frames: np.ndarray, labels: np.ndarray, chunk: int = EVAL_CHUNK) -> float:
    total = 0.0
    for i in range(0, len(frames), chunk):
        total += float(model.losses(frames[i:i + chunk], labels[i:i + chunk]).sum())
    model.clear_cache()
    return total / len(frames)


def accuracy(model: ComputeGraph, frames: np.ndarray, labels: np.ndarray) -> Optional[float]:
    if len(frames) == 0:
        return None
    return float(np.mean(predict_batch(model, frames) == labels))


def checkpoint_of(model: ComputeGraph, metadata: Optional[Dict] = None) -> Checkpoint:
    if model.arch is None:
        raise SpecError(f"Model {model.name} was not built from an architecture spec")
    params = OrderedDict((name, value.copy()) for name, value in model.named_parameters().items())
    return Checkpoint(model.arch, params, dict(metadata or {}))


def train(model: ComputeGraph, dataset: Dataset, cfg: TrainConfig) -> Checkpoint:
    """
    Plain mini-batch gradient descent on the train split, reshuffled every epoch from `cfg.seed`.

    Raises:
        SpecError: empty train split or labels outside the model's classes.
        TrainingFault: a non-finite loss or gradient, with the epoch it happened in.
    """
    cfg.validate()
    frames, labels = dataset.arrays(TRAIN)
    if len(labels) == 0:
        raise SpecError("Cannot train on an empty train split")
    if labels.max() >= model.num_classes:
        raise SpecError(f"Labels exceed the {model.num_classes} classes of {model.name}")

    rng = np.random.default_rng(cfg.seed)
    losses = [mean_loss(model, frames, labels)]
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(labels))
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            try:
                batch_loss, grads = model.param_gradients(frames[batch], labels[batch])
            except NumericFault as e:
                raise TrainingFault(str(e), epoch)
            if not np.isfinite(batch_loss):
                raise TrainingFault("Training loss diverged", epoch)
            model.apply_update(grads, cfg.learning_rate)
        try:
            losses.append(mean_loss(model, frames, labels))
        except NumericFault as e:
            raise TrainingFault(str(e), epoch)
        logger.info(f"{model.name} epoch {epoch}/{cfg.epochs}: train loss {losses[-1]:.4f}")

    eval_frames, eval_labels = dataset.arrays(EVAL)
    metadata = {
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "learning_rate": cfg.learning_rate,
        "seed": cfg.seed,
        "loss_history": losses,
        "train_accuracy": accuracy(model, frames, labels),
        "eval_accuracy": accuracy(model, eval_frames, eval_labels),
    }
    logger.info(
        "Trained {}: train accuracy {}, eval accuracy {}".format(
            model.name, metadata["train_accuracy"], metadata["eval_accuracy"]
        )
    )
    return checkpoint_of(model, metadata)


def train_grid(specs: Sequence[ArchSpec], dataset: Dataset, cfg: TrainConfig, workers: int = 1) -> List[Checkpoint]:
    """Train one fresh model per spec; models share nothing, so they may train in parallel."""

    def run(spec: ArchSpec) -> Checkpoint:
        return train(build_model(spec), dataset, cfg)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(pool.map(run, specs))


def default_grid(seeds: Sequence[int] = (0, 1), **overrides) -> List[ArchSpec]:
    """Every family at every seed: the same-family/different-seed pairs stand in for sibling backbones."""
    return [ArchSpec(name=name, seed=seed, **overrides) for name in ARCHITECTURES for seed in seeds]


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    manifest = {"format": CHECKPOINT_FORMAT, "arch": ckpt.arch.to_dict(), "metadata": ckpt.metadata}
    write_container(path, manifest, list(ckpt.params.items()))


def load_checkpoint(path: str) -> Checkpoint:
    manifest, records = read_container(path)
    if manifest.get("format") != CHECKPOINT_FORMAT or "arch" not in manifest:
        raise FormatError(f"{path} is not a checkpoint container", 0)
    try:
        ckpt = Checkpoint(ArchSpec.from_dict(manifest["arch"]), records, manifest.get("metadata") or {})
        # the records must fit the graph the header describes
        model_from_checkpoint(ckpt)
    except (SpecError, TypeError, ValueError) as e:
        raise FormatError(f"{path} has a corrupt architecture header: {e}", 0)
    return ckpt


def model_from_checkpoint(ckpt: Checkpoint, name: Optional[str] = None) -> ComputeGraph:
    graph = ComputeGraph(ckpt.arch.layers(), ckpt.arch.input_shape, name=name or ckpt.arch.name,
                         precision=ckpt.arch.precision)
    graph.set_parameters(ckpt.params)
    graph.arch = ckpt.arch
    return graph
