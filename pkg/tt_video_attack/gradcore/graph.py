import copy
from collections import OrderedDict
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np

from tt_video_attack.errors import NumericFault, RejectedInputError, SpecError
from tt_video_attack.gradcore.layers import Layer
from tt_video_attack.gradcore.losses import softmax_cross_entropy, softmax_cross_entropy_grad
from tt_video_attack.gradcore.models import VideoClip, check_label, resolve_dtype


class ComputeGraph:
    """
    An ordered chain of layers mapping a (T, H, W, C) clip to K logits.

    The graph keeps the forward activations of the last batch it saw, so one instance must
    only be used by one thread at a time. Use `clone()` to hand a copy to another worker.

    Raises:
        SpecError: if the layer output shapes do not chain.
    """

    def __init__(self, layers: Sequence[Layer], input_shape: Sequence[int], name: str = "graph",
                 precision: str = "float64"):
        self.layers: List[Layer] = list(layers)
        self.input_shape: Tuple[int, ...] = tuple(int(d) for d in input_shape)
        self.name = name
        self.precision = precision
        self.dtype = resolve_dtype(precision)
        if not self.layers:
            raise SpecError("A compute graph needs at least one layer")
        self.shapes = self._check_chain()
        if len(self.shapes[-1]) != 1:
            raise SpecError(f"The last layer must produce a logit vector, got shape {self.shapes[-1]}")
        self.num_classes = self.shapes[-1][0]
        # architecture record the graph was built from, set by the model zoo
        self.arch = None
        self._outputs: List[np.ndarray] = []
        self._output_grads: List[Optional[np.ndarray]] = []

    def _check_chain(self) -> List[Tuple[int, ...]]:
        shapes = []
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
            shapes.append(tuple(shape))
        return shapes

    def initialize(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            layer.initialize(rng, self.dtype)
        self.clear_cache()

    def named_parameters(self) -> "OrderedDict[str, np.ndarray]":
        params: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for index, layer in enumerate(self.layers):
            for param_name in sorted(layer.params):
                params[f"{index:02d}.{layer.kind}.{param_name}"] = layer.params[param_name]
        return params

    def named_gradients(self) -> "OrderedDict[str, np.ndarray]":
        grads: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for index, layer in enumerate(self.layers):
            for param_name in sorted(layer.params):
                grads[f"{index:02d}.{layer.kind}.{param_name}"] = layer.grads[param_name].copy()
        return grads

    def _locate(self, name: str) -> Tuple[Layer, str]:
        try:
            index, _, param_name = name.split(".")
            layer = self.layers[int(index)]
        except (ValueError, IndexError):
            raise RejectedInputError(f"Unknown parameter: {name}")
        if param_name not in layer.params:
            raise RejectedInputError(f"Unknown parameter: {name}")
        return layer, param_name

    def set_parameters(self, params: Mapping[str, np.ndarray]) -> None:
        expected = self.named_parameters()
        if set(params) != set(expected):
            missing = sorted(set(expected) - set(params))
            extra = sorted(set(params) - set(expected))
            raise SpecError(f"Parameter names do not match the graph (missing {missing}, unexpected {extra})")
        for name, value in params.items():
            if value.shape != expected[name].shape:
                raise SpecError(f"Parameter {name} has shape {value.shape}, expected {expected[name].shape}")
            layer, param_name = self._locate(name)
            layer.params[param_name] = np.array(value, dtype=self.dtype, copy=True)
        self.clear_cache()

    def is_trainable(self, name: str) -> bool:
        return self._locate(name)[0].trainable

    def apply_update(self, grads: Mapping[str, np.ndarray], learning_rate: float) -> None:
        """Plain gradient-descent step; frozen layers are left untouched."""
        for name, grad in grads.items():
            layer, param_name = self._locate(name)
            if layer.trainable:
                layer.params[param_name] = layer.params[param_name] - learning_rate * grad

    def forward_batch(self, batch: np.ndarray) -> np.ndarray:
        x = np.asarray(batch, dtype=self.dtype)
        if x.shape[1:] != self.input_shape:
            raise RejectedInputError(f"Model {self.name} expects clips of shape {self.input_shape}, got {x.shape[1:]}")
        self._outputs = []
        self._output_grads = []
        for index, layer in enumerate(self.layers):
            x = layer.forward(x)
            if not np.all(np.isfinite(x)):
                raise NumericFault(f"Non-finite activation after layer {index} ({layer!r}) of {self.name}")
            self._outputs.append(x)
        return x

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        if not self._outputs:
            raise RejectedInputError("backward called before forward")
        grad = np.asarray(dlogits, dtype=self.dtype)
        self._output_grads = [None] * len(self.layers)
        for index in reversed(range(len(self.layers))):
            self._output_grads[index] = grad
            grad = self.layers[index].backward(grad)
            if not np.all(np.isfinite(grad)):
                raise NumericFault(f"Non-finite gradient below layer {index} of {self.name}")
        return grad

    def activation(self, index: int) -> np.ndarray:
        """Cached output of layer `index` from the last forward pass."""
        return self._outputs[index]

    def activation_gradient(self, index: int) -> np.ndarray:
        """Gradient flowing into the output of layer `index` during the last backward pass."""
        grad = self._output_grads[index] if self._output_grads else None
        if grad is None:
            raise RejectedInputError("No backward pass has been run")
        return grad

    def losses(self, batch: np.ndarray, labels: Sequence[int]) -> np.ndarray:
        return softmax_cross_entropy(self.forward_batch(batch), np.asarray(labels))

    def input_gradients(self, batch: np.ndarray, labels: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
        """
        Each sample's loss and the gradient of that sample's own loss with respect to its input.

        Returns:
            Tuple[np.ndarray, np.ndarray] -- (N,) losses and (N, T, H, W, C) gradients.
        """
        labels = np.asarray(labels)
        logits = self.forward_batch(batch)
        losses = softmax_cross_entropy(logits, labels)
        grads = self.backward(softmax_cross_entropy_grad(logits, labels))
        return losses, grads

    def param_gradients(self, batch: np.ndarray, labels: Sequence[int]) -> Tuple[float, "OrderedDict[str, np.ndarray]"]:
        """Mean loss over the batch and its gradient with respect to every parameter."""
        labels = np.asarray(labels)
        logits = self.forward_batch(batch)
        losses = softmax_cross_entropy(logits, labels)
        self.backward(softmax_cross_entropy_grad(logits, labels) / len(labels))
        return float(losses.mean()), self.named_gradients()

    def clear_cache(self) -> None:
        self._outputs = []
        self._output_grads = []
        for layer in self.layers:
            layer.clear_cache()
            layer.grads = {}

    def clone(self) -> "ComputeGraph":
        """Deep copy with empty caches. Drops this graph's own activation cache as well."""
        self.clear_cache()
        return copy.deepcopy(self)

    def with_precision(self, precision: str) -> "ComputeGraph":
        twin = self.clone()
        twin.precision = precision
        twin.dtype = resolve_dtype(precision)
        for layer in twin.layers:
            layer.astype(twin.dtype)
        return twin

    def __repr__(self):
        return "ComputeGraph({}, input={}, layers=[{}])".format(
            self.name, self.input_shape, ", ".join(repr(layer) for layer in self.layers)
        )


def _clip_array(model: ComputeGraph, clip: VideoClip) -> np.ndarray:
    if not isinstance(clip, VideoClip):
        raise RejectedInputError(f"Expected a VideoClip, got {type(clip).__name__}")
    if clip.shape != model.input_shape:
        raise RejectedInputError(f"Model {model.name} expects clips of shape {model.input_shape}, got {clip.shape}")
    return clip.frames[None]


def forward(model: ComputeGraph, clip: VideoClip) -> np.ndarray:
    """K logits of a single clip; activations stay cached for a following backward pass."""
    return model.forward_batch(_clip_array(model, clip))[0].copy()


def loss(logits: np.ndarray, label: int) -> float:
    """Softmax cross-entropy of one logit vector."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1:
        raise RejectedInputError(f"Expected a logit vector, got shape {logits.shape}")
    return float(softmax_cross_entropy(logits[None], np.array([label]))[0])


def input_gradient(model: ComputeGraph, clip: VideoClip, label: int) -> np.ndarray:
    """Exact gradient of loss(forward(model, clip), label) with respect to every clip element."""
    check_label(label, model.num_classes)
    _, grads = model.input_gradients(_clip_array(model, clip), [label])
    return grads[0].copy()


def param_gradient(model: ComputeGraph, batch: Sequence[Tuple[VideoClip, int]]) -> "OrderedDict[str, np.ndarray]":
    """Mean-over-batch loss gradient for every parameter, keyed like `named_parameters()`."""
    if not batch:
        raise RejectedInputError("param_gradient needs a non-empty batch")
    frames = np.stack([_clip_array(model, clip)[0] for clip, _ in batch])
    labels = [check_label(label, model.num_classes) for _, label in batch]
    _, grads = model.param_gradients(frames, labels)
    return grads
