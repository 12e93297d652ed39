"""
Layer set of the differentiable engine.

Volumetric layers work on batched arrays shaped (N, T, H, W, C); Dense works on (N, F).
Each layer caches what its backward pass needs during `forward` and writes parameter
gradients into `grads` during `backward`.
"""
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from tt_video_attack.errors import SpecError


Shape = Tuple[int, ...]


def _triple(value) -> Tuple[int, int, int]:
    if isinstance(value, int):
        return (value, value, value)
    value = tuple(int(v) for v in value)
    if len(value) != 3:
        raise SpecError(f"Expected 3 values (t, h, w), got {value}")
    return value  # type: ignore


class Layer:
    kind = "layer"

    def __init__(self, trainable: bool = True):
        self.trainable = trainable
        self.params: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}
        self._cache = None

    def output_shape(self, input_shape: Shape) -> Shape:
        raise NotImplementedError

    def initialize(self, rng: np.random.Generator, dtype: np.dtype) -> None:
        pass

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def clear_cache(self) -> None:
        self._cache = None

    def astype(self, dtype: np.dtype) -> None:
        self.params = {name: value.astype(dtype) for name, value in self.params.items()}
        self.grads = {}

    def __repr__(self):
        return f"{self.__class__.__name__}()"


class Conv3d(Layer):
    """
    3D convolution with per-layer stride and padding.

    Weights are laid out (kt, kh, kw, in_channels, out_channels). "same" padding pads with
    zeros so that a stride-1 layer keeps the T x H x W extent; "valid" does not pad.
    """

    kind = "conv3d"

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size,
        stride=1,
        padding: str = "same",
        trainable: bool = True,
    ):
        super().__init__(trainable)
        if padding not in ("same", "valid"):
            raise SpecError(f"Unknown padding mode: {padding}")
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel_size = _triple(kernel_size)
        self.stride = _triple(stride)
        self.padding = padding
        if min(self.kernel_size) < 1 or min(self.stride) < 1:
            raise SpecError(f"Kernel {self.kernel_size} and stride {self.stride} must be positive")
        self.params = {
            "weight": np.zeros(self.kernel_size + (self.in_channels, self.out_channels)),
            "bias": np.zeros(self.out_channels),
        }

    def _pad_widths(self) -> Tuple[Tuple[int, int], ...]:
        if self.padding == "valid":
            return ((0, 0), (0, 0), (0, 0))
        return tuple(((k - 1) // 2, (k - 1) - (k - 1) // 2) for k in self.kernel_size)  # type: ignore

    def output_shape(self, input_shape: Shape) -> Shape:
        if len(input_shape) != 4:
            raise SpecError(f"conv3d expects a (T, H, W, C) input, got {input_shape}")
        if input_shape[3] != self.in_channels:
            raise SpecError(f"conv3d expects {self.in_channels} input channels, got {input_shape[3]}")
        dims = []
        for size, k, s, (lo, hi) in zip(input_shape[:3], self.kernel_size, self.stride, self._pad_widths()):
            out = (size + lo + hi - k) // s + 1
            if out < 1:
                raise SpecError(f"conv3d kernel {self.kernel_size} does not fit input {input_shape}")
            dims.append(out)
        return tuple(dims) + (self.out_channels,)

    def initialize(self, rng: np.random.Generator, dtype: np.dtype) -> None:
        fan_in = int(np.prod(self.kernel_size)) * self.in_channels
        weight = rng.normal(0.0, np.sqrt(1.0 / fan_in), size=self.params["weight"].shape)
        self.params = {"weight": weight.astype(dtype), "bias": np.zeros(self.out_channels, dtype=dtype)}

    def _slices(self, offset: Tuple[int, int, int], out_dims: Sequence[int]):
        return (slice(None),) + tuple(
            slice(o, o + s * (n - 1) + 1, s) for o, s, n in zip(offset, self.stride, out_dims)
        )

    def _windows(self, xp: np.ndarray, out_dims: Sequence[int]) -> np.ndarray:
        """Strided view (N, T', H', W', C, kt, kh, kw) of every kernel window, no copy."""
        view = sliding_window_view(xp, self.kernel_size, axis=(1, 2, 3))
        st, sh, sw = self.stride
        t, h, w = out_dims
        return view[:, :st * (t - 1) + 1:st, :sh * (h - 1) + 1:sh, :sw * (w - 1) + 1:sw]

    def forward(self, x: np.ndarray) -> np.ndarray:
        xp = np.pad(x, ((0, 0),) + self._pad_widths() + ((0, 0),))
        out_dims = self.output_shape(x.shape[1:])[:3]
        # one contraction over (C, kt, kh, kw); weight is stored (kt, kh, kw, C, out)
        out = np.tensordot(self._windows(xp, out_dims), self.params["weight"], axes=([4, 5, 6, 7], [3, 0, 1, 2]))
        out += self.params["bias"]
        self._cache = (x.shape, xp, out_dims)
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        x_shape, xp, out_dims = self._cache
        weight = self.params["weight"]
        windows = self._windows(xp, out_dims)
        dweight = np.tensordot(windows, dout, axes=([0, 1, 2, 3], [0, 1, 2, 3]))
        dweight = np.ascontiguousarray(dweight.transpose(1, 2, 3, 0, 4))
        # (N, T', H', W', kt, kh, kw, C), scattered back one kernel offset at a time
        dcols = np.tensordot(dout, weight, axes=([4], [4]))
        dxp = np.zeros_like(xp)
        for offset in np.ndindex(*self.kernel_size):
            dxp[self._slices(offset, out_dims)] += dcols[(Ellipsis,) + offset + (slice(None),)]
        self.grads = {"weight": dweight, "bias": dout.sum(axis=(0, 1, 2, 3))}
        (t0, _), (h0, _), (w0, _) = self._pad_widths()
        return dxp[:, t0:t0 + x_shape[1], h0:h0 + x_shape[2], w0:w0 + x_shape[3], :]

    def __repr__(self):
        return "Conv3d({}->{}, kernel={}, stride={}, padding={})".format(
            self.in_channels, self.out_channels, self.kernel_size, self.stride, self.padding
        )


class AvgPool3d(Layer):
    """Non-overlapping average pooling; each pooled extent must divide the input extent."""

    kind = "avgpool3d"

    def __init__(self, pool_size):
        super().__init__(trainable=False)
        self.pool_size = _triple(pool_size)

    def output_shape(self, input_shape: Shape) -> Shape:
        if len(input_shape) != 4:
            raise SpecError(f"avgpool3d expects a (T, H, W, C) input, got {input_shape}")
        for size, p in zip(input_shape[:3], self.pool_size):
            if p < 1 or size % p:
                raise SpecError(f"Pool {self.pool_size} does not divide input {input_shape}")
        return tuple(size // p for size, p in zip(input_shape[:3], self.pool_size)) + (input_shape[3],)

    def forward(self, x: np.ndarray) -> np.ndarray:
        n, t, h, w, c = x.shape
        pt, ph, pw = self.pool_size
        self._cache = x.shape
        return x.reshape(n, t // pt, pt, h // ph, ph, w // pw, pw, c).mean(axis=(2, 4, 6))

    def backward(self, dout: np.ndarray) -> np.ndarray:
        n, t, h, w, c = self._cache
        pt, ph, pw = self.pool_size
        spread = dout[:, :, None, :, None, :, None, :] / (pt * ph * pw)
        spread = np.broadcast_to(spread, (n, t // pt, pt, h // ph, ph, w // pw, pw, c))
        return spread.reshape(n, t, h, w, c)

    def __repr__(self):
        return f"AvgPool3d({self.pool_size})"


class Activation(Layer):
    kind = "activation"
    FUNCTIONS = ("tanh", "relu")

    def __init__(self, function: str = "tanh"):
        super().__init__(trainable=False)
        if function not in self.FUNCTIONS:
            raise SpecError(f"Unknown activation: {function}")
        self.function = function

    def output_shape(self, input_shape: Shape) -> Shape:
        return tuple(input_shape)

    def forward(self, x: np.ndarray) -> np.ndarray:
        if self.function == "tanh":
            out = np.tanh(x)
            self._cache = out
        else:
            self._cache = x > 0
            out = np.where(self._cache, x, 0.0).astype(x.dtype)
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        if self.function == "tanh":
            return dout * (1.0 - self._cache * self._cache)
        return np.where(self._cache, dout, 0.0).astype(dout.dtype)

    def __repr__(self):
        return f"Activation({self.function})"


class Flatten(Layer):
    kind = "flatten"

    def __init__(self):
        super().__init__(trainable=False)

    def output_shape(self, input_shape: Shape) -> Shape:
        return (int(np.prod(input_shape)),)

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return dout.reshape(self._cache)


class Dense(Layer):
    """Affine layer, weight laid out (in_features, out_features)."""

    kind = "dense"

    def __init__(self, in_features: int, out_features: int, trainable: bool = True):
        super().__init__(trainable)
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        self.params = {
            "weight": np.zeros((self.in_features, self.out_features)),
            "bias": np.zeros(self.out_features),
        }

    def output_shape(self, input_shape: Shape) -> Shape:
        if tuple(input_shape) != (self.in_features,):
            raise SpecError(f"dense expects ({self.in_features},) input, got {input_shape}")
        return (self.out_features,)

    def initialize(self, rng: np.random.Generator, dtype: np.dtype) -> None:
        weight = rng.normal(0.0, np.sqrt(1.0 / self.in_features), size=(self.in_features, self.out_features))
        self.params = {"weight": weight.astype(dtype), "bias": np.zeros(self.out_features, dtype=dtype)}

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._cache = x
        return x @ self.params["weight"] + self.params["bias"]

    def backward(self, dout: np.ndarray) -> np.ndarray:
        x = self._cache
        self.grads = {"weight": x.T @ dout, "bias": dout.sum(axis=0)}
        return dout @ self.params["weight"].T

    def __repr__(self):
        return f"Dense({self.in_features}->{self.out_features})"


def last_conv_index(layers: Sequence[Layer]) -> Optional[int]:
    found = None
    for index, layer in enumerate(layers):
        if isinstance(layer, Conv3d):
            found = index
    return found
