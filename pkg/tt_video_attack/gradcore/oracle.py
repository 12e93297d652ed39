"""
Central finite-difference oracle used to verify the analytic gradients of the engine.
"""
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from tt_video_attack.errors import RejectedInputError
from tt_video_attack.gradcore.graph import ComputeGraph, input_gradient, param_gradient
from tt_video_attack.gradcore.losses import softmax_cross_entropy
from tt_video_attack.gradcore.models import VideoClip


INPUT = "input"

DEFAULT_STEP = 1e-5
DEFAULT_RTOL = 1e-6
DEFAULT_ATOL = 1e-8


@dataclass(frozen=True)
class Coordinate:
    """
    One scalar element the oracle can perturb: `target` is "input" or a parameter name
    from `ComputeGraph.named_parameters()`, `index` is the flat element index.
    """

    target: str
    index: int


@dataclass(frozen=True)
class CoordinateCheck:
    coordinate: Coordinate
    analytic: float
    numeric: float

    @property
    def error(self) -> float:
        return abs(self.analytic - self.numeric)

    def agrees(self, rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL) -> bool:
        return gradients_agree(self.analytic, self.numeric, rtol, atol)


def gradients_agree(analytic: float, numeric: float, rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL) -> bool:
    """Relative agreement with an absolute floor for values near zero."""
    scale = max(abs(analytic), abs(numeric))
    return abs(analytic - numeric) <= max(rtol * scale, atol)


def central_difference(fn: Callable[[np.ndarray], float], x: np.ndarray, index: int, step: float) -> float:
    """
    (fn(x + step e) - fn(x - step e)) / (2 step) for the flat element `index` of x.
    x itself is never modified.
    """
    if step <= 0:
        raise RejectedInputError(f"Finite-difference step must be positive, got {step}")
    x = np.asarray(x, dtype=np.float64)
    if not 0 <= index < x.size:
        raise RejectedInputError(f"Coordinate {index} outside an array of {x.size} elements")
    plus = x.copy()
    plus.flat[index] += step
    minus = x.copy()
    minus.flat[index] -= step
    return (fn(plus) - fn(minus)) / (2.0 * step)


def _clip_loss(model: ComputeGraph, label: int) -> Callable[[np.ndarray], float]:
    def evaluate(frames: np.ndarray) -> float:
        return float(softmax_cross_entropy(model.forward_batch(frames[None]), np.array([label]))[0])

    return evaluate


def finite_diff_oracle(model: ComputeGraph, clip: VideoClip, label: int, coordinate: Coordinate,
                       step: float = DEFAULT_STEP) -> float:
    """
    Central difference of the clip loss along one input or parameter coordinate.

    Parameter coordinates are perturbed in place and restored to their exact original value
    before returning. The clip is evaluated unclamped, so coordinates at 0 or 1 are fine.
    """
    if step <= 0:
        raise RejectedInputError(f"Finite-difference step must be positive, got {step}")
    frames = np.asarray(clip.frames, dtype=np.float64)
    evaluate = _clip_loss(model, label)
    if coordinate.target == INPUT:
        return central_difference(evaluate, frames, coordinate.index, step)

    params = model.named_parameters()
    if coordinate.target not in params:
        raise RejectedInputError(f"Unknown parameter: {coordinate.target}")
    values = params[coordinate.target]
    if not 0 <= coordinate.index < values.size:
        raise RejectedInputError(f"Coordinate {coordinate.index} outside parameter {coordinate.target}")
    original = values.flat[coordinate.index]
    try:
        values.flat[coordinate.index] = original + step
        plus = evaluate(frames)
        values.flat[coordinate.index] = original - step
        minus = evaluate(frames)
    finally:
        values.flat[coordinate.index] = original
        model.clear_cache()
    return (plus - minus) / (2.0 * step)


def sample_input_coordinates(model: ComputeGraph, count: int, rng: np.random.Generator) -> List[Coordinate]:
    size = int(np.prod(model.input_shape))
    return [Coordinate(INPUT, int(i)) for i in rng.integers(0, size, size=count)]


def sample_param_coordinates(model: ComputeGraph, count: int, rng: np.random.Generator) -> List[Coordinate]:
    """Uniform over all parameter elements of the graph."""
    params = model.named_parameters()
    names = list(params)
    offsets = np.cumsum([0] + [params[name].size for name in names])
    coordinates = []
    for flat in rng.integers(0, offsets[-1], size=count):
        slot = int(np.searchsorted(offsets, flat, side="right")) - 1
        coordinates.append(Coordinate(names[slot], int(flat - offsets[slot])))
    return coordinates


def check_gradients(
    model: ComputeGraph,
    clip: VideoClip,
    label: int,
    input_count: int = 100,
    param_count: int = 100,
    seed: int = 0,
    step: float = DEFAULT_STEP,
    rng: Optional[np.random.Generator] = None,
) -> List[CoordinateCheck]:
    """
    Compare analytic input and parameter gradients with the oracle on random coordinates.

    Returns:
        List[CoordinateCheck] -- one entry per sampled coordinate, inputs first.
    """
    rng = rng or np.random.default_rng(seed)
    checks = []
    grad_input = input_gradient(model, clip, label)
    for coordinate in sample_input_coordinates(model, input_count, rng):
        numeric = finite_diff_oracle(model, clip, label, coordinate, step)
        checks.append(CoordinateCheck(coordinate, float(grad_input.flat[coordinate.index]), numeric))

    grad_params = param_gradient(model, [(clip, label)])
    for coordinate in sample_param_coordinates(model, param_count, rng):
        numeric = finite_diff_oracle(model, clip, label, coordinate, step)
        analytic = float(grad_params[coordinate.target].flat[coordinate.index])
        checks.append(CoordinateCheck(coordinate, analytic, numeric))
    return checks
