"""
Temporal translation attack and the FGSM / BIM / MI / TI family it generalizes.

The update direction combines the input gradients of 2L+1 temporally translated copies of
the current adversarial clip, each shifted back to the original frame order and weighted
by a symmetric weight matrix.
"""
import hashlib
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.stats as st
from scipy import ndimage

from tt_video_attack.container import canonical_json
from tt_video_attack.errors import NumericFault, RejectedInputError, ShiftRangeError, SpecError
from tt_video_attack.gradcore.graph import ComputeGraph
from tt_video_attack.gradcore.models import VideoClip, check_label
from tt_video_attack.logger import LOGGER as logger


UNIFORM = "uniform"
LINEAR = "linear"
GAUSSIAN = "gaussian"
WEIGHT_KINDS = (UNIFORM, LINEAR, GAUSSIAN)

ADJACENT = "adjacent"
RANDOM = "random"
REMOTE = "remote"
STRATEGIES = (ADJACENT, RANDOM, REMOTE)

DEFAULT_EPSILON = 16.0 / 255.0

ArrayOrClip = Union[np.ndarray, VideoClip]


def _frames_of(x: ArrayOrClip) -> np.ndarray:
    return x.frames if isinstance(x, VideoClip) else np.asarray(x)


def temporal_shift(x: ArrayOrClip, shift: int, axis: int = 0) -> np.ndarray:
    """
    Circular shift along the frame axis: output frame t is input frame (t - shift) mod T.

    Raises:
        ShiftRangeError: if |shift| >= T.
    """
    frames = _frames_of(x)
    length = frames.shape[axis]
    if abs(shift) >= length:
        raise ShiftRangeError(f"Shift {shift} out of range for {length} frames")
    return np.roll(frames, shift, axis=axis)


@dataclass(frozen=True)
class WeightMatrix:
    """Symmetric positive weights for shifts -L..L, stored in that order."""

    kind: str
    shift_length: int
    weights: Tuple[float, ...]
    sigma: Optional[float] = None

    @property
    def indices(self) -> range:
        return range(-self.shift_length, self.shift_length + 1)

    def weight(self, shift: int) -> float:
        return self.weights[shift + self.shift_length]


def build_weight_matrix(kind: str, shift_length: int) -> WeightMatrix:
    """
    Uniform: 1/(2L+1). Linear: proportional to 1 - |i|/(2L+1). Gaussian: proportional to
    exp(-i^2 / 2 sigma^2) with sigma = L/3. Linear and Gaussian are normalized to sum 1.
    L = 0 gives the single weight 1 for every kind.
    """
    if kind not in WEIGHT_KINDS:
        raise SpecError(f"Unknown weight matrix kind {kind}; expected one of {WEIGHT_KINDS}")
    if shift_length < 0:
        raise SpecError(f"Shift length must be non-negative, got {shift_length}")
    sigma = shift_length / 3.0 if kind == GAUSSIAN else None
    if shift_length == 0:
        return WeightMatrix(kind, 0, (1.0,), sigma)

    # evaluated on |i| so that w_i and w_-i are the same float
    distance = np.abs(np.arange(-shift_length, shift_length + 1)).astype(np.float64)
    if kind == UNIFORM:
        raw = np.ones_like(distance)
    elif kind == LINEAR:
        raw = 1.0 - distance / (2 * shift_length + 1)
    else:
        raw = st.norm.pdf(distance, scale=sigma)
    weights = raw / raw.sum()
    return WeightMatrix(kind, shift_length, tuple(float(w) for w in weights), sigma)


@dataclass(frozen=True, eq=False)
class TemporalTranslation:
    """
    A frame permutation and its recorded inverse: apply(x)[t] = x[permutation[t]] and
    revert(apply(x)) == x.
    """

    shift: int
    permutation: np.ndarray
    inverse: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return x[self.permutation]

    def revert(self, x: np.ndarray) -> np.ndarray:
        return x[self.inverse]


def _translation(shift: int, permutation: np.ndarray) -> TemporalTranslation:
    return TemporalTranslation(shift, permutation, np.argsort(permutation))


@dataclass(frozen=True)
class ShiftStrategy:
    """
    adjacent shifts copy i by i frames, remote by i + floor(T/2) frames, random draws a
    seeded frame permutation per copy index (copy 0 stays the identity). Random permutations
    depend only on (seed, i), so they stay fixed across attack iterations.
    """

    kind: str = ADJACENT
    seed: int = 0

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise SpecError(f"Unknown shift strategy {self.kind}; expected one of {STRATEGIES}")

    def translation(self, shift: int, frames: int) -> TemporalTranslation:
        positions = np.arange(frames)
        if self.kind == ADJACENT:
            if abs(shift) >= frames:
                raise ShiftRangeError(f"Shift {shift} out of range for {frames} frames")
            return _translation(shift, (positions - shift) % frames)
        if self.kind == REMOTE:
            return _translation(shift, (positions - (shift + frames // 2)) % frames)
        if shift == 0:
            return _translation(0, positions)
        rng = np.random.default_rng([self.seed, 2 * abs(shift) + (1 if shift < 0 else 0)])
        return _translation(shift, rng.permutation(frames))


def augmented_gradient(
    model: ComputeGraph, x: ArrayOrClip, label: int, weights: WeightMatrix, strategy: ShiftStrategy
) -> np.ndarray:
    """
    Sum over i of w_i * TR_-i(grad J(f(TR_i(x)), y)).

    All 2L+1 translated copies go through the graph as one batch; the weighted sum runs in
    fixed index order.
    """
    check_label(label, model.num_classes)
    frames = np.asarray(_frames_of(x), dtype=np.float64)
    translations = [strategy.translation(shift, frames.shape[0]) for shift in weights.indices]
    batch = np.stack([t.apply(frames) for t in translations])
    _, grads = model.input_gradients(batch, [label] * len(translations))
    combined = np.zeros_like(frames)
    for translation, grad in zip(translations, grads):
        combined += weights.weight(translation.shift) * translation.revert(grad)
    return combined


def surrogate_loss(
    model: ComputeGraph, x: ArrayOrClip, label: int, weights: WeightMatrix, strategy: ShiftStrategy
) -> float:
    """Sum over i of w_i * J(f(TR_i(x)), y); augmented_gradient is its exact gradient."""
    frames = np.asarray(_frames_of(x), dtype=np.float64)
    translations = [strategy.translation(shift, frames.shape[0]) for shift in weights.indices]
    losses = model.losses(np.stack([t.apply(frames) for t in translations]), [label] * len(translations))
    return float(sum(weights.weight(t.shift) * float(value) for t, value in zip(translations, losses)))


def clamp_to_ball(x_adv: np.ndarray, x_clean: np.ndarray, epsilon: float) -> np.ndarray:
    """Clamp elementwise into [x_clean - eps, x_clean + eps] and then into [0, 1]."""
    return np.clip(np.clip(x_adv, x_clean - epsilon, x_clean + epsilon), 0.0, 1.0)


def project_ball(x_adv: ArrayOrClip, x_clean: ArrayOrClip, epsilon: float) -> VideoClip:
    x_adv, x_clean = _frames_of(x_adv), _frames_of(x_clean)
    if x_adv.shape != x_clean.shape:
        raise RejectedInputError(f"Shape mismatch: {x_adv.shape} vs {x_clean.shape}")
    return VideoClip(clamp_to_ball(x_adv, x_clean, epsilon))


def gaussian_kernel(radius: int, sigma: Optional[float] = None) -> np.ndarray:
    """Normalized (2r+1) x (2r+1) Gaussian, sigma = r / sqrt(3) unless given."""
    sigma = sigma if sigma is not None else radius / np.sqrt(3.0)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kern1d = st.norm.pdf(x, scale=sigma)
    kernel = np.outer(kern1d, kern1d)
    return kernel / kernel.sum()


def smooth_spatially(grad: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Convolve every frame and channel of a (T, H, W, C) gradient with a 2D kernel, zero padded."""
    return ndimage.convolve(grad, kernel[None, :, :, None], mode="constant", cval=0.0)


@dataclass(frozen=True)
class AttackConfig:
    """
    One attack recipe. L = 0 gives FGSM (I = 1) or BIM (I > 1); momentum > 0 adds MI and
    ti_radius > 0 adds TI smoothing of the gradient.
    """

    name: str = "tt-bim"
    epsilon: float = DEFAULT_EPSILON
    iterations: int = 10
    shift_length: int = 7
    weight_kind: str = GAUSSIAN
    strategy: str = ADJACENT
    strategy_seed: int = 0
    momentum: float = 0.0
    ti_radius: int = 0
    sign_step: bool = True

    @property
    def alpha(self) -> float:
        return self.epsilon / self.iterations

    def validate(self, frames: Optional[int] = None) -> "AttackConfig":
        if not 0.0 <= self.epsilon <= 1.0:
            raise SpecError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.iterations < 1:
            raise SpecError(f"Need at least one iteration, got {self.iterations}")
        if self.shift_length < 0 or (frames is not None and self.shift_length >= frames):
            raise SpecError(f"Shift length {self.shift_length} must lie in [0, T)")
        if self.weight_kind not in WEIGHT_KINDS or self.strategy not in STRATEGIES:
            raise SpecError(f"Unknown weight kind {self.weight_kind} or strategy {self.strategy}")
        if self.momentum < 0 or self.ti_radius < 0:
            raise SpecError("momentum and ti_radius must be non-negative")
        return self

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Dict) -> "AttackConfig":
        try:
            return cls(**values)
        except TypeError as e:
            raise SpecError(f"Invalid attack config: {e}")

    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.to_dict()).encode("utf-8")).hexdigest()[:16]


PRESETS = {
    "fgsm": dict(iterations=1, shift_length=0),
    "bim": dict(iterations=10, shift_length=0),
    "tt-fgsm": dict(iterations=1, shift_length=7),
    "tt-bim": dict(iterations=10, shift_length=7),
    "mi": dict(iterations=10, shift_length=0, momentum=1.0),
    "mi-tt": dict(iterations=10, shift_length=7, momentum=1.0),
    "ti": dict(iterations=1, shift_length=0, ti_radius=3),
    "ti-tt": dict(iterations=1, shift_length=7, ti_radius=3),
}


def preset(key: str, **overrides) -> AttackConfig:
    """Named attack recipe; keyword overrides win over the preset values."""
    if key not in PRESETS:
        raise SpecError(f"Unknown attack preset {key}; expected one of {sorted(PRESETS)}")
    values = dict(PRESETS[key], name=key)
    values.update(overrides)
    return AttackConfig(**values)


@dataclass(frozen=True, eq=False)
class AdversarialResult:
    clip_id: str
    label: int
    clean: VideoClip
    adversarial: VideoClip
    loss: float
    config: AttackConfig
    loss_history: Tuple[float, ...] = field(default_factory=tuple)

    @property
    def perturbation(self) -> np.ndarray:
        return self.adversarial.frames - self.clean.frames


def _white_box_loss(model: ComputeGraph, frames: np.ndarray, label: int) -> float:
    return float(model.losses(frames[None], [label])[0])


def tt_attack(
    model: ComputeGraph, clip: VideoClip, label: int, cfg: AttackConfig, clip_id: str = ""
) -> AdversarialResult:
    """
    Iterate x_{k+1} = clip_{x,eps}(x_k + alpha * sign(g)) with alpha = eps / I, where g is the
    augmented gradient, optionally TI-smoothed and momentum-accumulated.

    Raises:
        NumericFault: carrying the iteration index the fault occurred in.
    """
    cfg.validate(clip.num_frames)
    check_label(label, model.num_classes)
    clean = np.asarray(clip.frames, dtype=np.float64)
    weights = build_weight_matrix(cfg.weight_kind, cfg.shift_length)
    strategy = ShiftStrategy(cfg.strategy, cfg.strategy_seed)
    kernel = gaussian_kernel(cfg.ti_radius) if cfg.ti_radius > 0 else None
    alpha = cfg.alpha

    x_adv = clean.copy()
    accumulated = np.zeros_like(clean)
    history = []
    for iteration in range(cfg.iterations):
        try:
            history.append(_white_box_loss(model, x_adv, label))
            grad = augmented_gradient(model, x_adv, label, weights, strategy)
        except NumericFault as e:
            raise NumericFault(str(e), iteration=iteration)
        if kernel is not None:
            grad = smooth_spatially(grad, kernel)
        if cfg.momentum > 0:
            norm = np.abs(grad).sum()
            grad = cfg.momentum * accumulated + (grad / norm if norm > 0 else grad)
            accumulated = grad
        step = np.sign(grad) if cfg.sign_step else grad
        x_adv = clamp_to_ball(x_adv + alpha * step, clean, cfg.epsilon)
        if not np.all(np.isfinite(x_adv)):
            raise NumericFault("Adversarial clip became non-finite", iteration=iteration)
    try:
        final_loss = _white_box_loss(model, x_adv, label)
    except NumericFault as e:
        raise NumericFault(str(e), iteration=cfg.iterations)
    history.append(final_loss)
    model.clear_cache()
    logger.debug(f"{cfg.name} on {clip_id or 'clip'}: white-box loss {history[0]:.4f} -> {final_loss:.4f}")
    return AdversarialResult(clip_id, label, clip, VideoClip(x_adv), final_loss, cfg, tuple(history))


def tt_attack_many(model: ComputeGraph, clips: Sequence[Tuple[str, VideoClip, int]], cfg: AttackConfig):
    """Attack clips one after another on the same graph, in order."""
    return [tt_attack(model, clip, label, cfg, clip_id) for clip_id, clip, label in clips]
