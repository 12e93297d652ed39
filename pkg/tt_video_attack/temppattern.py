"""
Per-frame importance of a clip for a model, and how similarly different models rank frames.
"""
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import scipy.stats as st

from tt_video_attack.errors import NumericFault, ProtocolError, RejectedInputError, SpecError, UnsupportedModelError
from tt_video_attack.gradcore.graph import ComputeGraph
from tt_video_attack.gradcore.layers import Activation, last_conv_index
from tt_video_attack.gradcore.models import VideoClip, check_label
from tt_video_attack.logger import LOGGER as logger, log_progress
from tt_video_attack.modelzoo import predict
from tt_video_attack.synthvid import LabeledClip
from tt_video_attack.ttattack import ADJACENT, ShiftStrategy


ZERO_PAD = "zeropad"
MEAN_PAD = "meanpad"
GRADCAM = "gradcam"
METHODS = (GRADCAM, ZERO_PAD, MEAN_PAD)


@dataclass(frozen=True)
class ImportanceProfile:
    model_id: str
    clip_id: str
    method: str
    values: Tuple[float, ...]

    def __post_init__(self):
        if self.method not in METHODS:
            raise SpecError(f"Unknown importance method {self.method}")
        if not all(np.isfinite(v) for v in self.values):
            raise NumericFault(f"Non-finite importance for clip {self.clip_id} on {self.model_id}")

    def __len__(self):
        return len(self.values)


def _masked_importance(model: ComputeGraph, clip: VideoClip, label: int, variants: List[np.ndarray]) -> np.ndarray:
    """Loss of each variant minus the loss of the untouched clip, in one batch of T+1 passes."""
    check_label(label, model.num_classes)
    batch = np.stack([clip.frames] + variants)
    losses = model.losses(batch, [label] * len(batch))
    model.clear_cache()
    return losses[1:] - losses[0]


def importance_zero_pad(model: ComputeGraph, clip: VideoClip, label: int, model_id: str = "",
                        clip_id: str = "") -> ImportanceProfile:
    """p_i = J(f(x with frame i set to 0), y) - J(f(x), y)."""
    variants = []
    for index in range(clip.num_frames):
        masked = np.array(clip.frames)
        masked[index] = 0.0
        variants.append(masked)
    values = _masked_importance(model, clip, label, variants)
    return ImportanceProfile(model_id or model.name, clip_id, ZERO_PAD, tuple(float(v) for v in values))


def mean_pad_frame(frames: np.ndarray, index: int) -> np.ndarray:
    """Mean of the neighbours of frame `index`; the first and last frames use their single neighbour."""
    if index == 0:
        return frames[1]
    if index == len(frames) - 1:
        return frames[index - 1]
    return (frames[index - 1] + frames[index + 1]) / 2.0


def importance_mean_pad(model: ComputeGraph, clip: VideoClip, label: int, model_id: str = "",
                        clip_id: str = "") -> ImportanceProfile:
    variants = []
    for index in range(clip.num_frames):
        padded = np.array(clip.frames)
        padded[index] = mean_pad_frame(clip.frames, index)
        variants.append(padded)
    values = _masked_importance(model, clip, label, variants)
    return ImportanceProfile(model_id or model.name, clip_id, MEAN_PAD, tuple(float(v) for v in values))


def gradcam_layer(model: ComputeGraph) -> int:
    """
    Index of the layer whose output Grad-CAM reads: the last convolution, or the activation
    right after it.

    Raises:
        UnsupportedModelError: if the graph has no convolution.
    """
    index = last_conv_index(model.layers)
    if index is None:
        raise UnsupportedModelError(f"Model {model.name} has no convolutional layer for Grad-CAM")
    if index + 1 < len(model.layers) and isinstance(model.layers[index + 1], Activation):
        index += 1
    return index


def interpolate_frames(values: np.ndarray, frames: int) -> np.ndarray:
    """Linear resampling of a length-T' sequence onto T frame centres, clamped at both ends."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) == frames:
        return values.copy()
    positions = (np.arange(frames) + 0.5) * len(values) / frames - 0.5
    return np.interp(positions, np.arange(len(values)), values)


def gradcam_map(activations: np.ndarray, gradients: np.ndarray) -> np.ndarray:
    """
    ReLU of the channel sum of (T', H', W', C) activations weighted by the channel-wise mean
    of their gradients.
    """
    weights = gradients.mean(axis=(0, 1, 2))
    return np.maximum((activations * weights).sum(axis=-1), 0.0)


def importance_gradcam(model: ComputeGraph, clip: VideoClip, label: int, model_id: str = "",
                       clip_id: str = "") -> ImportanceProfile:
    """Spatial mean of each frame's Grad-CAM attention for the logit of `label`."""
    check_label(label, model.num_classes)
    index = gradcam_layer(model)
    logits = model.forward_batch(clip.frames[None])
    target = np.zeros_like(logits)
    target[0, label] = 1.0
    model.backward(target)
    attention = gradcam_map(model.activation(index)[0], model.activation_gradient(index)[0])
    model.clear_cache()
    values = interpolate_frames(attention.mean(axis=(1, 2)), clip.num_frames)
    return ImportanceProfile(model_id or model.name, clip_id, GRADCAM, tuple(float(v) for v in values))


IMPORTANCE = {ZERO_PAD: importance_zero_pad, MEAN_PAD: importance_mean_pad, GRADCAM: importance_gradcam}


def importance(method: str, model: ComputeGraph, clip: VideoClip, label: int, model_id: str = "",
               clip_id: str = "") -> ImportanceProfile:
    if method not in IMPORTANCE:
        raise SpecError(f"Unknown importance method {method}; expected one of {METHODS}")
    return IMPORTANCE[method](model, clip, label, model_id, clip_id)


def importance_ranks(values: Sequence[float]) -> np.ndarray:
    """Rank 1 for the most important frame; equal values rank the lower frame index first."""
    return st.rankdata(-np.asarray(values, dtype=np.float64), method="ordinal").astype(np.int64)


def rank_correlation(values_a: Sequence[float], values_b: Sequence[float]) -> float:
    """1 - 6 sum(d^2) / (T (T^2 - 1)) over the importance ranks, evaluated exactly."""
    if len(values_a) != len(values_b):
        raise RejectedInputError(f"Profiles differ in length: {len(values_a)} vs {len(values_b)}")
    frames = len(values_a)
    if frames < 2:
        raise RejectedInputError("Rank correlation needs at least 2 frames")
    d = importance_ranks(values_a) - importance_ranks(values_b)
    squared = int(np.sum(d * d))
    return float(1 - Fraction(6 * squared, frames * (frames * frames - 1)))


def spearman_rho(profile_a: ImportanceProfile, profile_b: ImportanceProfile) -> float:
    if profile_a.clip_id != profile_b.clip_id:
        raise RejectedInputError(f"Profiles belong to different clips: {profile_a.clip_id}, {profile_b.clip_id}")
    return rank_correlation(profile_a.values, profile_b.values)


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    model_ids: Tuple[str, ...]
    method: str
    matrix: np.ndarray
    clip_count: int

    def __post_init__(self):
        n = len(self.model_ids)
        if self.matrix.shape != (n, n):
            raise SpecError(f"Correlation matrix shape {self.matrix.shape} does not match {n} models")
        if not np.array_equal(self.matrix, self.matrix.T) or not np.all(np.diag(self.matrix) == 1.0):
            raise SpecError("Correlation matrix must be symmetric with a unit diagonal")

    def value(self, model_a: str, model_b: str) -> float:
        return float(self.matrix[self.model_ids.index(model_a), self.model_ids.index(model_b)])

    def to_dict(self) -> Dict:
        return {
            "model_ids": list(self.model_ids),
            "method": self.method,
            "clip_count": self.clip_count,
            "matrix": [[float(v) for v in row] for row in self.matrix],
        }


def eligible_clips(models: Mapping[str, ComputeGraph], clips: Sequence[LabeledClip]) -> List[LabeledClip]:
    """Clips every model classifies correctly, in their original order."""
    return [c for c in clips if all(predict(model, c.clip) == c.label for model in models.values())]


def model_correlation(
    models: Mapping[str, ComputeGraph], clips: Sequence[LabeledClip], method: str
) -> CorrelationMatrix:
    """
    Mean Spearman correlation of importance profiles for every model pair, over the clips that
    all models classify correctly.

    Raises:
        ProtocolError: if no clip is classified correctly by every model.
    """
    if method not in METHODS:
        raise SpecError(f"Unknown importance method {method}; expected one of {METHODS}")
    model_ids = tuple(models)
    eligible = eligible_clips(models, clips)
    if not eligible:
        raise ProtocolError(f"No clip is classified correctly by all of {list(model_ids)}")

    totals = {pair: Fraction(0) for pair in combinations(range(len(model_ids)), 2)}
    for done, labeled in enumerate(eligible, 1):
        profiles = [
            importance(method, models[model_id], labeled.clip, labeled.label, model_id, labeled.clip_id)
            for model_id in model_ids
        ]
        for a, b in totals:
            totals[(a, b)] += Fraction(spearman_rho(profiles[a], profiles[b]))
        log_progress(f"{method} correlation", done, len(eligible))

    matrix = np.eye(len(model_ids))
    for (a, b), total in totals.items():
        matrix[a, b] = matrix[b, a] = float(total / len(eligible))
    logger.info(f"{method} correlation over {len(eligible)} clips for {len(model_ids)} models.")
    return CorrelationMatrix(model_ids, method, matrix, len(eligible))


@dataclass(frozen=True)
class ShiftLossProfile:
    """Mean white-box loss of the clips translated by each shift index, for i = -L..L."""

    model_id: str
    strategy: str
    shifts: Tuple[int, ...]
    mean_losses: Tuple[float, ...]
    clip_count: int

    def to_dict(self) -> Dict:
        return {
            "model_id": self.model_id,
            "strategy": self.strategy,
            "shifts": list(self.shifts),
            "mean_losses": list(self.mean_losses),
            "clip_count": self.clip_count,
        }


def shift_loss_profile(model: ComputeGraph, clips: Sequence[LabeledClip], shift_length: int,
                       strategy: Optional[ShiftStrategy] = None, model_id: str = "") -> ShiftLossProfile:
    """
    A model insensitive to frame order shows a flat profile; one that relies on a specific
    temporal pattern loses accuracy away from shift 0.
    """
    strategy = strategy or ShiftStrategy(ADJACENT)
    if not clips:
        raise ProtocolError("Shift-loss profile needs at least one clip")
    shifts = tuple(range(-shift_length, shift_length + 1))
    totals = np.zeros(len(shifts))
    for labeled in clips:
        frames = labeled.clip.frames
        translations = [strategy.translation(shift, labeled.clip.num_frames) for shift in shifts]
        totals += model.losses(np.stack([t.apply(frames) for t in translations]), [labeled.label] * len(shifts))
    model.clear_cache()
    means = totals / len(clips)
    return ShiftLossProfile(model_id or model.name, strategy.kind, shifts, tuple(float(v) for v in means), len(clips))
