from dataclasses import dataclass
from typing import Tuple

import numpy as np

from tt_video_attack.errors import RejectedInputError


PRECISIONS = {"float64": np.float64, "float32": np.float32}


def resolve_dtype(precision: str) -> np.dtype:
    """
    Map a precision mode name to a numpy dtype.

    Arguments:
        precision {str} -- "float64" (oracle runs) or "float32" (throughput runs).

    Returns:
        np.dtype
    """
    try:
        return np.dtype(PRECISIONS[precision])
    except KeyError:
        raise RejectedInputError(f"Unknown precision mode: {precision}")


def check_label(label: int, num_classes: int) -> int:
    label = int(label)
    if not 0 <= label < num_classes:
        raise RejectedInputError(f"Label {label} outside [0, {num_classes})")
    return label


@dataclass(frozen=True, eq=False)
class VideoClip:
    """
    Represents a T x H x W x C video with pixel values in [0, 1].

    The frames are copied on construction and frozen, so a clip can be shared freely.
    """

    frames: np.ndarray

    def __post_init__(self):
        frames = np.array(self.frames, copy=True)
        if not np.issubdtype(frames.dtype, np.floating):
            frames = frames.astype(np.float64)
        if frames.ndim != 4:
            raise RejectedInputError(f"Expected a T x H x W x C clip, got shape {frames.shape}")
        if frames.shape[0] < 2:
            raise RejectedInputError(f"A clip needs at least 2 frames, got {frames.shape[0]}")
        if not np.all(np.isfinite(frames)):
            raise RejectedInputError("Clip contains non-finite values")
        if frames.size and (frames.min() < 0.0 or frames.max() > 1.0):
            raise RejectedInputError("Clip values must lie in [0, 1]")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.frames.shape

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    def __eq__(self, other):
        if other.__class__ is not self.__class__:
            return NotImplemented
        return self.frames.dtype == other.frames.dtype and np.array_equal(self.frames, other.frames)

    __hash__ = None  # type: ignore
