"""
Synthetic moving-square videos whose classes are defined by motion direction and speed.

Each clip shows a bright square moving with its class's velocity over uniform background
noise. Motion wraps at the borders and every clip closes a loop on the torus (speed * T is a
multiple of H and W), so a circular temporal shift of a clip is another clip of the same
class with a different start position.
"""
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from tt_video_attack.container import read_container, write_container
from tt_video_attack.errors import FormatError, SpecError
from tt_video_attack.gradcore.models import VideoClip
from tt_video_attack.logger import LOGGER as logger


DIRECTIONS = {"up": (-1, 0), "down": (1, 0), "left": (0, -1), "right": (0, 1)}
TRAIN = "train"
EVAL = "eval"
SPLITS = (TRAIN, EVAL)

DATASET_FORMAT = "tt-dataset"


@dataclass(frozen=True)
class DatasetSpec:
    frames: int = 16
    height: int = 16
    width: int = 16
    channels: int = 1
    directions: Tuple[str, ...] = ("up", "down", "left", "right")
    speeds: Tuple[int, ...] = (1, 2)
    train_per_class: int = 32
    eval_per_class: int = 8
    noise: float = 0.1
    square_size: int = 4
    intensity: float = 0.8
    seed: int = 0

    @property
    def clip_shape(self) -> Tuple[int, int, int, int]:
        return (self.frames, self.height, self.width, self.channels)

    @property
    def num_classes(self) -> int:
        return len(self.directions) * len(self.speeds)

    def classes(self) -> List[Tuple[str, int]]:
        """(direction, speed) per class index, direction-major."""
        return [(direction, speed) for direction in self.directions for speed in self.speeds]

    def validate(self) -> "DatasetSpec":
        if self.frames < 8:
            raise SpecError(f"Need T >= 8 frames, got {self.frames}")
        if self.height < 16 or self.width < 16:
            raise SpecError(f"Need H, W >= 16, got {self.height} x {self.width}")
        if self.channels < 1:
            raise SpecError("Need at least one channel")
        unknown = [d for d in self.directions if d not in DIRECTIONS]
        if unknown or not self.directions or len(set(self.directions)) != len(self.directions):
            raise SpecError(f"Directions must be distinct values of {sorted(DIRECTIONS)}, got {self.directions}")
        if not self.speeds or min(self.speeds) < 1 or len(set(self.speeds)) != len(self.speeds):
            raise SpecError(f"Speeds must be distinct positive integers, got {self.speeds}")
        # frame T would land back on frame 0, so the wrap from the last frame to the first is one step
        open_loops = [s for s in self.speeds if (s * self.frames) % self.height or (s * self.frames) % self.width]
        if open_loops:
            raise SpecError(
                f"Speeds {open_loops} over {self.frames} frames do not close a loop on a "
                f"{self.height} x {self.width} frame"
            )
        if self.train_per_class < 0 or self.eval_per_class < 0:
            raise SpecError("Clip counts per class must be non-negative")
        if not 0.0 <= self.noise <= 1.0 or not 0.0 < self.intensity <= 1.0:
            raise SpecError("Noise must lie in [0, 1] and intensity in (0, 1]")
        if not 1 <= self.square_size < min(self.height, self.width):
            raise SpecError(f"Square size {self.square_size} does not fit the frame")
        return self

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Dict) -> "DatasetSpec":
        values = dict(values)
        for key in ("directions", "speeds"):
            if key in values:
                values[key] = tuple(values[key])
        try:
            return cls(**values)
        except TypeError as e:
            raise SpecError(f"Invalid dataset spec: {e}")


@dataclass(frozen=True, eq=False)
class LabeledClip:
    clip: VideoClip
    label: int
    clip_id: str
    split: str = EVAL

    def __eq__(self, other):
        if other.__class__ is not self.__class__:
            return NotImplemented
        mine = (self.clip_id, self.label, self.split, self.clip)
        return mine == (other.clip_id, other.label, other.split, other.clip)

    __hash__ = None  # type: ignore


@dataclass(eq=False)
class Dataset:
    """
    Ordered labeled clips with split tags. `spec` is set for generated datasets; adversarial
    clip sets carry a `provenance` record instead.
    """

    clips: List[LabeledClip]
    num_classes: int
    spec: Optional[DatasetSpec] = None
    provenance: Dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [c.clip_id for c in self.clips]
        if len(set(ids)) != len(ids):
            raise SpecError("Clip ids must be unique")
        for c in self.clips:
            if not 0 <= c.label < self.num_classes:
                raise SpecError(f"Clip {c.clip_id} has label {c.label} outside [0, {self.num_classes})")
            if c.split not in SPLITS:
                raise SpecError(f"Clip {c.clip_id} has unknown split {c.split}")

    def split(self, name: str) -> List[LabeledClip]:
        return [c for c in self.clips if c.split == name]

    def arrays(self, name: str) -> Tuple[np.ndarray, np.ndarray]:
        clips = self.split(name)
        if not clips:
            return np.zeros((0,)), np.zeros((0,), dtype=np.int64)
        return np.stack([c.clip.frames for c in clips]), np.array([c.label for c in clips], dtype=np.int64)

    def check_balance(self) -> None:
        for name in SPLITS:
            counts = Counter(c.label for c in self.split(name))
            if counts and (len(counts) != self.num_classes or len(set(counts.values())) != 1):
                raise SpecError(f"Split {name} is not class balanced: {dict(sorted(counts.items()))}")

    def __eq__(self, other):
        if other.__class__ is not self.__class__:
            return NotImplemented
        return (self.num_classes, self.spec, self.provenance, self.clips) == (
            other.num_classes,
            other.spec,
            other.provenance,
            other.clips,
        )


def render_clip(
    shape: Tuple[int, int, int, int],
    direction: str,
    speed: int,
    start: Tuple[int, int],
    square_size: int,
    intensity: float,
    background: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Frames of one square moving `speed` pixels per frame in `direction`, wrapping at borders.

    Arguments:
        shape {Tuple} -- (T, H, W, C) of the clip.
        start {Tuple[int, int]} -- top-left (row, col) of the square in frame 0.
        background {np.ndarray} -- optional (T, H, W, C) noise added under the square.

    Returns:
        np.ndarray -- frames clamped to [0, 1].
    """
    frames, height, width, channels = shape
    dy, dx = DIRECTIONS[direction]
    base = np.zeros((height, width))
    base[:square_size, :square_size] = intensity
    base = np.roll(base, (start[0], start[1]), axis=(0, 1))
    moving = np.stack([np.roll(base, (dy * speed * t, dx * speed * t), axis=(0, 1)) for t in range(frames)])
    clip = np.repeat(moving[..., None], channels, axis=3)
    if background is not None:
        clip = clip + background
    return np.clip(clip, 0.0, 1.0)


def generate(spec: DatasetSpec) -> Dataset:
    """
    Deterministic dataset for `spec`: train clips first, then eval clips, each class-major.
    Start positions are uniform over the torus, so position carries no class information.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    clips = []
    for split, per_class in ((TRAIN, spec.train_per_class), (EVAL, spec.eval_per_class)):
        for label, (direction, speed) in enumerate(spec.classes()):
            for number in range(per_class):
                start = (int(rng.integers(spec.height)), int(rng.integers(spec.width)))
                background = rng.uniform(0.0, spec.noise, size=spec.clip_shape) if spec.noise > 0 else None
                frames = render_clip(
                    spec.clip_shape, direction, speed, start, spec.square_size, spec.intensity, background
                )
                clip_id = f"{split}-{label:02d}-{number:04d}"
                clips.append(LabeledClip(VideoClip(frames), label, clip_id, split))
    dataset = Dataset(clips, spec.num_classes, spec)
    dataset.check_balance()
    logger.info(f"Generated {len(clips)} clips over {spec.num_classes} classes (seed {spec.seed}).")
    return dataset


def save(dataset: Dataset, path: str) -> None:
    manifest = {
        "format": DATASET_FORMAT,
        "class_count": dataset.num_classes,
        "spec": dataset.spec.to_dict() if dataset.spec else None,
        "provenance": dataset.provenance,
        "clips": [{"id": c.clip_id, "label": c.label, "split": c.split} for c in dataset.clips],
    }
    if dataset.clips:
        frames = np.stack([c.clip.frames for c in dataset.clips])
    else:
        frames = np.zeros((0,))
    labels = np.array([c.label for c in dataset.clips], dtype=np.int64)
    write_container(path, manifest, [("frames", frames), ("labels", labels)])
    logger.info(f"Wrote {len(dataset.clips)} clips to {path}.")


def load(path: str) -> Dataset:
    manifest, records = read_container(path)
    if manifest.get("format") != DATASET_FORMAT:
        raise FormatError(f"{path} is not a dataset container", 0)
    entries = manifest.get("clips", [])
    if "frames" not in records or "labels" not in records:
        raise FormatError("Dataset container lacks frames or labels records", 0)
    frames, labels = records["frames"], records["labels"]
    if not isinstance(entries, list):
        raise FormatError("Manifest clip list is missing or invalid", 0)
    # an empty frames record is stored as shape (0,)
    frame_count = frames.shape[0] if frames.ndim == 5 else (0 if frames.size == 0 else -1)
    if frame_count != len(entries) or labels.shape != (len(entries),):
        raise FormatError(f"Manifest lists {len(entries)} clips, records hold {labels.shape[0]} labels", 0)
    class_count = manifest.get("class_count")
    if not isinstance(class_count, int) or class_count < 1:
        raise FormatError("Manifest class count is missing or invalid", 0)
    if labels.size and (labels.max() >= class_count or labels.min() < 0):
        raise FormatError(f"Labels exceed the manifest class count {class_count}", 0)
    spec = DatasetSpec.from_dict(manifest["spec"]) if manifest.get("spec") else None
    labels_seen = len(np.unique(labels)) if labels.size else class_count
    if spec is not None and (spec.num_classes != class_count or labels_seen != class_count):
        raise FormatError(f"Manifest class count {class_count} does not match the records", 0)

    clips = []
    for index, entry in enumerate(entries):
        if entry["label"] != int(labels[index]):
            raise FormatError(f"Label of clip {entry['id']} differs between manifest and records", 0)
        clips.append(LabeledClip(VideoClip(frames[index]), int(labels[index]), entry["id"], entry["split"]))
    dataset = Dataset(clips, class_count, spec, manifest.get("provenance") or {})
    if spec is not None:
        dataset.check_balance()
    return dataset


def clips_from_arrays(frames: Sequence[np.ndarray], labels: Sequence[int], split: str = TRAIN,
                      prefix: str = "clip") -> List[LabeledClip]:
    return [
        LabeledClip(VideoClip(f), int(y), f"{prefix}-{i:04d}", split) for i, (f, y) in enumerate(zip(frames, labels))
    ]
