import numpy as np

from tt_video_attack.gradcore import ComputeGraph, Conv3d, Dense, Flatten, VideoClip
from tt_video_attack.modelzoo import ArchSpec
from tt_video_attack.synthvid import DatasetSpec

SMALL_SHAPE = (4, 8, 8, 1)


def small_spec(name, **overrides):
    values = dict(input_shape=SMALL_SHAPE, num_classes=3, channels=(2, 3))
    values.update(overrides)
    return ArchSpec(name, **values)


def random_clip(seed=0, shape=SMALL_SHAPE):
    return VideoClip(np.random.default_rng(seed).uniform(0.0, 1.0, size=shape))


def tiny_dataset_spec(**overrides):
    values = dict(
        frames=8,
        height=16,
        width=16,
        directions=("up", "right"),
        speeds=(2,),
        train_per_class=4,
        eval_per_class=3,
        square_size=4,
    )
    values.update(overrides)
    return DatasetSpec(**values)


def biased_model(shape=SMALL_SHAPE, favoured=0, num_classes=2, seed=0):
    """Conv + dense graph whose dense bias makes `favoured` win on any clip in [0, 1]."""
    frames, height, width, _ = shape
    model = ComputeGraph([Conv3d(1, 2, (1, 3, 3)), Flatten(), Dense(frames * height * width * 2, num_classes)], shape)
    model.initialize(seed)
    model.named_parameters()["02.dense.bias"][favoured] = 100.0
    return model
