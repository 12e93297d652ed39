from tt_video_attack.gradcore.graph import ComputeGraph, forward, input_gradient, loss, param_gradient
from tt_video_attack.gradcore.layers import Activation, AvgPool3d, Conv3d, Dense, Flatten, Layer
from tt_video_attack.gradcore.models import VideoClip, check_label, resolve_dtype
from tt_video_attack.gradcore.oracle import Coordinate, central_difference, check_gradients, finite_diff_oracle

__all__ = [
    "Activation",
    "AvgPool3d",
    "ComputeGraph",
    "Conv3d",
    "Coordinate",
    "Dense",
    "Flatten",
    "Layer",
    "VideoClip",
    "central_difference",
    "check_gradients",
    "check_label",
    "finite_diff_oracle",
    "forward",
    "input_gradient",
    "loss",
    "param_gradient",
    "resolve_dtype",
]
