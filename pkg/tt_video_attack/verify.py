"""
Self-check suite run by `tt-video-attack verify`: gradient oracles, shift algebra, weight
matrices, the augmented-gradient identity, equivariance and the rank correlation.
"""
from dataclasses import dataclass
from fractions import Fraction
from itertools import permutations
from typing import Callable, List, Sequence

import numpy as np

from tt_video_attack.gradcore.graph import input_gradient
from tt_video_attack.gradcore.models import VideoClip
from tt_video_attack.gradcore.oracle import central_difference, check_gradients, gradients_agree
from tt_video_attack.logger import LOGGER as logger
from tt_video_attack.modelzoo import ARCHITECTURES, EARLY_POOL, FULL_3D, ArchSpec, build_model
from tt_video_attack.temppattern import importance_ranks, rank_correlation
from tt_video_attack.ttattack import (
    GAUSSIAN,
    LINEAR,
    STRATEGIES,
    WEIGHT_KINDS,
    ShiftStrategy,
    augmented_gradient,
    build_weight_matrix,
    preset,
    surrogate_loss,
    temporal_shift,
    tt_attack,
)

QUICK_SHAPE = (8, 16, 16, 1)
QUICK_CHANNELS = (2, 3)
EQUIVARIANCE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def random_clip(shape: Sequence[int], seed: int) -> VideoClip:
    return VideoClip(np.random.default_rng(seed).uniform(0.0, 1.0, size=tuple(shape)))


def verify_gradients(spec: ArchSpec, input_count: int = 100, param_count: int = 100, seed: int = 0) -> CheckResult:
    model = build_model(spec)
    clip = random_clip(spec.input_shape, seed)
    checks = check_gradients(model, clip, seed % spec.num_classes, input_count, param_count, seed)
    failures = [check for check in checks if not check.agrees()]
    worst = max((check.error for check in checks), default=0.0)
    return CheckResult(f"gradients[{spec.name}]", not failures,
                       f"{len(checks)} coordinates, {len(failures)} disagree, worst abs error {worst:.3e}")


def verify_shift_algebra(shape: Sequence[int] = QUICK_SHAPE, seed: int = 0) -> CheckResult:
    x = np.random.default_rng(seed).normal(size=tuple(shape))
    frames = x.shape[0]
    problems = []
    if not np.array_equal(temporal_shift(x, 0), x):
        problems.append("shift 0 is not the identity")
    for shift in range(-(frames - 1), frames):
        if not np.array_equal(temporal_shift(temporal_shift(x, shift), -shift), x):
            problems.append(f"round trip of shift {shift}")
        for kind in STRATEGIES:
            translation = ShiftStrategy(kind, seed).translation(shift, frames)
            if not np.array_equal(translation.revert(translation.apply(x)), x):
                problems.append(f"{kind} inverse of shift {shift}")
            if not np.array_equal(translation.permutation[translation.inverse], np.arange(frames)):
                problems.append(f"{kind} permutation of shift {shift}")
    return CheckResult("shift-algebra", not problems, "; ".join(problems) or f"all shifts below {frames} frames")


def verify_weight_matrices(max_length: int = 9) -> CheckResult:
    problems = []
    for kind in WEIGHT_KINDS:
        for length in range(max_length + 1):
            w = build_weight_matrix(kind, length)
            if abs(sum(w.weights) - 1.0) > 1e-9:
                problems.append(f"{kind} L={length} sums to {sum(w.weights)!r}")
            if any(w.weight(i) != w.weight(-i) for i in w.indices):
                problems.append(f"{kind} L={length} is not symmetric")
            if min(w.weights) <= 0:
                problems.append(f"{kind} L={length} has a non-positive weight")
            if kind == GAUSSIAN and w.sigma != length / 3.0:
                problems.append(f"gaussian L={length} has sigma {w.sigma}")
    linear = build_weight_matrix(LINEAR, 1).weights
    if not np.allclose(linear, (2 / 7, 3 / 7, 2 / 7), rtol=0, atol=1e-12):
        problems.append(f"linear L=1 is {linear}")
    return CheckResult("weight-matrices", not problems, "; ".join(problems) or f"L in 0..{max_length}")


def verify_augmented_gradient(spec: ArchSpec, shift_length: int = 2, count: int = 50, seed: int = 0,
                              step: float = 1e-5) -> List[CheckResult]:
    """The augmented gradient against central differences of the weighted surrogate loss."""
    model = build_model(spec)
    clip = random_clip(spec.input_shape, seed + 1)
    label = (seed + 1) % spec.num_classes
    weights = build_weight_matrix(GAUSSIAN, shift_length)
    results = []
    for kind in STRATEGIES:
        strategy = ShiftStrategy(kind, seed)
        analytic = augmented_gradient(model, clip, label, weights, strategy)
        fn: Callable[[np.ndarray], float] = lambda frames, s=strategy: surrogate_loss(model, frames, label, weights, s)
        indices = np.random.default_rng(seed).integers(0, clip.frames.size, size=count)
        failures = 0
        for index in indices:
            numeric = central_difference(fn, clip.frames, int(index), step)
            if not gradients_agree(float(analytic.flat[index]), numeric):
                failures += 1
        detail = f"{failures}/{count} coordinates disagree"
        results.append(CheckResult(f"augmented-gradient[{kind}]", failures == 0, detail))
    model.clear_cache()
    return results


def verify_equivariance(spec: ArchSpec, seed: int = 0) -> CheckResult:
    """On a frame-order-blind model, temporal augmentation must change nothing."""
    model = build_model(spec)
    clip = random_clip(spec.input_shape, seed + 2)
    label = seed % spec.num_classes
    shift_length = min(7, clip.num_frames - 1)
    weights = build_weight_matrix(GAUSSIAN, shift_length)
    grad_gap = float(np.max(np.abs(
        augmented_gradient(model, clip, label, weights, ShiftStrategy()) - input_gradient(model, clip, label)
    )))
    bim = tt_attack(model, clip, label, preset("bim"))
    tt_bim = tt_attack(model, clip, label, preset("tt-bim", shift_length=shift_length))
    clip_gap = float(np.max(np.abs(bim.adversarial.frames - tt_bim.adversarial.frames)))
    in_ball = all(
        np.max(np.abs(r.perturbation)) <= r.config.epsilon + 1e-9
        and r.adversarial.frames.min() >= 0.0
        and r.adversarial.frames.max() <= 1.0
        for r in (bim, tt_bim)
    )
    passed = grad_gap <= EQUIVARIANCE_TOLERANCE and clip_gap <= EQUIVARIANCE_TOLERANCE and in_ball
    return CheckResult(f"equivariance[{spec.name}]", passed,
                       f"gradient gap {grad_gap:.3e}, clip gap {clip_gap:.3e}, inside ball: {in_ball}")


def rank_pearson(values_a: Sequence[float], values_b: Sequence[float]) -> Fraction:
    """Pearson correlation of the two rank vectors, in exact arithmetic."""
    ranks_a, ranks_b = importance_ranks(values_a), importance_ranks(values_b)
    mean = Fraction(len(ranks_a) + 1, 2)
    covariance = sum((int(a) - mean) * (int(b) - mean) for a, b in zip(ranks_a, ranks_b))
    # both rank vectors are permutations of 1..T, so their variances are equal
    variance = sum((int(a) - mean) ** 2 for a in ranks_a)
    return covariance / variance


def verify_spearman(frames: int = 5) -> CheckResult:
    problems = []
    reference = list(range(frames, 0, -1))
    for order in permutations(range(1, frames + 1)):
        rho = rank_correlation(reference, order)
        if rho != float(rank_pearson(reference, order)):
            problems.append(f"{order}: {rho!r}")
    if rank_correlation(reference, reference) != 1.0:
        problems.append("identical profiles")
    if rank_correlation(reference, reference[::-1]) != -1.0:
        problems.append("reversed profiles")
    if abs(rank_correlation((3, 1, 2), (3, 2, 1)) - 0.5) > 1e-12:
        problems.append("(3, 1, 2) vs (3, 2, 1)")
    return CheckResult("spearman", not problems, "; ".join(problems[:5]) or f"all permutations of {frames}")


def suite_specs(quick: bool) -> List[ArchSpec]:
    if quick:
        return [ArchSpec(name, input_shape=QUICK_SHAPE, channels=QUICK_CHANNELS) for name in ARCHITECTURES]
    return [ArchSpec(name) for name in ARCHITECTURES]


def run_suite(quick: bool = False, seed: int = 0) -> List[CheckResult]:
    """
    Run every check. `quick` swaps in small architectures and fewer sampled coordinates.
    """
    specs = suite_specs(quick)
    count = 20 if quick else 100
    results = [verify_gradients(spec, count, count, seed) for spec in specs]
    results.append(verify_shift_algebra(specs[0].input_shape, seed))
    results.append(verify_weight_matrices())
    full_3d = next(spec for spec in specs if spec.name == FULL_3D)
    results.extend(verify_augmented_gradient(full_3d, count=10 if quick else 50, seed=seed))
    results.append(verify_equivariance(next(spec for spec in specs if spec.name == EARLY_POOL), seed))
    results.append(verify_spearman())
    for result in results:
        log = logger.info if result.passed else logger.error
        log(f"{'PASS' if result.passed else 'FAIL'} {result.name}: {result.detail}")
    return results
