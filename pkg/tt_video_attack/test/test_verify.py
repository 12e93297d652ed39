import unittest

from tt_video_attack.modelzoo import EARLY_POOL, FULL_3D, LATE_TEMPORAL, ArchSpec
from tt_video_attack.verify import (
    QUICK_CHANNELS,
    QUICK_SHAPE,
    run_suite,
    suite_specs,
    verify_augmented_gradient,
    verify_equivariance,
    verify_gradients,
    verify_shift_algebra,
    verify_spearman,
    verify_weight_matrices,
)


def quick_spec(name):
    return ArchSpec(name, input_shape=QUICK_SHAPE, channels=QUICK_CHANNELS)


class TestChecks(unittest.TestCase):

    def test_gradients_of_every_family(self):
        for name in (EARLY_POOL, FULL_3D, LATE_TEMPORAL):
            result = verify_gradients(quick_spec(name), 10, 10)
            self.assertTrue(result.passed, result.detail)

    def test_exact_checks(self):
        for result in (verify_shift_algebra(), verify_weight_matrices(), verify_spearman()):
            self.assertTrue(result.passed, f"{result.name}: {result.detail}")

    def test_augmented_gradient_for_every_strategy(self):
        results = verify_augmented_gradient(quick_spec(LATE_TEMPORAL), count=5)
        self.assertEqual(len(results), 3)
        for result in results:
            self.assertTrue(result.passed, f"{result.name}: {result.detail}")

    def test_equivariance(self):
        result = verify_equivariance(quick_spec(EARLY_POOL))
        self.assertTrue(result.passed, result.detail)

    def test_quick_specs_are_small(self):
        self.assertTrue(all(spec.input_shape == QUICK_SHAPE for spec in suite_specs(quick=True)))
        self.assertEqual(len(suite_specs(quick=False)), 3)


class TestSuite(unittest.TestCase):

    def test_quick_suite_passes(self):
        results = run_suite(quick=True, seed=1)
        failed = [f"{r.name}: {r.detail}" for r in results if not r.passed]
        self.assertEqual(failed, [])
