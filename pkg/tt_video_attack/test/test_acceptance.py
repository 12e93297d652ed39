"""
Desk-scale experiments on the full model grid. They train six models and run several
benchmarks, so they only run with TT_RUN_ACCEPTANCE=1.

early-pool sees only the time-averaged streak of a closed loop, so it cannot reach the
accuracy the eligible eval set needs; it is trained and scored but left out of the transfer
experiments.
"""
import json
import os
import tempfile
import time
import unittest
from itertools import combinations

import numpy as np

from tt_video_attack.config import BLACK_BOX, WHITE_BOX
from tt_video_attack.modelzoo import (
    EARLY_POOL,
    FULL_3D,
    LATE_TEMPORAL,
    TrainConfig,
    default_grid,
    save_checkpoint,
    train_grid,
)
from tt_video_attack.report import RUN_METADATA_FILE
from tt_video_attack.synthvid import DatasetSpec, generate, save
from tt_video_attack.verify import verify_gradients
from tt_video_attack.xferbench import ExperimentConfig, run_transfer_experiment

SEEDS = (0, 1, 2)
TRANSFER_FAMILIES = (FULL_3D, LATE_TEMPORAL)


def model_id(spec):
    return f"{spec.name}-s{spec.seed}"


@unittest.skipUnless(os.environ.get("TT_RUN_ACCEPTANCE") == "1", "set TT_RUN_ACCEPTANCE=1 to run")
class TestDeskScale(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        started = time.monotonic()
        root = cls.tmp.name
        dataset = generate(DatasetSpec(eval_per_class=16))
        save(dataset, os.path.join(root, "moving.ttvc"))
        cls.grid = default_grid()
        checkpoints = train_grid(cls.grid, dataset, TrainConfig(), workers=4)
        cls.accuracies = {}
        for spec, ckpt in zip(cls.grid, checkpoints):
            save_checkpoint(ckpt, os.path.join(root, f"{model_id(spec)}.ttvc"))
            cls.accuracies[model_id(spec)] = ckpt.metadata["eval_accuracy"]

        cls.reports = {}
        for seed in SEEDS:
            path = os.path.join(root, f"experiment-{seed}.json")
            with open(path, "w") as handle:
                json.dump(cls.experiment(seed), handle)
            cfg = ExperimentConfig.load(path)
            cls.reports[seed] = run_transfer_experiment(cfg, os.path.join(root, f"out-{seed}"))
        cls.first_config = os.path.join(root, "experiment-0.json")
        print(f"desk-scale setup took {time.monotonic() - started:.0f} s")

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    @classmethod
    def experiment(cls, seed, workers=4):
        return {
            "dataset": "moving.ttvc",
            "models": [
                {"id": model_id(spec), "path": f"{model_id(spec)}.ttvc", "roles": [WHITE_BOX, BLACK_BOX]}
                for spec in cls.grid
                if spec.name in TRANSFER_FAMILIES
            ],
            "attacks": [{"name": "bim", "preset": "bim"}, {"name": "tt-bim", "preset": "tt-bim"}],
            "ablations": {"shift_lengths": [], "weight_kinds": [], "strategies": [], "iterations": []},
            "analyses": {"correlation_methods": ["zeropad"], "shift_loss": 0},
            "eval_size": 64,
            "seed": seed,
            "workers": workers,
            "precision": "float64",
            "output_dir": f"out-{seed}",
        }

    def test_full_size_gradients(self):
        for spec in default_grid(seeds=(0,)):
            result = verify_gradients(spec)
            self.assertTrue(result.passed, result.detail)

    def test_models_are_accurate(self):
        print(f"eval accuracy per model: {self.accuracies}")
        for spec in self.grid:
            if spec.name in TRANSFER_FAMILIES:
                self.assertGreaterEqual(self.accuracies[model_id(spec)], 0.95, model_id(spec))

    def test_collapsing_time_costs_accuracy(self):
        def family_mean(family):
            return np.mean([self.accuracies[model_id(s)] for s in self.grid if s.name == family])

        self.assertLess(family_mean(EARLY_POOL), family_mean(FULL_3D))

    def test_white_box_saturation(self):
        for report in self.reports.values():
            for row in report.transfer.rows:
                if row.attack == "bim":
                    own = row.asr[report.transfer.white_box_column(row)]
                    self.assertGreaterEqual(own, 0.95, row.white_box)

    def test_transfer_gain_for_temporal_white_boxes(self):
        gains = {}
        for family in TRANSFER_FAMILIES:
            deltas = []
            for report in self.reports.values():
                matrix = report.transfer
                for white_box in (model_id(s) for s in self.grid if s.name == family):
                    rows = {row.attack: row for row in matrix.rows if row.white_box == white_box}
                    deltas.append(matrix.black_box_asr(rows["tt-bim"]) - matrix.black_box_asr(rows["bim"]))
            gains[family] = float(np.mean(deltas))
        print(f"TT-BIM minus BIM black-box ASR per white-box family: {gains}")
        self.assertGreaterEqual(gains[FULL_3D], 0.10)
        self.assertGreaterEqual(gains[LATE_TEMPORAL], 0.10)

    def test_same_family_patterns_correlate_more(self):
        same, cross = [], []
        for report in self.reports.values():
            correlation = report.correlations[0]
            np.testing.assert_array_equal(np.diag(correlation.matrix), 1.0)
            for a, b in combinations(correlation.model_ids, 2):
                family_a, family_b = a.rsplit("-s", 1)[0], b.rsplit("-s", 1)[0]
                (same if family_a == family_b else cross).append(correlation.value(a, b))
        print(f"mean rho same family {np.mean(same):.3f}, across families {np.mean(cross):.3f}")
        self.assertLess(np.mean(cross), np.mean(same))

    def test_rerun_is_byte_identical(self):
        root = self.tmp.name
        path = os.path.join(root, "experiment-serial.json")
        values = self.experiment(0, workers=1)
        values["output_dir"] = "out-serial"
        with open(path, "w") as handle:
            json.dump(values, handle)
        run_transfer_experiment(ExperimentConfig.load(path), os.path.join(root, "out-serial"))
        for name in sorted(os.listdir(os.path.join(root, "out-0"))):
            if name == RUN_METADATA_FILE:
                continue
            with open(os.path.join(root, "out-0", name), "rb") as first, \
                    open(os.path.join(root, "out-serial", name), "rb") as second:
                self.assertEqual(first.read(), second.read(), name)
