import json
import os
import tempfile
import unittest
from collections import Counter
from dataclasses import replace
from unittest import mock

import numpy as np

from tt_video_attack.config import BLACK_BOX, WHITE_BOX
from tt_video_attack.errors import ConfigError, NumericFault, ProtocolError, SpecError
from tt_video_attack.gradcore import VideoClip
from tt_video_attack.modelzoo import FULL_3D, ArchSpec, build_model, checkpoint_of, predict, save_checkpoint
from tt_video_attack.report import RUN_METADATA_FILE
from tt_video_attack.synthvid import EVAL, Dataset, LabeledClip, clips_from_arrays
from tt_video_attack.synthvid import load as load_dataset
from tt_video_attack.synthvid import save as save_dataset
from tt_video_attack.test.fixtures import biased_model, random_clip
from tt_video_attack.ttattack import AdversarialResult, preset
from tt_video_attack.xferbench import (
    Ablations,
    ExperimentConfig,
    ablation_attacks,
    attack_clips,
    compute_asr,
    generate_adversarial,
    run_analysis_only,
    run_transfer_experiment,
    select_eval_set,
)

BENCH_SHAPE = (8, 16, 16, 1)


def labeled(labels):
    return [LabeledClip(random_clip(i), label, f"clip-{i:02d}") for i, label in enumerate(labels)]


class TestSelectEvalSet(unittest.TestCase):

    def test_nothing_requested(self):
        self.assertEqual(select_eval_set({"m": biased_model()}, labeled([1, 1]), 0, seed=0), [])

    def test_only_clips_every_model_gets_right(self):
        models = {"a": biased_model(favoured=0), "b": biased_model(favoured=0, seed=1)}
        clips = labeled([0, 1, 0, 0, 1, 0, 0, 1, 0])
        selected = select_eval_set(models, clips, 4, seed=3)
        self.assertEqual(len(selected), 4)
        self.assertTrue(all(c.label == 0 for c in selected))
        self.assertEqual(len({c.clip_id for c in selected}), 4)

    def test_same_seed_same_selection(self):
        models = {"a": biased_model(favoured=0)}
        clips = labeled([0] * 8)
        first = [c.clip_id for c in select_eval_set(models, clips, 5, seed=7)]
        self.assertEqual(first, [c.clip_id for c in select_eval_set(models, clips, 5, seed=7)])
        self.assertNotEqual(first, [c.clip_id for c in select_eval_set(models, clips, 5, seed=8)])

    def test_too_few_names_the_weakest_model(self):
        models = {"zero": biased_model(favoured=0), "one": biased_model(favoured=1)}
        with self.assertRaises(ProtocolError) as cm:
            select_eval_set(models, labeled([0, 0, 0, 0, 0, 1, 1]), 1, seed=0)
        self.assertIn("weakest model is one", str(cm.exception))

    def test_classes_are_drawn_round_robin(self):
        clips = labeled([0] * 5 + [1] * 5 + [2] * 2)
        truth = {id(c.clip): c.label for c in clips}
        with mock.patch("tt_video_attack.xferbench.predict", side_effect=lambda model, clip: truth[id(clip)]):
            selected = select_eval_set({"oracle": mock.MagicMock()}, clips, 9, seed=0)
        self.assertEqual(Counter(c.label for c in selected), {0: 4, 1: 3, 2: 2})


def result(label, clip_id="c"):
    clip = random_clip(0)
    return AdversarialResult(clip_id, label, clip, clip, 0.0, preset("fgsm"))


class TestAsr(unittest.TestCase):

    def test_fraction_of_fooled_clips(self):
        results = [result(1), result(1), result(1), result(0)]
        self.assertEqual(compute_asr(results, biased_model(favoured=0)), 0.75)

    def test_empty(self):
        with self.assertRaises(ProtocolError):
            compute_asr([], biased_model())


class TestAttackClips(unittest.TestCase):

    def test_results_come_back_in_clip_order(self):
        model = biased_model(favoured=0)
        clips = labeled([0, 1, 0, 1, 0])
        serial, _ = attack_clips(model, clips, preset("bim", iterations=2), workers=1)
        parallel, excluded = attack_clips(model, clips, preset("bim", iterations=2), workers=3)
        self.assertEqual(excluded, [])
        self.assertEqual([r.clip_id for r in parallel], [c.clip_id for c in clips])
        for a, b in zip(serial, parallel):
            self.assertEqual(a.adversarial, b.adversarial)

    def test_numeric_faults_exclude_the_clip(self):
        model = biased_model(favoured=0)
        clips = labeled([0, 1, 0])

        def fake_attack(graph, clip, label, cfg, clip_id):
            if clip_id == "clip-01":
                raise NumericFault("overflow", iteration=0)
            return AdversarialResult(clip_id, label, clip, clip, 0.0, cfg)

        with mock.patch("tt_video_attack.xferbench.tt_attack", side_effect=fake_attack):
            results, excluded = attack_clips(model, clips, preset("fgsm"), workers=2)
        self.assertEqual(excluded, ["clip-01"])
        self.assertEqual([r.clip_id for r in results], ["clip-00", "clip-02"])


class TestAblations(unittest.TestCase):

    def test_sweeps_cover_every_iteration_count(self):
        sweeps = ablation_attacks(Ablations((1, 3), ("uniform",), (), (1, 10)), preset("tt-bim"))
        self.assertEqual(list(sweeps), ["ablation_shift_length", "ablation_weight_kind"])
        self.assertEqual(
            [a.name for a in sweeps["ablation_shift_length"]], ["tt-i1-l1", "tt-i1-l3", "tt-i10-l1", "tt-i10-l3"]
        )
        self.assertEqual([a.iterations for a in sweeps["ablation_weight_kind"]], [1, 10])
        self.assertEqual(sweeps["ablation_weight_kind"][0].weight_kind, "uniform")

    def test_empty_sweeps(self):
        self.assertEqual(ablation_attacks(Ablations(), preset("tt-bim")), {})


def experiment_dict(root, **overrides):
    values = {
        "dataset": os.path.join(root, "eval.ttvc"),
        "models": [
            {"id": "a", "path": os.path.join(root, "a.ttvc"), "roles": [WHITE_BOX, BLACK_BOX]},
            {"id": "b", "path": os.path.join(root, "b.ttvc"), "roles": [BLACK_BOX]},
        ],
        "attacks": [{"name": "fgsm", "preset": "fgsm"}, {"name": "tt-bim", "preset": "tt-bim", "iterations": 3}],
        "ablations": {"shift_lengths": [1], "weight_kinds": [], "strategies": [], "iterations": [2]},
        "analyses": {"correlation_methods": ["zeropad"], "shift_loss": 2},
        "eval_size": 4,
        "seed": 0,
        "workers": 1,
        "precision": "float64",
        "output_dir": os.path.join(root, "out"),
    }
    values.update(overrides)
    return values


class TestExperimentConfig(unittest.TestCase):

    def test_strategy_seed_defaults_to_the_global_seed(self):
        cfg = ExperimentConfig.from_dict(experiment_dict("/data", seed=5))
        self.assertEqual([a.strategy_seed for a in cfg.attacks], [5, 5])
        self.assertEqual(cfg.attacks[1].iterations, 3)
        self.assertEqual(cfg.ids_with_role(WHITE_BOX), ("a",))

    def test_hash_ignores_workers_and_directories(self):
        first = ExperimentConfig.from_dict(experiment_dict("/data"))
        second = ExperimentConfig.from_dict(experiment_dict("/elsewhere", workers=4))
        self.assertEqual(first.config_hash(), second.config_hash())
        third = ExperimentConfig.from_dict(experiment_dict("/data", seed=1))
        self.assertNotEqual(first.config_hash(), third.config_hash())

    def test_transfer_needs_both_roles(self):
        values = experiment_dict("/data")
        values["models"] = [values["models"][1]]
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_dict(values).validate()
        ExperimentConfig.from_dict(values).validate(transfer=False)

    def test_missing_inputs(self):
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_dict(experiment_dict("/nonexistent")).check_paths()


class TestBench(unittest.TestCase):
    """A whole experiment on one tiny model registered under two ids."""

    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        root = cls.tmp.name
        model = build_model(ArchSpec(FULL_3D, input_shape=BENCH_SHAPE, num_classes=2, channels=(2, 3)))
        rng = np.random.default_rng(0)
        frames = rng.uniform(0.0, 1.0, size=(6,) + BENCH_SHAPE)
        labels = [predict(model, VideoClip(f)) for f in frames]
        save_dataset(Dataset(clips_from_arrays(frames, labels, EVAL, "eval"), 2), os.path.join(root, "eval.ttvc"))
        for name in ("a", "b"):
            save_checkpoint(checkpoint_of(model), os.path.join(root, f"{name}.ttvc"))
        cls.config_path = os.path.join(root, "experiment.json")
        with open(cls.config_path, "w") as handle:
            json.dump(experiment_dict(root), handle)

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def bundle(self, directory):
        contents = {}
        for name in sorted(os.listdir(directory)):
            if name != RUN_METADATA_FILE:
                with open(os.path.join(directory, name), "rb") as handle:
                    contents[name] = handle.read()
        return contents

    def test_rerun_is_byte_identical_for_any_worker_count(self):
        cfg = ExperimentConfig.load(self.config_path)
        serial_dir = os.path.join(self.tmp.name, "serial")
        parallel_dir = os.path.join(self.tmp.name, "parallel")
        report = run_transfer_experiment(cfg, serial_dir)
        run_transfer_experiment(replace(cfg, workers=2), parallel_dir)
        self.assertEqual(self.bundle(serial_dir), self.bundle(parallel_dir))

        self.assertEqual([row.attack for row in report.transfer.rows], ["fgsm", "tt-bim"])
        self.assertEqual(list(report.ablations), ["ablation_shift_length"])
        self.assertEqual(report.transfer.eval_size, 4)
        # both columns hold the same network
        for row in report.transfer.rows:
            self.assertEqual(row.asr[0], row.asr[1])
        self.assertEqual(report.correlations[0].value("a", "b"), 1.0)
        self.assertEqual(len(report.shift_loss), 2)
        self.assertIsNotNone(report.wall_clock_seconds)

    def test_analysis_only(self):
        report = run_analysis_only(ExperimentConfig.load(self.config_path))
        self.assertIsNone(report.transfer)
        self.assertEqual(len(report.correlations), 1)

    def test_eval_set_larger_than_the_eligible_clips(self):
        with open(self.config_path) as handle:
            values = json.load(handle)
        path = os.path.join(self.tmp.name, "too-many.json")
        values["eval_size"] = 50
        with open(path, "w") as handle:
            json.dump(values, handle)
        with self.assertRaises(ProtocolError):
            run_transfer_experiment(ExperimentConfig.load(path))

    def test_shift_beyond_the_clip_fails_before_any_attack(self):
        fgsm = {"name": "fgsm", "preset": "fgsm"}
        too_long = {"name": "long", "preset": "tt-bim", "shift_length": 8}
        sweep = {"shift_lengths": [1, 8], "weight_kinds": [], "strategies": [], "iterations": [2]}
        for overrides in ({"attacks": [fgsm, too_long]}, {"ablations": sweep}):
            cfg = ExperimentConfig.from_dict(experiment_dict(self.tmp.name, **overrides))
            with mock.patch("tt_video_attack.xferbench.tt_attack") as attack:
                with self.assertRaises(SpecError):
                    run_transfer_experiment(cfg)
            attack.assert_not_called()

    def test_generated_adversarial_sets(self):
        out = os.path.join(self.tmp.name, "adversarial")
        paths = generate_adversarial(ExperimentConfig.load(self.config_path), out)
        self.assertEqual([os.path.basename(p) for p in paths], ["a__fgsm.ttvc", "a__tt-bim.ttvc"])
        adversarial = load_dataset(paths[0])
        self.assertEqual(len(adversarial.clips), 4)
        self.assertEqual(adversarial.provenance["white_box"], "a")
        self.assertTrue(all(c.clip_id.startswith("adv-eval-") for c in adversarial.clips))
