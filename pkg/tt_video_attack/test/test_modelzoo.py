import os
import tempfile
import unittest
from unittest import mock

import numpy as np
import numpy.testing as npt

from tt_video_attack.container import read_container, write_container
from tt_video_attack.errors import FormatError, SpecError, TrainingFault
from tt_video_attack.gradcore import VideoClip, forward, input_gradient
from tt_video_attack.modelzoo import (
    ARCHITECTURES,
    EARLY_POOL,
    FULL_3D,
    LATE_TEMPORAL,
    ArchSpec,
    TrainConfig,
    build_model,
    checkpoint_of,
    default_grid,
    label_from_logits,
    load_checkpoint,
    model_from_checkpoint,
    predict,
    save_checkpoint,
    train,
    train_grid,
)
from tt_video_attack.synthvid import Dataset, clips_from_arrays, generate, save
from tt_video_attack.test.fixtures import random_clip, small_spec, tiny_dataset_spec


def tiny_arch(name, seed=0):
    return ArchSpec(name, input_shape=(8, 16, 16, 1), num_classes=2, channels=(2, 3), seed=seed)


class TestArchitectures(unittest.TestCase):

    def test_default_shapes_chain(self):
        for name in ARCHITECTURES:
            model = build_model(ArchSpec(name))
            self.assertEqual(model.num_classes, 8)
            self.assertEqual(model.input_shape, (16, 16, 16, 1))

    def test_unknown_architecture(self):
        with self.assertRaises(SpecError):
            build_model(ArchSpec("transformer"))

    def test_early_pool_ignores_frame_order(self):
        model = build_model(small_spec(EARLY_POOL))
        clip = random_clip(1)
        shuffled = type(clip)(clip.frames[[2, 0, 3, 1]])
        npt.assert_allclose(forward(model, clip), forward(model, shuffled), rtol=1e-12, atol=1e-14)

    def test_full_3d_sees_frame_order(self):
        model = build_model(small_spec(FULL_3D))
        clip = random_clip(1)
        shuffled = type(clip)(clip.frames[[2, 0, 3, 1]])
        self.assertFalse(np.allclose(forward(model, clip), forward(model, shuffled)))

    def test_early_pool_collapses_time_in_its_first_layer(self):
        model = build_model(ArchSpec(EARLY_POOL))
        self.assertEqual(model.shapes[0], (1, 16, 16, 1))
        self.assertEqual(build_model(ArchSpec(FULL_3D)).shapes[0][0], 16)

    def test_early_pool_gradient_follows_any_frame_permutation(self):
        model = build_model(small_spec(EARLY_POOL))
        clip = random_clip(1)
        order = [2, 0, 3, 1]
        permuted = input_gradient(model, VideoClip(clip.frames[order]), 1)
        npt.assert_allclose(permuted, input_gradient(model, clip, 1)[order], rtol=1e-12, atol=1e-15)

    def test_temporal_families_break_gradient_equivariance(self):
        clip = random_clip(1)
        order = [2, 0, 3, 1]
        for name in (FULL_3D, LATE_TEMPORAL):
            model = build_model(small_spec(name))
            permuted = input_gradient(model, VideoClip(clip.frames[order]), 1)
            self.assertFalse(np.allclose(permuted, input_gradient(model, clip, 1)[order]), name)

    def test_seeds_give_different_parameters(self):
        first = build_model(small_spec(FULL_3D, seed=0)).named_parameters()
        second = build_model(small_spec(FULL_3D, seed=1)).named_parameters()
        self.assertFalse(np.array_equal(first["00.conv3d.weight"], second["00.conv3d.weight"]))

    def test_arg_max_ties_pick_lowest_class(self):
        self.assertEqual(label_from_logits(np.array([1.0, 3.0, 3.0])), 1)

    def test_default_grid(self):
        grid = default_grid()
        self.assertEqual(len(grid), 6)
        self.assertEqual({spec.name for spec in grid}, set(ARCHITECTURES))


class TestTraining(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.dataset = generate(tiny_dataset_spec())

    def test_training_lowers_the_loss(self):
        cfg = TrainConfig(epochs=3, batch_size=4, learning_rate=0.05)
        ckpt = train(build_model(tiny_arch(FULL_3D)), self.dataset, cfg)
        history = ckpt.metadata["loss_history"]
        self.assertEqual(len(history), 4)
        self.assertLess(history[-1], history[0])
        self.assertIsNotNone(ckpt.metadata["eval_accuracy"])

    def test_frame_zero_brightness_is_learned_exactly(self):
        rng = np.random.default_rng(7)
        labels = np.arange(16) % 2
        frames = rng.uniform(0.0, 0.1, size=(16, 4, 8, 8, 1))
        frames[:, 0] += np.where(labels == 1, 0.8, 0.2)[:, None, None, None]
        dataset = Dataset(clips_from_arrays(frames, labels), 2)
        model = build_model(ArchSpec(FULL_3D, input_shape=(4, 8, 8, 1), num_classes=2, channels=(4, 4)))
        ckpt = train(model, dataset, TrainConfig(epochs=20, batch_size=4, learning_rate=0.1))
        self.assertEqual(ckpt.metadata["train_accuracy"], 1.0)
        history = ckpt.metadata["loss_history"]
        self.assertLess(history[20], history[0])
        self.assertEqual(predict(model, VideoClip(frames[3])), 1)

    def test_training_is_deterministic(self):
        cfg = TrainConfig(epochs=2, batch_size=4, learning_rate=0.05, seed=3)
        first = train(build_model(tiny_arch(EARLY_POOL)), self.dataset, cfg)
        second = train(build_model(tiny_arch(EARLY_POOL)), self.dataset, cfg)
        self.assertEqual(first, second)

    def test_zero_epochs_keeps_initial_parameters(self):
        model = build_model(tiny_arch(FULL_3D))
        initial = checkpoint_of(model)
        ckpt = train(model, self.dataset, TrainConfig(epochs=0))
        for name, value in initial.params.items():
            npt.assert_array_equal(ckpt.params[name], value)

    def test_divergence_reports_the_epoch(self):
        model = build_model(tiny_arch(FULL_3D))
        with mock.patch.object(model, "param_gradients", return_value=(float("nan"), {})):
            with self.assertRaises(TrainingFault) as cm:
                train(model, self.dataset, TrainConfig(epochs=2))
        self.assertEqual(cm.exception.epoch, 1)

    def test_labels_beyond_the_model(self):
        model = build_model(ArchSpec(FULL_3D, input_shape=(8, 16, 16, 1), num_classes=2, channels=(2, 3)))
        dataset = generate(tiny_dataset_spec(directions=("up", "down", "left")))
        with self.assertRaises(SpecError):
            train(model, dataset, TrainConfig(epochs=1))

    def test_train_grid_matches_serial_training(self):
        cfg = TrainConfig(epochs=1, batch_size=4, learning_rate=0.05)
        specs = [tiny_arch(EARLY_POOL), tiny_arch(FULL_3D)]
        parallel = train_grid(specs, self.dataset, cfg, workers=2)
        self.assertEqual(parallel, [train(build_model(spec), self.dataset, cfg) for spec in specs])


class TestCheckpoints(unittest.TestCase):

    def test_save_load_save_is_byte_identical(self):
        model = build_model(small_spec(FULL_3D))
        ckpt = checkpoint_of(model, {"note": "x", "loss_history": [1.0, 0.5]})
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "model.ttvc")
            save_checkpoint(ckpt, path)
            loaded = load_checkpoint(path)
            self.assertEqual(loaded, ckpt)
            with open(path, "rb") as handle:
                payload = handle.read()
            save_checkpoint(loaded, path)
            with open(path, "rb") as handle:
                self.assertEqual(handle.read(), payload)

    def test_restored_model_predicts_identically(self):
        model = build_model(small_spec(EARLY_POOL))
        restored = model_from_checkpoint(checkpoint_of(model), name="copy")
        self.assertEqual(restored.name, "copy")
        npt.assert_array_equal(forward(model, random_clip(2)), forward(restored, random_clip(2)))

    def test_corrupt_architecture_header(self):
        ckpt = checkpoint_of(build_model(small_spec(FULL_3D)))
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "model.ttvc")
            for key, value in (("name", "transformer"), ("channels", [4, 4]), ("input_shape", 7)):
                save_checkpoint(ckpt, path)
                manifest, records = read_container(path)
                manifest["arch"][key] = value
                write_container(path, manifest, list(records.items()))
                with self.assertRaises(FormatError) as cm:
                    load_checkpoint(path)
                self.assertEqual(cm.exception.offset, 0, key)

    def test_truncated_tensor_record(self):
        ckpt = checkpoint_of(build_model(small_spec(FULL_3D)))
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "model.ttvc")
            save_checkpoint(ckpt, path)
            with open(path, "rb") as handle:
                payload = handle.read()
            with open(path, "wb") as handle:
                handle.write(payload[:-3])
            with self.assertRaises(FormatError):
                load_checkpoint(path)

    def test_dataset_is_not_a_checkpoint(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "data.ttvc")
            save(generate(tiny_dataset_spec()), path)
            with self.assertRaises(FormatError):
                load_checkpoint(path)
