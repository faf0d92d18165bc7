"""
Tests for the Evaluation Harness
================================

Features, the softmax classifier, split hygiene and the seeded experiments,
run over small motion pools written to disk.
"""

import json

import numpy as np
import pytest

from dataset_generator import Manifest, write_manifest
from errors import (
    DimensionMismatchError,
    EmptyDataError,
    InsufficientPoolError,
    InvariantViolationError,
    SplitLeakageError,
)
from eval_harness import (
    ClassifierModel,
    ExperimentRunner,
    VideoPool,
    augment,
    check_split_hygiene,
    classifier_loss_and_grad,
    default_test_identities,
    evaluate,
    extract_features,
    feature_dimension,
    format_results,
    make_split,
    results_table,
    run_baseline,
    run_shot_curve,
    sample_indices,
    train_classifier,
    write_results,
)
from pydantic_models import ExperimentConfig, ManifestEntry
from utils_image import write_frame_directory


# ============================================================================
# FIXTURES
# ============================================================================

CLASSES = ["left", "right"]


def moving_block(label, seed, num_frames=4, size=16):
    """A block sliding down the left or right half, over faint noise."""
    rng = np.random.default_rng(seed)
    column = 2 if label == "left" else 10
    frames = []
    for k in range(num_frames):
        frame = rng.uniform(0.0, 0.05, (size, size, 3))
        row = 1 + 3 * k
        frame[row:row + 4, column:column + 4] = 0.9
        frames.append(frame)
    return frames


def entry(video_id, label, identity, kind="composited"):
    return ManifestEntry(
        video_id=video_id,
        kind=kind,
        class_label=label,
        reference_id=f"ref_{label}",
        identity_id=identity,
        background_id="bg" if kind == "composited" else None,
        frames_dir=video_id,
        fps=8.0,
        num_frames=4,
        seed=1,
    )


def write_pool(root, identities, per_identity, seed, white=False):
    """Manifest plus frame directories: per_identity videos of each class per identity."""
    entries = []
    for j, identity in enumerate(identities):
        for label in CLASSES:
            for n in range(per_identity):
                video_id = f"{label}{n}__{identity}__bg"
                write_frame_directory(root / video_id, moving_block(label, seed + 100 * j + n), 8.0)
                entries.append(entry(video_id, label, identity))
                if white:
                    white_id = f"{label}{n}__{identity}"
                    write_frame_directory(root / white_id, moving_block(label, seed + n), 8.0)
                    entries.append(entry(white_id, label, identity, kind="white"))
    return write_manifest(root / "manifest.jsonl", Manifest(entries))


@pytest.fixture
def pools(tmp_path):
    """Real pool r0..r3 (test identities r2, r3), synthetic pool s0, s1."""
    real = write_pool(tmp_path / "real", ["r0", "r1", "r2", "r3"], 2, seed=0)
    synthetic = write_pool(tmp_path / "synthetic", ["s0", "s1"], 3, seed=50, white=True)
    return real, synthetic


def small_config(**overrides):
    values = dict(
        n_real=2, n_background=2, n_test=3, classes=CLASSES, seeds=[0, 1],
        curve_steps=[0, 1, 3], num_samples=4, epochs=40,
    )
    values.update(overrides)
    return ExperimentConfig(**values)


# ============================================================================
# FEATURES
# ============================================================================

class TestFeatures:
    """Test frame sampling and motion-energy features."""

    def test_sample_indices_endpoints(self):
        assert list(sample_indices(10, 4)) == [0, 3, 6, 9]
        assert list(sample_indices(5, 3)) == [0, 2, 4]

    def test_halves_round_up(self):
        assert list(sample_indices(4, 3)) == [0, 2, 3]

    def test_short_videos_repeat_frames(self):
        indices = sample_indices(4, 16)
        assert indices[0] == 0 and indices[-1] == 3
        assert np.all(np.diff(indices) >= 0)

    @pytest.mark.parametrize("num_samples", [2, 4, 16])
    def test_dimension(self, num_samples):
        features = extract_features(moving_block("left", 0, num_frames=20, size=32), num_samples)
        assert features.shape == ((num_samples - 1) * 16,)
        assert feature_dimension(num_samples) == features.size

    def test_static_video_has_no_energy(self):
        frame = np.random.default_rng(0).uniform(size=(24, 40, 3))
        assert np.all(extract_features([frame] * 5, 4) == 0.0)

    def test_toggling_pixel_fills_one_cell(self):
        frames = []
        for k in range(16):
            frame = np.zeros((16, 16, 3))
            frame[5, 6] = k % 2
            frames.append(frame)
        features = extract_features(frames, 16).reshape(15, 4, 4)
        np.testing.assert_allclose(features[:, 1, 1], 1.0 / 16)
        features[:, 1, 1] = 0.0
        assert np.all(features == 0.0)

    def test_brightness_offset_cancels(self):
        frames = moving_block("left", 2)
        brighter = [frame + 0.05 for frame in frames]
        np.testing.assert_allclose(extract_features(brighter, 4), extract_features(frames, 4), atol=1e-12)

    def test_alpha_channel_ignored(self):
        frames = moving_block("right", 3)
        with_alpha = [np.concatenate([f, np.ones(f.shape[:2] + (1,))], axis=2) for f in frames]
        np.testing.assert_array_equal(extract_features(with_alpha, 4), extract_features(frames, 4))

    def test_needs_two_frames(self):
        with pytest.raises(InvariantViolationError):
            extract_features([np.zeros((16, 16, 3))])

    def test_classes_differ(self):
        left = extract_features(moving_block("left", 0), 4).reshape(3, 4, 4)
        right = extract_features(moving_block("right", 0), 4).reshape(3, 4, 4)
        assert left[:, :, :2].sum() > left[:, :, 2:].sum()
        assert right[:, :, 2:].sum() > right[:, :, :2].sum()


# ============================================================================
# CLASSIFIER
# ============================================================================

class TestClassifier:
    """Test the softmax classifier."""

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        x = augment(rng.normal(size=(12, 5)))
        y = rng.integers(0, 3, 12)
        w = rng.normal(scale=0.5, size=(3, 6))
        _, grad = classifier_loss_and_grad(w, x, y, l2=0.1)

        eps = 1e-6
        numeric = np.zeros_like(w)
        for index in np.ndindex(*w.shape):
            step = np.zeros_like(w)
            step[index] = eps
            numeric[index] = (
                classifier_loss_and_grad(w + step, x, y, 0.1)[0]
                - classifier_loss_and_grad(w - step, x, y, 0.1)[0]
            ) / (2 * eps)
        np.testing.assert_allclose(grad, numeric, rtol=1e-5, atol=1e-8)

    def test_bias_not_penalized(self):
        x = augment(np.zeros((2, 1)))
        w = np.array([[0.0, 3.0], [0.0, -3.0]])
        loss_without, _ = classifier_loss_and_grad(w, x, np.array([0, 1]), l2=0.0)
        loss_with, _ = classifier_loss_and_grad(w, x, np.array([0, 1]), l2=10.0)
        assert loss_with == pytest.approx(loss_without)

    def test_separable_clusters(self):
        rng = np.random.default_rng(2)
        centres = np.array([[3.0, 0.0], [-3.0, 0.0], [0.0, 3.0]])
        labels = ["a", "b", "c"] * 20
        features = centres[[0, 1, 2] * 20] + rng.normal(scale=0.3, size=(60, 2))
        model = train_classifier(features, labels, epochs=200)
        assert model.classes == ["a", "b", "c"]
        assert evaluate(model, features, labels) == 1.0

    def test_loss_never_rises(self):
        rng = np.random.default_rng(3)
        model = train_classifier(rng.normal(size=(40, 6)), list("abcd") * 10, epochs=100, learning_rate=5.0)
        assert np.all(np.diff(model.loss_history) <= 1e-12)

    def test_seeded(self):
        rng = np.random.default_rng(4)
        features, labels = rng.normal(size=(20, 3)), list("ab") * 10
        a = train_classifier(features, labels, epochs=10, seed=9)
        b = train_classifier(features, labels, epochs=10, seed=9)
        np.testing.assert_array_equal(a.weights, b.weights)

    def test_chance_level_on_noise(self):
        """Accuracy on labels independent of the features is 1/16 within 4 sigma."""
        rng = np.random.default_rng(5)
        classes = [f"c{n:02d}" for n in range(16)]
        train_labels = [classes[n] for n in rng.integers(0, 16, 320)]
        model = train_classifier(rng.normal(size=(320, 8)), train_labels, classes=classes, epochs=50)
        test_labels = [classes[n] for n in rng.integers(0, 16, 1600)]
        accuracy = evaluate(model, rng.normal(size=(1600, 8)), test_labels)
        sigma = np.sqrt((1 / 16) * (15 / 16) / 1600)
        assert abs(accuracy - 1 / 16) <= 4 * sigma

    def test_hand_computed_accuracy(self):
        model = ClassifierModel(
            classes=["a", "b"],
            weights=np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
            mean=np.zeros(2),
            std=np.ones(2),
        )
        features = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
        assert evaluate(model, features, ["a", "b", "b", "b"]) == 0.75

    def test_constant_prediction(self):
        model = ClassifierModel(["a", "b"], np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0]]), np.zeros(2), np.ones(2))
        assert evaluate(model, np.random.default_rng(0).normal(size=(5, 2)), ["a"] * 5) == 1.0

    def test_ties_go_to_first_class(self):
        model = ClassifierModel(["a", "b"], np.zeros((2, 3)), np.zeros(2), np.ones(2))
        assert list(model.predict(np.zeros((1, 2)))) == [0]

    def test_empty_training_set(self):
        with pytest.raises(EmptyDataError):
            train_classifier(np.zeros((0, 3)), [])

    def test_empty_test_set(self):
        model = ClassifierModel(["a"], np.zeros((1, 3)), np.zeros(2), np.ones(2))
        with pytest.raises(EmptyDataError):
            evaluate(model, np.zeros((0, 2)), [])

    def test_feature_dimension_mismatch(self):
        model = ClassifierModel(["a", "b"], np.zeros((2, 3)), np.zeros(2), np.ones(2))
        with pytest.raises(DimensionMismatchError):
            evaluate(model, np.zeros((2, 5)), ["a", "b"])

    def test_unknown_label(self):
        with pytest.raises(InvariantViolationError, match="unknown classes"):
            train_classifier(np.zeros((2, 2)), ["a", "z"], classes=["a", "b"])


# ============================================================================
# SPLITS
# ============================================================================

class TestSplits:
    """Test pool loading and split construction."""

    def test_pool_keeps_composited_only(self, pools):
        _, synthetic = pools
        pool = VideoPool.load("synthetic", synthetic)
        assert len(pool.entries) == 2 * 2 * 3
        assert all(e.kind == "composited" for e in pool.entries)

    def test_default_test_identities(self, pools):
        real, _ = pools
        assert default_test_identities(VideoPool.load("real", real)) == ["r2", "r3"]

    def test_split_shape_and_hygiene(self, pools):
        real, synthetic = pools
        split = make_split(small_config(), VideoPool.load("real", real), VideoPool.load("synthetic", synthetic),
                           run_seed=3, n_real=2, n_background=2)
        assert len(split.test) == 3 * 2
        assert len(split.train_real) == 2 * 2
        assert len(split.train_synthetic) == 2 * 2
        assert {e.identity_id for e in split.test} <= {"r2", "r3"}
        assert {e.identity_id for e in split.train_real} <= {"r0", "r1"}

    def test_test_set_independent_of_synthetic_count(self, pools):
        real, synthetic = pools
        real_pool, synthetic_pool = VideoPool.load("real", real), VideoPool.load("synthetic", synthetic)
        small = make_split(small_config(), real_pool, synthetic_pool, 3, 2, 1)
        large = make_split(small_config(), real_pool, synthetic_pool, 3, 2, 3)
        assert [e.video_id for e in small.test] == [e.video_id for e in large.test]
        assert [e.video_id for e in small.train_real] == [e.video_id for e in large.train_real]
        assert small.train_synthetic[0] == large.train_synthetic[0]
        assert small.train_synthetic[1] == large.train_synthetic[3]

    def test_insufficient_pool(self, pools):
        real, synthetic = pools
        with pytest.raises(InsufficientPoolError) as exc_info:
            make_split(small_config(n_test=5), VideoPool.load("real", real),
                       VideoPool.load("synthetic", synthetic), 0, 2, 0)
        assert exc_info.value.context["available"] == 4

    def test_negative_count_rejected(self, pools):
        """A negative count must raise, not slice all but the last videos."""
        real, synthetic = pools
        with pytest.raises(InvariantViolationError, match="cannot draw -1"):
            make_split(small_config(), VideoPool.load("real", real),
                       VideoPool.load("synthetic", synthetic), 0, -1, 0)

    def test_shared_video_rejected(self):
        video = entry("a__r0__bg", "left", "r0")
        with pytest.raises(SplitLeakageError, match="video_id"):
            check_split_hygiene([video], [video])

    def test_shared_identity_rejected(self):
        with pytest.raises(SplitLeakageError, match="identity_id"):
            check_split_hygiene([entry("a__r0__bg", "left", "r0")], [entry("b__r0__bg", "right", "r0")])

    def test_test_identity_in_synthetic_pool_is_excluded(self, pools):
        real, synthetic = pools
        config = small_config(test_identities=["r2", "r3", "s0"])
        split = make_split(config, VideoPool.load("real", real), VideoPool.load("synthetic", synthetic), 0, 2, 3)
        assert {e.identity_id for e in split.train_synthetic} == {"s1"}


# ============================================================================
# EXPERIMENTS
# ============================================================================

class TestExperiments:
    """Test the baseline and shot-curve experiments end to end."""

    def test_baseline_without_synthetic_is_symmetric(self, pools):
        real, synthetic = pools
        results = run_baseline(small_config(n_background=0), real, synthetic, seed=4)
        for row in results.per_seed:
            assert row["real_only"] == row["real_plus_synthetic"]
        assert results.mean["real_only"] == results.mean["real_plus_synthetic"]

    def test_baseline_learns_the_task(self, pools):
        real, synthetic = pools
        results = run_baseline(small_config(), real, synthetic, seed=4)
        assert results.experiment == "baseline"
        assert len(results.per_seed) == 2
        assert results.mean["real_plus_synthetic"] >= 0.8
        assert 0.0 <= results.std["real_only"] <= 0.5

    def test_shot_curve(self, pools):
        real, synthetic = pools
        config = small_config(n_real=1)
        curve = run_shot_curve(config, real, synthetic, seed=4)
        assert curve.experiment == "one_shot"
        assert list(curve.mean) == ["0", "1", "3"]
        assert all(0.0 <= v <= 1.0 for v in curve.mean.values())

        baseline = run_baseline(config.model_copy(update={"n_background": 0}), real, synthetic, seed=4)
        assert curve.mean["0"] == baseline.mean["real_only"]

    def test_few_shot_name(self, pools):
        real, synthetic = pools
        curve = run_shot_curve(small_config(n_real=2, curve_steps=[0, 2]), real, synthetic, seed=0)
        assert curve.experiment == "shots_n_real_2"

    def test_workers_do_not_change_results(self, pools):
        real, synthetic = pools
        serial = run_baseline(small_config(), real, synthetic, seed=1, max_workers=1)
        parallel = run_baseline(small_config(), real, synthetic, seed=1, max_workers=3)
        assert serial.per_seed == parallel.per_seed

    def test_run_seed_derivation(self, pools):
        real, synthetic = pools
        runner = ExperimentRunner(small_config(), real, synthetic, seed=4)
        assert runner.run_seed(0) != runner.run_seed(1)
        assert runner.run_seed(0) == ExperimentRunner(small_config(), real, synthetic, seed=4).run_seed(0)

    def test_write_results(self, tmp_path, pools):
        real, synthetic = pools
        results = run_baseline(small_config(seeds=[0]), real, synthetic)
        path = write_results(results, tmp_path / "eval")
        document = json.loads(path.read_text())
        assert document["experiment"] == "baseline"
        assert document["config"]["n_real"] == 2
        assert "Original + Synthetic" in (tmp_path / "eval" / "results.txt").read_text()

    def test_curve_table_indexed_by_count(self, pools):
        real, synthetic = pools
        curve = run_shot_curve(small_config(seeds=[0]), real, synthetic)
        table = results_table(curve)
        assert list(table.index) == [0, 1, 3]
        assert table.index.name == "n_background"
        assert "shots_n_real_2" in format_results(curve)


if __name__ == "__main__":
    pytest.main([__file__, "-v", "--tb=short"])
