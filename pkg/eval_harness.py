"""
Action Recognition Evaluation Harness
=====================================

Desk-scale versions of the baseline, one-shot and few-shot experiments:

1. Features: frame-difference motion energy on a 16×16 grid pooled to 4×4
2. Classifier: multinomial logistic regression with L2, full-batch descent
3. Splits: real test videos only, disjoint from training by video and identity
4. Experiments: real-only vs real+synthetic, and accuracy curves over the
   number of synthetic videos per class

Claims made from these numbers are directional only.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

import cv2
import numpy as np
import pandas as pd
from scipy.special import log_softmax, softmax

from dataset_generator import Manifest, derive_seed, read_manifest, video_frames
from errors import (
    DimensionMismatchError,
    EmptyDataError,
    InsufficientPoolError,
    InvariantViolationError,
    SplitLeakageError,
    safe_execute,
)
from pydantic_models import ExperimentConfig, ExperimentResults, ManifestEntry
from utils_parallel import ParallelMapper

logger = logging.getLogger(__name__)

GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])
GRID = 16
POOL = 4
LOSS_SLACK = 1e-12
MAX_LR_REDUCTIONS = 10

# Independent random streams per run seed
STREAM_TEST = 1
STREAM_REAL = 2
STREAM_SYNTHETIC = 3
STREAM_INIT = 4


# ============================================================================
# FEATURES
# ============================================================================

def sample_indices(num_frames: int, num_samples: int) -> np.ndarray:
    """Uniform, endpoint-inclusive frame indices (halves rounded up)."""
    positions = np.arange(num_samples) * (num_frames - 1) / (num_samples - 1)
    return np.floor(positions + 0.5).astype(int)


def feature_dimension(num_samples: int = 16) -> int:
    return (num_samples - 1) * (GRID // POOL) ** 2


def extract_features(frames: Sequence[np.ndarray], num_samples: int = 16) -> np.ndarray:
    """
    Motion-energy feature vector of a video.

    Samples num_samples frames, converts them to luma, area-averages to 16×16,
    takes absolute successive differences and average-pools each to 4×4.

    Args:
        frames: (H, W, 3) or (H, W, 4) float frames; alpha is ignored
        num_samples: Frames to sample

    Returns:
        Vector of (num_samples − 1)·16 values (240 by default)

    Raises:
        InvariantViolationError: fewer than 2 frames
    """
    if len(frames) < 2:
        raise InvariantViolationError("frames", f"need at least 2 frames, got {len(frames)}")
    if num_samples < 2:
        raise InvariantViolationError("num_samples", "must be at least 2")

    small = []
    for index in sample_indices(len(frames), num_samples):
        luma = np.asarray(frames[index], dtype=np.float64)[..., :3] @ GRAY_WEIGHTS
        small.append(cv2.resize(luma, (GRID, GRID), interpolation=cv2.INTER_AREA))

    diffs = np.abs(np.diff(np.stack(small), axis=0))
    cells = GRID // POOL
    pooled = diffs.reshape(len(diffs), cells, POOL, cells, POOL).mean(axis=(2, 4))
    return pooled.reshape(-1)


class FeatureStore:
    """Features per manifest video, extracted once and cached."""

    def __init__(self, num_samples: int = 16, max_workers: int = 1):
        self.num_samples = num_samples
        self.max_workers = max_workers
        self._cache: Dict[Tuple[str, str], np.ndarray] = {}

    def _extract(self, item: Tuple[Path, ManifestEntry]) -> np.ndarray:
        manifest_path, entry = item
        return safe_execute(
            lambda: extract_features(video_frames(manifest_path, entry), self.num_samples),
            error_message=f"Feature extraction failed for {entry.video_id}",
        )

    def prefetch(self, manifest_path: Path, entries: Iterable[ManifestEntry]) -> None:
        missing = [
            (manifest_path, entry) for entry in entries
            if (str(manifest_path), entry.video_id) not in self._cache
        ]
        if not missing:
            return
        logger.info(f"Extracting features for {len(missing):,} videos from {manifest_path}")
        vectors = ParallelMapper(self.max_workers).map(self._extract, missing, "videos")
        for (path, entry), vector in zip(missing, vectors):
            self._cache[(str(path), entry.video_id)] = vector

    def matrix(self, manifest_path: Path, entries: Sequence[ManifestEntry]) -> np.ndarray:
        self.prefetch(manifest_path, entries)
        if not entries:
            return np.zeros((0, feature_dimension(self.num_samples)))
        return np.stack([self._cache[(str(manifest_path), e.video_id)] for e in entries])


# ============================================================================
# CLASSIFIER
# ============================================================================

@dataclass
class ClassifierModel:
    """
    Linear softmax classifier over standardized features.

    weights is C×(D+1) with the bias in the last column; the scaler's std is
    1 for dimensions without training variance.
    """

    classes: List[str]
    weights: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    loss_history: List[float] = field(default_factory=list)
    lr_reductions: int = 0

    @property
    def num_features(self) -> int:
        return self.weights.shape[1] - 1

    def scores(self, features: np.ndarray) -> np.ndarray:
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if features.shape[1] != self.num_features:
            raise DimensionMismatchError("feature dimension", self.num_features, features.shape[1])
        return augment((features - self.mean) / self.std) @ self.weights.T

    def predict(self, features: np.ndarray) -> np.ndarray:
        """Class indices; ties go to the lowest index."""
        return np.argmax(self.scores(features), axis=1)


def augment(features: np.ndarray) -> np.ndarray:
    return np.hstack([features, np.ones((features.shape[0], 1))])


def encode_labels(classes: Sequence[str], labels: Sequence[str]) -> np.ndarray:
    lookup = {label: i for i, label in enumerate(classes)}
    unknown = sorted({label for label in labels if label not in lookup})
    if unknown:
        raise InvariantViolationError("labels", f"unknown classes: {', '.join(unknown)}")
    return np.array([lookup[label] for label in labels], dtype=int)


def classifier_loss_and_grad(
    weights: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
    l2: float
) -> Tuple[float, np.ndarray]:
    """
    Mean cross-entropy plus (l2/2)·‖W‖² over non-bias weights, and its gradient.

    Args:
        weights: C×(D+1) weights
        features: N×(D+1) augmented features (last column ones)
        labels: N class indices
        l2: L2 strength

    Returns:
        (loss, gradient with the shape of weights)
    """
    n = features.shape[0]
    logits = features @ weights.T
    log_probs = log_softmax(logits, axis=1)
    loss = -log_probs[np.arange(n), labels].mean()

    residual = softmax(logits, axis=1)
    residual[np.arange(n), labels] -= 1.0
    grad = residual.T @ features / n

    penalized = weights.copy()
    penalized[:, -1] = 0.0
    loss += 0.5 * l2 * float(np.sum(penalized ** 2))
    grad += l2 * penalized
    return float(loss), grad


def train_classifier(
    features: np.ndarray,
    labels: Sequence[str],
    classes: Optional[Sequence[str]] = None,
    learning_rate: float = 0.1,
    epochs: int = 500,
    l2: float = 1e-4,
    seed: int = 0
) -> ClassifierModel:
    """
    Fit a softmax classifier by full-batch gradient descent.

    The loss is checked after every step; if it rises by more than 1e-12 the
    step is retried at half the learning rate (at most 10 times overall,
    after which training stops at the last accepted weights).

    Args:
        features: N×D feature matrix
        labels: N class labels
        classes: Class order (default: sorted labels)
        learning_rate: Initial step size
        epochs: Descent steps
        l2: L2 strength
        seed: Seed of the weight initialization

    Returns:
        Trained ClassifierModel

    Raises:
        EmptyDataError: no training examples
    """
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if len(labels) == 0 or features.size == 0:
        raise EmptyDataError("training set")
    if features.shape[0] != len(labels):
        raise DimensionMismatchError("training labels", features.shape[0], len(labels))

    classes = list(classes) if classes is not None else sorted(set(labels))
    y = encode_labels(classes, labels)

    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std[std == 0] = 1.0
    x = augment((features - mean) / std)

    rng = np.random.default_rng(derive_seed(seed, STREAM_INIT))
    weights = rng.normal(0.0, 1e-3, (len(classes), x.shape[1]))
    loss, grad = classifier_loss_and_grad(weights, x, y, l2)
    history = [loss]
    lr = learning_rate
    reductions = 0

    for epoch in range(epochs):
        candidate = weights - lr * grad
        new_loss, new_grad = classifier_loss_and_grad(candidate, x, y, l2)
        while new_loss > loss + LOSS_SLACK and reductions < MAX_LR_REDUCTIONS:
            lr *= 0.5
            reductions += 1
            logger.warning(f"Loss rose at epoch {epoch}; learning rate reduced to {lr:g}")
            candidate = weights - lr * grad
            new_loss, new_grad = classifier_loss_and_grad(candidate, x, y, l2)
        if new_loss > loss + LOSS_SLACK:
            logger.warning(f"Stopping at epoch {epoch}: loss still rising after {reductions} reductions")
            break
        weights, loss, grad = candidate, new_loss, new_grad
        history.append(loss)

    logger.debug(f"Trained {len(classes)}-class model on {len(y)} examples, final loss {loss:.6f}")
    return ClassifierModel(classes, weights, mean, std, history, reductions)


def evaluate(model: ClassifierModel, features: np.ndarray, labels: Sequence[str]) -> float:
    """
    Fraction of argmax-correct predictions.

    Raises:
        EmptyDataError: empty test set
        DimensionMismatchError: feature size differs from the model's
    """
    if len(labels) == 0:
        raise EmptyDataError("test set")
    y = encode_labels(model.classes, labels)
    return float(np.mean(model.predict(features) == y))


# ============================================================================
# SPLITS
# ============================================================================

@dataclass
class VideoPool:
    """Manifest entries usable by the experiments (composited videos)."""

    name: str
    manifest_path: Path
    entries: List[ManifestEntry]

    @classmethod
    def load(cls, name: str, manifest_path: Union[str, Path]) -> "VideoPool":
        manifest_path = Path(manifest_path)
        manifest: Manifest = read_manifest(manifest_path)
        entries = manifest.by_kind("composited") or manifest.entries
        if manifest.errors:
            logger.warning(f"{name} manifest lists {len(manifest.errors)} failed jobs; they are ignored")
        return cls(name, manifest_path, entries)

    @property
    def identities(self) -> List[str]:
        return sorted({entry.identity_id for entry in self.entries})

    def of_class(self, class_label: str, include: Optional[Set[str]] = None,
                 exclude: Optional[Set[str]] = None) -> List[ManifestEntry]:
        """Entries of one class, sorted by video_id, filtered by identity."""
        return [
            entry for entry in self.entries
            if entry.class_label == class_label
            and (include is None or entry.identity_id in include)
            and (exclude is None or entry.identity_id not in exclude)
        ]


@dataclass
class Split:
    classes: List[str]
    train_real: List[ManifestEntry]
    train_synthetic: List[ManifestEntry]
    test: List[ManifestEntry]


def default_test_identities(real: VideoPool) -> List[str]:
    """Upper half of the sorted real identity ids."""
    ids = real.identities
    return ids[len(ids) // 2:]


def _draw(pool: List[ManifestEntry], n: int, rng: np.random.Generator, name: str, label: str):
    if n < 0:
        raise InvariantViolationError(f"{name}.{label}", f"cannot draw {n} videos")
    if n > len(pool):
        raise InsufficientPoolError(name, label, n, len(pool))
    order = rng.permutation(len(pool))
    return [pool[int(i)] for i in order[:n]]


def check_split_hygiene(train: Sequence[ManifestEntry], test: Sequence[ManifestEntry]) -> None:
    """
    Raises:
        SplitLeakageError: a video_id or identity_id is in both splits
    """
    shared_videos = {e.video_id for e in train} & {e.video_id for e in test}
    if shared_videos:
        raise SplitLeakageError("video_id", sorted(shared_videos))
    shared_identities = {e.identity_id for e in train} & {e.identity_id for e in test}
    if shared_identities:
        raise SplitLeakageError("identity_id", sorted(shared_identities))


def make_split(
    config: ExperimentConfig,
    real: VideoPool,
    synthetic: VideoPool,
    run_seed: int,
    n_real: int,
    n_background: int
) -> Split:
    """
    Seeded per-class selection of test, real-train and synthetic videos.

    Each selection uses its own random stream, so the test set and the real
    sample do not depend on n_background, and synthetic samples for growing
    n_background are nested prefixes.

    Raises:
        InsufficientPoolError: a pool has too few videos for a class
        InvariantViolationError: a negative per-class count
        SplitLeakageError: train and test overlap
    """
    classes = list(config.classes) or sorted({e.class_label for e in real.entries})
    test_ids = set(config.test_identities or default_test_identities(real))

    rng_test = np.random.default_rng(derive_seed(run_seed, STREAM_TEST))
    rng_real = np.random.default_rng(derive_seed(run_seed, STREAM_REAL))
    rng_synthetic = np.random.default_rng(derive_seed(run_seed, STREAM_SYNTHETIC))

    split = Split(classes, [], [], [])
    for label in classes:
        split.test += _draw(real.of_class(label, include=test_ids), config.n_test, rng_test, "real test", label)
        split.train_real += _draw(real.of_class(label, exclude=test_ids), n_real, rng_real, "real train", label)
        split.train_synthetic += _draw(
            synthetic.of_class(label, exclude=test_ids), n_background, rng_synthetic, synthetic.name, label
        )

    check_split_hygiene(split.train_real + split.train_synthetic, split.test)
    return split


# ============================================================================
# EXPERIMENTS
# ============================================================================

class ExperimentRunner:
    """Runs seeded experiments over a real and a synthetic pool."""

    def __init__(
        self,
        config: ExperimentConfig,
        real_manifest: Union[str, Path],
        synthetic_manifest: Union[str, Path],
        seed: int = 0,
        max_workers: int = 1
    ):
        self.config = config
        self.seed = seed
        self.max_workers = max_workers
        self.real = VideoPool.load("real", real_manifest)
        self.synthetic = VideoPool.load("synthetic", synthetic_manifest)
        self.features = FeatureStore(config.num_samples, max_workers)

    def run_seed(self, seed: int) -> int:
        return derive_seed(self.seed, seed)

    def _matrices(self, split: Split, with_synthetic: bool):
        train_x = self.features.matrix(self.real.manifest_path, split.train_real)
        train_y = [e.class_label for e in split.train_real]
        if with_synthetic and split.train_synthetic:
            synthetic_x = self.features.matrix(self.synthetic.manifest_path, split.train_synthetic)
            train_x = np.vstack([train_x, synthetic_x])
            train_y += [e.class_label for e in split.train_synthetic]
        test_x = self.features.matrix(self.real.manifest_path, split.test)
        return train_x, train_y, test_x, [e.class_label for e in split.test]

    def accuracy(self, split: Split, run_seed: int, with_synthetic: bool) -> float:
        train_x, train_y, test_x, test_y = self._matrices(split, with_synthetic)
        model = train_classifier(
            train_x,
            train_y,
            classes=split.classes,
            learning_rate=self.config.learning_rate,
            epochs=self.config.epochs,
            l2=self.config.l2,
            seed=run_seed,
        )
        return evaluate(model, test_x, test_y)

    def _prefetch(self, splits: Iterable[Split]) -> None:
        real, synthetic = {}, {}
        for split in splits:
            for e in split.train_real + split.test:
                real[e.video_id] = e
            for e in split.train_synthetic:
                synthetic[e.video_id] = e
        self.features.prefetch(self.real.manifest_path, [real[k] for k in sorted(real)])
        self.features.prefetch(self.synthetic.manifest_path, [synthetic[k] for k in sorted(synthetic)])

    def baseline(self) -> ExperimentResults:
        """Real-only vs real+synthetic accuracy, one pair per configured seed."""
        config = self.config
        splits = {
            s: make_split(config, self.real, self.synthetic, self.run_seed(s), config.n_real, config.n_background)
            for s in config.seeds
        }
        self._prefetch(splits.values())

        def run(task):
            s, with_synthetic = task
            return self.accuracy(splits[s], self.run_seed(s), with_synthetic)

        tasks = [(s, flag) for s in config.seeds for flag in (False, True)]
        values = ParallelMapper(self.max_workers).map(run, tasks, "training runs")
        scores = dict(zip(tasks, values))

        per_seed = [
            {
                "seed": s,
                "run_seed": self.run_seed(s),
                "real_only": scores[(s, False)],
                "real_plus_synthetic": scores[(s, True)],
            }
            for s in config.seeds
        ]
        results = _summarize("baseline", self.seed, config, per_seed, ["real_only", "real_plus_synthetic"])
        logger.info(
            f"Baseline: real-only {results.mean['real_only']:.4f}, "
            f"real+synthetic {results.mean['real_plus_synthetic']:.4f} over {len(config.seeds)} seeds"
        )
        return results

    def shot_curve(self) -> ExperimentResults:
        """Accuracy per curve step; the real sample is shared by every step of a seed."""
        config = self.config
        steps = list(config.curve_steps)
        if not steps:
            raise EmptyDataError("curve steps")
        top = steps[-1]
        splits = {
            s: make_split(config, self.real, self.synthetic, self.run_seed(s), config.n_real, top)
            for s in config.seeds
        }
        self._prefetch(splits.values())

        def run(task):
            s, step = task
            split = splits[s]
            per_class = _per_class_prefix(split.train_synthetic, split.classes, top, step)
            return self.accuracy(
                Split(split.classes, split.train_real, per_class, split.test), self.run_seed(s), step > 0
            )

        tasks = [(s, step) for s in config.seeds for step in steps]
        values = ParallelMapper(self.max_workers).map(run, tasks, "training runs")
        scores = dict(zip(tasks, values))

        keys = [str(step) for step in steps]
        per_seed = [
            {"seed": s, "run_seed": self.run_seed(s), **{str(step): scores[(s, step)] for step in steps}}
            for s in config.seeds
        ]
        name = "one_shot" if config.n_real == 1 else f"shots_n_real_{config.n_real}"
        results = _summarize(name, self.seed, config, per_seed, keys)
        logger.info(
            f"Shot curve (n_real={config.n_real}): "
            + ", ".join(f"{k}: {results.mean[k]:.4f}" for k in keys)
        )
        return results


def _per_class_prefix(
    entries: List[ManifestEntry], classes: Sequence[str], per_class: int, n: int
) -> List[ManifestEntry]:
    """First n of each class's block (entries are laid out class by class)."""
    chosen = []
    for c, _ in enumerate(classes):
        chosen += entries[c * per_class:c * per_class + n]
    return chosen


def _summarize(
    experiment: str,
    seed: int,
    config: ExperimentConfig,
    per_seed: List[dict],
    keys: Sequence[str]
) -> ExperimentResults:
    table = pd.DataFrame(per_seed)
    return ExperimentResults(
        experiment=experiment,
        seed=seed,
        config=config.model_dump(mode="json"),
        per_seed=per_seed,
        mean={k: float(table[k].mean()) for k in keys},
        std={k: float(table[k].std(ddof=0)) for k in keys},
    )


def run_baseline(
    config: ExperimentConfig,
    real_manifest: Union[str, Path],
    synthetic_manifest: Union[str, Path],
    seed: int = 0,
    max_workers: int = 1
) -> ExperimentResults:
    """Real-only vs real+synthetic training, evaluated on the same real test set."""
    return ExperimentRunner(config, real_manifest, synthetic_manifest, seed, max_workers).baseline()


def run_shot_curve(
    config: ExperimentConfig,
    real_manifest: Union[str, Path],
    synthetic_manifest: Union[str, Path],
    seed: int = 0,
    max_workers: int = 1
) -> ExperimentResults:
    """Accuracy at each n_background of config.curve_steps with n_real real videos per class."""
    return ExperimentRunner(config, real_manifest, synthetic_manifest, seed, max_workers).shot_curve()


# ============================================================================
# REPORTING
# ============================================================================

def results_table(results: ExperimentResults) -> pd.DataFrame:
    """Baseline layout (Original / Original + Synthetic) or one row per n_background."""
    if results.experiment == "baseline":
        rows = [("Original", "real_only"), ("Original + Synthetic", "real_plus_synthetic")]
        index = [name for name, _ in rows]
        keys = [key for _, key in rows]
    else:
        keys = list(results.mean)
        index = pd.Index([int(k) for k in keys], name="n_background")
    return pd.DataFrame(
        {
            "accuracy_pct": [100.0 * results.mean[k] for k in keys],
            "std_pct": [100.0 * results.std[k] for k in keys],
        },
        index=index,
    )


def format_results(results: ExperimentResults) -> str:
    header = f"{results.experiment} (seed {results.seed}, {len(results.per_seed)} runs)"
    return header + "\n" + results_table(results).to_string(float_format=lambda v: f"{v:.2f}") + "\n"


def write_results(results: ExperimentResults, directory: Union[str, Path]) -> Path:
    """Write results.json and a plain-text table next to it."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "results.json"
    path.write_text(results.model_dump_json(indent=2) + "\n", encoding="utf-8")
    (directory / "results.txt").write_text(format_results(results), encoding="utf-8")
    logger.info(f"Results written to {path}")
    return path
