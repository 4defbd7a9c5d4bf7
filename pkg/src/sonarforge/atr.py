"""Target recognition harness: gradient-histogram features + linear SVM.

Images are resized to 128x128 and described by histograms of oriented
gradients (HOG): central-difference gradients, 9 unsigned orientation bins
per 8x8-pixel cell, 2x2-cell blocks at stride 1 cell, each block
L2-normalized.  A one-vs-rest linear SVM is trained by seeded stochastic
subgradient descent on the hinge loss (eta_t = lr / (lambda * t); the
unregularized bias follows a lr / t schedule), making training fully
deterministic for a given seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .imagebuf import ImageBuffer

HOG_SIZE = 128          # analysis resolution (square)
CELL = 8                # cell side in pixels
BINS = 9                # unsigned orientation bins over [0, pi)
BLOCK = 2               # block side in cells
BLOCK_EPS = 1e-6        # L2 normalization epsilon
MIN_IMAGE = 16

N_CELLS = HOG_SIZE // CELL
N_BLOCKS = N_CELLS - BLOCK + 1
DESCRIPTOR_LEN = N_BLOCKS * N_BLOCKS * BLOCK * BLOCK * BINS


class AtrError(ValueError):
    """Invalid feature extraction, training, or evaluation input."""


def resize_bilinear(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling on half-pixel centers; exact identity when the
    size is unchanged."""
    h, w = arr.shape
    if (h, w) == (out_h, out_w):
        return arr.copy()
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.clip(np.floor(ys), 0, h - 1).astype(np.int64)
    x0 = np.clip(np.floor(xs), 0, w - 1).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    fx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    a = arr[np.ix_(y0, x0)]
    b = arr[np.ix_(y0, x1)]
    c = arr[np.ix_(y1, x0)]
    d = arr[np.ix_(y1, x1)]
    top = a + (b - a) * fx
    bot = c + (d - c) * fx
    return top + (bot - top) * fy


def extract_features(img: ImageBuffer) -> np.ndarray:
    """HOG descriptor of a single-channel image; length 8100."""
    if img.channels != 1:
        raise AtrError(f"feature extraction needs 1 channel, got {img.channels}")
    if img.height < MIN_IMAGE or img.width < MIN_IMAGE:
        raise AtrError(
            f"image must be at least {MIN_IMAGE}x{MIN_IMAGE}, got {img.width}x{img.height}")
    a = resize_bilinear(img.data[:, :, 0], HOG_SIZE, HOG_SIZE)
    gy, gx = np.gradient(a)
    mag = np.hypot(gx, gy)
    ang = np.arctan2(gy, gx) % np.pi
    binned = np.minimum((ang * (BINS / np.pi)).astype(np.int64), BINS - 1)

    # accumulate magnitudes into (cell_row, cell_col, bin) via one bincount
    cell_row = np.arange(HOG_SIZE) // CELL
    flat_cell = cell_row[:, None] * N_CELLS + cell_row[None, :]
    keys = flat_cell * BINS + binned
    hist = np.bincount(keys.ravel(), weights=mag.ravel(),
                       minlength=N_CELLS * N_CELLS * BINS)
    cells = hist.reshape(N_CELLS, N_CELLS, BINS)

    # overlapping 2x2-cell blocks, stride one cell, each L2-normalized
    blocks = np.empty((N_BLOCKS, N_BLOCKS, BLOCK * BLOCK * BINS))
    for by in range(N_BLOCKS):
        for bx in range(N_BLOCKS):
            v = cells[by:by + BLOCK, bx:bx + BLOCK, :].ravel()
            blocks[by, bx, :] = v / np.sqrt(v @ v + BLOCK_EPS ** 2)
    return blocks.ravel()


def extract_features_batch(images) -> np.ndarray:
    feats = [extract_features(img) for img in images]
    return np.stack(feats) if feats else np.zeros((0, DESCRIPTOR_LEN))


@dataclass(frozen=True)
class TrainConfig:
    """SVM hyperparameters; the seed must be given explicitly."""

    seed: int
    epochs: int = 200
    learning_rate: float = 1.0
    lam: float = 1e-2

    def __post_init__(self):
        if self.epochs < 1:
            raise AtrError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0 or self.lam <= 0:
            raise AtrError(
                f"learning rate and regularization must be > 0, got "
                f"lr={self.learning_rate}, lambda={self.lam}")


@dataclass(frozen=True, eq=False)
class ClassifierModel:
    """One-vs-rest linear model: per-class weight row + bias."""

    classes: tuple
    weights: np.ndarray    # (K, d)
    biases: np.ndarray     # (K,)
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.biases, dtype=np.float64)
        classes = tuple(self.classes)
        if len(set(classes)) != len(classes):
            raise AtrError("model classes must be distinct")
        if w.ndim != 2 or w.shape[0] != len(classes) or b.shape != (len(classes),):
            raise AtrError(
                f"shape mismatch: {len(classes)} classes, weights {w.shape}, biases {b.shape}")
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)

    def save(self, path) -> None:
        payload = {
            "classes": list(self.classes),
            "weights": self.weights.tolist(),
            "biases": self.biases.tolist(),
            "config": self.config,
        }
        with open(path, "w") as f:
            json.dump(payload, f)

    @classmethod
    def load(cls, path) -> "ClassifierModel":
        with open(path) as f:
            d = json.load(f)
        return cls(classes=tuple(d["classes"]), weights=np.array(d["weights"]),
                   biases=np.array(d["biases"]), config=d.get("config", {}))


def train_classifier(features, labels, config: TrainConfig) -> ClassifierModel:
    """Train one-vs-rest hinge-loss SVMs by seeded SGD.

    Each class trains independently with its own derived RNG; the visit order
    is a fresh seeded permutation every epoch, so results are identical across
    runs and platforms.
    """
    X = np.asarray(features, dtype=np.float64)
    y = list(labels)
    if X.ndim != 2 or X.shape[0] != len(y):
        raise AtrError(f"features {X.shape} do not match {len(y)} labels")
    if X.shape[0] == 0:
        raise AtrError("training needs at least one sample")
    if not np.all(np.isfinite(X)):
        raise AtrError("features contain non-finite values")
    classes = tuple(sorted(set(y)))
    if len(classes) < 2:
        raise AtrError(f"training needs >= 2 classes, got {classes}")
    n, d = X.shape
    lam = config.lam
    lr = config.learning_rate
    W = np.zeros((len(classes), d))
    B = np.zeros(len(classes))
    for ci, cls in enumerate(classes):
        sign = np.where(np.asarray(y, dtype=object) == cls, 1.0, -1.0)
        rng = np.random.default_rng([config.seed, ci])
        w = np.zeros(d)
        b = 0.0
        t = 0
        for _ in range(config.epochs):
            for i in rng.permutation(n):
                t += 1
                eta = lr / (lam * t)
                margin = sign[i] * (X[i] @ w + b)
                w *= (1.0 - eta * lam)
                if margin < 1.0:
                    w += (eta * sign[i]) * X[i]
                    b += (lr / t) * sign[i]
        W[ci] = w
        B[ci] = b
    return ClassifierModel(classes=classes, weights=W, biases=B,
                           config={"seed": config.seed, "epochs": config.epochs,
                                   "learning_rate": lr, "lam": lam})


def decision_scores(model: ClassifierModel, features: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if X.shape[1] != model.weights.shape[1]:
        raise AtrError(
            f"feature length {X.shape[1]} does not match model ({model.weights.shape[1]})")
    return X @ model.weights.T + model.biases


def predict(model: ClassifierModel, features: np.ndarray):
    """Highest-scoring class per sample; ties go to the earlier class in
    model.classes.  A single feature vector yields a single label."""
    single = np.asarray(features).ndim == 1
    scores = decision_scores(model, features)
    idx = np.argmax(scores, axis=1)
    labels = [model.classes[i] for i in idx]
    return labels[0] if single else labels


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """K x K counts; rows are actual classes, columns predicted."""

    classes: tuple
    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        k = len(self.classes)
        if c.shape != (k, k):
            raise AtrError(f"counts shape {c.shape} does not match {k} classes")
        if np.any(c < 0):
            raise AtrError("confusion counts must be >= 0")
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "counts", c)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        total = self.total
        return float(np.trace(self.counts)) / total if total else 0.0

    def per_class_accuracy(self) -> dict:
        out = {}
        for i, cls in enumerate(self.classes):
            row = int(self.counts[i].sum())
            out[cls] = float(self.counts[i, i]) / row if row else 0.0
        return out

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "counts": self.counts.tolist(),
            "total": self.total,
            "accuracy": self.accuracy,
            "per_class_accuracy": self.per_class_accuracy(),
        }


def confusion_matrix(predictions, actuals, classes) -> ConfusionMatrix:
    """Tally predictions against ground truth over a fixed class list."""
    preds = list(predictions)
    acts = list(actuals)
    if len(preds) != len(acts):
        raise AtrError(f"{len(preds)} predictions vs {len(acts)} actuals")
    classes = tuple(classes)
    index = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for p, a in zip(preds, acts):
        if a not in index:
            raise AtrError(f"unknown actual label {a!r}")
        if p not in index:
            raise AtrError(f"unknown predicted label {p!r}")
        counts[index[a], index[p]] += 1
    return ConfusionMatrix(classes=classes, counts=counts)
