"""Downstream evaluation of exported point embeddings.

Per-point embeddings are pooled into one descriptor per cloud, then scored
with a linear softmax probe or a k-NN classifier trained on the support set
only.  The module also provides the segmentation mIoU metric, the silhouette
coefficient for embedding cluster quality, and per-point feature-space
distance export for heatmap plotting.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .autonet import Adam, cross_entropy
from .geometry import PointCloud


@dataclass(frozen=True)
class CloudEmbedding:
    cloud_id: str
    vector: np.ndarray
    class_label: int


def pool_cloud(embeddings: np.ndarray, mode: str = "mean") -> np.ndarray:
    """Pool per-point embeddings into one cloud descriptor.

    ``mean`` averages over points; ``meanmax`` concatenates the per-dimension
    mean and max (twice the width).
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2 or embeddings.shape[0] < 1:
        raise ValueError(f"expected (n, width) embeddings, got shape {embeddings.shape}")
    if mode == "mean":
        return embeddings.mean(axis=0)
    if mode == "meanmax":
        return np.concatenate([embeddings.mean(axis=0), embeddings.max(axis=0)])
    raise ValueError(f"unknown pooling mode {mode!r}")


def _stack(items: list[CloudEmbedding]):
    X = np.stack([it.vector for it in items])
    y = np.array([it.class_label for it in items], dtype=np.int64)
    return X, y


@dataclass
class LinearProbe:
    weights: np.ndarray  # (width, n_classes)
    bias: np.ndarray
    classes: np.ndarray  # original class labels, sorted

    def predict(self, X: np.ndarray) -> np.ndarray:
        scores = X @ self.weights + self.bias
        return self.classes[np.argmax(scores, axis=1)]


def train_linear_probe(support: list[CloudEmbedding], epochs: int = 300, lr: float = 0.05,
                       seed: int = 0) -> LinearProbe:
    """Softmax regression on frozen embeddings, full-batch Adam.

    The objective is convex, so weights start at zero and the fit is
    deterministic; the seed parameter is accepted for interface stability.
    Raises ValueError when the support set has fewer than two classes.
    """
    del seed
    X, y = _stack(support)
    classes = np.unique(y)
    if classes.size < 2:
        raise ValueError(f"probe needs at least 2 classes, got {classes.size}")
    index = {c: i for i, c in enumerate(classes)}
    targets = np.array([index[c] for c in y], dtype=np.int64)
    w = np.zeros((X.shape[1], classes.size))
    b = np.zeros(classes.size)
    adam = Adam(lr=lr)
    params = {"w": w, "b": b}
    for _ in range(epochs):
        _, dlogits = cross_entropy(X @ w + b, targets)
        adam.update(params, {"w": X.T @ dlogits, "b": dlogits.sum(axis=0)})
    return LinearProbe(weights=w, bias=b, classes=classes)


@dataclass
class KnnClassifier:
    train_X: np.ndarray
    train_y: np.ndarray
    k: int = 1

    @classmethod
    def fit(cls, support: list[CloudEmbedding], k: int = 1) -> "KnnClassifier":
        X, y = _stack(support)
        return cls(train_X=X, train_y=y, k=k)

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.train_y)

    def predict(self, X: np.ndarray) -> np.ndarray:
        diff = X[:, None, :] - self.train_X[None, :, :]
        dist = np.sqrt((diff**2).sum(axis=2))
        order = np.argsort(dist, axis=1, kind="stable")[:, : self.k]
        out = np.empty(X.shape[0], dtype=np.int64)
        for i in range(X.shape[0]):
            votes = self.train_y[order[i]]
            labels, counts = np.unique(votes, return_counts=True)
            winners = labels[counts == counts.max()]
            if winners.size == 1:
                out[i] = winners[0]
            else:
                # Tie: take the winner whose representative is nearest.
                for j in order[i]:
                    if self.train_y[j] in winners:
                        out[i] = self.train_y[j]
                        break
        return out


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray  # rows: true class, cols: predicted class
    classes: np.ndarray


def evaluate(classifier, query: list[CloudEmbedding]) -> EvalResult:
    """Fraction of query items classified correctly, plus a confusion matrix.

    Confusion rows are indexed by true class (union of classifier and query
    classes), columns by predicted class; row sums equal per-class counts.
    """
    if not query:
        raise ValueError("query set is empty")
    X, y = _stack(query)
    pred = classifier.predict(X)
    classes = np.unique(np.concatenate([classifier.classes, y]))
    index = {c: i for i, c in enumerate(classes)}
    confusion = np.zeros((classes.size, classes.size), dtype=np.int64)
    for t, p in zip(y, pred):
        confusion[index[t], index[p]] += 1
    return EvalResult(accuracy=float((pred == y).mean()), confusion=confusion, classes=classes)


def miou(pred_labels, true_labels, parts=None) -> float:
    """Mean intersection-over-union across the parts present in an object.

    A part counts if it occurs in the prediction or the ground truth (parts
    absent from both contribute nothing); ``parts`` optionally restricts the
    label set considered.
    """
    pred = np.asarray(pred_labels, dtype=np.int64)
    true = np.asarray(true_labels, dtype=np.int64)
    if pred.shape != true.shape:
        raise ValueError(f"label length mismatch: {pred.shape} vs {true.shape}")
    present = set(np.unique(pred)) | set(np.unique(true))
    if parts is not None:
        present &= set(int(p) for p in parts)
    if not present:
        raise ValueError("no parts to score")
    ious = []
    for part in sorted(present):
        inter = np.count_nonzero((pred == part) & (true == part))
        union = np.count_nonzero((pred == part) | (true == part))
        ious.append(inter / union)
    return float(np.mean(ious))


def silhouette(X: np.ndarray, labels) -> float:
    """Mean silhouette coefficient of labeled vectors, in [-1, 1].

    Per sample: a = mean distance to same-class samples (excluding self), b =
    smallest mean distance to another class; score = (b - a) / max(a, b).
    Samples in singleton classes, and samples with a = b = 0, score 0.
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes.size < 2:
        raise ValueError(f"silhouette needs at least 2 classes, got {classes.size}")
    diff = X[:, None, :] - X[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    scores = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        same = labels == labels[i]
        n_same = np.count_nonzero(same)
        if n_same < 2:
            scores[i] = 0.0
            continue
        a = (dist[i, same].sum()) / (n_same - 1)
        b = min(dist[i, labels == c].mean() for c in classes if c != labels[i])
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return float(scores.mean())


def feature_heatmap(embeddings: np.ndarray, anchor: int) -> np.ndarray:
    """Distances from the anchor point's embedding to every embedding."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if not 0 <= anchor < embeddings.shape[0]:
        raise ValueError(f"anchor {anchor} out of range for {embeddings.shape[0]} points")
    return np.linalg.norm(embeddings - embeddings[anchor], axis=1)


def write_heatmap_csv(path, cloud: PointCloud, distances: np.ndarray) -> None:
    """CSV of point coordinates and feature-space distance, for plotting."""
    distances = np.asarray(distances, dtype=np.float64)
    if distances.shape != (cloud.n,):
        raise ValueError(f"need one distance per point, got {distances.shape} for n={cloud.n}")
    header = ["x", "y", "z"][: cloud.d] + [f"c{i}" for i in range(3, cloud.d)] + ["distance"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(cloud.n):
            writer.writerow([repr(float(v)) for v in cloud.points[i]] + [repr(float(distances[i]))])
