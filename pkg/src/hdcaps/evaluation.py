"""Downstream evaluation: feature fusion, a linear max-margin classifier,
unsupervised baselines and agreement metrics.

The classifier is a one-vs-rest linear model trained on the hinge loss
with L2 regularization (Pegasos-style per-sample subgradient steps with
the 1/(lambda*t) schedule and norm projection, shuffled passes drawn
from a seeded generator). Features are z-scored with moments from the
training split. Baselines are PCA and Laplacian eigenmaps applied to
the per-pixel original data; both are fit transductively on the full
feature matrix, the split happens afterwards.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.sparse.csgraph import connected_components

__all__ = [
    "fuse_features",
    "raw_patch_features",
    "LinearClassifier",
    "train_classifier",
    "predict",
    "pca_fit",
    "pca_transform",
    "laplacian_eigenmaps",
    "confusion_matrix",
    "overall_accuracy",
    "average_accuracy",
    "kappa",
    "evaluate_split",
]

_STD_FLOOR = 1e-12


def fuse_features(feats_hsi: np.ndarray, feats_lidar: np.ndarray,
                  center: int) -> np.ndarray:
    """Concatenate center-pixel and mean feature rows of both branches.

    feats_*: (X, C) for one patch or (N, X, C) for a batch; center is the
    row index of the patch's center pixel. Output is (4 * C,) or
    (N, 4 * C), ordered [spectral center, spectral mean, lidar center,
    lidar mean].
    """
    fh = np.asarray(feats_hsi, dtype=np.float64)
    fl = np.asarray(feats_lidar, dtype=np.float64)
    if fh.shape[:-1] != fl.shape[:-1]:
        raise ValueError("branch feature maps must cover the same points")
    single = fh.ndim == 2
    if single:
        fh, fl = fh[None], fl[None]
    if not 0 <= center < fh.shape[1]:
        raise ValueError("center index out of range")
    fused = np.concatenate(
        [fh[:, center], fh.mean(axis=1), fl[:, center], fl.mean(axis=1)], axis=1
    )
    return fused[0] if single else fused


def raw_patch_features(patchset) -> np.ndarray:
    """Original per-pixel data: center spectrum plus center height.

    This is the stacked HSI + LiDAR vector classified directly, the
    reference the extracted features are compared against; it carries no
    neighborhood context.
    """
    n = len(patchset)
    center = patchset.b * patchset.b // 2
    spec = patchset.hsi.reshape(n, -1, patchset.c_spec)[:, center, :]
    height = patchset.lidar[:, center, 2:3]
    return np.concatenate([spec.astype(np.float64),
                           height.astype(np.float64)], axis=1)


@dataclass
class LinearClassifier:
    classes: np.ndarray
    w: np.ndarray  # (K, D)
    b: np.ndarray  # (K,)
    mean: np.ndarray
    std: np.ndarray


def train_classifier(feats: np.ndarray, labels: np.ndarray,
                     lam: float = 1e-4, epochs: int = 100,
                     seed: int = 0) -> LinearClassifier:
    """One-vs-rest hinge-loss linear classifier.

    Per-sample subgradient steps over `epochs` shuffled passes with step
    size 1/(lam * t), t the global step counter, plus projection onto
    the ball of radius 1/sqrt(lam). The returned weights are the average
    over all iterates; the last iterate still swings with the final few
    samples at this step schedule, the average settles. The bias is a
    weight on a constant feature, so it shares the decay and projection;
    that keeps its scale commensurate with the scores. Deterministic
    given (features, labels, seed).
    """
    feats = np.asarray(feats, dtype=np.float64)
    labels = np.asarray(labels)
    if feats.ndim != 2 or feats.shape[0] != labels.shape[0]:
        raise ValueError("expected feats (N, D) with one label per row")
    if feats.shape[0] == 0:
        raise ValueError("cannot train a classifier on zero samples")
    mean = feats.mean(axis=0)
    std = feats.std(axis=0)
    std = np.where(std < _STD_FLOOR, 1.0, std)
    x = (feats - mean) / std
    classes = np.unique(labels)
    if classes.shape[0] < 2:
        raise ValueError("need at least two classes to train a classifier")
    n, d = x.shape
    x = np.concatenate([x, np.ones((n, 1))], axis=1)
    radius = 1.0 / np.sqrt(lam)
    w = np.zeros((classes.shape[0], d))
    b = np.zeros(classes.shape[0])
    for k, cls in enumerate(classes):
        y = np.where(labels == cls, 1.0, -1.0)
        rng = np.random.default_rng(seed)
        wk = np.zeros(d + 1)
        avg = np.zeros(d + 1)
        t = 1
        for _ in range(epochs):
            for i in rng.permutation(n):
                step = 1.0 / (lam * t)
                violated = y[i] * (x[i] @ wk) < 1.0
                wk *= 1.0 - 1.0 / t
                if violated:
                    wk += step * y[i] * x[i]
                norm = np.linalg.norm(wk)
                if norm > radius:
                    wk *= radius / norm
                avg += wk
                t += 1
        avg /= t - 1
        w[k] = avg[:d]
        b[k] = avg[d]
    return LinearClassifier(classes=classes, w=w, b=b, mean=mean, std=std)


def predict(model: LinearClassifier, feats: np.ndarray) -> np.ndarray:
    """Highest-scoring class per row; score ties go to the lowest class id."""
    x = (np.asarray(feats, dtype=np.float64) - model.mean) / model.std
    scores = x @ model.w.T + model.b
    return model.classes[np.argmax(scores, axis=1)]


def pca_fit(feats: np.ndarray, n_components: int) -> dict:
    """Principal axes via the eigendecomposition of the covariance.

    Component signs are fixed so each axis's largest-magnitude entry is
    positive, which makes the fit reproducible across backends.
    """
    feats = np.asarray(feats, dtype=np.float64)
    n, d = feats.shape
    if not 1 <= n_components <= d:
        raise ValueError("n_components must be in [1, D]")
    mean = feats.mean(axis=0)
    centered = feats - mean
    cov = centered.T @ centered / max(1, n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:n_components]
    comps = eigvecs[:, order].T  # (k, D)
    for i in range(comps.shape[0]):
        j = np.argmax(np.abs(comps[i]))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    return {"mean": mean, "components": comps,
            "eigenvalues": eigvals[order]}


def pca_transform(model: dict, feats: np.ndarray) -> np.ndarray:
    feats = np.asarray(feats, dtype=np.float64)
    return (feats - model["mean"]) @ model["components"].T


def laplacian_eigenmaps(feats: np.ndarray, n_components: int,
                        n_neighbors: int = 10) -> np.ndarray:
    """Spectral embedding of the symmetrized kNN graph.

    Edges carry heat-kernel weights exp(-d^2 / sigma^2) with sigma the
    median kNN edge length. Solves the generalized problem
    L y = lambda D y and returns the eigenvectors for the n_components
    smallest nonzero eigenvalues. If the graph is disconnected, only the
    largest component is embedded; other rows are zero and a warning is
    issued.
    """
    x = np.asarray(feats, dtype=np.float64)
    n = x.shape[0]
    if n_neighbors < 1 or n_neighbors >= n:
        raise ValueError("need 1 <= n_neighbors < n_samples")
    if n_components < 1 or n_components >= n:
        raise ValueError("need 1 <= n_components < n_samples")
    sq = np.sum(x * x, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (x @ x.T), 0.0)
    np.fill_diagonal(d2, np.inf)
    nn = np.argsort(d2, axis=1)[:, :n_neighbors]

    adj = np.zeros((n, n), dtype=bool)
    rows = np.repeat(np.arange(n), n_neighbors)
    adj[rows, nn.reshape(-1)] = True
    adj |= adj.T

    edge_d2 = d2[adj]
    sigma = np.median(np.sqrt(edge_d2))
    if sigma < _STD_FLOOR:
        sigma = 1.0
    weights = np.where(adj, np.exp(-d2 / (sigma * sigma)), 0.0)
    np.fill_diagonal(weights, 0.0)

    n_comp, comp_labels = connected_components(adj, directed=False)
    out = np.zeros((n, n_components))
    if n_comp > 1:
        warnings.warn(
            f"neighbor graph has {n_comp} components; embedding the largest only",
            stacklevel=2,
        )
        keep = comp_labels == np.bincount(comp_labels).argmax()
    else:
        keep = np.ones(n, dtype=bool)
    idx = np.nonzero(keep)[0]
    if idx.shape[0] <= n_components:
        raise ValueError("largest graph component is too small for the embedding")
    w_sub = weights[np.ix_(idx, idx)]
    deg = w_sub.sum(axis=1)
    lap = np.diag(deg) - w_sub
    vals, vecs = scipy.linalg.eigh(lap, np.diag(deg),
                                   subset_by_index=[0, n_components])
    order = np.argsort(vals)
    vecs = vecs[:, order[1:n_components + 1]]
    for i in range(vecs.shape[1]):
        j = np.argmax(np.abs(vecs[:, i]))
        if vecs[j, i] < 0:
            vecs[:, i] = -vecs[:, i]
    out[idx] = vecs
    return out


def confusion_matrix(y_true: np.ndarray, y_pred: np.ndarray,
                     classes: np.ndarray | None = None) -> tuple:
    """Counts with rows = true class, columns = predicted class."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ValueError("label arrays must have equal length")
    if classes is None:
        classes = np.unique(np.concatenate([y_true, y_pred]))
    else:
        classes = np.asarray(classes)
    index = {cls: i for i, cls in enumerate(classes.tolist())}
    mat = np.zeros((classes.shape[0], classes.shape[0]), dtype=np.int64)
    for t, p in zip(y_true.tolist(), y_pred.tolist()):
        mat[index[t], index[p]] += 1
    return mat, classes


def overall_accuracy(mat: np.ndarray) -> float:
    total = mat.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    return float(np.trace(mat) / total)


def average_accuracy(mat: np.ndarray) -> float:
    """Mean per-class recall; classes with no true samples are skipped
    with a warning."""
    row_sums = mat.sum(axis=1)
    present = row_sums > 0
    if not np.any(present):
        raise ValueError("no class has any true samples")
    if not np.all(present):
        warnings.warn(
            f"{int((~present).sum())} class(es) have no true samples; "
            "excluded from the average accuracy", stacklevel=2,
        )
    recalls = np.diag(mat)[present] / row_sums[present]
    return float(recalls.mean())


def kappa(mat: np.ndarray) -> float:
    """Agreement beyond chance: (p_o - p_e) / (1 - p_e)."""
    total = mat.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    p_o = np.trace(mat) / total
    p_e = float((mat.sum(axis=1) / total) @ (mat.sum(axis=0) / total))
    if p_e >= 1.0:
        return 0.0
    return float((p_o - p_e) / (1.0 - p_e))


def evaluate_split(feats: np.ndarray, labels: np.ndarray,
                   train_idx: np.ndarray, test_idx: np.ndarray,
                   lam: float = 1e-4, epochs: int = 100,
                   seed: int = 0) -> dict:
    """Train the linear classifier on the train rows, score the test rows.

    Returns a dict with oa, aa, kappa, per-class recalls (None for a
    class absent from the test rows), the confusion matrix and the class
    list.
    """
    model = train_classifier(feats[train_idx], labels[train_idx],
                             lam=lam, epochs=epochs, seed=seed)
    preds = predict(model, feats[test_idx])
    mat, classes = confusion_matrix(labels[test_idx], preds,
                                    np.unique(labels))
    row_sums = mat.sum(axis=1)
    per_class = [
        float(mat[i, i] / row_sums[i]) if row_sums[i] > 0 else None
        for i in range(classes.shape[0])
    ]
    return {
        "oa": overall_accuracy(mat),
        "aa": average_accuracy(mat),
        "kappa": kappa(mat),
        "per_class": per_class,
        "confusion": mat,
        "classes": classes,
    }
