"""Non-deep anomaly-detection baselines: 1-NN distance and PCA reconstruction.

Both operate on the same preprocessed samples as the flow, flattened to
vectors of length T_max * S.

- 1-NN: the score of x is the l1 distance to its nearest neighbor in the
  training set (works better than l2 on this kind of data).
- PCA: fit principal axes on the training set; the score is the l2 norm of
  the residual after projecting onto the top-k axes. When the flattened
  dimension exceeds the sample count, the eigenproblem is solved on the
  n x n Gram matrix instead of the D x D covariance.
"""

from __future__ import annotations

import warnings

import numpy as np

from . import serialize


class KnnModel:
    def __init__(self, train_matrix: np.ndarray):
        if train_matrix.ndim != 2 or train_matrix.shape[0] < 1:
            raise ValueError("KnnModel needs a non-empty (n, D) training matrix")
        if not np.all(np.isfinite(train_matrix)):
            raise ValueError("KnnModel: training matrix contains non-finite values")
        self.train_matrix = np.asarray(train_matrix, dtype=np.float64)

    @classmethod
    def fit(cls, samples: np.ndarray) -> "KnnModel":
        return cls(samples.reshape(samples.shape[0], -1))

    def score(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.shape[0] != self.train_matrix.shape[1]:
            raise ValueError(f"knn_score: dimension {x.shape[0]} does not match "
                             f"training dimension {self.train_matrix.shape[1]}")
        return float(np.abs(self.train_matrix - x).sum(axis=1).min())

    def save(self, path, extra_meta: dict | None = None,
             extra_arrays: dict | None = None) -> None:
        arrays = {"train_matrix": self.train_matrix}
        arrays.update(extra_arrays or {})
        serialize.save_container(path, "knn", dict(extra_meta or {}), arrays)


class PcaModel:
    def __init__(self, mean: np.ndarray, axes: np.ndarray,
                 explained_variance_ratio: float):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.axes = np.asarray(axes, dtype=np.float64)  # (k, D), rows orthonormal
        self.explained_variance_ratio = float(explained_variance_ratio)

    @property
    def n_components(self) -> int:
        return self.axes.shape[0]

    @classmethod
    def fit(cls, samples: np.ndarray, n_components: int = 90,
            auto_cap: bool = False) -> "PcaModel":
        x = np.asarray(samples, dtype=np.float64).reshape(samples.shape[0], -1)
        n, dim = x.shape
        if n < 2:
            raise ValueError("PCA needs at least 2 training samples")
        limit = min(n, dim)
        if n_components > limit:
            if not auto_cap:
                raise ValueError(f"n_components={n_components} exceeds "
                                 f"min(n, D)={limit}")
            warnings.warn(f"capping PCA components from {n_components} to {limit}",
                          RuntimeWarning, stacklevel=2)
            n_components = limit
        mean = x.mean(axis=0)
        centered = x - mean
        if dim <= n:
            cov = centered.T @ centered / (n - 1)
            eigenvalues, eigenvectors = np.linalg.eigh(cov)
            order = np.argsort(eigenvalues)[::-1]
            eigenvalues = eigenvalues[order]
            axes = eigenvectors[:, order].T
        else:
            # Gram trick: eigenvectors of (X X^T)/(n-1) map to input-space axes
            gram = centered @ centered.T / (n - 1)
            eigenvalues, eigenvectors = np.linalg.eigh(gram)
            order = np.argsort(eigenvalues)[::-1]
            eigenvalues = eigenvalues[order]
            eigenvectors = eigenvectors[:, order]
            scale = np.sqrt(np.maximum(eigenvalues * (n - 1), 1e-300))
            axes = (centered.T @ eigenvectors / scale).T
        eigenvalues = np.maximum(eigenvalues, 0.0)
        total = float(eigenvalues.sum())
        top = axes[:n_components]
        top = _fix_signs(top)
        ratio = float(eigenvalues[:n_components].sum() / total) if total > 0 else 1.0
        return cls(mean, top, ratio)

    def reconstruct(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        centered = x - self.mean
        return self.mean + self.axes.T @ (self.axes @ centered)

    def score(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.shape[0] != self.mean.shape[0]:
            raise ValueError(f"pca_score: dimension {x.shape[0]} does not match "
                             f"model dimension {self.mean.shape[0]}")
        return float(np.linalg.norm(x - self.reconstruct(x)))

    def save(self, path, extra_meta: dict | None = None) -> None:
        meta = dict(extra_meta or {})
        meta["explained_variance_ratio"] = self.explained_variance_ratio
        serialize.save_container(path, "pca", meta,
                                 {"mean": self.mean, "axes": self.axes})


def _fix_signs(axes: np.ndarray) -> np.ndarray:
    """First non-negligible coefficient of every axis is made positive, so
    serialized models do not depend on eigen-solver sign conventions."""
    axes = axes.copy()
    for row in axes:
        scale = np.max(np.abs(row))
        if scale == 0:
            continue
        lead = np.flatnonzero(np.abs(row) > 1e-12 * scale)[0]
        if row[lead] < 0:
            row *= -1.0
    return axes


def load_baseline(path):
    """Load a knn or pca container; returns (kind, model, meta)."""
    kind, meta, arrays = serialize.load_container(path)
    if kind == "knn":
        return kind, KnnModel(arrays["train_matrix"]), meta
    if kind == "pca":
        model = PcaModel(arrays["mean"], arrays["axes"],
                         meta.pop("explained_variance_ratio"))
        return kind, model, meta
    raise ValueError(f"{path}: unknown baseline kind {kind!r}")
