"""Gaussian kernels on outcome and covariate spaces."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

SUBSAMPLE_CAP = 1000


def as_points(points) -> np.ndarray:
    """Return ``points`` as a 2-D float array with one point per row.

    A 1-D input is read as a sample of scalar points.
    """
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr[:, None]
    elif arr.ndim != 2:
        raise ValueError(f"expected points as a 2-D array, got shape {arr.shape}")
    return arr


def _as_point(v) -> np.ndarray:
    return np.atleast_1d(np.asarray(v, dtype=float))


@dataclass(frozen=True)
class GaussianKernel:
    """k(v, y) = exp(-||v - y||^2 / (2 l^2)).

    With ``dim_normalized`` the squared distance is divided by the ambient
    dimension, which keeps the lengthscale on a per-coordinate scale for
    high-dimensional outcomes such as images.
    """

    lengthscale: float
    dim_normalized: bool = False

    def __post_init__(self):
        if not np.isfinite(self.lengthscale) or self.lengthscale <= 0:
            raise ValueError(f"lengthscale must be positive, got {self.lengthscale}")

    def _scale(self, dim: int) -> float:
        s = 2.0 * self.lengthscale**2
        return s * dim if self.dim_normalized else s

    def eval(self, v, y) -> float:
        v, y = _as_point(v), _as_point(y)
        if v.shape != y.shape:
            raise ValueError(f"dimension mismatch: {v.shape} vs {y.shape}")
        sq = 0.0
        for t in (v - y).tolist():
            sq += t * t
        return float(np.exp(-sq / self._scale(v.size)))

    def matrix(self, rows, cols) -> np.ndarray:
        """Kernel matrix with entry (r, j) = k(cols[j], rows[r])."""
        rows, cols = as_points(rows), as_points(cols)
        if rows.shape[0] == 0 or cols.shape[0] == 0:
            raise ValueError("kernel matrix needs nonempty rows and cols")
        if rows.shape[1] != cols.shape[1]:
            raise ValueError(
                f"dimension mismatch: rows have {rows.shape[1]}, cols have {cols.shape[1]}"
            )
        sq = cdist(rows, cols, "sqeuclidean")
        return np.exp(-sq / self._scale(rows.shape[1]))

    def grad_first(self, v, y) -> np.ndarray:
        """Gradient of k(v, y) with respect to v."""
        v, y = _as_point(v), _as_point(y)
        if v.shape != y.shape:
            raise ValueError(f"dimension mismatch: {v.shape} vs {y.shape}")
        diff = v - y
        scale = self._scale(v.size)
        k = np.exp(-np.sum(diff * diff) / scale)
        return -2.0 * diff / scale * k

    def matrix_grad(self, rows, v) -> np.ndarray:
        """Gradients of k(v, rows[r]) in v for a single location; shape (m, d)."""
        rows = as_points(rows)
        v = _as_point(v)
        if rows.shape[1] != v.size:
            raise ValueError(f"dimension mismatch: rows have {rows.shape[1]}, v has {v.size}")
        diff = v[None, :] - rows
        scale = self._scale(v.size)
        k = np.exp(-np.sum(diff * diff, axis=1) / scale)
        return -2.0 / scale * diff * k[:, None]


def kernel_eval(kernel: GaussianKernel, v, y) -> float:
    return kernel.eval(v, y)


def kernel_matrix(kernel: GaussianKernel, rows, cols) -> np.ndarray:
    return kernel.matrix(rows, cols)


def kernel_grad_first(kernel: GaussianKernel, v, y) -> np.ndarray:
    return kernel.grad_first(v, y)


def pairwise_distances(points) -> np.ndarray:
    """Condensed vector of Euclidean distances over all unordered pairs."""
    return pdist(as_points(points), "euclidean")


def median_heuristic(points, cap: int = SUBSAMPLE_CAP, seed: int = 0) -> float:
    """Median pairwise Euclidean distance.

    Samples larger than ``cap`` are subsampled without replacement using
    ``seed`` so the result is deterministic.
    """
    pts = as_points(points)
    if pts.shape[0] < 2:
        raise ValueError("degenerate sample for bandwidth: need at least 2 points")
    if pts.shape[0] > cap:
        idx = np.random.default_rng(seed).choice(pts.shape[0], size=cap, replace=False)
        pts = pts[np.sort(idx)]
    med = float(np.median(pairwise_distances(pts)))
    if not med > 0:
        # Mostly tied samples; fall back to the median over distinct pairs.
        d = pairwise_distances(pts)
        d = d[d > 0]
        if d.size == 0:
            raise ValueError("degenerate sample for bandwidth: all points identical")
        med = float(np.median(d))
    return med


def default_dim_normalized(dim: int) -> bool:
    return dim >= 100
