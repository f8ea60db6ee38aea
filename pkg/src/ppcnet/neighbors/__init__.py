"""Exact k-nearest-neighbor search in spatial and feature space.

Two interchangeable backends compute the same thing bit-for-bit: a
compiled grid-accelerated kernel (built from _kernels.pyx) and a pure
numpy fallback. The compiled one is picked at import when available;
set PPC_KNN_BACKEND=numpy or =compiled to force a choice.

Neighbor semantics, shared by every path including the test oracle:
candidates are all N rows, self excluded, ordered by (squared distance,
index) ascending; with dilation d the selected neighbors are ranks
d, 2d, ..., kd of that ordering (1-based). Queries default to all rows
but can be restricted to a prefix, which is how the pyramid evaluates
only the points that survive truncation.
"""

import os
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DataError
from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

_choice = os.environ.get("PPC_KNN_BACKEND", "auto")
if _choice == "numpy":
    _impl = _fallback
elif _choice == "compiled":
    if _compiled is None:
        raise ImportError("PPC_KNN_BACKEND=compiled but the extension is not built")
    _impl = _compiled
elif _choice == "auto":
    _impl = _compiled if _compiled is not None else _fallback
else:
    raise ConfigError(f"unknown PPC_KNN_BACKEND value: {_choice!r}")

# Default byte budget for the feature-space distance matrix; the search is
# only meant for the reduced top-of-pyramid cloud.
FEATURE_MEMORY_BUDGET = 1 << 31


def backend_name() -> str:
    return "compiled" if _impl is _compiled else "numpy"


def compiled_available() -> bool:
    return _compiled is not None


@dataclass
class NeighborIndex:
    """Per-point neighbor table: row i lists the k selected neighbors of
    point i among all candidates (indices into the input rows)."""

    indices: np.ndarray  # (Q, k) int32
    k: int
    dilation: int
    space: str  # "spatial" or "feature"

    def validate(self, n_points: int):
        q, k = self.indices.shape
        if k != self.k:
            raise DataError("neighbor table width does not match k")
        if self.indices.min() < 0 or self.indices.max() >= n_points:
            raise DataError("neighbor index out of range")
        if (self.indices == np.arange(q)[:, None]).any():
            raise DataError("a point appears as its own neighbor")


def _check_args(points, k, dilation, n_queries):
    points = np.ascontiguousarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise DataError("points must be a 2-D array")
    n = len(points)
    if k < 1 or dilation < 1:
        raise DataError("k and dilation must be >= 1")
    if n <= k * dilation:
        raise DataError(f"need more than k*dilation={k * dilation} points, got {n}")
    if n_queries is None:
        n_queries = n
    if not 1 <= n_queries <= n:
        raise DataError(f"n_queries must be in [1, {n}]")
    return points, n_queries


def knn_spatial(positions, k: int, dilation: int = 1, n_queries: int | None = None) -> NeighborIndex:
    """Exact Euclidean k-NN over 3-D positions, with dilation."""
    positions, n_queries = _check_args(positions, k, dilation, n_queries)
    if positions.shape[1] != 3:
        raise DataError("spatial search expects (N, 3) positions")
    idx = _impl.knn_spatial(positions, k, dilation, n_queries)
    return NeighborIndex(idx, k, dilation, "spatial")


def knn_feature(features, k: int, n_queries: int | None = None,
                memory_budget: int = FEATURE_MEMORY_BUDGET) -> NeighborIndex:
    """Exact Euclidean k-NN in feature space (dilation fixed at 1).

    The quadratic distance computation is guarded by a memory budget since
    it is only affordable on the downsampled top of the pyramid.
    """
    features, n_queries = _check_args(features, k, 1, n_queries)
    n = len(features)
    if n * n * 8 > memory_budget:
        raise DataError(f"feature search needs {n}x{n} distances, over the "
                        f"{memory_budget}-byte budget")
    idx = _impl.knn_feature(features, k, n_queries)
    return NeighborIndex(idx, k, 1, "feature")


def knn_bruteforce(points, k: int, dilation: int = 1, n_queries: int | None = None) -> NeighborIndex:
    """Direct-definition oracle: full pairwise distances, stable sort.

    Exists to validate the production paths; kept free of their blocking
    and grid machinery.
    """
    points, n_queries = _check_args(points, k, dilation, n_queries)
    diff = points[:n_queries, None, :] - points[None, :, :]
    dsq = (diff * diff).sum(axis=-1)
    rows = np.arange(n_queries)
    dsq[rows, rows] = np.inf
    order = np.argsort(dsq, axis=1, kind="stable")  # ties fall to lowest index
    take = dilation * np.arange(1, k + 1) - 1
    space = "spatial" if points.shape[1] == 3 else "feature"
    return NeighborIndex(order[:, take].astype(np.int32), k, dilation, space)
