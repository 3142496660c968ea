"""Gaussian kernel graphs built from sampled manifolds."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .errors import InvalidArgument
from .manifold import ManifoldSignal, ManifoldSpec, PointCloud, sample_uniform

__all__ = [
    "PointCloud",
    "GeometricGraph",
    "GraphSignal",
    "kernel_weight",
    "kernel_normalizer",
    "default_epsilon",
    "build_graph",
    "sample_operator",
    "discrete_laplacian_at",
    "functional_laplacian_at",
]


@dataclass(frozen=True)
class GeometricGraph:
    n: int
    epsilon: float
    adjacency: np.ndarray
    laplacian: np.ndarray
    distance_metric: str = "euclidean"

    @property
    def degrees(self) -> np.ndarray:
        return np.diag(self.laplacian) + np.diag(self.adjacency)


@dataclass(frozen=True)
class GraphSignal:
    values: np.ndarray
    cloud: Optional[PointCloud] = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if self.cloud is not None and len(v) != self.cloud.n:
            raise InvalidArgument(f"signal length {len(v)} != cloud size {self.cloud.n}")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


def _check_epsilon(epsilon):
    if not epsilon > 0:
        raise InvalidArgument(f"epsilon must be positive, got {epsilon}")


def kernel_normalizer(n: int, d: int, epsilon: float) -> float:
    """The prefactor ``1 / (n eps (4 pi eps)^(d/2))`` shared by all kernel sums."""
    _check_epsilon(epsilon)
    if n < 1:
        raise InvalidArgument(f"n must be >= 1, got {n}")
    return 1.0 / (n * epsilon * (4.0 * math.pi * epsilon) ** (d / 2.0))


def kernel_weight(xi, xj, n: int, d: int, epsilon: float) -> float:
    c = kernel_normalizer(n, d, epsilon)
    diff = np.asarray(xi, dtype=float) - np.asarray(xj, dtype=float)
    return c * math.exp(-float(diff @ diff) / (4.0 * epsilon))


def default_epsilon(n: int, d: int) -> float:
    """Smallest bandwidth allowed by the convergence theory: n^(-1/(d+4))."""
    return n ** (-1.0 / (d + 4))


def build_graph(
    cloud: PointCloud,
    epsilon: Optional[float] = None,
    metric: str = "euclidean",
    nav_map=None,
) -> GeometricGraph:
    """Dense kernel adjacency and combinatorial Laplacian ``diag(W 1) - W``.

    With ``metric="obstacle_aware"`` every pair whose connecting segment is
    blocked by an obstacle of ``nav_map`` gets weight zero.
    """
    n, d = cloud.n, cloud.intrinsic_dim
    if epsilon is None:
        epsilon = default_epsilon(n, d)
    _check_epsilon(epsilon)
    if metric not in ("euclidean", "obstacle_aware"):
        raise InvalidArgument(f"unknown distance metric {metric!r}")
    if metric == "obstacle_aware" and nav_map is None:
        raise InvalidArgument("obstacle_aware metric requires a map")

    sq = squareform(pdist(cloud.points, "sqeuclidean"))
    W = kernel_normalizer(n, d, epsilon) * np.exp(-sq / (4.0 * epsilon))
    if metric == "obstacle_aware":
        from .navigation import visibility_matrix

        W[~visibility_matrix(nav_map, cloud.points)] = 0.0
    L = np.diag(W.sum(axis=1)) - W
    W.flags.writeable = False
    L.flags.writeable = False
    return GeometricGraph(n, float(epsilon), W, L, metric)


def sample_operator(f: ManifoldSignal, cloud: PointCloud) -> GraphSignal:
    return GraphSignal(f(cloud.points), cloud)


def _as_signal(f):
    return f if isinstance(f, ManifoldSignal) else ManifoldSignal(f)


def discrete_laplacian_at(f, x, cloud: PointCloud, epsilon: float) -> float:
    """Graph Laplacian of ``f`` extended to an arbitrary manifold point ``x``."""
    f = _as_signal(f)
    c = kernel_normalizer(cloud.n, cloud.intrinsic_dim, epsilon)
    x = np.asarray(x, dtype=float).reshape(1, -1)
    fx = f(x)[0]
    d2 = ((cloud.points - x) ** 2).sum(axis=1)
    return float(c * np.sum((fx - f(cloud.points)) * np.exp(-d2 / (4.0 * epsilon))))


def functional_laplacian_at(
    f,
    x,
    manifold: ManifoldSpec,
    epsilon: float,
    quad_n: int,
    seed: int,
    return_stderr: bool = False,
):
    """Monte-Carlo estimate of the kernel Laplacian integrated against ``mu``.

    This is the expectation form: no ``1/n`` factor, ``mu`` a probability
    measure. With ``return_stderr`` a ``(value, standard_error)`` pair is
    returned.
    """
    _check_epsilon(epsilon)
    if quad_n < 1:
        raise InvalidArgument(f"quad_n must be >= 1, got {quad_n}")
    f = _as_signal(f)
    d = manifold.intrinsic_dim
    c = 1.0 / (epsilon * (4.0 * math.pi * epsilon) ** (d / 2.0))
    x = np.asarray(x, dtype=float).reshape(1, -1)
    if quad_n == 1:
        ys = manifold.embed(np.random.default_rng(seed).uniform(0, 2 * math.pi, size=(1, d)))
    else:
        ys = sample_uniform(manifold, quad_n, seed).points
    d2 = ((ys - x) ** 2).sum(axis=1)
    terms = c * (f(x)[0] - f(ys)) * np.exp(-d2 / (4.0 * epsilon))
    value = float(terms.mean())
    if not return_stderr:
        return value
    se = float(terms.std(ddof=1) / math.sqrt(quad_n)) if quad_n > 1 else math.inf
    return value, se
