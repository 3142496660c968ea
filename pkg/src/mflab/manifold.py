"""Analytic manifolds with closed-form Laplace-Beltrami spectra.

Two models are supported: the circle of radius ``R`` embedded in R^2 and
the flat 2-torus of side ``L`` embedded isometrically in R^4 as a product
of two circles of radius ``L / (2 pi)``. The measure on both is the
normalized uniform measure (total mass 1), so analytic eigenfunctions are
orthonormal with respect to plain averages over uniform samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .errors import EvaluationError, InvalidArgument, TruncationRefused

KINDS = ("circle", "flat_torus_2d")

# CLI / config aliases
_KIND_ALIASES = {"circle": "circle", "flat_torus_2d": "flat_torus_2d", "torus2": "flat_torus_2d"}


def _readonly(a):
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ManifoldSpec:
    kind: str
    scale: float = 1.0

    def __post_init__(self):
        kind = _KIND_ALIASES.get(self.kind)
        if kind is None:
            raise InvalidArgument(
                f"unknown manifold kind {self.kind!r}; valid kinds: circle, torus2 (flat_torus_2d)"
            )
        object.__setattr__(self, "kind", kind)
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise InvalidArgument(f"scale must be positive, got {self.scale}")
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def intrinsic_dim(self) -> int:
        return 1 if self.kind == "circle" else 2

    @property
    def ambient_dim(self) -> int:
        return 2 if self.kind == "circle" else 4

    @property
    def volume(self) -> float:
        """Riemannian volume (length for the circle, area for the torus)."""
        if self.kind == "circle":
            return 2.0 * math.pi * self.scale
        return self.scale**2

    @property
    def embedding_radius(self) -> float:
        if self.kind == "circle":
            return self.scale
        return self.scale / (2.0 * math.pi)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "scale": self.scale}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ManifoldSpec":
        return cls(d["kind"], float(d.get("scale", 1.0)))

    def angles(self, points) -> np.ndarray:
        """Intrinsic angle coordinates of ambient points, shape (m, d)."""
        x = np.atleast_2d(np.asarray(points, dtype=float))
        if x.shape[1] != self.ambient_dim:
            raise InvalidArgument(
                f"expected {self.ambient_dim}-dimensional ambient points, got {x.shape[1]}"
            )
        if self.kind == "circle":
            return np.arctan2(x[:, 1], x[:, 0])[:, None]
        return np.stack([np.arctan2(x[:, 1], x[:, 0]), np.arctan2(x[:, 3], x[:, 2])], axis=1)

    def embed(self, angles) -> np.ndarray:
        a = np.asarray(angles, dtype=float)
        r = self.embedding_radius
        if self.kind == "circle":
            a = a.reshape(-1)
            return r * np.stack([np.cos(a), np.sin(a)], axis=1)
        a = a.reshape(-1, 2)
        return r * np.stack(
            [np.cos(a[:, 0]), np.sin(a[:, 0]), np.cos(a[:, 1]), np.sin(a[:, 1])], axis=1
        )

    def on_manifold(self, points, rtol: float = 1e-12) -> bool:
        x = np.atleast_2d(np.asarray(points, dtype=float))
        r = self.embedding_radius
        pairs = x.reshape(len(x), -1, 2)
        radii = np.sqrt((pairs**2).sum(axis=2))
        return bool(np.all(np.abs(radii - r) <= rtol * r * 10))


@dataclass(frozen=True)
class PointCloud:
    """Sample points with their ambient coordinates.

    ``manifold`` is ``None`` for planar free-space clouds used in navigation.
    """

    points: np.ndarray
    intrinsic_dim: int
    manifold: Optional[ManifoldSpec] = None
    seed: Optional[int] = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or len(pts) < 2:
            raise InvalidArgument("a point cloud needs at least 2 points in a 2-D array")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        if self.manifold is not None and not self.manifold.on_manifold(pts):
            raise InvalidArgument("points do not lie on the declared manifold")

    @property
    def n(self) -> int:
        return len(self.points)

    def __len__(self):
        return len(self.points)


def sample_uniform(manifold: ManifoldSpec, n: int, seed: int) -> PointCloud:
    """Draw ``n`` i.i.d. points from the normalized uniform measure."""
    if n < 2:
        raise InvalidArgument(f"n must be >= 2, got {n}")
    rng = np.random.default_rng(seed)
    angles = rng.uniform(0.0, 2.0 * math.pi, size=(n, manifold.intrinsic_dim))
    return PointCloud(manifold.embed(angles), manifold.intrinsic_dim, manifold, seed)


@dataclass(frozen=True)
class AnalyticSpectrum:
    """First K Laplace-Beltrami eigenpairs, indexed from the zero eigenvalue.

    ``modes`` holds one tuple of ``(frequency, trig)`` factors per intrinsic
    dimension, with ``trig`` in ``{"c", "s"}``; the eigenfunction is the
    product of the factors, each non-constant factor scaled by sqrt(2).
    """

    manifold: ManifoldSpec
    eigenvalues: np.ndarray
    modes: tuple
    group_ids: np.ndarray

    def __len__(self):
        return len(self.eigenvalues)

    @property
    def entries(self):
        return [
            (float(lam), self.eigenfunction(i), int(g))
            for i, (lam, g) in enumerate(zip(self.eigenvalues, self.group_ids))
        ]

    def evaluate(self, points, count: Optional[int] = None) -> np.ndarray:
        """Matrix of eigenfunction values, shape (m, count)."""
        count = len(self) if count is None else count
        th = self.manifold.angles(points)
        out = np.ones((len(th), count))
        for i, mode in enumerate(self.modes[:count]):
            for axis, (k, trig) in enumerate(mode):
                if k == 0:
                    continue
                arg = k * th[:, axis]
                out[:, i] *= math.sqrt(2.0) * (np.cos(arg) if trig == "c" else np.sin(arg))
        return out

    def eigenfunction(self, i: int) -> Callable[[np.ndarray], np.ndarray]:
        def phi(points):
            return self.evaluate(points, i + 1)[:, i]

        return phi

    def group_slices(self) -> list[slice]:
        """Contiguous index ranges sharing a multiplicity group."""
        out, start = [], 0
        for i in range(1, len(self) + 1):
            if i == len(self) or self.group_ids[i] != self.group_ids[start]:
                out.append(slice(start, i))
                start = i
        return out


def lb_spectrum(manifold: ManifoldSpec, K: int) -> AnalyticSpectrum:
    if K < 1:
        raise InvalidArgument(f"K must be >= 1, got {K}")
    if manifold.kind == "circle":
        freqs = [(0,)] + [(k,) for k in range(1, K // 2 + 1)]
        modes = [((0, "c"),)]
        for (k,) in freqs[1:]:
            modes += [((k, "c"),), ((k, "s"),)]
        modes = modes[:K]
        sq = np.array([m[0][0] ** 2 for m in modes], dtype=float)
        eigenvalues = sq / manifold.scale**2
    else:
        m = 1
        while _torus_count(m) < K:
            m += 1
        cands = []
        for k1 in range(m + 1):
            for k2 in range(m + 1):
                if k1 * k1 + k2 * k2 > m * m:
                    continue
                for t1 in ("c", "s") if k1 else ("c",):
                    for t2 in ("c", "s") if k2 else ("c",):
                        cands.append((k1 * k1 + k2 * k2, k1, k2, t1, t2))
        cands.sort()
        cands = cands[:K]
        modes = [((k1, t1), (k2, t2)) for _, k1, k2, t1, t2 in cands]
        sq = np.array([c[0] for c in cands], dtype=float)
        eigenvalues = (2.0 * math.pi / manifold.scale) ** 2 * sq
    # exact integer squared frequencies define the multiplicity groups
    _, group_ids = np.unique(sq, return_inverse=True)
    return AnalyticSpectrum(manifold, _readonly(eigenvalues), tuple(modes), group_ids.astype(int))


def _torus_count(m: int) -> int:
    count = 0
    for k1 in range(m + 1):
        for k2 in range(m + 1):
            if k1 * k1 + k2 * k2 <= m * m:
                count += (2 if k1 else 1) * (2 if k2 else 1)
    return count


@dataclass(frozen=True)
class ManifoldSignal:
    """A scalar function on the manifold.

    ``evaluator`` maps an (m, ambient_dim) array to m values. When
    ``coefficients`` is set the signal is the finite combination
    ``sum_i coefficients[i] * phi_i`` of analytic eigenfunctions and
    ``band_limit`` equals the coefficient count.
    """

    evaluator: Callable[[np.ndarray], np.ndarray]
    description: str = ""
    band_limit: Optional[int] = None
    coefficients: Optional[np.ndarray] = field(default=None, repr=False)

    def __call__(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        try:
            vals = np.asarray(self.evaluator(pts), dtype=float)
        except Exception as exc:  # evaluator code is user supplied
            raise EvaluationError(f"evaluating {self.description or 'signal'} failed: {exc}") from exc
        return np.broadcast_to(vals, (len(pts),)).copy()

    @classmethod
    def constant(cls, c: float) -> "ManifoldSignal":
        return cls(lambda x: np.full(len(x), float(c)), f"constant {c}")

    @classmethod
    def from_modes(
        cls, spectrum: AnalyticSpectrum, coefficients: Sequence[float] | Mapping[int, float]
    ) -> "ManifoldSignal":
        if isinstance(coefficients, Mapping):
            size = max(coefficients) + 1 if coefficients else 1
            coef = np.zeros(size)
            for i, c in coefficients.items():
                coef[int(i)] = c
        else:
            coef = np.array(coefficients, dtype=float)
        if len(coef) > len(spectrum):
            raise InvalidArgument("more coefficients than analytic eigenpairs")
        coef = _readonly(coef)
        k = len(coef)

        def evaluator(points):
            return spectrum.evaluate(points, k) @ coef

        return cls(evaluator, f"band-limited ({k} modes)", k, coef)


def manifold_filter_apply(
    response,
    f: ManifoldSignal,
    spectrum: AnalyticSpectrum,
    K_trunc: int,
    quad_n: int = 100_000,
    seed: int = 0,
    allow_truncation: bool = False,
) -> ManifoldSignal:
    """Filter a manifold signal through its first ``K_trunc`` eigenpairs.

    Coefficients are exact for band-limited signals built with
    :meth:`ManifoldSignal.from_modes`; otherwise they are Monte-Carlo
    averages over ``quad_n`` seeded uniform samples.
    """
    from .filters import response_eval

    if not 1 <= K_trunc <= len(spectrum):
        raise InvalidArgument(f"K_trunc must lie in [1, {len(spectrum)}], got {K_trunc}")
    if f.band_limit is not None and f.band_limit > K_trunc and not allow_truncation:
        raise TruncationRefused(f"band limit {f.band_limit} exceeds truncation depth {K_trunc}")
    if f.coefficients is not None:
        coef = np.zeros(K_trunc)
        m = min(K_trunc, len(f.coefficients))
        coef[:m] = f.coefficients[:m]
    else:
        cloud = sample_uniform(spectrum.manifold, quad_n, seed)
        coef = spectrum.evaluate(cloud.points, K_trunc).T @ f(cloud.points) / quad_n
    gains = response_eval(response, spectrum.eigenvalues[:K_trunc])
    g = ManifoldSignal.from_modes(spectrum, coef * gains)
    return ManifoldSignal(g.evaluator, f"filtered {f.description}".strip(), K_trunc, g.coefficients)
