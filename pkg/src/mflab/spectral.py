"""Symmetric eigendecomposition and L2(G_n) spectral geometry."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from numba import njit

from .errors import InvalidArgument, NumericalFailure
from .manifold import AnalyticSpectrum, PointCloud

MAX_SWEEPS = 100
# size above which eig_sym(method="auto") hands off to LAPACK
JACOBI_AUTO_LIMIT = 256


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    inner_product: str = "standard"

    def __post_init__(self):
        if self.inner_product not in ("standard", "gn"):
            raise InvalidArgument(f"unknown inner product {self.inner_product!r}")

    @property
    def n(self) -> int:
        return len(self.eigenvalues)

    def scaled(self, factor: float) -> "Spectrum":
        """Same eigenvectors with eigenvalues multiplied by ``factor``."""
        return replace(self, eigenvalues=self.eigenvalues * factor)


@njit(cache=True)
def _jacobi_kernel(a, v, tol, max_sweeps):
    n = a.shape[0]
    fro = np.sqrt(np.sum(a * a))
    target = tol * fro
    for sweep in range(max_sweeps + 1):
        off = 0.0
        for p in range(n):
            for q in range(p + 1, n):
                off += 2.0 * a[p, q] * a[p, q]
        if np.sqrt(off) <= target:
            return sweep
        if sweep == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                tau = s / (1.0 + c)
                a[p, p] -= t * apq
                a[q, q] += t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                for r in range(n):
                    if r != p and r != q:
                        arp = a[r, p]
                        arq = a[r, q]
                        a[r, p] = arp - s * (arq + tau * arp)
                        a[r, q] = arq + s * (arp - tau * arq)
                        a[p, r] = a[r, p]
                        a[q, r] = a[r, q]
                for r in range(n):
                    vrp = v[r, p]
                    vrq = v[r, q]
                    v[r, p] = vrp - s * (vrq + tau * vrp)
                    v[r, q] = vrq + s * (vrp - tau * vrq)
    return -1


def eig_sym(matrix, tol: float = 1e-12, method: str = "jacobi") -> Spectrum:
    """Eigendecomposition of a real symmetric matrix, eigenvalues ascending.

    ``method="jacobi"`` runs cyclic Jacobi rotations over the upper triangle
    in row-major order until the off-diagonal Frobenius norm drops below
    ``tol * ||matrix||_F``. ``"lapack"`` delegates to ``numpy.linalg.eigh``;
    ``"auto"`` picks Jacobi up to ``JACOBI_AUTO_LIMIT`` rows.
    """
    a = np.array(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidArgument(f"expected a square matrix, got shape {a.shape}")
    n = a.shape[0]
    scale = np.abs(a).max() if a.size else 0.0
    if not np.all(np.isfinite(a)):
        raise InvalidArgument("matrix has non-finite entries")
    if np.abs(a - a.T).max(initial=0.0) > 1e-12 * max(scale, 1e-300):
        raise InvalidArgument("matrix is not symmetric")
    if method == "auto":
        method = "jacobi" if n <= JACOBI_AUTO_LIMIT else "lapack"
    if method == "lapack":
        w, v = np.linalg.eigh(a)
        return Spectrum(w, v)
    if method != "jacobi":
        raise InvalidArgument(f"unknown eigensolver {method!r}")
    if n > 4096:
        raise InvalidArgument("Jacobi solver limited to n <= 4096")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    sweeps = _jacobi_kernel(a, v, tol, MAX_SWEEPS)
    if sweeps < 0:
        raise NumericalFailure(f"Jacobi did not converge in {MAX_SWEEPS} sweeps")
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return Spectrum(w[order], v[:, order])


def _values(u):
    return np.asarray(getattr(u, "values", u), dtype=float)


def gn_inner(u, v) -> float:
    """Inner product of L2(G_n): the 1/n-weighted dot product."""
    u, v = _values(u), _values(v)
    if u.shape != v.shape:
        raise InvalidArgument(f"length mismatch {u.shape} vs {v.shape}")
    return float(u @ v) / len(u)


def gn_normalize(spectrum: Spectrum) -> Spectrum:
    if spectrum.inner_product == "gn":
        raise InvalidArgument("spectrum is already normalized in L2(G_n)")
    vecs = spectrum.eigenvectors * np.sqrt(spectrum.eigenvectors.shape[0])
    return Spectrum(spectrum.eigenvalues, vecs, "gn")


def eigengap(eigenvalues, K: int, atol: float = 1e-6, rtol: float = 1e-3) -> float:
    """Smallest gap among the first ``K + 1`` distinct eigenvalues.

    Values closer than ``atol + rtol * lambda`` are treated as one.
    """
    distinct = _collapse(np.sort(np.asarray(eigenvalues, dtype=float)), atol, rtol)
    if len(distinct) < 2 or K < 1:
        raise InvalidArgument("eigengap needs at least two distinct eigenvalues and K >= 1")
    if len(distinct) < K + 1:
        raise InvalidArgument(f"need {K + 1} distinct eigenvalues, have {len(distinct)}")
    return float(np.diff(distinct[: K + 1]).min())


def _collapse(sorted_vals, atol, rtol):
    out = []
    for lam in sorted_vals:
        if out and lam - out[-1] <= atol + rtol * abs(out[-1]):
            continue
        out.append(lam)
    return np.array(out)


@dataclass(frozen=True)
class SpectrumPartition:
    alpha: float
    groups: tuple  # of (start, stop) index ranges into the sorted eigenvalues
    group_gaps: tuple

    @property
    def size(self) -> int:
        return len(self.groups)

    def group_of(self, i: int) -> int:
        for k, (a, b) in enumerate(self.groups):
            if a <= i < b:
                return k
        raise IndexError(i)


def alpha_partition(eigenvalues, alpha: float) -> SpectrumPartition:
    """Greedy split into groups whose mutual separation exceeds ``alpha``."""
    if not alpha > 0:
        raise InvalidArgument(f"alpha must be positive, got {alpha}")
    lam = np.asarray(eigenvalues, dtype=float)
    if len(lam) == 0:
        raise InvalidArgument("empty spectrum")
    if np.any(np.diff(lam) < 0):
        raise InvalidArgument("eigenvalues must be sorted ascending")
    groups, gaps, start = [], [], 0
    for i in range(1, len(lam)):
        gap = lam[i] - lam[i - 1]
        if gap > alpha:
            groups.append((start, i))
            gaps.append(float(gap))
            start = i
    groups.append((start, len(lam)))
    return SpectrumPartition(float(alpha), tuple(groups), tuple(gaps))


@dataclass(frozen=True)
class AlignmentRecord:
    i: int
    lambda_graph: float
    lambda_analytic: float
    lambda_abs_error: float
    sign: int  # +1/-1, or 0 in subspace mode
    subspace: bool
    eigenfunction_l2gn_error: float


@dataclass(frozen=True)
class AlignmentReport:
    records: tuple
    theta: float

    @property
    def max_lambda_error(self) -> float:
        return max(r.lambda_abs_error for r in self.records)

    @property
    def max_eigenfunction_error(self) -> float:
        return max(r.eigenfunction_l2gn_error for r in self.records)


def align_eigenpairs(
    graph_spec: Spectrum, analytic: AnalyticSpectrum, cloud: PointCloud, K: int
) -> AlignmentReport:
    """Compare the first ``K`` graph eigenpairs with the sampled analytic ones.

    Simple eigenvalues are matched up to sign. Inside a multiplicity group
    the graph eigenvector block is rotated onto the sampled analytic block
    by orthogonal Procrustes and each column is compared separately.
    """
    n = cloud.n
    if graph_spec.inner_product != "gn":
        raise InvalidArgument("graph spectrum must be normalized in L2(G_n)")
    if graph_spec.eigenvectors.shape[0] != n:
        raise InvalidArgument("spectrum size does not match the cloud")
    if not 1 <= K <= min(n, len(analytic)):
        raise InvalidArgument(f"K must lie in [1, {min(n, len(analytic))}], got {K}")

    blocks = [s for s in analytic.group_slices() if s.start < K]
    # a truncated trailing group is completed when both spectra allow it
    last = blocks[-1]
    if last.stop > n:
        blocks[-1] = slice(last.start, K)
    depth = blocks[-1].stop
    phi = analytic.evaluate(cloud.points, depth)
    vecs = graph_spec.eigenvectors[:, :depth]

    records = []
    for blk in blocks:
        V, P = vecs[:, blk], phi[:, blk]
        if blk.stop - blk.start == 1:
            a = 1 if gn_inner(P[:, 0], V[:, 0]) >= 0 else -1
            aligned, signs, sub = a * V, [a], False
        else:
            u, _, wt = np.linalg.svd(V.T @ P)
            aligned, signs, sub = V @ (u @ wt), [0] * (blk.stop - blk.start), True
        errs = np.sqrt(((aligned - P) ** 2).sum(axis=0) / n)
        for j, i in enumerate(range(blk.start, blk.stop)):
            if i >= K:
                break
            lg, la = float(graph_spec.eigenvalues[i]), float(analytic.eigenvalues[i])
            records.append(AlignmentRecord(i, lg, la, abs(lg - la), signs[j], sub, float(errs[j])))

    distinct_needed = len(blocks)
    pool = analytic.eigenvalues if len(analytic) > depth else analytic.eigenvalues[:depth]
    distinct = _collapse(np.asarray(pool), 1e-6, 1e-3)
    theta = float(np.diff(distinct[: distinct_needed + 1]).min()) if len(distinct) > 1 else np.inf
    return AlignmentReport(tuple(records), theta)
