"""Frequency responses, spectral and polynomial graph filters, FDT tooling."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import InvalidArgument
from .spectral import Spectrum, SpectrumPartition, alpha_partition

FAMILIES = {
    "heat": ("tau",),
    "tikhonov": ("mu",),
    "band_reject": ("center", "width", "depth"),
    "tabulated": ("grid",),
    "constant": ("value",),
}


@dataclass(frozen=True)
class FilterSpec:
    """A frequency response family with parameters, or a tap sequence.

    Tabulated responses interpolate linearly between grid points and are
    held constant beyond the grid ends.
    """

    form: str = "response"
    family: Optional[str] = None
    params: Mapping = field(default_factory=dict)
    taps: Optional[tuple] = None

    def __post_init__(self):
        if self.form == "taps":
            if not self.taps:
                raise InvalidArgument("tap filter needs at least one tap")
            object.__setattr__(self, "taps", tuple(float(t) for t in self.taps))
            return
        if self.form != "response":
            raise InvalidArgument(f"unknown filter form {self.form!r}")
        if self.family not in FAMILIES:
            raise InvalidArgument(f"unknown response family {self.family!r}; choose from {sorted(FAMILIES)}")
        missing = [p for p in FAMILIES[self.family] if p not in self.params]
        if missing:
            raise InvalidArgument(f"{self.family} response missing parameters {missing}")
        params = dict(self.params)
        if self.family == "tabulated":
            grid = np.asarray(params["grid"], dtype=float)
            if grid.ndim != 2 or grid.shape[1] != 2 or len(grid) < 1:
                raise InvalidArgument("tabulated grid must be a list of (lambda, value) pairs")
            grid = grid[np.argsort(grid[:, 0], kind="stable")]
            params["grid"] = tuple(map(tuple, grid.tolist()))
        else:
            params = {k: float(v) for k, v in params.items()}
        object.__setattr__(self, "params", params)

    @classmethod
    def heat(cls, tau: float) -> "FilterSpec":
        return cls("response", "heat", {"tau": tau})

    @classmethod
    def tikhonov(cls, mu: float) -> "FilterSpec":
        return cls("response", "tikhonov", {"mu": mu})

    @classmethod
    def constant(cls, value: float) -> "FilterSpec":
        return cls("response", "constant", {"value": value})

    @classmethod
    def tabulated(cls, lambdas, values) -> "FilterSpec":
        return cls("response", "tabulated", {"grid": list(zip(lambdas, values))})

    @classmethod
    def from_taps(cls, taps: Sequence[float]) -> "FilterSpec":
        return cls("taps", taps=tuple(taps))

    def to_dict(self) -> dict:
        if self.form == "taps":
            return {"form": "taps", "taps": list(self.taps)}
        out = {"form": "response", "family": self.family}
        for k, v in self.params.items():
            out[k] = [list(p) for p in v] if k == "grid" else v
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "FilterSpec":
        d = dict(d)
        form = d.pop("form", "response")
        if form == "taps":
            return cls("taps", taps=tuple(d["taps"]))
        family = d.pop("family", None)
        return cls("response", family, d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FilterSpec":
        return cls.from_dict(json.loads(text))


def response_eval(spec: FilterSpec, lam):
    """Evaluate the frequency response at ``lam`` (scalar or array)."""
    if spec.form != "response":
        raise InvalidArgument("response_eval needs a response-form filter")
    x = np.asarray(lam, dtype=float)
    if np.any(x < 0):
        raise InvalidArgument("frequency response is defined for lambda >= 0")
    p = spec.params
    fam = spec.family
    if fam == "heat":
        out = np.exp(-p["tau"] * x)
    elif fam == "tikhonov":
        out = 1.0 / (1.0 + p["mu"] * x)
    elif fam == "band_reject":
        out = 1.0 - p["depth"] * np.exp(-((x - p["center"]) ** 2) / (2.0 * p["width"] ** 2))
    elif fam == "constant":
        out = np.full_like(x, p["value"])
    else:
        grid = np.asarray(p["grid"])
        out = np.interp(x, grid[:, 0], grid[:, 1])
    return float(out) if np.ndim(out) == 0 else out


def _values(x):
    return np.asarray(getattr(x, "values", x), dtype=float)


def _wrap(like, values):
    from .graph import GraphSignal

    if isinstance(like, GraphSignal):
        return GraphSignal(values, like.cloud)
    return values


def spectral_filter_apply(spectrum: Spectrum, spec: FilterSpec, x):
    """``sum_i h(lambda_i) <x, phi_i> phi_i`` over the full graph spectrum."""
    v = _values(x)
    vecs = spectrum.eigenvectors
    if vecs.shape[0] != len(v):
        raise InvalidArgument(f"signal length {len(v)} != spectrum size {vecs.shape[0]}")
    weight = 1.0 / len(v) if spectrum.inner_product == "gn" else 1.0
    lam = np.clip(spectrum.eigenvalues, 0.0, None)  # round-off negatives at the kernel
    coef = (vecs.T @ v) * weight
    return _wrap(x, vecs @ (response_eval(spec, lam) * coef))


def heat_filter_oracle(laplacian, tau: float, x, terms: int = 20):
    """``exp(-tau L) x`` by scaling and squaring of a truncated Taylor series.

    Independent of any eigendecomposition: the matrix is scaled by ``2^-s``
    until its infinity norm is at most 0.5, exponentiated with ``terms``
    Taylor terms, then squared ``s`` times.
    """
    if tau < 0:
        raise InvalidArgument(f"tau must be >= 0, got {tau}")
    v = _values(x)
    if tau == 0:
        return _wrap(x, v.copy())
    A = -tau * np.asarray(laplacian, dtype=float)
    norm = np.abs(A).sum(axis=1).max()
    s = max(0, math.ceil(math.log2(norm / 0.5))) if norm > 0.5 else 0
    B = A / 2.0**s
    n = len(A)
    E = np.eye(n)
    for k in range(terms, 0, -1):  # Horner: I + B/1 (I + B/2 (I + ...))
        E = np.eye(n) + (B @ E) / k
    for _ in range(s):
        E = E @ E
    return _wrap(x, E @ v)


def poly_filter_apply(gso, taps: Sequence[float], x):
    """Shift-and-sum filter ``sum_k h_k S^k x`` with one running shifted vector."""
    S = np.asarray(gso, dtype=float)
    v = _values(x)
    if S.ndim != 2 or S.shape[0] != S.shape[1] or S.shape[0] != len(v):
        raise InvalidArgument(f"shift operator {S.shape} does not match signal of length {len(v)}")
    taps = list(taps.taps if isinstance(taps, FilterSpec) else taps)
    if not taps:
        raise InvalidArgument("at least one tap required")
    z = v.copy()
    y = taps[0] * z
    for h in taps[1:]:
        z = S @ z
        y = y + h * z
    return _wrap(x, y)


@dataclass(frozen=True)
class FdtReport:
    alpha: float
    gamma: float
    partition: SpectrumPartition
    per_group_variation: tuple
    passes: bool

    @property
    def max_variation(self) -> float:
        return max(self.per_group_variation)


def fdt_check(spec: FilterSpec, eigenvalues, alpha: float, gamma: float) -> FdtReport:
    lam = np.asarray(eigenvalues, dtype=float)
    if len(lam) == 0:
        raise InvalidArgument("empty spectrum")
    part = alpha_partition(lam, alpha)
    h = np.asarray(response_eval(spec, lam), dtype=float).reshape(-1)
    # max pairwise difference within a group is its range
    var = tuple(float(h[a:b].max() - h[a:b].min()) for a, b in part.groups)
    return FdtReport(float(alpha), float(gamma), part, var, all(v <= gamma for v in var))


def fdt_decompose(spec: FilterSpec, partition: SpectrumPartition, eigenvalues) -> list[FilterSpec]:
    """Split a response into ``h0`` plus one part per multi-eigenvalue group.

    Each part is a tabulated response on the distinct input eigenvalues.
    ``h0`` carries the response minus the group anchors on singleton groups;
    part ``l`` carries the anchor value ``h(C_l)`` on singleton groups and the
    response itself on group ``l``, with ``C_l`` the midpoint of the group.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    if not partition.groups or partition.groups[-1][1] != len(lam) or partition.groups[0][0] != 0:
        raise InvalidArgument("partition does not cover the given eigenvalues")
    for (a, b), (c, _) in zip(partition.groups, partition.groups[1:]):
        if b != c:
            raise InvalidArgument("partition groups must be contiguous")
    h = np.asarray(response_eval(spec, lam), dtype=float).reshape(-1)

    singleton = np.zeros(len(lam), dtype=bool)
    multi = []
    for a, b in partition.groups:
        if b - a == 1:
            singleton[a] = True
        else:
            multi.append((a, b))
    anchors = [response_eval(spec, 0.5 * (lam[a] + lam[b - 1])) for a, b in multi]

    h0 = np.where(singleton, h - sum(anchors), 0.0)
    parts = [h0]
    for (a, b), hc in zip(multi, anchors):
        hl = np.where(singleton, hc, 0.0)
        hl[a:b] = h[a:b]
        parts.append(hl)

    _, first = np.unique(lam, return_index=True)
    return [FilterSpec.tabulated(lam[first], p[first]) for p in parts]


def lipschitz_constant(spec: FilterSpec, lo: float, hi: float, grid_n: int = 10_000) -> float:
    """Largest finite-difference slope on a uniform grid over ``[lo, hi]``.

    This under-estimates the true Lipschitz constant by at most the
    variation of the slope within one grid cell.
    """
    if not (0 <= lo < hi) or grid_n < 2:
        raise InvalidArgument("need 0 <= lo < hi and grid_n >= 2")
    grid = np.linspace(lo, hi, grid_n)
    h = np.asarray(response_eval(spec, grid), dtype=float)
    return float(np.max(np.abs(np.diff(h)) / np.diff(grid)))
