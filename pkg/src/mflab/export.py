"""Plain-text exports with fixed 17-significant-digit float formatting."""

from __future__ import annotations

import json

import numpy as np

from .graph import GeometricGraph
from .manifold import PointCloud
from .spectral import Spectrum


def _f(x) -> str:
    return format(float(x), ".17g")


def _write(text, path):
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def cloud_csv(cloud: PointCloud, path=None) -> str:
    dims = cloud.points.shape[1]
    lines = ["index," + ",".join(f"x{k}" for k in range(dims))]
    lines += [f"{i}," + ",".join(map(_f, p)) for i, p in enumerate(cloud.points)]
    return _write("\n".join(lines) + "\n", path)


def graph_edges_csv(graph: GeometricGraph, path=None) -> str:
    """Edge list ``i,j,w`` over the upper triangle, zero weights omitted."""
    W = graph.adjacency
    iu, ju = np.triu_indices(graph.n, k=1)
    keep = W[iu, ju] != 0
    lines = ["i,j,w"] + [f"{i},{j},{_f(W[i, j])}" for i, j in zip(iu[keep], ju[keep])]
    return _write("\n".join(lines) + "\n", path)


def spectrum_csv(spectrum: Spectrum, path=None) -> str:
    lines = ["index,eigenvalue"] + [f"{i},{_f(v)}" for i, v in enumerate(spectrum.eigenvalues)]
    return _write("\n".join(lines) + "\n", path)


def spectrum_json(spectrum: Spectrum, path=None) -> str:
    body = {"inner_product": spectrum.inner_product, "eigenvalues": [float(v) for v in spectrum.eigenvalues]}
    return _write(json.dumps(body, indent=2) + "\n", path)


def eigenvectors_csv(spectrum: Spectrum, path=None) -> str:
    lines = [",".join(map(_f, row)) for row in spectrum.eigenvectors]
    return _write("\n".join(lines) + "\n", path)
