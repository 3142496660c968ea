import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mflab.errors import InvalidArgument, NumericalFailure
from mflab.graph import build_graph
from mflab.manifold import ManifoldSpec, lb_spectrum, sample_uniform
from mflab.spectral import (
    Spectrum,
    align_eigenpairs,
    alpha_partition,
    eig_sym,
    eigengap,
    gn_inner,
    gn_normalize,
)

CIRCLE = ManifoldSpec("circle", 1.0)


def power_oracle(A, iters=20000):
    """Eigenvalues by shifted power iteration with Hotelling deflation."""
    n = len(A)
    shift = np.abs(A).sum(axis=1).max()
    B = A + shift * np.eye(n)
    rng = np.random.default_rng(0)
    out = []
    for _ in range(n):
        v = rng.standard_normal(n)
        for _ in range(iters):
            v = B @ v
            v /= np.linalg.norm(v)
        lam = v @ B @ v
        out.append(lam - shift)
        B = B - lam * np.outer(v, v)
    return np.sort(out)


def test_identity_and_2x2():
    np.testing.assert_allclose(eig_sym(np.eye(3)).eigenvalues, [1, 1, 1])
    s = eig_sym(np.array([[2.0, 1.0], [1.0, 2.0]]))
    np.testing.assert_allclose(s.eigenvalues, [1, 3], atol=1e-14)
    assert abs(abs(s.eigenvectors[0, 0]) - 1 / math.sqrt(2)) < 1e-14


def test_diagonal_permuted_basis():
    s = eig_sym(np.diag([5.0, -2.0, 0.0]))
    np.testing.assert_array_equal(s.eigenvalues, [-2, 0, 5])
    np.testing.assert_array_equal(np.abs(s.eigenvectors), np.eye(3)[:, [1, 2, 0]])


def test_asymmetric_rejected():
    with pytest.raises(InvalidArgument):
        eig_sym(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_nonconvergence_reported(monkeypatch):
    import mflab.spectral as spectral

    monkeypatch.setattr(spectral, "MAX_SWEEPS", 1)
    A = np.random.default_rng(1).standard_normal((30, 30))
    with pytest.raises(NumericalFailure):
        spectral.eig_sym(A + A.T, tol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_power_iteration_oracle_5x5(seed):
    A = np.random.default_rng(seed).standard_normal((5, 5))
    A = A + A.T
    np.testing.assert_allclose(eig_sym(A).eigenvalues, power_oracle(A), atol=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 50), st.integers(0, 2**32 - 1))
def test_reconstruction_and_orthonormality(n, seed):
    A = np.random.default_rng(seed).standard_normal((n, n))
    A = A + A.T
    s = eig_sym(A)
    V, w = s.eigenvectors, s.eigenvalues
    assert np.all(np.diff(w) >= 0)
    assert np.max(np.abs(V.T @ V - np.eye(n))) <= 1e-8
    assert np.max(np.abs(A - V @ np.diag(w) @ V.T)) <= 1e-8 * np.abs(A).max()


def test_auto_route_matches_jacobi():
    A = np.random.default_rng(3).standard_normal((40, 40))
    A = A + A.T
    np.testing.assert_allclose(eig_sym(A, method="auto").eigenvalues, eig_sym(A, method="lapack").eigenvalues, atol=1e-10)


def test_gn_inner_examples():
    assert gn_inner(np.ones(7), np.ones(7)) == 1.0
    assert gn_inner(np.eye(4)[0], np.eye(4)[1]) == 0.0
    assert gn_inner(np.array([1.0, 2, 3, 4]), np.ones(4)) == 2.5
    with pytest.raises(InvalidArgument):
        gn_inner(np.ones(3), np.ones(4))


# entries are zero or large enough that their squares do not underflow
@given(st.lists(st.one_of(st.just(0.0), st.floats(1e-100, 1e3), st.floats(-1e3, -1e-100)), min_size=1, max_size=20))
def test_gn_inner_positive(u):
    u = np.array(u)
    val = gn_inner(u, u)
    assert val >= 0
    assert (val == 0) == (not u.any())


def test_gn_normalize():
    n = 9
    V = np.linalg.qr(np.random.default_rng(0).standard_normal((n, n)))[0]
    V[:, 0] = 1 / math.sqrt(n)
    s = gn_normalize(Spectrum(np.arange(n, dtype=float), V))
    np.testing.assert_allclose(s.eigenvectors[:, 0], 1.0)
    assert s.inner_product == "gn"
    with pytest.raises(InvalidArgument):
        gn_normalize(s)
    s4 = gn_normalize(Spectrum(np.zeros(4), np.eye(4)))
    np.testing.assert_array_equal(s4.eigenvectors, 2 * np.eye(4))


def test_eigengap_examples():
    assert eigengap([0, 1, 4, 9], 2) == 1
    assert eigengap([0, 1, 1, 4], 2) == 1
    with pytest.raises(InvalidArgument):
        eigengap([2.0, 2.0, 2.0], 1)


def definition_holds(vals, part):
    """Eigenvalues in different groups differ by more than alpha (exhaustive)."""
    gid = np.empty(len(vals), dtype=int)
    for g, (a, b) in enumerate(part.groups):
        gid[a:b] = g
    for i in range(len(vals)):
        for j in range(len(vals)):
            if gid[i] != gid[j] and abs(vals[i] - vals[j]) <= part.alpha:
                return False
    return True


def test_alpha_partition_examples():
    vals = [0, 0.1, 5, 5.2]
    p = alpha_partition(vals, 1.0)
    assert p.groups == ((0, 2), (2, 4))
    assert definition_holds(vals, p)
    assert alpha_partition(vals, 100.0).groups == ((0, 4),)
    p = alpha_partition([0, 1, 3, 6], 0.5)
    assert p.size == 4
    with pytest.raises(InvalidArgument):
        alpha_partition(vals, 0.0)


@given(st.lists(st.floats(0, 50), min_size=1, max_size=30), st.floats(0.01, 10))
def test_alpha_partition_property(vals, alpha):
    vals = sorted(vals)
    p = alpha_partition(vals, alpha)
    assert p.groups[0][0] == 0 and p.groups[-1][1] == len(vals)
    assert all(a[1] == b[0] for a, b in zip(p.groups, p.groups[1:]))
    assert definition_holds(vals, p)


def _aligned(n, seed, K=5):
    cloud = sample_uniform(CIRCLE, n, seed)
    g = build_graph(cloud)
    spec = gn_normalize(eig_sym(2 * math.pi * g.laplacian, method="lapack"))
    return cloud, spec, align_eigenpairs(spec, lb_spectrum(CIRCLE, 9), cloud, K)


def test_alignment_constant_mode():
    _, _, rep = _aligned(200, 1)
    r0 = rep.records[0]
    assert r0.lambda_abs_error <= 1e-10
    assert r0.eigenfunction_l2gn_error <= 1e-6
    assert rep.records[1].subspace and rep.records[1].sign == 0
    assert rep.theta == 1.0


def test_alignment_sign_flip_invariance():
    cloud, spec, rep = _aligned(200, 2)
    V = spec.eigenvectors.copy()
    V[:, [0, 2, 3]] *= -1
    flipped = align_eigenpairs(Spectrum(spec.eigenvalues, V, "gn"), lb_spectrum(CIRCLE, 9), cloud, 5)
    for a, b in zip(rep.records, flipped.records):
        assert a.lambda_abs_error == b.lambda_abs_error
        assert a.eigenfunction_l2gn_error == pytest.approx(b.eigenfunction_l2gn_error, abs=1e-12)


def test_alignment_improves_with_n():
    errs = {}
    for n in (250, 1000):
        rep = _aligned(n, 7)[2]
        errs[n] = max(r.eigenfunction_l2gn_error for r in rep.records if r.lambda_analytic == 1.0)
    assert errs[1000] < errs[250]


def test_alignment_bad_inputs():
    cloud, spec, _ = _aligned(50, 0)
    with pytest.raises(InvalidArgument):
        align_eigenpairs(spec, lb_spectrum(CIRCLE, 5), cloud, 6)
    with pytest.raises(InvalidArgument):
        align_eigenpairs(Spectrum(spec.eigenvalues, spec.eigenvectors), lb_spectrum(CIRCLE, 5), cloud, 3)
