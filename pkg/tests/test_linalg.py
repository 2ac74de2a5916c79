import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from macrolocal.errors import ContractError
from macrolocal.linalg import gram_vectors, min_eigenvalue, psd_project, sym_eig


def test_identity_spectrum():
    assert np.allclose(sym_eig(np.eye(3)).values, [1, 1, 1])


def test_diagonal_spectrum_and_axes():
    dec = sym_eig(np.diag([-1.0, 2.0]))
    assert np.array_equal(dec.values, [-1.0, 2.0])
    assert np.allclose(np.abs(dec.vectors), np.eye(2))


def test_pauli_x():
    assert np.allclose(sym_eig([[0, 1], [1, 0]]).values, [-1, 1], atol=1e-15)


def test_nonsymmetric_rejected():
    with pytest.raises(ContractError):
        sym_eig([[0, 1], [0, 0]])
    with pytest.raises(ContractError):
        sym_eig(np.zeros((2, 3)))


def test_projection_examples():
    assert np.allclose(psd_project(np.diag([-1.0, 2.0])), np.diag([0.0, 2.0]))
    assert np.allclose(psd_project([[0.0, 1.0], [1.0, 0.0]]), np.full((2, 2), 0.5), atol=1e-15)
    a = np.array([[2.0, 1.0], [1.0, 2.0]])
    assert np.allclose(psd_project(a), a, atol=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 9), st.integers(0, 2**32 - 1))
def test_decomposition_invariants(n, seed):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(n, n))
    m = m + m.T
    dec = sym_eig(m)
    scale = np.linalg.norm(m)
    assert np.all(np.diff(dec.values) >= 0)
    assert np.max(np.abs(dec.reconstruct() - m)) <= 1e-10 * max(scale, 1)
    assert np.allclose(dec.vectors.T @ dec.vectors, np.eye(n), atol=1e-10)
    assert np.allclose(dec.values, np.linalg.eigvalsh(m), atol=1e-10 * max(scale, 1))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_projection_idempotent(n, seed):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(n, n))
    m = m + m.T
    p = psd_project(m)
    assert min_eigenvalue(p) >= -1e-10
    assert np.max(np.abs(psd_project(p) - p)) <= 1e-10


@settings(max_examples=15, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_projection_2x2_matches_grid_search(a, b, c):
    m = np.array([[a, b], [b, c]])
    p = psd_project(m)
    # PSD 2x2 matrices parametrized as L L^T with L lower triangular
    step = 0.05
    pos = np.arange(0, 2.0 + step, step)
    l11, l21, l22 = np.meshgrid(pos, np.arange(-2.0, 2.0 + step, step), pos, indexing="ij")
    q11, q12, q22 = l11 * l11, l11 * l21, l21 * l21 + l22 * l22
    best = np.sqrt((q11 - a) ** 2 + 2 * (q12 - b) ** 2 + (q22 - c) ** 2).min()
    assert np.linalg.norm(p - m) <= best + 1e-12
    assert np.linalg.norm(p - m) >= best - 0.2


def test_gram_vectors_reproduce_psd():
    rng = np.random.default_rng(0)
    w = rng.normal(size=(5, 3))
    m = w @ w.T
    g = gram_vectors(m)
    assert np.allclose(g @ g.T, m, atol=1e-10)
