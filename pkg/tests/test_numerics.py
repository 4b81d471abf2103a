"""Eigendecomposition and helper-matrix behaviour, including randomized properties."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from volcache.numerics import (
    RECONSTRUCTION_RTOL,
    SYMMETRY_RTOL,
    cross_matrix,
    eigen_sym,
    outer,
    symmetry_defect,
)

finite_floats = st.floats(
    min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False
)


def symmetric_matrices(dim: int):
    n_free = dim * (dim + 1) // 2
    return st.lists(finite_floats, min_size=n_free, max_size=n_free).map(
        lambda vals: _sym_from_free(np.array(vals), dim)
    )


def _sym_from_free(vals: np.ndarray, dim: int) -> np.ndarray:
    m = np.zeros((dim, dim))
    iu = np.triu_indices(dim)
    m[iu] = vals
    return m + np.triu(m, 1).T


def test_symmetry_defect_zero_for_symmetric():
    m = np.array([[2.0, -1.0], [-1.0, 3.0]])
    assert symmetry_defect(m) == 0.0
    assert symmetry_defect(np.zeros((3, 3))) == 0.0


def test_symmetry_defect_detects_asymmetry():
    m = np.array([[0.0, 1.0], [-1.0, 0.0]])
    assert symmetry_defect(m) == pytest.approx(2.0)


def test_eigen_sym_rejects_asymmetric():
    m = np.array([[1.0, 1.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        eigen_sym(m)


def test_eigen_sym_rejects_bad_shape():
    with pytest.raises(ValueError):
        eigen_sym(np.eye(4))
    with pytest.raises(ValueError):
        eigen_sym(np.array([1.0, 2.0]))


def test_eigen_sym_accepts_tiny_asymmetry():
    m = np.array([[2.0, 1.0], [1.0 + 0.1 * SYMMETRY_RTOL, 2.0]])
    system = eigen_sym(m)
    assert system.values.shape == (2,)


def test_eigen_sym_identity():
    system = eigen_sym(np.eye(3))
    np.testing.assert_allclose(system.values, np.ones(3))
    np.testing.assert_allclose(
        system.vectors @ system.vectors.T, np.eye(3), atol=1e-12
    )


def test_eigen_sym_known_2x2():
    m = np.array([[3.0, 1.0], [1.0, 3.0]])
    system = eigen_sym(m)
    np.testing.assert_allclose(sorted(system.values), [2.0, 4.0])
    np.testing.assert_allclose(system.reconstruct(), m, atol=1e-12)


def test_eigen_sym_sorts_by_descending_magnitude():
    m = np.diag([1.0, -5.0, 3.0])
    system = eigen_sym(m)
    np.testing.assert_allclose(system.values, [-5.0, 3.0, 1.0])


def test_eigen_sym_zero_matrix():
    for dim in (2, 3):
        system = eigen_sym(np.zeros((dim, dim)))
        np.testing.assert_allclose(system.values, np.zeros(dim))
        np.testing.assert_allclose(
            system.vectors @ system.vectors.T, np.eye(dim), atol=1e-12
        )


def test_eigen_sym_repeated_eigenvalues_3x3():
    # Doubly degenerate spectrum forces the iterative fallback path.
    v = np.array([1.0, 2.0, 2.0]) / 3.0
    m = 5.0 * np.eye(3) - 2.0 * np.outer(v, v)
    system = eigen_sym(m)
    np.testing.assert_allclose(system.reconstruct(), m, atol=1e-9)
    np.testing.assert_allclose(
        system.vectors.T @ system.vectors, np.eye(3), atol=1e-9
    )


@settings(max_examples=200, deadline=None)
@given(symmetric_matrices(2))
def test_eigen_sym_property_2x2(m):
    system = eigen_sym(m)
    norm = np.linalg.norm(m)
    tol = RECONSTRUCTION_RTOL * max(norm, 1e-30)
    assert np.linalg.norm(system.reconstruct() - m) <= tol
    np.testing.assert_allclose(
        system.vectors.T @ system.vectors, np.eye(2), atol=1e-9
    )
    assert np.all(np.diff(np.abs(system.values)) <= 1e-12 * max(norm, 1.0))


@settings(max_examples=200, deadline=None)
@given(symmetric_matrices(3))
def test_eigen_sym_property_3x3(m):
    system = eigen_sym(m)
    norm = np.linalg.norm(m)
    tol = RECONSTRUCTION_RTOL * max(norm, 1e-30)
    assert np.linalg.norm(system.reconstruct() - m) <= tol
    np.testing.assert_allclose(
        system.vectors.T @ system.vectors, np.eye(3), atol=1e-8
    )
    assert np.all(np.diff(np.abs(system.values)) <= 1e-12 * max(norm, 1.0))


@settings(max_examples=100, deadline=None)
@given(
    st.lists(finite_floats, min_size=3, max_size=3),
    st.lists(finite_floats, min_size=3, max_size=3),
)
def test_cross_matrix_matches_cross_product(u_vals, v_vals):
    u = np.array(u_vals)
    v = np.array(v_vals)
    # Cancellation in the cross product itself bounds achievable agreement by
    # eps * |u| * |v|, not by the result's magnitude.
    atol = 1e-9 * (np.linalg.norm(u) * np.linalg.norm(v) + 1.0)
    np.testing.assert_allclose(cross_matrix(u) @ v, np.cross(u, v), rtol=1e-9, atol=atol)


def test_cross_matrix_antisymmetric_and_annihilates_self():
    v = np.array([1.0, -2.0, 0.5])
    m = cross_matrix(v)
    np.testing.assert_allclose(m, -m.T)
    np.testing.assert_allclose(m @ v, np.zeros(3), atol=1e-15)


def test_cross_matrix_rejects_2d():
    with pytest.raises(ValueError):
        cross_matrix(np.array([1.0, 2.0]))


def test_outer():
    u = np.array([1.0, 2.0])
    v = np.array([3.0, 4.0])
    np.testing.assert_allclose(outer(u, v), [[3.0, 4.0], [6.0, 8.0]])
