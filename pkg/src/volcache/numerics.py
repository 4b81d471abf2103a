"""Small fixed-dimension linear algebra for the derivative and error-metric formulas.

Vectors and matrices are plain numpy arrays of shape (n,) and (n, n) with n in {2, 3}.
The one structured type is :class:`EigenSystem`, the symmetric eigendecomposition used
to orient and size cache-point valid regions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: Relative Frobenius tolerance for accepting a matrix as symmetric.
SYMMETRY_RTOL = 1e-7

#: Relative reconstruction tolerance guaranteed by eigen_sym.
RECONSTRUCTION_RTOL = 1e-6


@dataclass(frozen=True)
class EigenSystem:
    """Eigendecomposition of a symmetric matrix.

    Attributes
    ----------
    values : (n,) eigenvalues sorted by descending absolute value
    vectors : (n, n) orthonormal eigenvectors, columns; vectors[:, i] pairs values[i]
    """

    values: np.ndarray
    vectors: np.ndarray

    @property
    def dim(self) -> int:
        return self.values.size

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.T


def symmetry_defect(m: np.ndarray) -> float:
    """Frobenius asymmetry of m relative to its own norm (0 for exactly symmetric)."""
    m = np.asarray(m, dtype=float)
    norm = np.linalg.norm(m)
    if norm == 0.0:
        return 0.0
    return float(np.linalg.norm(m - m.T)) / norm


def _sort_by_abs(values: np.ndarray, vectors: np.ndarray) -> EigenSystem:
    order = np.argsort(-np.abs(values), kind="stable")
    return EigenSystem(values=values[order].copy(), vectors=vectors[:, order].copy())


def _eigen_sym_2x2(m: np.ndarray) -> EigenSystem:
    a, b, c = m[0, 0], m[0, 1], m[1, 1]
    mean = 0.5 * (a + c)
    half_diff = 0.5 * (a - c)
    disc = np.hypot(half_diff, b)
    lam1 = mean + disc
    lam2 = mean - disc
    if disc <= 1e-14 * max(abs(mean), 1e-300):
        vectors = np.eye(2)
    else:
        # (m - lam2 I) maps everything onto the lam1 eigenspace; pick its larger column.
        v = np.array([half_diff + disc, b])
        alt = np.array([b, -half_diff + disc])
        if np.dot(alt, alt) > np.dot(v, v):
            v = alt
        v = v / np.linalg.norm(v)
        vectors = np.column_stack([v, np.array([-v[1], v[0]])])
    return _sort_by_abs(np.array([lam1, lam2]), vectors)


def _eigen_sym_3x3_analytic(m: np.ndarray) -> EigenSystem | None:
    """Closed-form symmetric 3×3 eigendecomposition via the trigonometric solve.

    Returns None when the spectrum is too degenerate for the cross-product
    eigenvector construction to be trustworthy; the caller then falls back to an
    iterative solve.
    """
    scale = np.max(np.abs(m))
    if scale == 0.0:
        return EigenSystem(values=np.zeros(3), vectors=np.eye(3))

    p1 = m[0, 1] ** 2 + m[0, 2] ** 2 + m[1, 2] ** 2
    if p1 <= (1e-14 * scale) ** 2:
        return _sort_by_abs(np.diagonal(m).copy(), np.eye(3))

    q = np.trace(m) / 3.0
    p2 = (m[0, 0] - q) ** 2 + (m[1, 1] - q) ** 2 + (m[2, 2] - q) ** 2 + 2.0 * p1
    p = np.sqrt(p2 / 6.0)
    b = (m - q * np.eye(3)) / p
    r = np.clip(np.linalg.det(b) / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0

    lam_hi = q + 2.0 * p * np.cos(phi)
    lam_lo = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    lam_mid = 3.0 * q - lam_hi - lam_lo
    values = np.array([lam_hi, lam_mid, lam_lo])

    gaps = np.array(
        [abs(lam_hi - lam_mid), abs(lam_mid - lam_lo), abs(lam_hi - lam_lo)]
    )
    if np.min(gaps) < 1e-6 * scale:
        return None

    vectors = np.empty((3, 3))
    for k, lam in enumerate(values):
        a = m - lam * np.eye(3)
        # The null space of a is spanned by the cross product of two independent rows.
        crosses = [
            np.cross(a[0], a[1]),
            np.cross(a[0], a[2]),
            np.cross(a[1], a[2]),
        ]
        norms = [np.dot(c, c) for c in crosses]
        v = crosses[int(np.argmax(norms))]
        n = np.linalg.norm(v)
        if n < 1e-12 * scale * scale:
            return None
        vectors[:, k] = v / n
    return _sort_by_abs(values, vectors)


def eigen_sym(m: np.ndarray) -> EigenSystem:
    """Eigendecomposition of a symmetric 2×2 or 3×3 matrix.

    Eigenvalues are sorted by descending absolute value; eigenvectors are the
    matching orthonormal columns.  The reconstruction Σ λᵢ vᵢvᵢᵀ matches the input
    within ``RECONSTRUCTION_RTOL`` times its norm.

    Raises
    ------
    ValueError
        If the input is not square 2×2/3×3 or exceeds the symmetry tolerance.
    """
    m = np.asarray(m, dtype=float)
    if m.shape not in ((2, 2), (3, 3)):
        raise ValueError(f"expected a 2x2 or 3x3 matrix, got shape {m.shape}")
    if symmetry_defect(m) > SYMMETRY_RTOL:
        raise ValueError("matrix is not symmetric within tolerance")
    m = 0.5 * (m + m.T)

    # Work at unit scale so extreme magnitudes cannot underflow the eigenvector
    # construction (squared entries of a ~1e-175 matrix vanish in float64).
    scale = float(np.max(np.abs(m)))
    if scale == 0.0:
        return EigenSystem(values=np.zeros(m.shape[0]), vectors=np.eye(m.shape[0]))
    m_unit = m / scale

    if m.shape == (2, 2):
        system = _eigen_sym_2x2(m_unit)
    else:
        system = _eigen_sym_3x3_analytic(m_unit)
        if system is not None:
            norm = np.linalg.norm(m_unit)
            residual = np.linalg.norm(system.reconstruct() - m_unit)
            gram = np.linalg.norm(system.vectors.T @ system.vectors - np.eye(3))
            if residual > 0.5 * RECONSTRUCTION_RTOL * norm or gram > 1e-10:
                system = None
        if system is None:
            values, vectors = np.linalg.eigh(m_unit)
            system = _sort_by_abs(values, vectors)
    return EigenSystem(values=system.values * scale, vectors=system.vectors)


def cross_matrix(v: np.ndarray) -> np.ndarray:
    """Matrix ⟨v⟩ such that ⟨v⟩u = v × u for every u (antisymmetric, ⟨v⟩v = 0)."""
    v = np.asarray(v, dtype=float)
    if v.shape != (3,):
        raise ValueError("cross_matrix expects a 3-vector")
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def outer(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Outer product u vᵀ."""
    return np.outer(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
