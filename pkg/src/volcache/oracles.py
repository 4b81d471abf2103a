"""Generic numerical oracles: central-difference derivatives and quadrature helpers.

These utilities are deliberately independent of the closed-form derivative code they
are used to validate.  Everything here differentiates or integrates a plain callable
numerically, so the library's analytic gradients/Hessians can be checked against a
second, dumber implementation of the same quantity.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

Scalar = float
ScalarField = Callable[[np.ndarray], float]


def fd_gradient(f: ScalarField, x: np.ndarray, h: float) -> np.ndarray:
    """Central-difference gradient of a scalar function of a point.

    Parameters
    ----------
    f : callable mapping an (n,) point to a float
    x : (n,) evaluation point
    h : step size

    Returns
    -------
    (n,) array of first derivatives, O(h^2) accurate.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    grad = np.zeros(n)
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        grad[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return grad


def fd_hessian(f: ScalarField, x: np.ndarray, h: float) -> np.ndarray:
    """Central-difference Hessian of a scalar function of a point.

    Diagonal entries use the standard three-point second difference; off-diagonal
    entries use the four-point cross difference.  O(h^2) accurate.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    hess = np.zeros((n, n))
    f0 = f(x)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h
        hess[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / (h * h)
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = h
            cross = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4.0 * h * h)
            hess[i, j] = cross
            hess[j, i] = cross
    return hess


def fd_jacobian(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float) -> np.ndarray:
    """Central-difference Jacobian of a vector function of a point.

    Returns J with J[i, j] = d f_i / d x_j.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    cols = []
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        cols.append((np.asarray(f(x + e), dtype=float) - np.asarray(f(x - e), dtype=float)) / (2.0 * h))
    return np.stack(cols, axis=-1)


def rel_error(approx: np.ndarray, exact: np.ndarray, floor: float = 0.0) -> float:
    """Norm-relative error ‖approx − exact‖ / max(‖exact‖, floor)."""
    approx = np.asarray(approx, dtype=float)
    exact = np.asarray(exact, dtype=float)
    denom = max(float(np.linalg.norm(exact)), floor)
    if denom == 0.0:
        return float(np.linalg.norm(approx - exact))
    return float(np.linalg.norm(approx - exact)) / denom


def disk_quadrature(radius: float, n_r: int = 256, n_theta: int = 256):
    """Midpoint quadrature nodes/weights covering a disk of the given radius.

    Returns (points (m, 2), weights (m,)) with Σ weights = π·radius².
    """
    r_edges = np.linspace(0.0, radius, n_r + 1)
    r_mid = 0.5 * (r_edges[:-1] + r_edges[1:])
    dr = np.diff(r_edges)
    t_edges = np.linspace(0.0, 2.0 * np.pi, n_theta + 1)
    t_mid = 0.5 * (t_edges[:-1] + t_edges[1:])
    dt = np.diff(t_edges)
    R, T = np.meshgrid(r_mid, t_mid, indexing="ij")
    W = np.outer(r_mid * dr, dt)
    pts = np.stack([R * np.cos(T), R * np.sin(T)], axis=-1).reshape(-1, 2)
    return pts, W.reshape(-1)


def ball_quadrature(radius: float, n_r: int = 96, n_theta: int = 96, n_phi: int = 192):
    """Midpoint quadrature nodes/weights covering a 3D ball of the given radius.

    Returns (points (m, 3), weights (m,)) with Σ weights = 4/3·π·radius³.
    """
    r_edges = np.linspace(0.0, radius, n_r + 1)
    r_mid = 0.5 * (r_edges[:-1] + r_edges[1:])
    dr = np.diff(r_edges)
    # Equal-area polar bands: uniform in cosθ.
    c_edges = np.linspace(-1.0, 1.0, n_theta + 1)
    c_mid = 0.5 * (c_edges[:-1] + c_edges[1:])
    dc = np.diff(c_edges)
    p_edges = np.linspace(0.0, 2.0 * np.pi, n_phi + 1)
    p_mid = 0.5 * (p_edges[:-1] + p_edges[1:])
    dp = np.diff(p_edges)

    R, C, P = np.meshgrid(r_mid, c_mid, p_mid, indexing="ij")
    W = (
        (r_mid**2 * dr)[:, None, None]
        * dc[None, :, None]
        * dp[None, None, :]
    )
    S = np.sqrt(np.clip(1.0 - C * C, 0.0, None))
    pts = np.stack([R * S * np.cos(P), R * S * np.sin(P), R * C], axis=-1).reshape(-1, 3)
    return pts, W.reshape(-1)
