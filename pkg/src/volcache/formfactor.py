"""Point-to-element form factors with closed-form gradients and Hessians.

The form factor of an element (segment in 2D, triangle in 3D) seen from a point x
is the fraction of the full circle/sphere of directions the element subtends:

    2D  F = γ / 2π          γ = angle subtended by the segment
    3D  F = Ω / 4π          Ω = solid angle subtended by the triangle

Both admit closed-form translational gradients and Hessians in x with the element
held fixed; those derivatives are what make cached radiance occlusion-aware.  All
heavy lifting is exposed twice: scalar operations with a distinct degeneracy error,
and batch kernels returning validity masks (used by the subdivision assembly).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import symmetry_defect

#: Subtended angles below this (or within this of π, in 2D) are treated as degenerate.
GAMMA_MIN = 1e-5

#: 3D: |A| below this times r1·r2·r3 means x is (numerically) coplanar with the triangle.
A_REL_MIN = 1e-12

#: Assembled Hessians must be symmetric to this relative tolerance before symmetrization.
HESS_ASYM_TOL = 1e-7


class DegenerateElementError(ValueError):
    """Raised when a form-factor configuration is too degenerate to differentiate."""


@dataclass(frozen=True)
class FormFactorDerivs:
    value: float
    grad: np.ndarray
    hess: np.ndarray


@dataclass(frozen=True)
class SolidAngleTerms:
    """Intermediate quantities of the triangle solid angle Ω = 2·atan2(|A|, B).

    A = r⃗₁·(r⃗₂×r⃗₃) and B = r₁r₂r₃ + (r⃗₁·r⃗₂)r₃ + (r⃗₂·r⃗₃)r₁ + (r⃗₁·r⃗₃)r₂ with
    r⃗ᵢ = yᵢ − x.  ∇A is constant in x (so its Jacobian vanishes identically and no
    Hessian of A is stored); ∇B and its Jacobian follow the product/chain rules.
    """

    A: float
    B: float
    gradA: np.ndarray
    gradB: np.ndarray
    hessB: np.ndarray


def _check_and_symmetrize(hess: np.ndarray, term_scale: np.ndarray) -> np.ndarray:
    """Assert per-element asymmetry is tiny, then average with the transpose.

    The defect is measured against max(result norm, magnitude of the summed
    terms): the assembled Hessian can be the near-cancellation of two large
    symmetric terms (e.g. an element whose vertices are equidistant from x), where
    roundoff asymmetry is inherent at the term scale — a formula error, by
    contrast, breaks symmetry at that same term scale and still trips the check.
    """
    hess_t = np.swapaxes(hess, -1, -2)
    norms = np.linalg.norm(hess, axis=(-2, -1))
    defects = np.linalg.norm(hess - hess_t, axis=(-2, -1))
    ref = np.maximum(norms, np.asarray(term_scale, dtype=float))
    live = ref > 0.0
    if np.any(live):
        worst = float(np.max(defects[live] / ref[live]))
        assert worst <= HESS_ASYM_TOL, f"assembled Hessian asymmetry {worst:.3e}"
    return 0.5 * (hess + hess_t)


# ---------------------------------------------------------------------------
# 2D segments
# ---------------------------------------------------------------------------


def ff_segment_derivs_batch(x: np.ndarray, y0: np.ndarray, y1: np.ndarray):
    """Batched 2D segment form factor with derivatives.

    Parameters are (m, 2) arrays (x may be a single point broadcast against m
    elements).  Returns (valid, value, grad, hess): entries with degenerate
    subtended angles have valid=False and zeroed outputs.
    """
    y0 = np.atleast_2d(np.asarray(y0, dtype=float))
    y1 = np.atleast_2d(np.asarray(y1, dtype=float))
    x = np.broadcast_to(np.asarray(x, dtype=float), y0.shape)
    u = y0 - x
    v = y1 - x
    r0 = np.linalg.norm(u, axis=1)
    r1 = np.linalg.norm(v, axis=1)
    ok = (r0 > 0.0) & (r1 > 0.0)
    r0s = np.where(ok, r0, 1.0)
    r1s = np.where(ok, r1, 1.0)
    dot = np.einsum("md,md->m", u, v)
    cross = u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]
    # atan2 keeps γ accurate near 0 and π, where arccos of the cosine loses digits.
    gamma = np.arctan2(np.abs(cross), dot)
    ok &= (gamma > GAMMA_MIN) & (gamma < np.pi - GAMMA_MIN)

    value = np.where(ok, gamma / (2.0 * np.pi), 0.0)
    c = np.clip(dot / (r0s * r1s), -1.0, 1.0)
    sin_g = np.abs(cross) / (r0s * r1s)
    sin_g = np.where(ok, sin_g, 1.0)

    # ∇cosγ = c·u/r0² + c·v/r1² − (u+v)/(r0r1)
    grad_c = (
        (c / r0s**2)[:, None] * u
        + (c / r1s**2)[:, None] * v
        - (u + v) / (r0s * r1s)[:, None]
    )
    grad = -(grad_c / sin_g[:, None]) / (2.0 * np.pi)

    eye = np.eye(2)[None, :, :]
    uu = u[:, :, None] * u[:, None, :]
    vv = v[:, :, None] * v[:, None, :]
    uv_sum = u + v
    # J(∇cosγ), term by term (products of the chain above).
    j_c = (
        u[:, :, None] * grad_c[:, None, :] / (r0s**2)[:, None, None]
        + 2.0 * (c / r0s**4)[:, None, None] * uu
        - (c / r0s**2)[:, None, None] * eye
        + v[:, :, None] * grad_c[:, None, :] / (r1s**2)[:, None, None]
        + 2.0 * (c / r1s**4)[:, None, None] * vv
        - (c / r1s**2)[:, None, None] * eye
        + 2.0 * eye / (r0s * r1s)[:, None, None]
        - uv_sum[:, :, None]
        * (u / (r0s**3 * r1s)[:, None] + v / (r0s * r1s**3)[:, None])[:, None, :]
    )
    gc_outer = grad_c[:, :, None] * grad_c[:, None, :]
    hess = -(j_c / sin_g[:, None, None] + (c / sin_g**3)[:, None, None] * gc_outer) / (
        2.0 * np.pi
    )

    grad = np.where(ok[:, None], grad, 0.0)
    hess = np.where(ok[:, None, None], hess, 0.0)
    if np.any(ok):
        # Roundoff floor for the symmetry check: Frobenius bounds of the j_c
        # summands (which may cancel almost completely) plus the outer term.
        gc_norm = np.sqrt(np.einsum("md,md->m", grad_c, grad_c))
        j_c_scale = (
            gc_norm * (1.0 / r0s + 1.0 / r1s)
            + (2.0 + np.sqrt(2.0)) * np.abs(c) * (1.0 / r0s**2 + 1.0 / r1s**2)
            + 2.0 * np.sqrt(2.0) / (r0s * r1s)
            + (r0s + r1s) * (1.0 / (r0s**2 * r1s) + 1.0 / (r0s * r1s**2))
        )
        term_scale = (j_c_scale / sin_g + np.abs(c) * gc_norm**2 / sin_g**3) / (
            2.0 * np.pi
        )
        hess = _check_and_symmetrize(hess, np.where(ok, term_scale, 0.0))
    return ok, value, grad, hess


def ff_segment_derivs(x: np.ndarray, y0: np.ndarray, y1: np.ndarray) -> FormFactorDerivs:
    """2D segment form factor F = γ/2π with gradient and Hessian in x.

    Raises DegenerateElementError when the subtended angle is outside
    (GAMMA_MIN, π − GAMMA_MIN).
    """
    ok, value, grad, hess = ff_segment_derivs_batch(
        np.asarray(x, dtype=float)[None, :],
        np.asarray(y0, dtype=float)[None, :],
        np.asarray(y1, dtype=float)[None, :],
    )
    if not ok[0]:
        raise DegenerateElementError("segment subtends a degenerate angle from x")
    return FormFactorDerivs(value=float(value[0]), grad=grad[0], hess=hess[0])


# ---------------------------------------------------------------------------
# 3D triangles
# ---------------------------------------------------------------------------


def _solid_angle_core(x, y1, y2, y3):
    """Shared batched computation of A, B and their derivatives."""
    y1 = np.atleast_2d(np.asarray(y1, dtype=float))
    y2 = np.atleast_2d(np.asarray(y2, dtype=float))
    y3 = np.atleast_2d(np.asarray(y3, dtype=float))
    x = np.broadcast_to(np.asarray(x, dtype=float), y1.shape)
    rv = [y1 - x, y2 - x, y3 - x]
    r = [np.linalg.norm(w, axis=1) for w in rv]
    pos = (r[0] > 0.0) & (r[1] > 0.0) & (r[2] > 0.0)
    rs = [np.where(pos, ri, 1.0) for ri in r]

    a = np.einsum("md,md->m", rv[0], np.cross(rv[1], rv[2]))
    d12 = np.einsum("md,md->m", rv[0], rv[1])
    d23 = np.einsum("md,md->m", rv[1], rv[2])
    d13 = np.einsum("md,md->m", rv[0], rv[2])
    b = rs[0] * rs[1] * rs[2] + d12 * rs[2] + d23 * rs[0] + d13 * rs[1]

    # ∇A = −(r⃗₁×r⃗₂ + r⃗₂×r⃗₃ + r⃗₃×r⃗₁): constant in x, so J(∇A) = 0 identically.
    grad_a = -(np.cross(rv[0], rv[1]) + np.cross(rv[1], rv[2]) + np.cross(rv[2], rv[0]))

    grad_r = [-rv[i] / rs[i][:, None] for i in range(3)]
    grad_rrr = (
        (rs[1] * rs[2])[:, None] * grad_r[0]
        + (rs[0] * rs[2])[:, None] * grad_r[1]
        + (rs[0] * rs[1])[:, None] * grad_r[2]
    )
    grad_b = (
        grad_rrr
        + d12[:, None] * grad_r[2] - rs[2][:, None] * (rv[0] + rv[1])
        + d23[:, None] * grad_r[0] - rs[0][:, None] * (rv[1] + rv[2])
        + d13[:, None] * grad_r[1] - rs[1][:, None] * (rv[0] + rv[2])
    )

    eye = np.eye(3)[None, :, :]
    j_grad_r = [
        (eye - (rv[i][:, :, None] * rv[i][:, None, :]) / (rs[i] ** 2)[:, None, None])
        / rs[i][:, None, None]
        for i in range(3)
    ]

    def outer_b(p, q):
        return p[:, :, None] * q[:, None, :]

    grad_r1r2 = rs[1][:, None] * grad_r[0] + rs[0][:, None] * grad_r[1]
    grad_r2r3 = rs[2][:, None] * grad_r[1] + rs[1][:, None] * grad_r[2]
    grad_r1r3 = rs[2][:, None] * grad_r[0] + rs[0][:, None] * grad_r[2]
    j_rrr = (
        (rs[1] * rs[2])[:, None, None] * j_grad_r[0]
        + (rs[0] * rs[2])[:, None, None] * j_grad_r[1]
        + (rs[0] * rs[1])[:, None, None] * j_grad_r[2]
        + outer_b(grad_r[0], grad_r2r3)
        + outer_b(grad_r[1], grad_r1r3)
        + outer_b(grad_r[2], grad_r1r2)
    )

    def j_dot_term(dij, k, ri, rj):
        # J of (r⃗ᵢ·r⃗ⱼ)∇r_k − r_k(r⃗ᵢ+r⃗ⱼ)
        return (
            dij[:, None, None] * j_grad_r[k]
            + 2.0 * rs[k][:, None, None] * eye
            - outer_b(grad_r[k], ri + rj)
            - outer_b(ri + rj, grad_r[k])
        )

    hess_b = (
        j_rrr
        + j_dot_term(d12, 2, rv[0], rv[1])
        + j_dot_term(d23, 0, rv[1], rv[2])
        + j_dot_term(d13, 1, rv[0], rv[2])
    )

    # Frobenius bound on the hess_b summands (they can cancel almost completely
    # for symmetric configurations); feeds the asymmetry-check roundoff floor.
    sqrt2 = np.sqrt(2.0)
    pair_norms = [np.linalg.norm(rv[i] + rv[j], axis=1) for i, j in ((0, 1), (1, 2), (0, 2))]
    hess_b_scale = (
        sqrt2
        * (
            rs[1] * rs[2] / rs[0]
            + rs[0] * rs[2] / rs[1]
            + rs[0] * rs[1] / rs[2]
        )
        + 2.0 * (rs[0] + rs[1] + rs[2])  # outer(grad_r_i, grad_rjrk) bounds
        + np.abs(d12) * sqrt2 / rs[2] + 2.0 * sqrt2 * rs[2] + 2.0 * pair_norms[0]
        + np.abs(d23) * sqrt2 / rs[0] + 2.0 * sqrt2 * rs[0] + 2.0 * pair_norms[1]
        + np.abs(d13) * sqrt2 / rs[1] + 2.0 * sqrt2 * rs[1] + 2.0 * pair_norms[2]
    )
    return pos, rs, a, b, grad_a, grad_b, hess_b, hess_b_scale


def solid_angle_triangle(x: np.ndarray, y1: np.ndarray, y2: np.ndarray, y3: np.ndarray):
    """Solid angle Ω ∈ [0, 2π) of a triangle and the terms behind it.

    Ω = 2·atan2(|A|, B); the two-argument arctangent applies the branch fix that a
    plain arctangent would need for B < 0.  The absolute value makes Ω independent
    of vertex winding.  Raises DegenerateElementError when x lies in the triangle's
    plane inside it (A ≈ 0 with B ≤ 0) or on a vertex.
    """
    pos, rs, a, b, grad_a, grad_b, hess_b, _ = _solid_angle_core(
        np.asarray(x, dtype=float)[None, :],
        np.asarray(y1, dtype=float)[None, :],
        np.asarray(y2, dtype=float)[None, :],
        np.asarray(y3, dtype=float)[None, :],
    )
    if not pos[0]:
        raise DegenerateElementError("x coincides with a triangle vertex")
    a0, b0 = float(a[0]), float(b[0])
    if abs(a0) < A_REL_MIN * float(rs[0][0] * rs[1][0] * rs[2][0]) and b0 <= 0.0:
        raise DegenerateElementError("x lies in the triangle's plane inside it")
    omega = 2.0 * np.arctan2(abs(a0), b0)
    terms = SolidAngleTerms(
        A=a0, B=b0, gradA=grad_a[0], gradB=grad_b[0], hessB=hess_b[0]
    )
    return omega, terms


def ff_triangle_derivs_batch(x: np.ndarray, y1: np.ndarray, y2: np.ndarray, y3: np.ndarray):
    """Batched triangle form factor F = Ω/4π with derivatives.

    Returns (valid, value, grad, hess); degenerate elements (coplanar x, vertex
    coincidence) are masked out.
    """
    pos, rs, a, b, grad_a, grad_b, hess_b, hess_b_scale = _solid_angle_core(x, y1, y2, y3)
    abs_a = np.abs(a)
    ok = pos & (abs_a >= A_REL_MIN * rs[0] * rs[1] * rs[2])

    value = np.where(
        pos & ((abs_a > 0.0) | (b > 0.0)),
        2.0 * np.arctan2(abs_a, b) / (4.0 * np.pi),
        0.0,
    )

    sign = np.where(a >= 0.0, 1.0, -1.0)
    grad_u = sign[:, None] * grad_a  # ∇|A|
    denom = np.where(ok, a * a + b * b, 1.0)
    num = b[:, None] * grad_u - abs_a[:, None] * grad_b
    grad = num / denom[:, None] / (2.0 * np.pi)

    # J of (B∇|A| − |A|∇B)/(A²+B²); J(∇|A|) = 0.
    grad_d = 2.0 * abs_a[:, None] * grad_u + 2.0 * b[:, None] * grad_b
    hess = (
        (
            grad_u[:, :, None] * grad_b[:, None, :]
            - grad_b[:, :, None] * grad_u[:, None, :]
            - abs_a[:, None, None] * hess_b
        )
        / denom[:, None, None]
        - num[:, :, None] * grad_d[:, None, :] / (denom**2)[:, None, None]
    ) / (2.0 * np.pi)

    grad = np.where(ok[:, None], grad, 0.0)
    hess = np.where(ok[:, None, None], hess, 0.0)
    value = np.where(ok | (pos & (b > 0.0)), value, 0.0)
    if np.any(ok):
        gu_norm = np.linalg.norm(grad_u, axis=1)
        gb_norm = np.linalg.norm(grad_b, axis=1)
        term_scale = (
            (2.0 * gu_norm * gb_norm + abs_a * hess_b_scale) / denom
            + np.linalg.norm(num, axis=1) * np.linalg.norm(grad_d, axis=1) / denom**2
        ) / (2.0 * np.pi)
        hess = _check_and_symmetrize(hess, np.where(ok, term_scale, 0.0))
    return ok, value, grad, hess


def ff_triangle_derivs(x: np.ndarray, y1: np.ndarray, y2: np.ndarray, y3: np.ndarray) -> FormFactorDerivs:
    """Triangle form factor F = Ω/4π with gradient and Hessian in x.

    Raises DegenerateElementError when x is numerically coplanar with the triangle
    (the sign factor A/|A| in ∇|A| = (A/|A|)∇A is undefined there).
    """
    ok, value, grad, hess = ff_triangle_derivs_batch(
        np.asarray(x, dtype=float)[None, :],
        np.asarray(y1, dtype=float)[None, :],
        np.asarray(y2, dtype=float)[None, :],
        np.asarray(y3, dtype=float)[None, :],
    )
    if not ok[0]:
        raise DegenerateElementError("triangle is degenerate as seen from x")
    return FormFactorDerivs(value=float(value[0]), grad=grad[0], hess=hess[0])


# ---------------------------------------------------------------------------
# Geometry term
# ---------------------------------------------------------------------------


def geometry_term(x: np.ndarray, y: np.ndarray, normal_at_y: np.ndarray, dim: int) -> float:
    """cosθ_y / r^(dim−1): the point-to-point geometry factor.

    cosθ_y is clamped to ≥ 0 so back-facing elements contribute zero.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = x - y
    r = float(np.linalg.norm(w))
    if r == 0.0:
        raise ValueError("geometry term is singular at coincident points")
    cos_y = max(0.0, float(np.dot(normal_at_y, w)) / r)
    return cos_y / r ** (dim - 1)
