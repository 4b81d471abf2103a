"""Tests for cache records, validity radii, the spatial index, and serialization.

The validity-radius formulas are checked against brute-force quadrature of the
second-order error integrand over the disk/ball, and the quadtree/octree query is
checked for exact agreement with a linear scan.
"""

from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from volcache.cache import (
    CACHE_FORMAT,
    CACHE_VERSION,
    CURVATURE_FLOOR,
    L_FLOOR_FRACTION,
    R_MAX_FRACTION,
    R_MIN_FRACTION,
    BaselineRecord,
    CacheFormatError,
    CacheRecord,
    RadianceCache,
    combined_luminance,
    interpolate,
    load_cache,
    log_gradient_radius,
    log_space_interpolate,
    make_baseline_record,
    make_record,
    save_cache,
    valid_radii,
    weight_cubic,
)
from volcache.oracles import ball_quadrature, disk_quadrature
from volcache.scene import LUMINANCE_WEIGHTS
from volcache.subdivision import BaselineEstimate, Moments


def rotation_2d(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def random_rotation(dim: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(dim, dim)))
    return q * np.sign(np.diag(r))


# ---------------------------------------------------------------------------
# weight_cubic
# ---------------------------------------------------------------------------


def test_weight_cubic_endpoints_and_midpoint():
    assert weight_cubic(0.0) == 0.0
    assert weight_cubic(1.0) == 1.0
    assert weight_cubic(0.5) == pytest.approx(0.5)


def test_weight_cubic_clamps_outside_unit_interval():
    assert weight_cubic(-0.3) == 0.0
    assert weight_cubic(2.0) == 1.0


def test_weight_cubic_monotone_and_flat_at_ends():
    d = np.linspace(0.0, 1.0, 401)
    w = weight_cubic(d)
    assert np.all(np.diff(w) >= 0.0)
    # Smooth blend: zero slope at both ends of the support.
    h = 1e-6
    assert weight_cubic(h) / h < 1e-5
    assert (1.0 - weight_cubic(1.0 - h)) / h < 1e-5


def test_weight_cubic_vectorized():
    d = np.array([[0.0, 0.25], [0.75, 1.0]])
    w = weight_cubic(d)
    assert w.shape == (2, 2)
    assert np.allclose(w, 3 * np.clip(d, 0, 1) ** 2 - 2 * np.clip(d, 0, 1) ** 3)


# ---------------------------------------------------------------------------
# valid_radii
# ---------------------------------------------------------------------------


def test_valid_radii_closed_form_solves_error_budget_2d():
    # The radius must balance |λ|·(disk integral of the squared axis coordinate)
    # against L·ε; plugging the closed form back in recovers ε exactly.
    L, eps, scale = 2.3, 0.05, 10.0
    lam = np.array([3.7, 0.9])
    radii = valid_radii(L, lam, eps, dim=2, scene_scale=scale)
    for lam_i, r_i in zip(lam, radii):
        assert lam_i * np.pi * r_i**4 / (4.0 * L) == pytest.approx(eps, rel=1e-12)


def test_valid_radii_closed_form_solves_error_budget_3d():
    L, eps, scale = 1.7, 0.02, 10.0
    lam = np.array([5.1, 2.2, 0.6])
    radii = valid_radii(L, lam, eps, dim=3, scene_scale=scale)
    for lam_i, r_i in zip(lam, radii):
        assert lam_i * 4.0 * np.pi * r_i**5 / (15.0 * L) == pytest.approx(eps, rel=1e-12)


def test_valid_radii_matches_disk_quadrature_oracle():
    # Independent check of the constant in the closed form: integrate the relative
    # second-order error term |λ|·x_i²/L over the disk of the returned radius with
    # brute-force quadrature and confirm the budget ε comes back out.
    L, eps, scale = 2.3, 0.05, 10.0
    lam = np.array([3.7, 0.9])
    radii = valid_radii(L, lam, eps, dim=2, scene_scale=scale)
    for lam_i, r_i in zip(lam, radii):
        pts, w = disk_quadrature(r_i, n_r=512, n_theta=256)
        integral = lam_i / L * float(np.sum(w * pts[:, 0] ** 2))
        assert integral == pytest.approx(eps, rel=1e-3)


def test_valid_radii_matches_ball_quadrature_oracle():
    L, eps, scale = 1.7, 0.02, 10.0
    lam = np.array([5.1, 2.2, 0.6])
    radii = valid_radii(L, lam, eps, dim=3, scene_scale=scale)
    for lam_i, r_i in zip(lam, radii):
        pts, w = ball_quadrature(r_i)
        integral = lam_i / L * float(np.sum(w * pts[:, 2] ** 2))
        assert integral == pytest.approx(eps, rel=1e-3)


def test_valid_radii_negative_curvature_uses_magnitude():
    r_pos = valid_radii(1.0, np.array([2.0, 3.0]), 0.01, 2, 10.0)
    r_neg = valid_radii(1.0, np.array([-2.0, -3.0]), 0.01, 2, 10.0)
    assert np.allclose(r_pos, r_neg)


def test_valid_radii_flat_axis_gets_maximum():
    scale = 4.0
    radii = valid_radii(1.0, np.array([0.0, 5.0]), 0.01, 2, scale)
    assert radii[0] == R_MAX_FRACTION * scale
    assert radii[1] < radii[0]


def test_valid_radii_curvature_floor_boundary():
    L, scale = 2.0, 3.0
    floor = CURVATURE_FLOOR * L / scale**2
    below = valid_radii(L, np.array([floor * 0.5, 1.0]), 0.01, 2, scale)
    assert below[0] == R_MAX_FRACTION * scale
    # Just above the floor the formula applies, but such tiny curvature still
    # asks for a huge radius, so the max clamp takes over anyway.
    above = valid_radii(L, np.array([floor * 2.0, 1.0]), 0.01, 2, scale)
    assert above[0] == R_MAX_FRACTION * scale


def test_valid_radii_clamped_to_max_fraction():
    scale = 1.0
    radii = valid_radii(100.0, np.array([1e-6, 1e-6]), 0.5, 2, scale)
    assert np.all(radii == R_MAX_FRACTION * scale)


def test_valid_radii_monotonic_in_curvature_budget_and_luminance():
    base = valid_radii(1.0, np.array([2.0, 2.0]), 0.01, 2, 100.0)
    sharper = valid_radii(1.0, np.array([8.0, 8.0]), 0.01, 2, 100.0)
    looser = valid_radii(1.0, np.array([2.0, 2.0]), 0.04, 2, 100.0)
    brighter = valid_radii(16.0, np.array([2.0, 2.0]), 0.01, 2, 100.0)
    assert np.all(sharper < base)
    assert np.all(looser > base)
    assert np.all(brighter > base)
    # Quartic root scalings: 16× luminance or 4× budget doubles the radius.
    assert np.allclose(brighter, 2.0 * base)
    assert np.allclose(looser, np.sqrt(2.0) * base)


def test_valid_radii_validation():
    with pytest.raises(ValueError):
        valid_radii(0.0, np.array([1.0, 1.0]), 0.01, 2, 1.0)
    with pytest.raises(ValueError):
        valid_radii(1.0, np.array([1.0, 1.0]), 0.0, 2, 1.0)
    with pytest.raises(ValueError):
        valid_radii(1.0, np.array([1.0, 1.0]), 0.01, 4, 1.0)
    with pytest.raises(ValueError):
        valid_radii(1.0, np.array([1.0, 1.0, 1.0]), 0.01, 2, 1.0)


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


def make_test_record(
    position=(0.5, 0.5),
    value=(1.0, 2.0, 3.0),
    grad=((0.1, 0.0), (0.0, -0.2), (0.3, 0.4)),
    angle=0.0,
    radii=(0.2, 0.1),
) -> CacheRecord:
    dim = len(position)
    axes = rotation_2d(angle) if dim == 2 else np.eye(3)
    return CacheRecord(
        position=np.asarray(position, dtype=float),
        value=np.asarray(value, dtype=float),
        grad=np.asarray(grad, dtype=float),
        axes=axes,
        radii=np.asarray(radii, dtype=float),
    )


def test_record_support_coordinate_center_and_boundary():
    rec = make_test_record(angle=0.7)
    assert rec.support_coordinate(rec.position) == pytest.approx(1.0)
    for axis in range(2):
        boundary = rec.position + rec.radii[axis] * rec.axes[:, axis]
        assert rec.support_coordinate(boundary) == pytest.approx(0.0, abs=1e-12)
        outside = rec.position + 1.5 * rec.radii[axis] * rec.axes[:, axis]
        assert rec.support_coordinate(outside) < 0.0


def test_record_support_is_anisotropic():
    rec = make_test_record(angle=0.0, radii=(0.2, 0.05))
    # The same offset distance counts differently along the two principal axes.
    along_major = rec.support_coordinate(rec.position + np.array([0.1, 0.0]))
    along_minor = rec.support_coordinate(rec.position + np.array([0.0, 0.1]))
    assert along_major == pytest.approx(0.5)
    assert along_minor < 0.0


def test_record_support_rotates_with_axes():
    angle = 0.6
    rec = make_test_record(angle=angle, radii=(0.2, 0.05))
    major = np.array([np.cos(angle), np.sin(angle)])
    assert rec.support_coordinate(rec.position + 0.1 * major) == pytest.approx(0.5)


def test_record_extrapolate_first_order_and_clamp():
    rec = make_test_record()
    delta = np.array([0.02, -0.01])
    expected = np.asarray(rec.value) + rec.grad @ delta
    assert np.allclose(rec.extrapolate(rec.position + delta), expected)
    # A steep negative gradient must clamp at zero rather than go negative.
    steep = CacheRecord(
        position=np.zeros(2),
        value=np.array([0.01, 1.0, 0.0]),
        grad=np.array([[-10.0, 0.0], [0.0, 0.0], [0.0, 0.0]]),
        axes=np.eye(2),
        radii=np.array([0.5, 0.5]),
    )
    out = steep.extrapolate(np.array([0.1, 0.0]))
    assert out[0] == 0.0
    assert out[1] == 1.0


def test_record_dim_and_bounding_radius():
    rec = make_test_record(radii=(0.2, 0.1))
    assert rec.dim == 2
    assert rec.bounding_radius == 0.2


def test_support_region_inside_bounding_sphere():
    # The tree stores records by bounding sphere, so every point with positive
    # support must lie within bounding_radius of the center.
    rng = np.random.default_rng(5)
    for _ in range(50):
        dim = int(rng.integers(2, 4))
        axes = random_rotation(dim, rng)
        radii = rng.uniform(0.01, 0.3, size=dim)
        rec = CacheRecord(
            position=rng.uniform(-1, 1, size=dim),
            value=np.ones(3),
            grad=np.zeros((3, dim)),
            axes=axes,
            radii=radii,
        )
        for _ in range(20):
            x = rec.position + rng.uniform(-0.35, 0.35, size=dim)
            if rec.support_coordinate(x) > 0.0:
                assert np.linalg.norm(x - rec.position) < rec.bounding_radius + 1e-12


def test_baseline_record_spherical_support():
    rec = BaselineRecord(
        position=np.array([0.3, 0.4]),
        value=np.array([1.0, 1.0, 1.0]),
        grad=np.zeros((3, 2)),
        radius=0.25,
    )
    assert rec.dim == 2
    assert rec.bounding_radius == 0.25
    assert rec.support_coordinate(rec.position) == pytest.approx(1.0)
    direction = np.array([np.cos(1.2), np.sin(1.2)])
    assert rec.support_coordinate(rec.position + 0.25 * direction) == pytest.approx(
        0.0, abs=1e-12
    )
    assert rec.support_coordinate(rec.position + 0.125 * direction) == pytest.approx(0.5)


# ---------------------------------------------------------------------------
# combined_luminance / make_record
# ---------------------------------------------------------------------------


def test_combined_luminance_weights():
    L = np.array([2.0, 1.0, 0.5])
    hess = np.stack([np.diag([1.0, 2.0]), np.diag([3.0, 4.0]), np.diag([5.0, 6.0])])
    moments = Moments(L=L, grad=np.zeros((3, 2)), hess=hess, kind="single")
    lum, h = combined_luminance(moments)
    assert lum == pytest.approx(float(L @ LUMINANCE_WEIGHTS))
    expected = np.einsum("cij,c->ij", hess, LUMINANCE_WEIGHTS)
    assert np.allclose(h, expected)
    # The green channel dominates the perceptual weighting.
    assert LUMINANCE_WEIGHTS[1] > LUMINANCE_WEIGHTS[0] > LUMINANCE_WEIGHTS[2]
    assert float(np.sum(LUMINANCE_WEIGHTS)) == pytest.approx(1.0)


def diag_moments(L, lam, dim=2) -> Moments:
    """Moments whose luminance Hessian is exactly diag(lam)."""
    L = np.asarray(L, dtype=float)
    hess = np.stack([np.diag(np.asarray(lam, dtype=float))] * 3)
    return Moments(L=L, grad=np.zeros((3, dim)), hess=hess, kind="single")


def test_make_record_axis_aligned_radii():
    lam = (4.0, 0.25)
    moments = diag_moments([2.0, 1.0, 0.5], lam)
    eps, scale, max_emission = 0.01, 1.0, 10.0
    rec = make_record(np.array([0.4, 0.6]), moments, eps, scale, max_emission)
    lum = float(np.asarray([2.0, 1.0, 0.5]) @ LUMINANCE_WEIGHTS)
    expected = valid_radii(lum, np.array([4.0, 0.25]), eps, 2, scale)
    # Eigen-decomposition orders by |λ| descending, so radii come back sorted
    # ascending; compare as sets of (|axis·e_i|, radius) pairs instead.
    pairing = {}
    for k in range(2):
        axis = np.abs(rec.axes[:, k])
        pairing[int(np.argmax(axis))] = rec.radii[k]
        assert np.max(axis) == pytest.approx(1.0)
    assert pairing[0] == pytest.approx(expected[0], rel=1e-12)
    assert pairing[1] == pytest.approx(expected[1], rel=1e-12)
    assert np.allclose(rec.value, [2.0, 1.0, 0.5])


def test_make_record_axes_follow_rotated_hessian():
    rng = np.random.default_rng(11)
    rot = rotation_2d(0.9)
    lam = np.array([6.0, 1.5])
    hess_lum = rot @ np.diag(lam) @ rot.T
    # Give each channel the same Hessian so the luminance combination is exact.
    moments = Moments(
        L=np.array([1.0, 1.0, 1.0]),
        grad=rng.normal(size=(3, 2)),
        hess=np.stack([hess_lum] * 3),
        kind="single",
    )
    rec = make_record(np.zeros(2), moments, 0.01, 1.0, 10.0)
    # Largest-|λ| eigenvector first; direction may flip sign.
    assert abs(float(rec.axes[:, 0] @ rot[:, 0])) == pytest.approx(1.0, abs=1e-10)
    assert abs(float(rec.axes[:, 1] @ rot[:, 1])) == pytest.approx(1.0, abs=1e-10)
    assert rec.radii[0] < rec.radii[1]  # sharper axis gets the smaller radius
    assert np.allclose(rec.grad, moments.grad)


def test_make_record_isotropic_uses_worst_axis():
    moments = diag_moments([2.0, 1.0, 0.5], (4.0, 0.25))
    aniso = make_record(np.zeros(2), moments, 0.01, 1.0, 10.0)
    iso = make_record(np.zeros(2), moments, 0.01, 1.0, 10.0, anisotropic=False)
    assert iso.radii[0] == iso.radii[1]
    # The sphere shrinks to the most conservative (smallest) anisotropic radius.
    assert iso.radii[0] == pytest.approx(np.min(aniso.radii), rel=1e-12)
    assert np.min(aniso.radii) < np.max(aniso.radii)


def test_make_record_zero_radiance_floored():
    moments = Moments(
        L=np.zeros(3), grad=np.zeros((3, 2)), hess=np.zeros((3, 2, 2)), kind="single"
    )
    rec = make_record(np.zeros(2), moments, 0.01, 2.0, max_emission=15.0)
    # Zero curvature at floored luminance ⇒ maximal region, zero stored value.
    assert np.all(rec.radii == R_MAX_FRACTION * 2.0)
    assert np.all(rec.value == 0.0)
    assert L_FLOOR_FRACTION * 15.0 > 0.0


def test_make_record_copies_moment_arrays():
    moments = diag_moments([1.0, 1.0, 1.0], (1.0, 1.0))
    rec = make_record(np.zeros(2), moments, 0.01, 1.0, 10.0)
    moments.L[0] = 99.0
    moments.grad[0, 0] = 99.0
    assert rec.value[0] == 1.0
    assert rec.grad[0, 0] == 0.0


# ---------------------------------------------------------------------------
# log_gradient_radius / make_baseline_record
# ---------------------------------------------------------------------------


def test_log_gradient_radius_ratio_and_alpha():
    scale = 1.0
    values = np.array([1.0, 2.0, 3.0])
    norms = np.array([10.0, 20.0, 30.0])
    assert log_gradient_radius(values, norms, scale) == pytest.approx(0.1)
    assert log_gradient_radius(values, norms, scale, alpha=0.5) == pytest.approx(0.05)


def test_log_gradient_radius_clamps():
    scale = 2.0
    flat = log_gradient_radius(np.array([1.0]), np.array([1e-9]), scale)
    assert flat == R_MAX_FRACTION * scale
    sharp = log_gradient_radius(np.array([1e-9]), np.array([1.0]), scale)
    assert sharp == R_MIN_FRACTION * scale
    zero_grad = log_gradient_radius(np.array([1.0]), np.zeros(1), scale)
    assert zero_grad == R_MAX_FRACTION * scale


def test_make_baseline_record_wires_heuristic():
    est = BaselineEstimate(
        value=np.array([1.0, 2.0, 3.0]),
        grad=np.array([[0.1, 0.2], [0.3, 0.4], [0.5, 0.6]]),
        sample_values=np.array([2.0, 2.0]),
        sample_grad_norms=np.array([10.0, 10.0]),
        kind="single",
    )
    rec = make_baseline_record(np.array([0.2, 0.3]), est, scene_scale=1.0)
    assert isinstance(rec, BaselineRecord)
    assert rec.radius == pytest.approx(0.2)
    assert np.allclose(rec.value, est.value)
    assert np.allclose(rec.grad, est.grad)
    half = make_baseline_record(np.array([0.2, 0.3]), est, scene_scale=1.0, alpha=0.5)
    assert half.radius == pytest.approx(0.1)


# ---------------------------------------------------------------------------
# Spatial index
# ---------------------------------------------------------------------------


def test_cache_constructor_validation():
    with pytest.raises(ValueError):
        RadianceCache(np.zeros(2), np.zeros(3))
    with pytest.raises(ValueError):
        RadianceCache(np.zeros(4), np.ones(4))
    with pytest.raises(ValueError):
        RadianceCache(np.array([0.0, 0.0]), np.array([1.0, 0.0]))


def test_cache_insert_dim_mismatch():
    cache = RadianceCache(np.zeros(2), np.ones(2))
    rec = CacheRecord(
        position=np.zeros(3),
        value=np.ones(3),
        grad=np.zeros((3, 3)),
        axes=np.eye(3),
        radii=np.full(3, 0.1),
    )
    with pytest.raises(ValueError):
        cache.insert(rec)


def test_cache_len_and_records_copy():
    cache = RadianceCache(np.zeros(2), np.ones(2))
    assert len(cache) == 0
    rec = make_test_record(position=(0.5, 0.5))
    cache.insert(rec)
    assert len(cache) == 1
    listing = cache.records
    listing.clear()
    assert len(cache) == 1  # the property hands out a copy


def test_cache_query_matches_brute_force_handpicked():
    cache = RadianceCache(np.zeros(2), np.ones(2))
    # A straddling record (center on the root split), a corner record, and a
    # tiny record that descends deep into the tree.
    recs = [
        make_test_record(position=(0.5, 0.5), radii=(0.3, 0.2)),
        make_test_record(position=(0.05, 0.05), radii=(0.04, 0.04)),
        make_test_record(position=(0.9, 0.9), radii=(1e-6, 1e-6)),
    ]
    for rec in recs:
        cache.insert(rec)
    for x in [
        (0.5, 0.5),
        (0.05, 0.06),
        (0.9, 0.9),
        (0.9 + 5e-7, 0.9),
        (0.2, 0.8),
        (-0.5, 0.5),  # outside the scene bounds entirely
    ]:
        tree = cache.query(np.array(x))
        brute = cache.query_brute(np.array(x))
        assert sorted(map(id, tree)) == sorted(map(id, brute))
    assert len(cache.query(np.array([0.9, 0.9]))) == 1
    assert len(cache.query(np.array([0.5, 0.5]))) >= 1


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_cache_query_matches_brute_force_random(data):
    dim = data.draw(st.sampled_from([2, 3]))
    seed = data.draw(st.integers(min_value=0, max_value=2**31 - 1))
    rng = np.random.default_rng(seed)
    cache = RadianceCache(np.zeros(dim), np.ones(dim))
    diag = float(np.sqrt(dim))
    n_records = int(rng.integers(1, 25))
    for _ in range(n_records):
        radii = rng.uniform(1e-4, R_MAX_FRACTION * diag, size=dim)
        cache.insert(
            CacheRecord(
                position=rng.uniform(0.0, 1.0, size=dim),
                value=rng.uniform(0.0, 5.0, size=3),
                grad=rng.normal(size=(3, dim)),
                axes=random_rotation(dim, rng),
                radii=radii,
            )
        )
    for _ in range(30):
        x = rng.uniform(-0.2, 1.2, size=dim)
        tree = cache.query(x)
        brute = cache.query_brute(x)
        assert sorted(map(id, tree)) == sorted(map(id, brute))


def test_cache_query_boundary_is_exclusive():
    cache = RadianceCache(np.zeros(2), np.ones(2))
    # Power-of-two coordinates so the boundary lands exactly on support = 0.
    rec = make_test_record(position=(0.5, 0.5), radii=(0.125, 0.125))
    cache.insert(rec)
    exactly_on_edge = np.array([0.625, 0.5])
    assert rec.support_coordinate(exactly_on_edge) == 0.0
    assert cache.query(exactly_on_edge) == []
    assert cache.query(np.array([0.624, 0.5])) != []


# ---------------------------------------------------------------------------
# Interpolation
# ---------------------------------------------------------------------------


def test_interpolate_none_when_uncovered():
    cache = RadianceCache(np.zeros(2), np.ones(2))
    assert interpolate(cache, np.array([0.5, 0.5])) is None
    cache.insert(make_test_record(position=(0.2, 0.2), radii=(0.05, 0.05)))
    assert interpolate(cache, np.array([0.8, 0.8])) is None


def test_interpolate_single_record_is_extrapolation():
    cache = RadianceCache(np.zeros(2), np.ones(2))
    rec = make_test_record(position=(0.5, 0.5), radii=(0.2, 0.2))
    cache.insert(rec)
    assert np.allclose(interpolate(cache, rec.position), rec.value)
    x = np.array([0.55, 0.48])
    assert np.allclose(interpolate(cache, x), rec.extrapolate(x))


def test_interpolate_blends_with_cubic_weights():
    cache = RadianceCache(np.zeros(2), np.ones(2))
    rec_a = make_test_record(
        position=(0.4, 0.5), value=(1.0, 0.0, 0.0), grad=np.zeros((3, 2)), radii=(0.3, 0.3)
    )
    rec_b = make_test_record(
        position=(0.6, 0.5), value=(0.0, 2.0, 0.0), grad=np.zeros((3, 2)), radii=(0.3, 0.3)
    )
    cache.insert(rec_a)
    cache.insert(rec_b)
    x = np.array([0.45, 0.5])
    w_a = float(weight_cubic(rec_a.support_coordinate(x)))
    w_b = float(weight_cubic(rec_b.support_coordinate(x)))
    expected = (w_a * rec_a.value + w_b * rec_b.value) / (w_a + w_b)
    assert np.allclose(interpolate(cache, x), expected)
    # Closer to A, the blend leans towards A's value.
    assert interpolate(cache, x)[0] > interpolate(cache, x)[1] / 2.0


def test_interpolate_reproduces_linear_field_exactly():
    # Records sampled from a globally linear radiance field must agree wherever
    # their supports overlap, so the blend reproduces the field exactly.
    rng = np.random.default_rng(3)
    base = np.array([2.0, 1.5, 1.0])
    slope = rng.normal(size=(3, 2)) * 0.3
    cache = RadianceCache(np.zeros(2), np.ones(2))
    for _ in range(12):
        p = rng.uniform(0.2, 0.8, size=2)
        cache.insert(
            CacheRecord(
                position=p,
                value=base + slope @ p,
                grad=slope.copy(),
                axes=random_rotation(2, rng),
                radii=rng.uniform(0.15, 0.3, size=2),
            )
        )
    for _ in range(25):
        x = rng.uniform(0.25, 0.75, size=2)
        out = interpolate(cache, x)
        if out is None:
            continue
        assert np.allclose(out, base + slope @ x, rtol=1e-12, atol=1e-12)


def test_log_space_interpolate_single_record():
    cache = RadianceCache(np.zeros(2), np.ones(2))
    rec = BaselineRecord(
        position=np.array([0.5, 0.5]),
        value=np.array([2.0, 0.0, 1.0]),
        grad=np.array([[1.0, -0.5], [0.0, 0.0], [0.2, 0.1]]),
        radius=0.3,
    )
    cache.insert(rec)
    x = np.array([0.55, 0.45])
    delta = x - rec.position
    out = log_space_interpolate(cache, x)
    for c in (0, 2):
        expected = rec.value[c] * np.exp(float(rec.grad[c] @ delta) / rec.value[c])
        assert out[c] == pytest.approx(expected, rel=1e-12)
    # Zero-radiance channels cannot enter a log blend; they come back zero.
    assert out[1] == 0.0


def test_log_space_interpolate_exact_for_exponential_field():
    # The baseline blend is exact for fields of the form exp(a + b·x) because it
    # averages the (linear) log-space estimates.
    rng = np.random.default_rng(9)
    a = np.array([0.3, -0.2, 0.1])
    b = rng.normal(size=(3, 2)) * 0.8

    def field(x):
        return np.exp(a + b @ x)

    cache = RadianceCache(np.zeros(2), np.ones(2))
    for _ in range(10):
        p = rng.uniform(0.2, 0.8, size=2)
        val = field(p)
        cache.insert(
            BaselineRecord(position=p, value=val, grad=val[:, None] * b, radius=0.35)
        )
    for _ in range(25):
        x = rng.uniform(0.3, 0.7, size=2)
        out = log_space_interpolate(cache, x)
        if out is None:
            continue
        assert np.allclose(out, field(x), rtol=1e-10)


def test_log_space_interpolate_none_cases():
    cache = RadianceCache(np.zeros(2), np.ones(2))
    assert log_space_interpolate(cache, np.array([0.5, 0.5])) is None
    dark = BaselineRecord(
        position=np.array([0.5, 0.5]),
        value=np.zeros(3),
        grad=np.zeros((3, 2)),
        radius=0.3,
    )
    cache.insert(dark)
    # A covering record with no positive channel cannot contribute to any blend.
    assert log_space_interpolate(cache, np.array([0.5, 0.5])) is None


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def test_cache_round_trip(tmp_path):
    cache = RadianceCache(np.array([0.0, -1.0]), np.array([2.0, 3.0]))
    cache.insert(make_test_record(position=(0.5, 0.5), angle=0.4, radii=(0.2, 0.1)))
    cache.insert(
        BaselineRecord(
            position=np.array([1.0, 2.0]),
            value=np.array([0.5, 0.25, 0.125]),
            grad=np.ones((3, 2)),
            radius=0.15,
        )
    )
    path = tmp_path / "cache.json"
    save_cache(cache, path, metadata={"mode": "test", "epsilon": 0.01})
    loaded, meta = load_cache(path)
    assert meta == {"mode": "test", "epsilon": 0.01}
    assert loaded.dim == 2
    assert np.allclose(loaded.bounds_min, cache.bounds_min)
    assert np.allclose(loaded.bounds_max, cache.bounds_max)
    assert len(loaded) == 2
    orig_ell, orig_sph = cache.records
    new_ell, new_sph = loaded.records
    assert isinstance(new_ell, CacheRecord)
    assert isinstance(new_sph, BaselineRecord)
    assert np.allclose(new_ell.position, orig_ell.position)
    assert np.allclose(new_ell.value, orig_ell.value)
    assert np.allclose(new_ell.grad, orig_ell.grad)
    assert np.allclose(new_ell.axes, orig_ell.axes)
    assert np.allclose(new_ell.radii, orig_ell.radii)
    assert np.allclose(new_sph.position, orig_sph.position)
    assert new_sph.radius == orig_sph.radius
    # The rebuilt tree answers queries identically.
    for x in [(0.5, 0.5), (1.0, 2.05), (0.4, 0.55)]:
        assert len(loaded.query(np.array(x))) == len(cache.query(np.array(x)))


def test_save_cache_default_metadata(tmp_path):
    cache = RadianceCache(np.zeros(2), np.ones(2))
    path = tmp_path / "empty.json"
    save_cache(cache, path)
    loaded, meta = load_cache(path)
    assert meta == {}
    assert len(loaded) == 0
    doc = json.loads(path.read_text())
    assert doc["format"] == CACHE_FORMAT
    assert doc["version"] == CACHE_VERSION


def test_load_cache_rejects_bad_documents(tmp_path):
    def write(name, payload):
        p = tmp_path / name
        p.write_text(payload if isinstance(payload, str) else json.dumps(payload))
        return p

    with pytest.raises(CacheFormatError):
        load_cache(write("notjson.json", "{this is not json"))
    with pytest.raises(CacheFormatError):
        load_cache(write("list.json", [1, 2, 3]))
    with pytest.raises(CacheFormatError):
        load_cache(write("fmt.json", {"format": "something-else", "version": 1}))

    good = {
        "format": CACHE_FORMAT,
        "version": CACHE_VERSION,
        "dimensionality": 2,
        "bounds": {"min": [0.0, 0.0], "max": [1.0, 1.0]},
        "metadata": {},
        "records": [],
    }
    future = dict(good, version=CACHE_VERSION + 1)
    with pytest.raises(CacheFormatError):
        load_cache(write("future.json", future))
    mismatched = dict(good, dimensionality=3)
    with pytest.raises(CacheFormatError):
        load_cache(write("dims.json", mismatched))
    missing_bounds = {k: v for k, v in good.items() if k != "bounds"}
    with pytest.raises(CacheFormatError):
        load_cache(write("nobounds.json", missing_bounds))
    with pytest.raises(OSError):
        load_cache(tmp_path / "does-not-exist.json")


def test_load_cache_rejects_bad_records(tmp_path):
    def doc_with(record):
        return {
            "format": CACHE_FORMAT,
            "version": CACHE_VERSION,
            "dimensionality": 2,
            "bounds": {"min": [0.0, 0.0], "max": [1.0, 1.0]},
            "metadata": {},
            "records": [record],
        }

    ok = {
        "record_type": "ellipsoid",
        "position": [0.5, 0.5],
        "value": [1.0, 1.0, 1.0],
        "grad": [[0.0, 0.0]] * 3,
        "axes": [[1.0, 0.0], [0.0, 1.0]],
        "radii": [0.1, 0.1],
    }

    def check_raises(mutate, name):
        bad = json.loads(json.dumps(ok))
        mutate(bad)
        p = tmp_path / name
        p.write_text(json.dumps(doc_with(bad)))
        with pytest.raises(CacheFormatError):
            load_cache(p)

    check_raises(lambda d: d.pop("position"), "nopos.json")
    check_raises(lambda d: d.update(position=[0.5]), "shortpos.json")
    check_raises(lambda d: d.update(value=[1.0]), "shortval.json")
    check_raises(lambda d: d.update(grad=[[0.0, 0.0]]), "shortgrad.json")
    check_raises(lambda d: d.update(radii=[0.1]), "shortradii.json")
    check_raises(lambda d: d.update(record_type="cylinder"), "badtype.json")

    p = tmp_path / "good.json"
    p.write_text(json.dumps(doc_with(ok)))
    loaded, _ = load_cache(p)
    assert len(loaded) == 1
