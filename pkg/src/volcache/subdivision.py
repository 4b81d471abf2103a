"""Occlusion-free piecewise-linear subdivision around a media point, and moments.

Around an evaluation point x the scene is discretized into concentric rings of
radiance-carrying elements: media rings at marched distances rᵢ = (i − ½)·step carry
in-scattered radiance samples, and one surface ring carries the outgoing radiance of
the nearest surface per direction.  Directions blocked by a surface before a ring's
radius contribute zero-radiance "star" vertices pinned to the occluder hit point, so
ring elements straddling an occlusion boundary shrink/grow as x translates — that
geometry change, expressed through form-factor derivatives, is what makes the
assembled gradient and Hessian occlusion-aware.

Moment assembly treats each element's radiance and the scattering factor f̄ as
constants of the differentiation; only the transmittance to, and the form factor
of, the frozen element geometry carry derivatives:

    value  L_j = f̄ · T_r · L(y_ℓ) · F
    ∇L_j  = L(y_ℓ) · f̄ · (T_r ∇F + ∇T_r F)
    H L_j = L(y_ℓ) · f̄ · (T_r HF + ∇T_r ∇ᵀF + ∇F ∇ᵀT_r + H T_r F)

with y_ℓ the element vertex furthest from x (the first to change occlusion state).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .formfactor import ff_segment_derivs_batch, ff_triangle_derivs_batch
from .numerics import symmetry_defect
from .scene import (
    LUMINANCE_WEIGHTS,
    DirectionSet,
    Scene,
    oriented_normals,
    stratified_directions,
    trace_or_bounds,
)
from .transport import (
    Phase,
    f_bar,
    mean_surface_gather,
    surface_radiance_batch,
    transmittance_grad_batch,
    transmittance_hess_batch,
    uniform_directions,
)

DEFAULT_N_ANGULAR = {2: 256, 3: 16384}

#: Samples at grazing incidence drop the geometry-ratio term of the
#: occlusion-unaware gradient (it diverges as cosθ_y → 0).
BASELINE_COS_MIN = 1e-4


def default_n_angular(dim: int) -> int:
    return DEFAULT_N_ANGULAR[dim]


@dataclass(frozen=True)
class RingElement:
    """One radiance-carrying element: segment (2 vertices) or triangle (3)."""

    vertices: np.ndarray  # (k, dim)
    representative_radiance: np.ndarray  # (3,), radiance at the furthest vertex
    representative_distance: float
    is_star: np.ndarray  # (k,) per-vertex occluder flags


@dataclass
class Ring:
    """All elements at one marched distance (or the terminal surface ring).

    Element data is stored as stacked arrays for vectorized assembly; `elements`
    materializes :class:`RingElement` views for inspection or export.
    """

    distance: float
    weight: float
    kind: str  # "media" | "surface"
    vertices: np.ndarray  # (E, k, dim)
    radiances: np.ndarray  # (E, 3)
    rep_points: np.ndarray  # (E, dim)
    rep_distances: np.ndarray  # (E,)
    star_flags: np.ndarray  # (E, k)

    @property
    def elements(self) -> list[RingElement]:
        return [
            RingElement(
                vertices=self.vertices[e],
                representative_radiance=self.radiances[e],
                representative_distance=float(self.rep_distances[e]),
                is_star=self.star_flags[e],
            )
            for e in range(self.vertices.shape[0])
        ]


@dataclass
class Subdivision:
    center: np.ndarray
    rings: list[Ring]
    directions: DirectionSet

    @property
    def star_vertex_count(self) -> int:
        return int(sum(r.star_flags.sum() for r in self.rings))


@dataclass(frozen=True)
class Moments:
    """Radiance value, gradient, and Hessian at a media point, per channel."""

    L: np.ndarray  # (3,)
    grad: np.ndarray  # (3, dim)
    hess: np.ndarray  # (3, dim, dim)
    kind: str  # "single" | "multiple"

    @property
    def dim(self) -> int:
        return self.grad.shape[1]


def _zero_moments(dim: int, kind: str) -> Moments:
    return Moments(
        L=np.zeros(3), grad=np.zeros((3, dim)), hess=np.zeros((3, dim, dim)), kind=kind
    )


# ---------------------------------------------------------------------------
# Subdivision construction
# ---------------------------------------------------------------------------


def build_subdivision(
    scene: Scene,
    x: np.ndarray,
    n_angular: int | None = None,
    march_step: float = 0.1,
    rng_seed=None,
    n_inner: int = 1,
    n_light_samples: int = 16,
) -> Subdivision:
    """Trace one stratified direction set from x and bin samples into rings.

    Per direction: the nearest surface (or bounds) hit at distance s terminates the
    march; media samples live at rᵢ = (i − ½)·march_step < s and carry the scattered
    one-further-bounce source density σ_s·mean_ω'(T_r·L_o) estimated with `n_inner`
    directions each; rings past s get a zero-radiance star vertex at the hit point.
    The final surface ring carries the outgoing surface radiance per direction.
    """
    x = np.asarray(x, dtype=float)
    dim = x.size
    if march_step <= 0.0:
        raise ValueError("march_step must be positive")
    if not scene.contains(x):
        raise ValueError("subdivision center lies outside the medium bounds")
    if n_angular is None:
        n_angular = default_n_angular(dim)
    rng = np.random.default_rng(rng_seed)
    dirs = stratified_directions(dim, n_angular, rng)

    origins = np.broadcast_to(x, (n_angular, dim)).copy()
    s, idx = trace_or_bounds(scene, origins, dirs.directions)
    hit_points = origins + s[:, None] * dirs.directions
    surface_radiance = surface_radiance_batch(
        scene, idx, hit_points, dirs.directions, n_light_samples
    )
    is_surface_hit = idx >= 0  # bounds terminations carry radiance 0, not star flags

    n_rings = int(np.floor(float(np.max(s)) / march_step + 0.5))
    ring_radii = (np.arange(1, n_rings + 1) - 0.5) * march_step

    # Media sample radiance: σ_s · one-bounce surface gather, n_inner dirs per point.
    in_medium = ring_radii[None, :] < s[:, None]  # (n_angular, n_rings)
    media_points = (
        origins[:, None, :] + ring_radii[None, :, None] * dirs.directions[:, None, :]
    )
    media_radiance = np.zeros((n_angular, n_rings, 3))
    flat_idx = np.flatnonzero(in_medium)
    if flat_idx.size and scene.medium.sigma_s > 0.0:
        pts = media_points.reshape(-1, dim)[flat_idx]
        if dim == 2:
            u = rng.random((pts.shape[0], n_inner))
            gather_dirs = uniform_directions(2, u.reshape(-1)).reshape(
                pts.shape[0], n_inner, 2
            )
        else:
            u = rng.random((pts.shape[0], n_inner, 2))
            gather_dirs = uniform_directions(3, u.reshape(-1, 2)).reshape(
                pts.shape[0], n_inner, 3
            )
        gathered = mean_surface_gather(scene, pts, gather_dirs, n_light_samples)
        media_radiance.reshape(-1, 3)[flat_idx] = scene.medium.sigma_s * gathered

    adjacency = dirs.adjacency
    rings: list[Ring] = []
    for i in range(n_rings):
        live = in_medium[:, i]
        if not np.any(live):
            continue
        sample_pts = np.where(live[:, None], media_points[:, i, :], hit_points)
        sample_rad = np.where(live[:, None], media_radiance[:, i, :], 0.0)
        sample_dist = np.where(live, ring_radii[i], s)
        sample_star = ~live & is_surface_hit
        rings.append(
            _make_ring(
                x,
                kind="media",
                distance=float(ring_radii[i]),
                weight=march_step,
                adjacency=adjacency,
                points=sample_pts,
                radiances=sample_rad,
                distances=sample_dist,
                stars=sample_star,
            )
        )

    rings.append(
        _make_ring(
            x,
            kind="surface",
            distance=float(np.mean(s)),
            weight=1.0,
            adjacency=adjacency,
            points=hit_points,
            radiances=surface_radiance,
            distances=s,
            stars=np.zeros(n_angular, dtype=bool),
        )
    )
    return Subdivision(center=x, rings=rings, directions=dirs)


def _make_ring(x, kind, distance, weight, adjacency, points, radiances, distances, stars):
    verts = points[adjacency]  # (E, k, dim)
    vert_dist = distances[adjacency]  # (E, k)
    vert_rad = radiances[adjacency]  # (E, k, 3)
    vert_star = stars[adjacency]  # (E, k)
    rep = np.argmax(vert_dist, axis=1)
    e_idx = np.arange(verts.shape[0])
    return Ring(
        distance=distance,
        weight=weight,
        kind=kind,
        vertices=verts,
        radiances=vert_rad[e_idx, rep],
        rep_points=verts[e_idx, rep],
        rep_distances=vert_dist[e_idx, rep],
        star_flags=vert_star,
    )


# ---------------------------------------------------------------------------
# Element radiance and moment assembly
# ---------------------------------------------------------------------------


def element_radiance(
    elem: RingElement, x: np.ndarray, direction_out, phase: Phase, medium
) -> np.ndarray:
    """f̄·T_r(x, y_ℓ)·L(y_ℓ)·F(x) for one element (isotropic: direction_out unused).

    Degenerate elements contribute zero.
    """
    x = np.asarray(x, dtype=float)
    if elem.vertices.shape[0] == 2:
        ok, value, _, _ = ff_segment_derivs_batch(
            x[None, :], elem.vertices[None, 0], elem.vertices[None, 1]
        )
    else:
        ok, value, _, _ = ff_triangle_derivs_batch(
            x[None, :],
            elem.vertices[None, 0],
            elem.vertices[None, 1],
            elem.vertices[None, 2],
        )
    if not ok[0]:
        return np.zeros(3)
    tr = float(np.exp(-medium.sigma_t * elem.representative_distance))
    fb = medium.sigma_s * phase.value
    return fb * tr * float(value[0]) * elem.representative_radiance


def assemble_moments(subdivision: Subdivision, medium) -> tuple:
    """Accumulate (single, multiple) moments from a subdivision.

    Returns (single, multiple, stats) where stats counts evaluated and dropped
    (degenerate) elements.  Single scattering comes from the surface ring, multiple
    scattering from the media rings; both use the same derivative assembly.
    """
    x = subdivision.center
    dim = x.size
    fb = f_bar(medium, dim)
    sigma_t = medium.sigma_t

    acc = {
        "single": _MomentAccumulator(dim),
        "multiple": _MomentAccumulator(dim),
    }
    n_active = 0
    n_dropped = 0
    for ring in subdivision.rings:
        live = np.any(ring.radiances > 0.0, axis=1)
        if not np.any(live):
            continue
        verts = ring.vertices[live]
        rad = ring.radiances[live]
        rep_pts = ring.rep_points[live]
        rep_dist = ring.rep_distances[live]
        if dim == 2:
            ok, value, grad_f, hess_f = ff_segment_derivs_batch(
                x[None, :], verts[:, 0], verts[:, 1]
            )
        else:
            ok, value, grad_f, hess_f = ff_triangle_derivs_batch(
                x[None, :], verts[:, 0], verts[:, 1], verts[:, 2]
            )
        n_active += int(live.sum())
        n_dropped += int((~ok).sum())
        if not np.any(ok):
            continue
        value, grad_f, hess_f = value[ok], grad_f[ok], hess_f[ok]
        rad = rad[ok]
        w = x[None, :] - rep_pts[ok]
        r = rep_dist[ok]
        tr = np.exp(-sigma_t * r)
        grad_t = transmittance_grad_batch(w, r, sigma_t, tr)
        hess_t = transmittance_hess_batch(w, r, sigma_t, tr)

        scalar = tr * value  # (e,)
        grad_e = tr[:, None] * grad_f + grad_t * value[:, None]  # (e, dim)
        hess_e = (
            tr[:, None, None] * hess_f
            + grad_t[:, :, None] * grad_f[:, None, :]
            + grad_f[:, :, None] * grad_t[:, None, :]
            + hess_t * value[:, None, None]
        )  # (e, dim, dim)

        kind = "single" if ring.kind == "surface" else "multiple"
        weight = fb * ring.weight
        acc[kind].L += weight * np.einsum("e,ec->c", scalar, rad)
        acc[kind].grad += weight * np.einsum("ed,ec->cd", grad_e, rad)
        acc[kind].hess += weight * np.einsum("edf,ec->cdf", hess_e, rad)

    single = acc["single"].to_moments("single")
    multiple = acc["multiple"].to_moments("multiple")
    stats = {
        "elements_evaluated": n_active,
        "elements_dropped": n_dropped,
        "dropped_fraction": (n_dropped / n_active) if n_active else 0.0,
        "star_vertices": subdivision.star_vertex_count,
    }
    return single, multiple, stats


class _MomentAccumulator:
    def __init__(self, dim: int):
        self.dim = dim
        self.L = np.zeros(3)
        self.grad = np.zeros((3, dim))
        self.hess = np.zeros((3, dim, dim))

    def to_moments(self, kind: str) -> Moments:
        for c in range(3):
            assert symmetry_defect(self.hess[c]) <= 1e-7
        hess = 0.5 * (self.hess + np.swapaxes(self.hess, -1, -2))
        return Moments(L=self.L.copy(), grad=self.grad.copy(), hess=hess, kind=kind)


def estimate_moments(
    scene: Scene,
    x: np.ndarray,
    n_angular: int | None = None,
    march_step: float = 0.1,
    rng_seed=None,
    n_inner: int = 1,
    n_light_samples: int = 16,
):
    """(single, multiple) radiance moments at x via the subdivision estimator."""
    sub = build_subdivision(
        scene,
        x,
        n_angular=n_angular,
        march_step=march_step,
        rng_seed=rng_seed,
        n_inner=n_inner,
        n_light_samples=n_light_samples,
    )
    single, multiple, _ = assemble_moments(sub, scene.medium)
    return single, multiple


# ---------------------------------------------------------------------------
# Occlusion-unaware baseline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BaselineEstimate:
    """Value + gradient of the fixed-hit-point (occlusion-unaware) estimator.

    Per-sample luminance values and gradient norms are retained for the
    gradient-magnitude radius heuristic of the baseline cache.
    """

    value: np.ndarray  # (3,)
    grad: np.ndarray  # (3, dim)
    sample_values: np.ndarray  # (n,) luminance per sample
    sample_grad_norms: np.ndarray  # (n,) luminance-gradient norm per sample
    kind: str


def baseline_estimate(
    scene: Scene,
    x: np.ndarray,
    n_angular: int | None = None,
    rng_seed=None,
    max_media_bounces: int = 2,
    n_light_samples: int = 16,
):
    """(single, multiple) occlusion-unaware estimates at x.

    Paths are sampled exactly like the reference path tracer (stratified primary
    directions, transmittance-proportional collision distances), but derivatives
    treat the sampled path as rigid: surface hit points stay fixed while x (and
    every media vertex with it) translates, so only the transmittance and the
    point-to-surface geometry term of each path's final segment differentiate.
    Occlusion changes are invisible to this estimator by construction.
    """
    x = np.asarray(x, dtype=float)
    dim = x.size
    if n_angular is None:
        n_angular = default_n_angular(dim)
    rng = np.random.default_rng(rng_seed)
    dirs = stratified_directions(dim, n_angular, rng)
    medium = scene.medium
    fb = f_bar(medium, dim)
    sigma_t, sigma_s = medium.sigma_t, medium.sigma_s

    origins = np.broadcast_to(x, (n_angular, dim)).copy()
    s, idx = trace_or_bounds(scene, origins, dirs.directions)
    hit_points = origins + s[:, None] * dirs.directions
    lo = surface_radiance_batch(scene, idx, hit_points, dirs.directions, n_light_samples)
    normals = oriented_normals(scene, idx, dirs.directions)

    def per_sample(points, hits, radiance, hit_normals, weights):
        """Value and rigid-path gradient for final segments points → hits.

        The gradient differentiates T_r·G of the last segment with the hit point
        fixed: f̄-scaled weights · L_o · [∇T_r + T_r·(n/(n·w) − dim·w/r²)], with the
        geometry-ratio term dropped at grazing incidence where it diverges.
        """
        w_vec = points - hits
        r = np.linalg.norm(w_vec, axis=1)
        r = np.where(r > 0.0, r, 1.0)
        tr = np.exp(-sigma_t * r)
        values = weights[:, None] * tr[:, None] * radiance  # (n, 3)
        grad_tr = transmittance_grad_batch(w_vec, r, sigma_t, tr)
        ndw = np.einsum("nd,nd->n", hit_normals, w_vec)
        safe = ndw > BASELINE_COS_MIN * r
        inv_ndw = np.zeros_like(ndw)
        inv_ndw[safe] = 1.0 / ndw[safe]
        grad_g_over_g = (
            hit_normals * inv_ndw[:, None] - dim * w_vec / (r**2)[:, None]
        ) * safe[:, None]
        vec = grad_tr + tr[:, None] * grad_g_over_g  # (n, dim)
        grads = weights[:, None, None] * radiance[:, :, None] * vec[:, None, :]
        return values, grads

    single_vals, single_grads = per_sample(
        origins, hit_points, lo, normals, np.full(n_angular, fb)
    )

    multiple_vals = np.zeros((n_angular, 3))
    multiple_grads = np.zeros((n_angular, 3, dim))
    n_bounce = max(0, max_media_bounces - 1)
    if sigma_t > 0.0 and sigma_s > 0.0 and n_bounce > 0:
        weight = np.full(n_angular, fb)
        alive = np.ones(n_angular, dtype=bool)
        pos, cur_dirs, cur_s = origins.copy(), dirs.directions, s.copy()
        for _ in range(n_bounce):
            t = -np.log1p(-rng.random(n_angular)) / sigma_t
            collide = alive & (t < cur_s)
            if not np.any(collide):
                break
            pos = pos + np.where(collide, t, 0.0)[:, None] * cur_dirs
            weight = weight * np.where(collide, sigma_s / sigma_t, 1.0)
            u_sec = rng.random(n_angular) if dim == 2 else rng.random((n_angular, 2))
            new_dirs = uniform_directions(dim, u_sec)
            s2 = np.zeros(n_angular)
            s2[collide], idx2 = trace_or_bounds(scene, pos[collide], new_dirs[collide])
            hits2 = pos[collide] + s2[collide, None] * new_dirs[collide]
            lo2 = surface_radiance_batch(
                scene, idx2, hits2, new_dirs[collide], n_light_samples
            )
            normals2 = oriented_normals(scene, idx2, new_dirs[collide])
            v, g = per_sample(pos[collide], hits2, lo2, normals2, weight[collide])
            multiple_vals[collide] += v
            multiple_grads[collide] += g
            alive = collide
            cur_dirs = new_dirs
            cur_s = s2
    return (
        _finalize_baseline(single_vals, single_grads, "single"),
        _finalize_baseline(multiple_vals, multiple_grads, "multiple"),
    )


def _finalize_baseline(values, grads, kind):
    lum_vals = values @ LUMINANCE_WEIGHTS
    lum_grads = np.einsum("ncd,c->nd", grads, LUMINANCE_WEIGHTS)
    return BaselineEstimate(
        value=values.mean(axis=0),
        grad=grads.mean(axis=0),
        sample_values=lum_vals,
        sample_grad_norms=np.linalg.norm(lum_grads, axis=1),
        kind=kind,
    )


def occlusion_unaware_gradient(
    scene: Scene,
    x: np.ndarray,
    n_angular: int | None = None,
    rng_seed=None,
    max_media_bounces: int = 2,
    n_light_samples: int = 16,
):
    """(single_grad, multiple_grad) of the occlusion-unaware baseline estimator."""
    single, multiple = baseline_estimate(
        scene,
        x,
        n_angular=n_angular,
        rng_seed=rng_seed,
        max_media_bounces=max_media_bounces,
        n_light_samples=n_light_samples,
    )
    return single.grad, multiple.grad
