"""Transmittance with analytic derivatives, isotropic phase, and reference estimators.

Radiometric convention used throughout the project: every media-point estimator
returns the *mean-gather source density*

    J(x) = f̄ · mean_ω L_in(x, ω),      f̄ = σ_s · phase_constant,

per RGB channel, i.e. the in-scattered radiance with the angular integral expressed
as a mean (the companion form-factor module normalizes element form factors by the
full circle/sphere, so a full unoccluded enclosure of radiance L yields J = f̄·L).
The physical in-scatter source term is σ_s · mean_ω L_in = J / phase_constant; the
renderer applies that constant factor when accumulating radiance along camera rays.

The path tracer draws its random numbers in a fixed order that does not depend on
the query point, so finite differences with a shared seed use common random numbers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import (
    Hit,
    Medium,
    Scene,
    oriented_normals,
    stratified_directions,
    trace,
    trace_or_bounds,
)

_CHUNK = 1 << 16


@dataclass(frozen=True)
class TransmittanceDerivs:
    """Transmittance between two points with its translational derivatives.

    value = exp(−σ_t·r); grad and hess are derivatives in the first argument x
    (the gather point), with the second point held fixed.
    """

    value: float
    grad: np.ndarray
    hess: np.ndarray


@dataclass(frozen=True)
class Phase:
    """Isotropic phase function, normalized over the circle (2D) or sphere (3D)."""

    dimensionality: int

    def __post_init__(self):
        if self.dimensionality not in (2, 3):
            raise ValueError("dimensionality must be 2 or 3")

    @property
    def value(self) -> float:
        return 1.0 / full_angle(self.dimensionality)


def full_angle(dim: int) -> float:
    """Measure of the full direction space: 2π (circle) or 4π (sphere)."""
    if dim == 2:
        return 2.0 * np.pi
    if dim == 3:
        return 4.0 * np.pi
    raise ValueError("dim must be 2 or 3")


def phase_eval(phase: Phase) -> float:
    return phase.value


def f_bar(medium: Medium, dim: int) -> float:
    """Merged scattering factor f̄ = σ_s · phase constant."""
    return medium.sigma_s * Phase(dim).value


def transmittance(medium: Medium, r) -> np.ndarray:
    return np.exp(-medium.sigma_t * np.asarray(r, dtype=float))


def transmittance_derivs(x: np.ndarray, y: np.ndarray, medium: Medium) -> TransmittanceDerivs:
    """Closed-form T_r = exp(−σ_t‖x−y‖) with gradient and Hessian in x.

    With w = x − y, r = ‖w‖:
        ∇T_r  = −σ_t (w/r) T_r
        H T_r = −σ_t [ I/r − w wᵀ/r³ − σ_t w wᵀ/r² ] T_r
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = x - y
    r = float(np.linalg.norm(w))
    if r == 0.0:
        raise ValueError("transmittance derivatives are singular at coincident points")
    sig = medium.sigma_t
    t = float(np.exp(-sig * r))
    grad = -sig * (w / r) * t
    ww = np.outer(w, w)
    hess = -sig * (np.eye(x.size) / r - ww / r**3 - sig * ww / r**2) * t
    return TransmittanceDerivs(value=t, grad=grad, hess=0.5 * (hess + hess.T))


def transmittance_grad_batch(w: np.ndarray, r: np.ndarray, sigma_t: float, t: np.ndarray) -> np.ndarray:
    """Batched ∇T_r for offsets w (m, d), distances r (m,), values t (m,)."""
    return -sigma_t * w / r[:, None] * t[:, None]


def transmittance_hess_batch(w: np.ndarray, r: np.ndarray, sigma_t: float, t: np.ndarray) -> np.ndarray:
    """Batched H T_r, shape (m, d, d)."""
    d = w.shape[1]
    ww = w[:, :, None] * w[:, None, :]
    eye = np.eye(d)[None, :, :]
    core = eye / r[:, None, None] - ww / (r**3)[:, None, None] - sigma_t * ww / (r**2)[:, None, None]
    return -sigma_t * core * t[:, None, None]


# ---------------------------------------------------------------------------
# Surface shading
# ---------------------------------------------------------------------------


def _emitter_samples(scene: Scene, n_per_emitter: int):
    """Deterministic midpoint sample points on every emitting surface.

    Returns (points (k, n, d), weights (k, n), radiances (k, 3), normals (k, d))
    for the k emitters; weights carry the length/area measure.
    """
    emitters = [s for s in scene.surfaces if s.is_emitter]
    if not emitters:
        return None
    dim = scene.dim
    pts, wts, rads, nrms = [], [], [], []
    for s in emitters:
        if dim == 2:
            a, b = s.vertices
            u = (np.arange(n_per_emitter) + 0.5) / n_per_emitter
            p = a[None, :] + u[:, None] * (b - a)[None, :]
            length = float(np.linalg.norm(b - a))
            w = np.full(n_per_emitter, length / n_per_emitter)
            e = b - a
            n = np.array([-e[1], e[0]]) / length
        else:
            m = max(2, int(round(np.sqrt(n_per_emitter))))
            u, v = np.meshgrid(
                (np.arange(m) + 0.5) / m, (np.arange(m) + 0.5) / m, indexing="ij"
            )
            u, v = u.ravel(), v.ravel()
            fold = u + v > 1.0
            u[fold], v[fold] = 1.0 - u[fold], 1.0 - v[fold]
            v0, v1, v2 = s.vertices
            p = v0[None, :] + u[:, None] * (v1 - v0)[None, :] + v[:, None] * (v2 - v0)[None, :]
            area = 0.5 * float(np.linalg.norm(np.cross(v1 - v0, v2 - v0)))
            w = np.full(m * m, area / (m * m))
            n = np.cross(v1 - v0, v2 - v0)
            n = n / np.linalg.norm(n)
        pts.append(p)
        wts.append(w)
        rads.append(s.emission)
        nrms.append(n)
    n_max = max(p.shape[0] for p in pts)
    k = len(pts)
    P = np.zeros((k, n_max, dim))
    W = np.zeros((k, n_max))
    for i, (p, w) in enumerate(zip(pts, wts)):
        P[i, : p.shape[0]] = p
        W[i, : w.shape[0]] = w
    return P, W, np.array(rads), np.array(nrms)


def direct_lighting(
    scene: Scene,
    points: np.ndarray,
    normals: np.ndarray,
    n_light_samples: int = 16,
) -> np.ndarray:
    """Lambertian-reflected direct illumination at surface points (batch).

    Deterministic area quadrature over every emitter with transmittance and
    visibility; returns irradiance-style incident flux already divided by the
    Lambertian normalization (π in 3D, 2 in 2D), i.e. the reflected radiance for
    albedo 1.  Multiply by the surface albedo for the outgoing radiance.
    """
    points = np.atleast_2d(points)
    normals = np.atleast_2d(normals)
    m, dim = points.shape
    out = np.zeros((m, 3))
    samples = _emitter_samples(scene, n_light_samples)
    if samples is None:
        return out
    P, W, E, N = samples
    sigma_t = scene.medium.sigma_t
    offset = 1e-6 * scene.scale
    origin = points + offset * normals
    for k in range(P.shape[0]):
        for j in range(P.shape[1]):
            if W[k, j] == 0.0:
                continue
            to_light = P[k, j][None, :] - origin
            r = np.linalg.norm(to_light, axis=1)
            ok = r > offset
            d = np.zeros_like(to_light)
            d[ok] = to_light[ok] / r[ok, None]
            cos_p = np.clip(np.einsum("md,md->m", normals, d), 0.0, None)
            cos_q = np.abs(d @ N[k])  # two-sided emitter
            live = ok & (cos_p > 0.0) & (cos_q > 0.0)
            if not np.any(live):
                continue
            t_hit, _ = trace(scene, origin[live], d[live])
            visible = t_hit >= r[live] * (1.0 - 1e-6)
            geom = np.zeros(m)
            idx = np.flatnonzero(live)[visible]
            geom[idx] = (
                cos_p[idx]
                * cos_q[idx]
                / np.maximum(r[idx], offset) ** (dim - 1)
                * np.exp(-sigma_t * r[idx])
                * W[k, j]
            )
            out += geom[:, None] * E[k][None, :]
    return out / (np.pi if dim == 3 else 2.0)


def surface_radiance_batch(
    scene: Scene,
    idx: np.ndarray,
    points: np.ndarray,
    dirs: np.ndarray,
    n_light_samples: int = 16,
) -> np.ndarray:
    """Outgoing radiance for a batch of hits (emission + one-bounce Lambertian).

    `idx` are surface indices (−1 = bounds termination, radiance 0); `dirs` are the
    incoming ray directions used to orient shading normals.
    """
    idx = np.asarray(idx)
    out = np.zeros((idx.size, 3))
    hit = idx >= 0
    if not np.any(hit):
        return out
    out[hit] = scene.emission_array[idx[hit]]
    if scene.has_reflective_surfaces:
        albedo = scene.albedo_array[idx[hit]]
        needs = np.any(albedo > 0.0, axis=1)
        if np.any(needs):
            sub = np.flatnonzero(hit)[needs]
            normals = oriented_normals(scene, idx[sub], dirs[sub])
            gathered = direct_lighting(scene, points[sub], normals, n_light_samples)
            out[sub] += scene.albedo_array[idx[sub]] * gathered
    return out


def surface_outgoing_radiance(hit: Hit, scene: Scene, n_light_samples: int = 16) -> np.ndarray:
    """Outgoing radiance at a hit: emission plus Lambertian first-bounce direct light."""
    incoming = -hit.normal  # any direction on the viewer side works for Lambertian
    return surface_radiance_batch(
        scene,
        np.array([hit.surface_index]),
        hit.point[None, :],
        incoming[None, :],
        n_light_samples,
    )[0]


# ---------------------------------------------------------------------------
# Direction sampling helpers
# ---------------------------------------------------------------------------


def uniform_directions(dim: int, u: np.ndarray) -> np.ndarray:
    """Map uniform variates to uniform unit directions.

    2D consumes u of shape (m,); 3D consumes u of shape (m, 2).
    """
    if dim == 2:
        theta = 2.0 * np.pi * u
        return np.column_stack([np.cos(theta), np.sin(theta)])
    z = 1.0 - 2.0 * u[:, 0]
    phi = 2.0 * np.pi * u[:, 1]
    s = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    return np.column_stack([s * np.cos(phi), s * np.sin(phi), z])


def mean_surface_gather(
    scene: Scene,
    points: np.ndarray,
    dirs_per_point: np.ndarray,
    n_light_samples: int = 16,
) -> np.ndarray:
    """Monte-Carlo/midpoint estimate of M(y) = mean_ω T_r(y, y_s) L_o(y_s).

    `dirs_per_point` has shape (m, n, d): n gather directions per point; the mean
    runs over them.  Returns (m, 3).
    """
    m, n, dim = dirs_per_point.shape
    origins = np.repeat(points, n, axis=0)
    dirs = dirs_per_point.reshape(-1, dim)
    total = np.zeros((m * n, 3))
    for lo in range(0, m * n, _CHUNK):
        sl = slice(lo, min(lo + _CHUNK, m * n))
        s, idx = trace_or_bounds(scene, origins[sl], dirs[sl])
        lo_rad = surface_radiance_batch(
            scene, idx, origins[sl] + s[:, None] * dirs[sl], dirs[sl], n_light_samples
        )
        total[sl] = np.exp(-scene.medium.sigma_t * s)[:, None] * lo_rad
    return total.reshape(m, n, 3).mean(axis=1)


# ---------------------------------------------------------------------------
# Path-traced reference
# ---------------------------------------------------------------------------


def path_trace_radiance(
    scene: Scene,
    x: np.ndarray,
    n_samples: int,
    max_media_bounces: int = 2,
    rng_seed=None,
    n_light_samples: int = 16,
):
    """Unbiased Monte Carlo estimate of (J_single, J_multiple) at a media point.

    Per primary direction (uniform): the single-scattering term gathers surface
    radiance explicitly through closed-form transmittance; the multiple-scattering
    term samples collision distances proportional to transmittance and scatters up
    to `max_media_bounces` media events (the event at x included), gathering surface
    radiance explicitly at each media vertex.  Random numbers are drawn in a fixed
    order independent of x (common random numbers across finite-difference offsets).
    """
    x = np.asarray(x, dtype=float)
    dim = x.size
    if not scene.contains(x):
        raise ValueError("query point lies outside the medium bounds")
    medium = scene.medium
    fbar = f_bar(medium, dim)
    sigma_t, sigma_s = medium.sigma_t, medium.sigma_s
    rng = np.random.default_rng(rng_seed)
    n_bounce = max(0, max_media_bounces - 1)

    single = np.zeros(3)
    multiple = np.zeros(3)
    for lo in range(0, n_samples, _CHUNK):
        c = min(_CHUNK, n_samples - lo)
        # Fixed draw order: primary dir, then per bounce (distance, secondary dir).
        u_primary = rng.random(c) if dim == 2 else rng.random((c, 2))
        u_dist = rng.random((n_bounce, c))
        u_sec = rng.random((n_bounce, c)) if dim == 2 else rng.random((n_bounce, c, 2))

        dirs = uniform_directions(dim, u_primary)
        origins = np.broadcast_to(x, (c, dim)).copy()
        s, idx = trace_or_bounds(scene, origins, dirs)
        lo_rad = surface_radiance_batch(
            scene, idx, origins + s[:, None] * dirs, dirs, n_light_samples
        )
        single += fbar * (np.exp(-sigma_t * s)[:, None] * lo_rad).sum(axis=0)

        if sigma_t > 0.0 and sigma_s > 0.0:
            weight = np.full(c, fbar)
            alive = np.ones(c, dtype=bool)
            pos, cur_dirs, cur_s = origins, dirs, s
            for b in range(n_bounce):
                t = -np.log1p(-u_dist[b]) / sigma_t
                collide = alive & (t < cur_s)
                if not np.any(collide):
                    break
                pos = pos + np.where(collide, t, 0.0)[:, None] * cur_dirs
                weight = weight * np.where(collide, sigma_s / sigma_t, 1.0)
                new_dirs = uniform_directions(dim, u_sec[b])
                s2 = np.zeros(c)
                s2[collide], idx2 = trace_or_bounds(
                    scene, pos[collide], new_dirs[collide]
                )
                lo2 = surface_radiance_batch(
                    scene,
                    idx2,
                    pos[collide] + s2[collide, None] * new_dirs[collide],
                    new_dirs[collide],
                    n_light_samples,
                )
                multiple += (
                    weight[collide, None] * np.exp(-sigma_t * s2[collide])[:, None] * lo2
                ).sum(axis=0)
                alive = collide
                cur_dirs = new_dirs
                cur_s = s2
    return single / n_samples, multiple / n_samples


# ---------------------------------------------------------------------------
# Deterministic quadrature oracle
# ---------------------------------------------------------------------------


def quadrature_radiance(
    scene: Scene,
    x: np.ndarray,
    n_angular: int = 1024,
    n_dist: int = 48,
    n_secondary: int = 128,
    n_light_samples: int = 16,
):
    """Deterministic (J_single, J_multiple) via midpoint quadrature.

    Single scattering: angular midpoint rule with closed-form transmittance.
    Multiple scattering (two media events): angular midpoint rule × marched distance
    midpoints × a nested angular gather at each marched point.  Deliberately
    independent of the subdivision estimator; used as the transport oracle.
    """
    x = np.asarray(x, dtype=float)
    dim = x.size
    medium = scene.medium
    fbar = f_bar(medium, dim)
    if dim == 2:
        theta = (np.arange(n_angular) + 0.5) * (2.0 * np.pi / n_angular)
        dirs = np.column_stack([np.cos(theta), np.sin(theta)])
    else:
        dirs = stratified_directions(3, n_angular, jitter=False).directions
    origins = np.broadcast_to(x, (dirs.shape[0], dim)).copy()
    s, idx = trace_or_bounds(scene, origins, dirs)
    lo_rad = surface_radiance_batch(
        scene, idx, origins + s[:, None] * dirs, dirs, n_light_samples
    )
    single = fbar * (np.exp(-medium.sigma_t * s)[:, None] * lo_rad).mean(axis=0)

    multiple = np.zeros(3)
    if medium.sigma_s > 0.0 and medium.sigma_t > 0.0:
        # March each primary direction; gather the one-bounce surface mean at each
        # midpoint with a nested angular rule.
        frac = (np.arange(n_dist) + 0.5) / n_dist
        t = s[:, None] * frac[None, :]  # (n_angular, n_dist)
        dt = (s / n_dist)[:, None]
        pts = origins[:, None, :] + t[:, :, None] * dirs[:, None, :]
        pts_flat = pts.reshape(-1, dim)
        if dim == 2:
            theta2 = (np.arange(n_secondary) + 0.5) * (2.0 * np.pi / n_secondary)
            sec = np.column_stack([np.cos(theta2), np.sin(theta2)])
        else:
            sec = stratified_directions(3, n_secondary, jitter=False).directions
        m_vals = np.zeros((pts_flat.shape[0], 3))
        step = max(1, _CHUNK // n_secondary)
        for lo in range(0, pts_flat.shape[0], step):
            sl = slice(lo, min(lo + step, pts_flat.shape[0]))
            block = pts_flat[sl]
            dirs_pp = np.broadcast_to(
                sec[None, :, :], (block.shape[0],) + sec.shape
            )
            m_vals[sl] = mean_surface_gather(scene, block, dirs_pp, n_light_samples)
        m_vals = m_vals.reshape(n_angular, n_dist, 3)
        integrand = (
            np.exp(-medium.sigma_t * t)[:, :, None] * medium.sigma_s * m_vals
        )
        per_dir = (integrand * dt[:, :, None]).sum(axis=1)
        multiple = fbar * per_dir.mean(axis=0)
    return single, multiple
