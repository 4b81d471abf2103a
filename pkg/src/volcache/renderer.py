"""Field/camera rendering driven by radiance caches, plus reference modes and FD probes.

Two render targets exist:

* :class:`FieldGrid` (2D scenes): the image is the in-scatter source density
  S(x) = (J_single + J_multiple) · full_angle evaluated at cell centers — no camera,
  the natural way to compare estimators over a whole flatland medium.
* :class:`Camera` (3D scenes): a pinhole camera; rays accumulate marched in-scatter
  source plus the attenuated radiance of the first surface hit.

Five modes share those targets: ``ours-aniso`` / ``ours-iso`` (the subdivision
estimator cached behind Hessian-sized ellipsoids/spheres), ``baseline`` (the
occlusion-unaware estimator cached behind gradient-magnitude spheres with log-space
interpolation), ``path`` (per-point Monte Carlo), and ``quadrature`` (deterministic
reference; in 2D a shared gather grid keeps the nested integral tractable).

Every stochastic choice is seeded from (settings.seed, purpose, indices), so repeat
runs are bit-identical.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .cache import (
    RadianceCache,
    interpolate,
    log_space_interpolate,
    make_baseline_record,
    make_record,
)
from .scene import LUMINANCE_WEIGHTS, Scene, trace, trace_or_bounds
from .subdivision import baseline_estimate, estimate_moments
from .transport import (
    f_bar,
    full_angle,
    mean_surface_gather,
    path_trace_radiance,
    quadrature_radiance,
    surface_radiance_batch,
)

MODES = ("ours-aniso", "ours-iso", "baseline", "path", "quadrature")
CACHE_MODES = ("ours-aniso", "ours-iso", "baseline")


@dataclass(frozen=True)
class RenderSettings:
    """Knobs shared by populate/render; defaults favor 2D quality at modest cost."""

    mode: str = "ours-aniso"
    epsilon: float = 0.05
    spp: int = 16  # camera samples per pixel (3D targets)
    march_step: float = 0.1
    n_angular: int | None = None  # subdivision directions (None: per-dim default)
    seed: int = 0
    frozen: bool = True  # cache misses during render: compute direct, do not insert
    max_media_bounces: int = 2
    n_light_samples: int = 16
    n_inner: int = 1  # gather directions per media ring sample
    baseline_alpha: float = 1.0  # scales the baseline record radius
    path_samples_per_point: int = 256  # mode="path": MC samples per shading point
    # mode="quadrature", 2D field target: shared gather grid + per-cell rules
    quad_gather_grid: int = 96
    quad_n_secondary: int = 256
    quad_n_angular: int = 512
    quad_n_dist: int = 24
    # mode="quadrature", 3D camera target: per-point nested quadrature
    quad3d_n_angular: int = 256
    quad3d_n_dist: int = 12
    quad3d_n_secondary: int = 64

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        if self.march_step <= 0.0:
            raise ValueError("march_step must be positive")
        if self.spp < 1:
            raise ValueError("spp must be at least 1")


@dataclass(frozen=True)
class FieldGrid:
    """2D cell-center evaluation grid in display orientation (row 0 = top)."""

    bounds_min: np.ndarray
    bounds_max: np.ndarray
    nx: int
    ny: int

    def __post_init__(self):
        object.__setattr__(self, "bounds_min", np.asarray(self.bounds_min, dtype=float))
        object.__setattr__(self, "bounds_max", np.asarray(self.bounds_max, dtype=float))
        if self.bounds_min.shape != (2,) or self.bounds_max.shape != (2,):
            raise ValueError("FieldGrid bounds must be 2-vectors")
        if np.any(self.bounds_max <= self.bounds_min):
            raise ValueError("FieldGrid bounds must have positive extent")
        if self.nx < 1 or self.ny < 1:
            raise ValueError("FieldGrid resolution must be positive")

    @classmethod
    def for_scene(cls, scene: Scene, nx: int, ny: int) -> "FieldGrid":
        if scene.dim != 2:
            raise ValueError("FieldGrid targets require a 2D scene")
        return cls(scene.bounds_min, scene.bounds_max, nx, ny)

    def cell_center(self, iy: int, ix: int) -> np.ndarray:
        dx = (self.bounds_max[0] - self.bounds_min[0]) / self.nx
        dy = (self.bounds_max[1] - self.bounds_min[1]) / self.ny
        return np.array(
            [
                self.bounds_min[0] + (ix + 0.5) * dx,
                self.bounds_max[1] - (iy + 0.5) * dy,
            ]
        )

    @property
    def centers(self) -> np.ndarray:
        """(ny, nx, 2) cell centers."""
        dx = (self.bounds_max[0] - self.bounds_min[0]) / self.nx
        dy = (self.bounds_max[1] - self.bounds_min[1]) / self.ny
        xs = self.bounds_min[0] + (np.arange(self.nx) + 0.5) * dx
        ys = self.bounds_max[1] - (np.arange(self.ny) + 0.5) * dy
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx, gy], axis=-1)


@dataclass(frozen=True)
class Camera:
    """Pinhole camera for 3D scenes; `fov_degrees` is the vertical field of view."""

    position: np.ndarray
    look_at: np.ndarray
    up: np.ndarray
    fov_degrees: float
    width: int
    height: int

    def __post_init__(self):
        position = np.asarray(self.position, dtype=float)
        look_at = np.asarray(self.look_at, dtype=float)
        up = np.asarray(self.up, dtype=float)
        for name, v in (("position", position), ("look_at", look_at), ("up", up)):
            if v.shape != (3,):
                raise ValueError(f"camera {name} must be a 3-vector")
        object.__setattr__(self, "position", position)
        object.__setattr__(self, "look_at", look_at)
        object.__setattr__(self, "up", up)
        if not 0.0 < self.fov_degrees < 180.0:
            raise ValueError("fov_degrees must lie in (0, 180)")
        if self.width < 1 or self.height < 1:
            raise ValueError("camera resolution must be positive")
        forward = look_at - position
        n = np.linalg.norm(forward)
        if n == 0.0:
            raise ValueError("camera look_at must differ from position")
        forward = forward / n
        right = np.cross(forward, up)
        rn = np.linalg.norm(right)
        if rn < 1e-9:
            raise ValueError("camera up must not be parallel to the view direction")
        right = right / rn
        object.__setattr__(self, "_forward", forward)
        object.__setattr__(self, "_right", right)
        object.__setattr__(self, "_up", np.cross(right, forward))

    def rays(self, jitter: np.ndarray):
        """Primary rays for per-pixel jitters of shape (height, width, 2) in [0,1).

        Returns (origins, dirs) flattened to (height·width, 3), row-major from the
        top-left pixel.
        """
        h, w = self.height, self.width
        tan_half = np.tan(np.radians(self.fov_degrees) * 0.5)
        aspect = w / h
        px, py = np.meshgrid(np.arange(w), np.arange(h))
        u = (px + jitter[..., 0]) / w
        v = (py + jitter[..., 1]) / h
        x_ndc = (2.0 * u - 1.0) * tan_half * aspect
        y_ndc = (1.0 - 2.0 * v) * tan_half
        dirs = (
            self._forward[None, None, :]
            + x_ndc[..., None] * self._right[None, None, :]
            + y_ndc[..., None] * self._up[None, None, :]
        )
        dirs = dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)
        origins = np.broadcast_to(self.position, dirs.shape).reshape(-1, 3).copy()
        return origins, dirs.reshape(-1, 3)


# ---------------------------------------------------------------------------
# Cache orchestration
# ---------------------------------------------------------------------------


class CacheSet:
    """Paired single/multiple-scattering caches built by one estimator mode."""

    def __init__(self, scene: Scene, mode: str):
        if mode not in CACHE_MODES:
            raise ValueError(f"cache modes are {CACHE_MODES}, got {mode!r}")
        self.mode = mode
        self.scene = scene
        self.single = RadianceCache(scene.bounds_min, scene.bounds_max)
        self.multiple = RadianceCache(scene.bounds_min, scene.bounds_max)

    @property
    def record_count(self) -> int:
        return len(self.single) + len(self.multiple)

    def lookup_parts(self, x: np.ndarray):
        """Per-cache blended J at x: (single, multiple), each None without coverage."""
        if self.mode == "baseline":
            return log_space_interpolate(self.single, x), log_space_interpolate(
                self.multiple, x
            )
        return interpolate(self.single, x), interpolate(self.multiple, x)

    def lookup(self, x: np.ndarray):
        """Blended total J at x, or None when either cache lacks coverage."""
        s, m = self.lookup_parts(x)
        if s is None or m is None:
            return None
        return s + m

    def compute(self, x: np.ndarray, settings: RenderSettings, rng_seed):
        """Fresh estimates at x → (total J, (record_single, record_multiple))."""
        scene = self.scene
        if self.mode == "baseline":
            est_s, est_m = baseline_estimate(
                scene,
                x,
                n_angular=settings.n_angular,
                rng_seed=rng_seed,
                max_media_bounces=settings.max_media_bounces,
                n_light_samples=settings.n_light_samples,
            )
            rec_s = make_baseline_record(x, est_s, scene.scale, settings.baseline_alpha)
            rec_m = make_baseline_record(x, est_m, scene.scale, settings.baseline_alpha)
            return est_s.value + est_m.value, (rec_s, rec_m)
        mom_s, mom_m = estimate_moments(
            scene,
            x,
            n_angular=settings.n_angular,
            march_step=settings.march_step,
            rng_seed=rng_seed,
            n_inner=settings.n_inner,
            n_light_samples=settings.n_light_samples,
        )
        aniso = self.mode == "ours-aniso"
        rec_s = make_record(
            x, mom_s, settings.epsilon, scene.scale, scene.max_emission, anisotropic=aniso
        )
        rec_m = make_record(
            x, mom_m, settings.epsilon, scene.scale, scene.max_emission, anisotropic=aniso
        )
        return mom_s.L + mom_m.L, (rec_s, rec_m)

    def insert(self, records, which=(True, True)) -> None:
        """Insert the (single, multiple) record pair, masked by `which`.

        Coverage is tracked per cache: a point in single-scatter coverage but
        outside multiple-scatter coverage adds a record only to the multiple
        cache, so each cache's point density follows its own field.
        """
        rec_s, rec_m = records
        if which[0]:
            self.single.insert(rec_s)
        if which[1]:
            self.multiple.insert(rec_m)


def _seed(*parts) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(p) & 0xFFFFFFFF for p in parts])


def _march_points(scene: Scene, target, settings: RenderSettings):
    """Deterministic scanline order of view points used to populate caches."""
    if isinstance(target, FieldGrid):
        for iy in range(target.ny):
            for ix in range(target.nx):
                yield target.cell_center(iy, ix)
        return
    origins, dirs = target.rays(np.full((target.height, target.width, 2), 0.5))
    t_surf, _ = trace(scene, origins, dirs)
    t_in, t_out, valid = _bounds_span(scene, origins, dirs)
    t_end = np.minimum(t_surf, t_out)
    h = settings.march_step
    for i in range(origins.shape[0]):
        if not valid[i]:
            continue
        n_steps = int(np.floor((t_end[i] - t_in[i]) / h + 0.5))
        for k in range(1, n_steps + 1):
            yield origins[i] + (t_in[i] + (k - 0.5) * h) * dirs[i]


def populate_cache(scene: Scene, target, settings: RenderSettings):
    """March view points in scanline order, inserting records where coverage lacks.

    Returns (CacheSet, stats).  Deterministic for a given (scene, target, settings).
    """
    if settings.mode not in CACHE_MODES:
        raise ValueError(f"populate_cache requires a cache mode, got {settings.mode!r}")
    _check_target(scene, target)
    start = time.perf_counter()
    cache_set = CacheSet(scene, settings.mode)
    n_points = 0
    for i, x in enumerate(_march_points(scene, target, settings)):
        n_points += 1
        s, m = cache_set.lookup_parts(x)
        if s is None or m is None:
            _, records = cache_set.compute(x, settings, _seed(settings.seed, 401, i))
            cache_set.insert(records, which=(s is None, m is None))
    stats = {
        "mode": settings.mode,
        "points_marched": n_points,
        "records": cache_set.record_count,
        "records_single": len(cache_set.single),
        "records_multiple": len(cache_set.multiple),
        "seconds": time.perf_counter() - start,
    }
    return cache_set, stats


# ---------------------------------------------------------------------------
# Shading-point evaluation per mode
# ---------------------------------------------------------------------------


def _point_value(scene, x, settings, cache_set, rng_seed, stats):
    """Total J at a shading point under the active mode."""
    if settings.mode == "path":
        s, m = path_trace_radiance(
            scene,
            x,
            settings.path_samples_per_point,
            max_media_bounces=settings.max_media_bounces,
            rng_seed=rng_seed,
            n_light_samples=settings.n_light_samples,
        )
        return s + m
    if settings.mode == "quadrature":
        s, m = quadrature_radiance(
            scene,
            x,
            n_angular=settings.quad3d_n_angular,
            n_dist=settings.quad3d_n_dist,
            n_secondary=settings.quad3d_n_secondary,
            n_light_samples=settings.n_light_samples,
        )
        return s + m
    s, m = cache_set.lookup_parts(x)
    if s is not None and m is not None:
        stats["cache_hits"] += 1
        return s + m
    stats["direct_evaluations"] += 1
    value, records = cache_set.compute(x, settings, rng_seed)
    if not settings.frozen:
        cache_set.insert(records, which=(s is None, m is None))
        blended = cache_set.lookup(x)
        if blended is not None:
            return blended
    return value


def _check_target(scene: Scene, target) -> None:
    if isinstance(target, FieldGrid):
        if scene.dim != 2:
            raise ValueError("FieldGrid rendering requires a 2D scene")
    elif isinstance(target, Camera):
        if scene.dim != 3:
            raise ValueError("Camera rendering requires a 3D scene")
    else:
        raise TypeError("target must be a FieldGrid or a Camera")


def _bounds_span(scene: Scene, origins: np.ndarray, dirs: np.ndarray):
    """Per-ray medium entry/exit parameters (origins may lie outside the bounds)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (scene.bounds_min[None, :] - origins) / dirs
        t2 = (scene.bounds_max[None, :] - origins) / dirs
    near = np.minimum(t1, t2)
    far = np.maximum(t1, t2)
    near = np.where(np.isnan(near), -np.inf, near)
    far = np.where(np.isnan(far), np.inf, far)
    t_in = np.clip(near.max(axis=1), 0.0, None)
    t_out = far.min(axis=1)
    valid = t_out > t_in
    return t_in, t_out, valid


# ---------------------------------------------------------------------------
# Render entry point
# ---------------------------------------------------------------------------


def render(scene: Scene, target, settings: RenderSettings, cache_set: CacheSet = None):
    """Render the target; returns (image, stats).

    Cache modes populate a fresh cache first unless one is passed in.  Field images
    hold the in-scatter source density; camera images hold radiance.
    """
    _check_target(scene, target)
    start = time.perf_counter()
    stats = {"mode": settings.mode, "cache_hits": 0, "direct_evaluations": 0}
    if settings.mode in CACHE_MODES and cache_set is None:
        cache_set, pop_stats = populate_cache(scene, target, settings)
        stats["populate"] = pop_stats
    if cache_set is not None:
        stats["records"] = cache_set.record_count

    if isinstance(target, FieldGrid):
        image = _render_field(scene, target, settings, cache_set, stats)
    else:
        image = _render_camera(scene, target, settings, cache_set, stats)
    stats["seconds"] = time.perf_counter() - start
    return image, stats


def _render_field(scene, grid, settings, cache_set, stats):
    if settings.mode == "quadrature":
        return _quadrature_field(scene, grid, settings)
    scale = full_angle(2)
    image = np.zeros((grid.ny, grid.nx, 3))
    for iy in range(grid.ny):
        for ix in range(grid.nx):
            x = grid.cell_center(iy, ix)
            value = _point_value(
                scene, x, settings, cache_set, _seed(settings.seed, 307, iy, ix), stats
            )
            image[iy, ix] = scale * value
    return image


def _render_camera(scene, camera, settings, cache_set, stats):
    h, w = camera.height, camera.width
    sigma_t = scene.medium.sigma_t
    scale = full_angle(3)
    step = settings.march_step
    rng = np.random.default_rng(_seed(settings.seed, 101))
    image = np.zeros((h, w, 3))
    for k in range(settings.spp):
        jitter = rng.random((h, w, 2)) if settings.spp > 1 else np.full((h, w, 2), 0.5)
        origins, dirs = camera.rays(jitter)
        t_surf, idx = trace(scene, origins, dirs)
        hit_pts = origins + np.where(np.isfinite(t_surf), t_surf, 0.0)[:, None] * dirs
        lo = surface_radiance_batch(
            scene, idx, hit_pts, dirs, settings.n_light_samples
        )
        t_in, t_out, valid = _bounds_span(scene, origins, dirs)
        t_end = np.minimum(t_surf, t_out)
        sample = np.zeros((h * w, 3))
        for i in range(h * w):
            if not valid[i]:
                continue
            n_steps = int(np.floor((t_end[i] - t_in[i]) / step + 0.5))
            acc = np.zeros(3)
            for m in range(1, n_steps + 1):
                t_k = t_in[i] + (m - 0.5) * step
                y = origins[i] + t_k * dirs[i]
                j_val = _point_value(
                    scene,
                    y,
                    settings,
                    cache_set,
                    _seed(settings.seed, 211, k, i, m),
                    stats,
                )
                acc += np.exp(-sigma_t * (t_k - t_in[i])) * scale * j_val * step
            if idx[i] >= 0:
                in_len = max(0.0, t_end[i] - t_in[i])
                acc += np.exp(-sigma_t * in_len) * lo[i]
            sample[i] = acc
        # Rays missing the medium entirely but hitting a surface (none in practice:
        # surfaces live inside the bounds) would contribute unattenuated radiance.
        outside_hit = ~valid & (idx >= 0)
        sample[outside_hit] = lo[outside_hit]
        image += sample.reshape(h, w, 3)
    return image / settings.spp


# ---------------------------------------------------------------------------
# 2D deterministic quadrature field (shared gather grid)
# ---------------------------------------------------------------------------


def _gather_grid(scene: Scene, settings: RenderSettings):
    """Precompute M(y) = mean_ω T·L_o on a regular grid for bilinear reuse."""
    g = settings.quad_gather_grid
    span = scene.bounds_max - scene.bounds_min
    xs = scene.bounds_min[0] + (np.arange(g) + 0.5) * span[0] / g
    ys = scene.bounds_min[1] + (np.arange(g) + 0.5) * span[1] / g
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=-1)
    theta = (np.arange(settings.quad_n_secondary) + 0.5) * (
        2.0 * np.pi / settings.quad_n_secondary
    )
    sec = np.column_stack([np.cos(theta), np.sin(theta)])
    values = np.zeros((pts.shape[0], 3))
    chunk = max(1, (1 << 16) // settings.quad_n_secondary)
    for lo in range(0, pts.shape[0], chunk):
        sl = slice(lo, min(lo + chunk, pts.shape[0]))
        block = pts[sl]
        dirs_pp = np.broadcast_to(sec[None, :, :], (block.shape[0],) + sec.shape)
        values[sl] = mean_surface_gather(scene, block, dirs_pp, settings.n_light_samples)
    return values.reshape(g, g, 3)


def _bilinear(field: np.ndarray, scene: Scene, pts: np.ndarray) -> np.ndarray:
    """Sample a cell-centered (g, g, 3) grid over the scene bounds at pts (m, 2)."""
    g = field.shape[0]
    span = scene.bounds_max - scene.bounds_min
    fx = (pts[:, 0] - scene.bounds_min[0]) / span[0] * g - 0.5
    fy = (pts[:, 1] - scene.bounds_min[1]) / span[1] * g - 0.5
    fx = np.clip(fx, 0.0, g - 1.0)
    fy = np.clip(fy, 0.0, g - 1.0)
    x0 = np.floor(fx).astype(int)
    y0 = np.floor(fy).astype(int)
    x1 = np.minimum(x0 + 1, g - 1)
    y1 = np.minimum(y0 + 1, g - 1)
    ax = (fx - x0)[:, None]
    ay = (fy - y0)[:, None]
    return (
        field[x0, y0] * (1 - ax) * (1 - ay)
        + field[x1, y0] * ax * (1 - ay)
        + field[x0, y1] * (1 - ax) * ay
        + field[x1, y1] * ax * ay
    )


def _quadrature_field(scene: Scene, grid: FieldGrid, settings: RenderSettings):
    medium = scene.medium
    fb = f_bar(medium, 2)
    scale = full_angle(2)
    n_ang, n_dist = settings.quad_n_angular, settings.quad_n_dist
    theta = (np.arange(n_ang) + 0.5) * (2.0 * np.pi / n_ang)
    dirs = np.column_stack([np.cos(theta), np.sin(theta)])
    gather = (
        _gather_grid(scene, settings)
        if medium.sigma_s > 0.0 and medium.sigma_t > 0.0
        else None
    )

    image = np.zeros((grid.ny, grid.nx, 3))
    frac = (np.arange(n_dist) + 0.5) / n_dist
    for iy in range(grid.ny):
        for ix in range(grid.nx):
            x = grid.cell_center(iy, ix)
            origins = np.broadcast_to(x, (n_ang, 2)).copy()
            s, idx = trace_or_bounds(scene, origins, dirs)
            lo = surface_radiance_batch(
                scene,
                idx,
                origins + s[:, None] * dirs,
                dirs,
                settings.n_light_samples,
            )
            single = fb * (np.exp(-medium.sigma_t * s)[:, None] * lo).mean(axis=0)
            total = single
            if gather is not None:
                t = s[:, None] * frac[None, :]
                pts = origins[:, None, :] + t[:, :, None] * dirs[:, None, :]
                m_vals = _bilinear(gather, scene, pts.reshape(-1, 2)).reshape(
                    n_ang, n_dist, 3
                )
                integ = np.exp(-medium.sigma_t * t)[:, :, None] * medium.sigma_s * m_vals
                per_dir = (integ * (s / n_dist)[:, None, None]).sum(axis=1)
                total = total + fb * per_dir.mean(axis=0)
            image[iy, ix] = scale * total
    return image


# ---------------------------------------------------------------------------
# Finite-difference probe (common random numbers) and analysis helpers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TransportDerivativeEstimate:
    value: np.ndarray  # (3,)
    grad: np.ndarray  # (3, dim)
    hess: np.ndarray | None  # (3, dim, dim)


def fd_derivatives(
    scene: Scene,
    x: np.ndarray,
    h: float,
    n_samples: int,
    seed: int = 0,
    max_media_bounces: int = 2,
    include_hessian: bool = False,
    n_light_samples: int = 16,
):
    """Path-traced value/gradient(/Hessian) at x via central finite differences.

    Every evaluation reuses the same seed, so the sampled paths differ only through
    the shifted query point (common random numbers): the difference estimator's
    variance comes from genuinely different transport, not fresh noise.
    Returns (single, multiple) TransportDerivativeEstimate.
    """
    x = np.asarray(x, dtype=float)
    dim = x.size

    def f(p):
        return path_trace_radiance(
            scene,
            p,
            n_samples,
            max_media_bounces=max_media_bounces,
            rng_seed=seed,
            n_light_samples=n_light_samples,
        )

    base = f(x)
    plus = [f(x + h * _unit(dim, i)) for i in range(dim)]
    minus = [f(x - h * _unit(dim, i)) for i in range(dim)]

    out = []
    for part in range(2):
        value = base[part]
        grad = np.stack(
            [(plus[i][part] - minus[i][part]) / (2.0 * h) for i in range(dim)], axis=1
        )
        hess = None
        if include_hessian:
            hess = np.zeros((3, dim, dim))
            for i in range(dim):
                hess[:, i, i] = (plus[i][part] - 2.0 * value + minus[i][part]) / h**2
            for i in range(dim):
                for j in range(i + 1, dim):
                    pp = f(x + h * _unit(dim, i) + h * _unit(dim, j))[part]
                    pm = f(x + h * _unit(dim, i) - h * _unit(dim, j))[part]
                    mp = f(x - h * _unit(dim, i) + h * _unit(dim, j))[part]
                    mm = f(x - h * _unit(dim, i) - h * _unit(dim, j))[part]
                    hess[:, i, j] = hess[:, j, i] = (pp - pm - mp + mm) / (4.0 * h**2)
        out.append(TransportDerivativeEstimate(value=value, grad=grad, hess=hess))
    return out[0], out[1]


def _unit(dim: int, i: int) -> np.ndarray:
    e = np.zeros(dim)
    e[i] = 1.0
    return e


def gradient_field(scene: Scene, grid: FieldGrid, settings: RenderSettings):
    """(ny, nx, 2) luminance gradient of total J from the subdivision estimator."""
    if scene.dim != 2:
        raise ValueError("gradient_field requires a 2D scene")
    out = np.zeros((grid.ny, grid.nx, 2))
    for iy in range(grid.ny):
        for ix in range(grid.nx):
            x = grid.cell_center(iy, ix)
            mom_s, mom_m = estimate_moments(
                scene,
                x,
                n_angular=settings.n_angular,
                march_step=settings.march_step,
                rng_seed=_seed(settings.seed, 509, iy, ix),
                n_inner=settings.n_inner,
                n_light_samples=settings.n_light_samples,
            )
            total = mom_s.grad + mom_m.grad
            out[iy, ix] = LUMINANCE_WEIGHTS @ total
    return out


def error_map(image: np.ndarray, reference: np.ndarray, floor_fraction: float = 1e-6):
    """Per-pixel luminance relative error |I − R| / max(R, floor·max(R))."""
    if image.shape != reference.shape:
        raise ValueError("image and reference shapes differ")
    lum_i = image @ LUMINANCE_WEIGHTS
    lum_r = reference @ LUMINANCE_WEIGHTS
    floor = floor_fraction * float(np.max(lum_r)) if np.max(lum_r) > 0 else 1.0
    return np.abs(lum_i - lum_r) / np.maximum(np.abs(lum_r), floor)


# ---------------------------------------------------------------------------
# Image output
# ---------------------------------------------------------------------------


def write_pfm(path, image: np.ndarray) -> None:
    """Write a (h, w, 3) float image (row 0 = top) as a little-endian color PFM."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("write_pfm expects an (h, w, 3) image")
    h, w = image.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"PF\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(image[::-1].astype("<f4").tobytes())  # PFM rasters bottom-up


def read_pfm(path):
    """Read a color PFM written by write_pfm; returns (h, w, 3) with row 0 = top."""
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"PF":
            raise ValueError("not a color PFM file")
        w, h = (int(v) for v in fh.readline().split())
        scale = float(fh.readline())
        data = np.frombuffer(fh.read(), dtype="<f4" if scale < 0 else ">f4")
    if data.size != w * h * 3:
        raise ValueError("PFM payload size mismatch")
    return data.reshape(h, w, 3)[::-1].astype(np.float32)


def write_ppm(path, image: np.ndarray, exposure: float = 1.0) -> None:
    """Write a gamma-2.2 tonemapped 8-bit PPM (for quick looks, not comparisons)."""
    image = np.asarray(image, dtype=float)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("write_ppm expects an (h, w, 3) image")
    mapped = np.clip(image * exposure, 0.0, 1.0) ** (1.0 / 2.2)
    bytes8 = (mapped * 255.0 + 0.5).astype(np.uint8)
    h, w = image.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(bytes8.tobytes())
