"""Scene representation: 2D segments / 3D triangles, emitters, homogeneous medium.

A scene is a flat list of one-sided-geometry, two-sided-shading surfaces (segments in
2D, triangles in 3D) inside an axis-aligned bounding box filled with a homogeneous
isotropic medium.  The box also acts as a black far surface: rays that escape all
geometry terminate on the bounds with zero radiance, which keeps every gather bounded.

Batch ray kernels (`trace`, `bounds_exit`) are the workhorses for everything
performance-critical; the scalar `intersect` is a thin wrapper over them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

#: Relative nudge applied to ray starts so surfaces do not shadow themselves.
T_EPS_REL = 1e-6

LUMINANCE_WEIGHTS = np.array([0.2126, 0.7152, 0.0722])


class SceneFormatError(ValueError):
    """Raised for malformed scene files (unknown fields, bad shapes, bad values)."""


def _as_rgb(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(3, float(arr))
    if arr.shape != (3,):
        raise SceneFormatError(f"{name} must be a scalar or a 3-vector")
    return arr


@dataclass(frozen=True)
class Medium:
    """Homogeneous isotropic medium: scattering and absorption coefficients."""

    sigma_s: float
    sigma_a: float

    def __post_init__(self):
        if self.sigma_s < 0.0 or self.sigma_a < 0.0:
            raise ValueError("medium coefficients must be non-negative")

    @property
    def sigma_t(self) -> float:
        return self.sigma_s + self.sigma_a


@dataclass(frozen=True)
class Surface:
    """A segment (2D) or triangle (3D) with Lambertian emission and reflectance.

    Shading is two-sided: emission and albedo apply to whichever side faces the
    viewer; hit normals are always oriented against the incoming ray.
    """

    vertices: np.ndarray  # (2, 2) segment endpoints or (3, 3) triangle vertices
    emission: np.ndarray = field(default_factory=lambda: np.zeros(3))
    albedo: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=float)
        if verts.shape not in ((2, 2), (3, 3)):
            raise SceneFormatError(
                "vertices must be 2 points in 2D (segment) or 3 points in 3D (triangle)"
            )
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "emission", _as_rgb(self.emission, "emission"))
        object.__setattr__(self, "albedo", _as_rgb(self.albedo, "albedo"))
        if np.any(self.emission < 0.0):
            raise SceneFormatError("emission must be non-negative")
        if np.any(self.albedo < 0.0) or np.any(self.albedo > 1.0):
            raise SceneFormatError("albedo must lie in [0, 1]")
        if self.dim == 2:
            if np.linalg.norm(verts[1] - verts[0]) == 0.0:
                raise SceneFormatError("segment endpoints must be distinct")
        else:
            area2 = np.linalg.norm(np.cross(verts[1] - verts[0], verts[2] - verts[0]))
            if area2 <= 0.0:
                raise SceneFormatError("triangle must have positive area")

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def is_emitter(self) -> bool:
        return bool(np.any(self.emission > 0.0))


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_max: float = np.inf

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=float)
        direction = np.asarray(self.direction, dtype=float)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "direction", direction)
        if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")
        if not self.t_max > 0.0:
            raise ValueError("t_max must be positive")


@dataclass(frozen=True)
class Hit:
    t: float
    point: np.ndarray
    normal: np.ndarray
    surface: Surface
    surface_index: int


class _Packed2D:
    def __init__(self, surfaces):
        self.a = np.array([s.vertices[0] for s in surfaces]).reshape(-1, 2)
        self.b = np.array([s.vertices[1] for s in surfaces]).reshape(-1, 2)
        self.edge = self.b - self.a
        lengths = np.linalg.norm(self.edge, axis=1)
        self.normal = np.column_stack([-self.edge[:, 1], self.edge[:, 0]]) / lengths[:, None]
        self.length = lengths


class _Packed3D:
    def __init__(self, surfaces):
        verts = np.array([s.vertices for s in surfaces]).reshape(-1, 3, 3)
        self.v0 = verts[:, 0]
        self.e1 = verts[:, 1] - verts[:, 0]
        self.e2 = verts[:, 2] - verts[:, 0]
        n = np.cross(self.e1, self.e2)
        norms = np.linalg.norm(n, axis=1)
        self.normal = n / norms[:, None]
        self.area = 0.5 * norms


@dataclass
class Scene:
    """Immutable after construction; all query operations are read-only."""

    surfaces: tuple
    medium: Medium
    bounds_min: np.ndarray
    bounds_max: np.ndarray

    def __post_init__(self):
        self.surfaces = tuple(self.surfaces)
        self.bounds_min = np.asarray(self.bounds_min, dtype=float)
        self.bounds_max = np.asarray(self.bounds_max, dtype=float)
        if self.bounds_min.shape != self.bounds_max.shape or self.bounds_min.ndim != 1:
            raise SceneFormatError("bounds min/max must be vectors of equal length")
        dim = self.bounds_min.size
        if dim not in (2, 3):
            raise SceneFormatError("dimensionality must be 2 or 3")
        if np.any(self.bounds_max <= self.bounds_min):
            raise SceneFormatError("bounds max must exceed min on every axis")
        pad = 1e-9 * self.scale
        for i, s in enumerate(self.surfaces):
            if s.dim != dim:
                raise SceneFormatError(f"surface {i} dimensionality mismatch")
            if np.any(s.vertices < self.bounds_min - pad) or np.any(
                s.vertices > self.bounds_max + pad
            ):
                raise SceneFormatError(f"surface {i} lies outside the scene bounds")

    @property
    def dim(self) -> int:
        return self.bounds_min.size

    @property
    def scale(self) -> float:
        """Scene scale: the bounding-box diagonal; all relative epsilons reference it."""
        return float(np.linalg.norm(self.bounds_max - self.bounds_min))

    @property
    def max_emission(self) -> float:
        if not self.surfaces:
            return 0.0
        return float(max(np.max(s.emission) for s in self.surfaces))

    @cached_property
    def emission_array(self) -> np.ndarray:
        if not self.surfaces:
            return np.zeros((0, 3))
        return np.array([s.emission for s in self.surfaces])

    @cached_property
    def albedo_array(self) -> np.ndarray:
        if not self.surfaces:
            return np.zeros((0, 3))
        return np.array([s.albedo for s in self.surfaces])

    @cached_property
    def _packed(self):
        if not self.surfaces:
            return None
        return _Packed2D(self.surfaces) if self.dim == 2 else _Packed3D(self.surfaces)

    @property
    def has_reflective_surfaces(self) -> bool:
        return bool(self.surfaces) and bool(np.any(self.albedo_array > 0.0))

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Inside-or-on-bounds test for an (m, dim) array (or a single point)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        eps = 1e-12 * self.scale
        ok = np.all(
            (pts >= self.bounds_min - eps) & (pts <= self.bounds_max + eps), axis=1
        )
        return ok if np.asarray(points).ndim == 2 else bool(ok[0])


# ---------------------------------------------------------------------------
# Ray kernels
# ---------------------------------------------------------------------------


def _trace_2d(packed: _Packed2D, origins, dirs, t_eps):
    ao = packed.a[None, :, :] - origins[:, None, :]  # (m, k, 2)
    e = packed.edge[None, :, :]
    denom = dirs[:, None, 0] * e[:, :, 1] - dirs[:, None, 1] * e[:, :, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (ao[:, :, 0] * e[:, :, 1] - ao[:, :, 1] * e[:, :, 0]) / denom
        u = (ao[:, :, 0] * dirs[:, None, 1] - ao[:, :, 1] * dirs[:, None, 0]) / denom
    valid = (np.abs(denom) > 0.0) & (u >= 0.0) & (u <= 1.0) & (t > t_eps)
    t = np.where(valid, t, np.inf)
    idx = np.argmin(t, axis=1)
    best = t[np.arange(t.shape[0]), idx]
    idx = np.where(np.isfinite(best), idx, -1)
    return best, idx.astype(np.int64)


def _trace_3d(packed: _Packed3D, origins, dirs, t_eps):
    e1 = packed.e1[None, :, :]
    e2 = packed.e2[None, :, :]
    pvec = np.cross(dirs[:, None, :], e2)  # (m, k, 3)
    det = np.einsum("mkc,mkc->mk", np.broadcast_arrays(e1, pvec)[0], pvec)
    tvec = origins[:, None, :] - packed.v0[None, :, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / det
        u = np.einsum("mkc,mkc->mk", tvec, pvec) * inv
        qvec = np.cross(tvec, e1)
        v = np.einsum("mkc,mkc->mk", np.broadcast_arrays(dirs[:, None, :], qvec)[0], qvec) * inv
        t = np.einsum("mkc,mkc->mk", np.broadcast_arrays(e2, qvec)[0], qvec) * inv
        # Parallel rays (det == 0) produce inf/NaN coordinates; the comparisons
        # below evaluate False for them, and the det/finite terms mask the rest.
        valid = (
            np.isfinite(t)
            & (np.abs(det) > 0.0)
            & (u >= 0.0)
            & (v >= 0.0)
            & (u + v <= 1.0)
            & (t > t_eps)
        )
    t = np.where(valid, t, np.inf)
    idx = np.argmin(t, axis=1)
    best = t[np.arange(t.shape[0]), idx]
    idx = np.where(np.isfinite(best), idx, -1)
    return best, idx.astype(np.int64)


def trace(scene: Scene, origins: np.ndarray, dirs: np.ndarray, t_max=None):
    """Nearest-surface hit for a batch of rays.

    Returns (t, index): distance and surface index per ray, with t = inf and
    index = -1 for misses.  Hits closer than 1e-6 of the scene scale are ignored
    (self-shadowing guard).
    """
    origins = np.atleast_2d(np.asarray(origins, dtype=float))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    t_eps = T_EPS_REL * scene.scale
    if scene._packed is None:
        t = np.full(origins.shape[0], np.inf)
        idx = np.full(origins.shape[0], -1, dtype=np.int64)
    elif scene.dim == 2:
        t, idx = _trace_2d(scene._packed, origins, dirs, t_eps)
    else:
        t, idx = _trace_3d(scene._packed, origins, dirs, t_eps)
    if t_max is not None:
        over = t > np.asarray(t_max)
        t = np.where(over, np.inf, t)
        idx = np.where(over, -1, idx)
    return t, idx


def bounds_exit(scene: Scene, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Distance at which each ray (starting inside the bounds) exits the box."""
    origins = np.atleast_2d(np.asarray(origins, dtype=float))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (scene.bounds_min[None, :] - origins) / dirs
        t2 = (scene.bounds_max[None, :] - origins) / dirs
    t_far = np.where(np.isnan(t1), np.inf, np.maximum(t1, t2))
    return np.min(t_far, axis=1)


def trace_or_bounds(scene: Scene, origins: np.ndarray, dirs: np.ndarray):
    """Distance to the first surface, or to the bounds box where nothing is hit.

    Returns (s, index) with index = -1 for bounds terminations.
    """
    t, idx = trace(scene, origins, dirs)
    t_box = bounds_exit(scene, origins, dirs)
    miss = ~np.isfinite(t)
    s = np.where(miss, t_box, t)
    return s, idx


def oriented_normals(scene: Scene, idx: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Surface normals for hit indices, flipped to face against the ray direction.

    Entries with idx < 0 (bounds hits) get a zero normal.
    """
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    normals = np.zeros_like(dirs)
    hit = idx >= 0
    if scene._packed is not None and np.any(hit):
        n = scene._packed.normal[idx[hit]]
        flip = np.sign(np.einsum("mc,mc->m", n, dirs[hit]))
        flip = np.where(flip == 0.0, 1.0, flip)
        normals[hit] = -n * flip[:, None]
    return normals


def intersect(scene: Scene, ray: Ray) -> Hit | None:
    """Nearest hit for a single ray, or None for a miss."""
    t, idx = trace(scene, ray.origin[None, :], ray.direction[None, :], t_max=ray.t_max)
    if idx[0] < 0:
        return None
    i = int(idx[0])
    point = ray.origin + t[0] * ray.direction
    normal = oriented_normals(scene, np.array([i]), ray.direction[None, :])[0]
    return Hit(t=float(t[0]), point=point, normal=normal, surface=scene.surfaces[i], surface_index=i)


# ---------------------------------------------------------------------------
# Stratified directions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DirectionSet:
    """One jittered unit direction per equal-measure stratum, plus connectivity.

    `adjacency` lists index pairs (2D) or triples (3D) of strata whose samples are
    joined into subdivision elements; in 3D it is the watertight spherical Delaunay
    triangulation of the sampled directions (their convex hull), whose radial
    projection tiles the sphere exactly once regardless of jitter.
    """

    dim: int
    directions: np.ndarray  # (n, dim)
    adjacency: np.ndarray  # (E, 2) or (E, 3) int
    stratum_measure: float  # equal angle (2D, rad) or solid angle (3D, sr)

    @property
    def n(self) -> int:
        return self.directions.shape[0]


def _grid_shape_3d(n: int):
    best = None
    target = np.sqrt(n / 2.0)
    for rows in range(2, int(np.sqrt(n)) + 1):
        if n % rows:
            continue
        cols = n // rows
        if cols < 3:
            continue
        if best is None or abs(rows - target) < abs(best[0] - target):
            best = (rows, cols)
    if best is None:
        raise ValueError(
            f"n={n} is not expressible as rows x cols with rows >= 2 and cols >= 3"
        )
    return best


def _triangulate_sphere(directions: np.ndarray) -> np.ndarray:
    """Spherical Delaunay triangulation of unit vectors via their convex hull.

    Every point on the unit sphere is an extreme point, so the hull keeps all of
    them, and radial projection of the hull boundary tiles the sphere exactly once
    for any point placement — a fixed grid triangulation, by contrast, folds under
    per-cell jitter and double-counts solid angle.
    """
    from scipy.spatial import ConvexHull

    hull = ConvexHull(directions, qhull_options="Qt")
    return np.asarray(hull.simplices, dtype=np.int64)


def stratified_directions(
    dim: int, n: int, rng_seed=None, jitter: bool = True
) -> DirectionSet:
    """Equal-angle (2D) / equal-solid-angle (3D) stratified unit directions.

    One direction is drawn per stratum (jittered when `jitter`, stratum centers
    otherwise). 2D strata are `n` equal arcs with cyclic adjacency; 3D strata form a
    rows×cols grid, uniform in z (equal area) times equal azimuth, with adjacency
    from the spherical Delaunay triangulation of the drawn directions.
    """
    rng = np.random.default_rng(rng_seed)
    if dim == 2:
        if n < 3:
            raise ValueError("2D stratification needs n >= 3")
        xi = rng.random(n) if jitter else np.full(n, 0.5)
        theta = (np.arange(n) + xi) * (2.0 * np.pi / n)
        directions = np.column_stack([np.cos(theta), np.sin(theta)])
        adjacency = np.column_stack([np.arange(n), (np.arange(n) + 1) % n])
        return DirectionSet(2, directions, adjacency, 2.0 * np.pi / n)
    if dim == 3:
        rows, cols = _grid_shape_3d(n)
        u = rng.random((rows, cols)) if jitter else np.full((rows, cols), 0.5)
        v = rng.random((rows, cols)) if jitter else np.full((rows, cols), 0.5)
        r_idx, c_idx = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
        z = 1.0 - 2.0 * (r_idx + u) / rows
        phi = (c_idx + v) * (2.0 * np.pi / cols)
        s = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
        directions = np.stack(
            [s * np.cos(phi), s * np.sin(phi), z], axis=-1
        ).reshape(-1, 3)
        adjacency = _triangulate_sphere(directions)
        return DirectionSet(3, directions, adjacency, 4.0 * np.pi / n)
    raise ValueError("dim must be 2 or 3")


# ---------------------------------------------------------------------------
# Scene file I/O
# ---------------------------------------------------------------------------

_TOP_KEYS = {"dimensionality", "medium", "bounds", "surfaces"}
_MEDIUM_KEYS = {"sigma_s", "sigma_a"}
_BOUNDS_KEYS = {"min", "max"}
_SURFACE_KEYS = {"vertices", "emission", "albedo"}


def scene_from_dict(data: dict) -> Scene:
    if not isinstance(data, dict):
        raise SceneFormatError("scene file must contain a JSON object")
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise SceneFormatError(f"unknown scene fields: {sorted(unknown)}")
    for key in _TOP_KEYS:
        if key not in data:
            raise SceneFormatError(f"missing scene field: {key}")

    dim = data["dimensionality"]
    if dim not in (2, 3):
        raise SceneFormatError("dimensionality must be 2 or 3")

    med = data["medium"]
    if not isinstance(med, dict) or set(med) - _MEDIUM_KEYS:
        raise SceneFormatError("medium must contain exactly sigma_s and sigma_a")
    try:
        medium = Medium(float(med.get("sigma_s", 0.0)), float(med.get("sigma_a", 0.0)))
    except ValueError as exc:
        raise SceneFormatError(str(exc)) from exc

    bounds = data["bounds"]
    if not isinstance(bounds, dict) or set(bounds) != _BOUNDS_KEYS:
        raise SceneFormatError("bounds must contain exactly min and max")
    bounds_min = np.asarray(bounds["min"], dtype=float)
    bounds_max = np.asarray(bounds["max"], dtype=float)
    if bounds_min.shape != (dim,) or bounds_max.shape != (dim,):
        raise SceneFormatError("bounds min/max must match the dimensionality")

    raw_surfaces = data["surfaces"]
    if not isinstance(raw_surfaces, list):
        raise SceneFormatError("surfaces must be a list")
    surfaces = []
    for i, raw in enumerate(raw_surfaces):
        if not isinstance(raw, dict):
            raise SceneFormatError(f"surface {i} must be an object")
        unknown = set(raw) - _SURFACE_KEYS
        if unknown:
            raise SceneFormatError(f"surface {i} has unknown fields: {sorted(unknown)}")
        if "vertices" not in raw:
            raise SceneFormatError(f"surface {i} is missing vertices")
        verts = np.asarray(raw["vertices"], dtype=float)
        if verts.ndim != 2 or verts.shape[1] != dim:
            raise SceneFormatError(f"surface {i} vertices must be points of dim {dim}")
        surfaces.append(
            Surface(
                vertices=verts,
                emission=_as_rgb(raw.get("emission", 0.0), f"surface {i} emission"),
                albedo=_as_rgb(raw.get("albedo", 0.0), f"surface {i} albedo"),
            )
        )
    return Scene(
        surfaces=tuple(surfaces),
        medium=medium,
        bounds_min=bounds_min,
        bounds_max=bounds_max,
    )


def scene_to_dict(scene: Scene) -> dict:
    return {
        "dimensionality": scene.dim,
        "medium": {"sigma_s": scene.medium.sigma_s, "sigma_a": scene.medium.sigma_a},
        "bounds": {
            "min": scene.bounds_min.tolist(),
            "max": scene.bounds_max.tolist(),
        },
        "surfaces": [
            {
                "vertices": s.vertices.tolist(),
                "emission": s.emission.tolist(),
                "albedo": s.albedo.tolist(),
            }
            for s in scene.surfaces
        ],
    }


def load_scene(path) -> Scene:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneFormatError(f"invalid JSON: {exc}") from exc
    return scene_from_dict(data)


def save_scene(scene: Scene, path) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene), indent=2) + "\n")
