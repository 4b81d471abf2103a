"""Radiance cache records, validity radii, interpolation, and the spatial index.

A cache record freezes the radiance value and gradient at a point together with an
anisotropic valid region: an ellipsoid aligned with the eigenvectors of the (luminance-
combined) Hessian, sized so that the integrated second-order Taylor remainder over each
principal axis stays below a user error budget ε.  Records are kept in an MX-CIF style
quadtree/octree — each record lives at the deepest node that fully contains its bounding
box, so a point query only inspects the nodes on one root-to-leaf path and returns
exactly the records whose support contains the query point.

A gradient-magnitude baseline record (isotropic sphere sized by ΣL/Σ‖∇L‖, log-space
interpolation) is provided for comparison experiments.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .numerics import eigen_sym
from .scene import LUMINANCE_WEIGHTS
from .subdivision import BaselineEstimate, Moments

CACHE_FORMAT = "volcache-cache"
CACHE_VERSION = 1

#: Largest record radius, as a fraction of the scene diagonal.
R_MAX_FRACTION = 0.25

#: Smallest baseline-record radius, as a fraction of the scene diagonal.
R_MIN_FRACTION = 1e-3

#: Luminance floor for sizing records at (near-)zero radiance, relative to the
#: brightest emitter: keeps the radii formula finite without letting dark records
#: claim unbounded regions.
L_FLOOR_FRACTION = 1e-6

#: Curvature below this (relative, per unit luminance and squared scene scale) is
#: treated as flat: the corresponding axis gets the maximum radius.
CURVATURE_FLOOR = 1e-12


class CacheFormatError(ValueError):
    """Raised for malformed or version-incompatible cache files."""


def weight_cubic(d) -> np.ndarray:
    """Cubic blend weight 3d² − 2d³ on the support coordinate d ∈ [0, 1].

    d = 1 at a record's center, 0 at the edge of its valid region; the weight rises
    smoothly from 0 at the boundary to 1 at the center and is 0 outside.
    """
    d = np.clip(np.asarray(d, dtype=float), 0.0, 1.0)
    return 3.0 * d * d - 2.0 * d * d * d


def valid_radii(
    L: float, eigenvalues: np.ndarray, epsilon: float, dim: int, scene_scale: float
) -> np.ndarray:
    """Per-axis validity radii from Hessian eigenvalues and an error budget.

    Radius Rᵢ solves ∫ over the radius-Rᵢ ball of |λᵢ|·xᵢ²/L equal to ε — the
    relative second-order Taylor error budget integrated along principal axis i:

        2D: |λᵢ|·πR⁴/(4L) = ε  →  Rᵢ = (4Lε/(π|λᵢ|))^(1/4)
        3D: |λᵢ|·4πR⁵/(15L) = ε  →  Rᵢ = (15Lε/(4π|λᵢ|))^(1/5)

    Near-zero curvature axes and radii beyond R_MAX_FRACTION·scene_scale clamp to
    that maximum.  L must be positive (apply a luminance floor upstream).
    """
    if L <= 0.0:
        raise ValueError("valid_radii requires a positive luminance")
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    if dim not in (2, 3):
        raise ValueError("dim must be 2 or 3")
    lam = np.abs(np.asarray(eigenvalues, dtype=float))
    if lam.shape != (dim,):
        raise ValueError(f"expected {dim} eigenvalues, got shape {lam.shape}")
    r_max = R_MAX_FRACTION * scene_scale
    floor = CURVATURE_FLOOR * L / scene_scale**2
    radii = np.full(dim, r_max)
    live = lam > floor
    if np.any(live):
        if dim == 2:
            radii[live] = (4.0 * L * epsilon / (np.pi * lam[live])) ** 0.25
        else:
            radii[live] = (15.0 * L * epsilon / (4.0 * np.pi * lam[live])) ** 0.2
    return np.minimum(radii, r_max)


@dataclass(frozen=True)
class CacheRecord:
    """Radiance value + gradient at a point with an ellipsoidal valid region."""

    position: np.ndarray  # (dim,)
    value: np.ndarray  # (3,)
    grad: np.ndarray  # (3, dim)
    axes: np.ndarray  # (dim, dim) principal directions, columns
    radii: np.ndarray  # (dim,) per-axis validity radii

    @property
    def dim(self) -> int:
        return self.position.size

    @property
    def bounding_radius(self) -> float:
        return float(np.max(self.radii))

    def support_coordinate(self, x: np.ndarray) -> float:
        """1 − elliptical distance: > 0 inside the valid region, 1 at the center."""
        delta = np.asarray(x, dtype=float) - self.position
        along = delta @ self.axes  # components in the principal frame
        return 1.0 - float(np.sqrt(np.sum((along / self.radii) ** 2)))

    def extrapolate(self, x: np.ndarray) -> np.ndarray:
        """First-order radiance estimate value + grad·Δ, clamped non-negative."""
        delta = np.asarray(x, dtype=float) - self.position
        return np.clip(self.value + self.grad @ delta, 0.0, None)


@dataclass(frozen=True)
class BaselineRecord:
    """Radiance value + gradient with an isotropic (spherical) valid region."""

    position: np.ndarray  # (dim,)
    value: np.ndarray  # (3,)
    grad: np.ndarray  # (3, dim)
    radius: float

    @property
    def dim(self) -> int:
        return self.position.size

    @property
    def bounding_radius(self) -> float:
        return self.radius

    def support_coordinate(self, x: np.ndarray) -> float:
        delta = np.asarray(x, dtype=float) - self.position
        return 1.0 - float(np.linalg.norm(delta)) / self.radius


def combined_luminance(moments: Moments) -> tuple[float, np.ndarray]:
    """Collapse per-channel moments to scalar luminance (value, Hessian)."""
    lum = float(moments.L @ LUMINANCE_WEIGHTS)
    hess = np.einsum("cij,c->ij", moments.hess, LUMINANCE_WEIGHTS)
    return lum, hess


def make_record(
    x: np.ndarray,
    moments: Moments,
    epsilon: float,
    scene_scale: float,
    max_emission: float,
    anisotropic: bool = True,
) -> CacheRecord:
    """Build a cache record from estimated moments at x.

    The per-channel Hessians are collapsed to luminance, eigen-decomposed, and
    inverted to per-axis radii under error budget ε.  `anisotropic=False` sizes all
    axes by the largest-magnitude eigenvalue (a sphere) for comparison runs.  Points
    with zero luminance are floored at L_FLOOR_FRACTION of the brightest emission
    so they still receive (maximal) finite regions.
    """
    x = np.asarray(x, dtype=float)
    lum, hess = combined_luminance(moments)
    lum = max(lum, L_FLOOR_FRACTION * max_emission)
    dim = x.size
    if lum <= 0.0:  # lightless scene: everything is exactly representable
        axes = np.eye(dim)
        radii = np.full(dim, R_MAX_FRACTION * scene_scale)
    else:
        system = eigen_sym(hess)
        axes = system.vectors
        eigenvalues = system.values
        if not anisotropic:
            eigenvalues = np.full(dim, np.max(np.abs(eigenvalues)))
        radii = valid_radii(lum, eigenvalues, epsilon, dim, scene_scale)
    return CacheRecord(
        position=x,
        value=np.asarray(moments.L, dtype=float).copy(),
        grad=np.asarray(moments.grad, dtype=float).copy(),
        axes=axes,
        radii=radii,
    )


def log_gradient_radius(
    sample_values: np.ndarray,
    sample_grad_norms: np.ndarray,
    scene_scale: float,
    alpha: float = 1.0,
) -> float:
    """Gradient-magnitude sphere radius α·ΣLⱼ/Σ‖∇Lⱼ‖ over the estimator's samples.

    The ratio is the characteristic length over which the log of the radiance
    changes by O(1).  Clamped to [R_MIN_FRACTION, R_MAX_FRACTION]·scene_scale;
    all-zero gradients get the maximum radius.
    """
    num = float(np.sum(sample_values))
    den = float(np.sum(sample_grad_norms))
    r_max = R_MAX_FRACTION * scene_scale
    if den <= 0.0:
        return r_max
    return float(np.clip(alpha * num / den, R_MIN_FRACTION * scene_scale, r_max))


def make_baseline_record(
    x: np.ndarray,
    estimate: BaselineEstimate,
    scene_scale: float,
    alpha: float = 1.0,
) -> BaselineRecord:
    x = np.asarray(x, dtype=float)
    radius = log_gradient_radius(
        estimate.sample_values, estimate.sample_grad_norms, scene_scale, alpha
    )
    return BaselineRecord(
        position=x,
        value=np.asarray(estimate.value, dtype=float).copy(),
        grad=np.asarray(estimate.grad, dtype=float).copy(),
        radius=radius,
    )


# ---------------------------------------------------------------------------
# Spatial index
# ---------------------------------------------------------------------------


class _Node:
    __slots__ = ("center", "half", "records", "children")

    def __init__(self, center: np.ndarray, half: float):
        self.center = center
        self.half = half
        self.records: list = []
        self.children: list | None = None

    def child_index(self, p: np.ndarray) -> int:
        idx = 0
        for axis in range(p.size):
            if p[axis] >= self.center[axis]:
                idx |= 1 << axis
        return idx

    def child(self, idx: int) -> "_Node":
        if self.children is None:
            self.children = [None] * (1 << self.center.size)
        if self.children[idx] is None:
            offset = np.array(
                [0.5 if idx & (1 << axis) else -0.5 for axis in range(self.center.size)]
            )
            self.children[idx] = _Node(self.center + offset * self.half, self.half * 0.5)
        return self.children[idx]


class RadianceCache:
    """A set of cache records with an exact point-query spatial index.

    Records are stored at the deepest tree node whose cube fully contains the
    record's bounding box (center ± bounding radius); a query descends the single
    root-to-leaf path containing the query point and tests every record stored on
    it.  `query` therefore returns exactly the records whose support contains the
    point (identical to a linear scan).
    """

    MAX_DEPTH = 16

    def __init__(self, bounds_min: np.ndarray, bounds_max: np.ndarray):
        bounds_min = np.asarray(bounds_min, dtype=float)
        bounds_max = np.asarray(bounds_max, dtype=float)
        if bounds_min.shape != bounds_max.shape or bounds_min.size not in (2, 3):
            raise ValueError("bounds must be matching 2- or 3-vectors")
        if np.any(bounds_max <= bounds_min):
            raise ValueError("bounds_max must exceed bounds_min")
        self.bounds_min = bounds_min
        self.bounds_max = bounds_max
        self.dim = bounds_min.size
        diag = float(np.linalg.norm(bounds_max - bounds_min))
        center = 0.5 * (bounds_min + bounds_max)
        # Pad the root so record boxes poking past the scene bounds still fit.
        half = 0.5 * float(np.max(bounds_max - bounds_min)) + R_MAX_FRACTION * diag
        self._root = _Node(center, half)
        self._records: list = []

    def __len__(self) -> int:
        return len(self._records)

    @property
    def records(self) -> list:
        return list(self._records)

    def insert(self, record) -> None:
        if record.position.size != self.dim:
            raise ValueError("record dimensionality does not match the cache")
        self._records.append(record)
        r = record.bounding_radius
        node = self._root
        for _ in range(self.MAX_DEPTH):
            idx = node.child_index(record.position)
            child_half = node.half * 0.5
            offset = np.array(
                [0.5 if idx & (1 << axis) else -0.5 for axis in range(self.dim)]
            )
            child_center = node.center + offset * node.half
            if np.all(np.abs(record.position - child_center) + r <= child_half):
                node = node.child(idx)
            else:
                break
        node.records.append(record)

    def query(self, x: np.ndarray) -> list:
        """Records whose valid region strictly contains x (support coordinate > 0)."""
        x = np.asarray(x, dtype=float)
        out = []
        node = self._root
        while node is not None:
            for rec in node.records:
                if rec.support_coordinate(x) > 0.0:
                    out.append(rec)
            if node.children is None:
                break
            node = node.children[node.child_index(x)]
        return out

    def query_brute(self, x: np.ndarray) -> list:
        """Linear-scan reference for the tree query (same predicate, same order-free set)."""
        x = np.asarray(x, dtype=float)
        return [r for r in self._records if r.support_coordinate(x) > 0.0]


# ---------------------------------------------------------------------------
# Interpolation
# ---------------------------------------------------------------------------


def interpolate(cache: RadianceCache, x: np.ndarray):
    """Cubic-weighted gradient extrapolation of all records covering x.

    Returns the blended (3,) radiance, or None when no record covers x.  Each
    record's first-order estimate is clamped non-negative before weighting.
    """
    x = np.asarray(x, dtype=float)
    records = cache.query(x)
    if not records:
        return None
    num = np.zeros(3)
    den = 0.0
    for rec in records:
        w = float(weight_cubic(rec.support_coordinate(x)))
        num += w * rec.extrapolate(x)
        den += w
    if den <= 0.0:
        return None
    return num / den


def log_space_interpolate(cache: RadianceCache, x: np.ndarray):
    """Log-space blend exp(Σw(ln Lₖ + (∇Lₖ/Lₖ)·Δ)/Σw) used by the baseline cache.

    Channels where a record holds zero radiance are excluded from that channel's
    blend (log undefined); channels with no contributing record come back 0.
    Returns None when no record covers x at all.
    """
    x = np.asarray(x, dtype=float)
    records = cache.query(x)
    if not records:
        return None
    num = np.zeros(3)
    den = np.zeros(3)
    for rec in records:
        w = float(weight_cubic(rec.support_coordinate(x)))
        if w <= 0.0:
            continue
        delta = x - rec.position
        positive = rec.value > 0.0
        if not np.any(positive):
            continue
        log_est = np.log(rec.value[positive]) + (rec.grad[positive] @ delta) / rec.value[
            positive
        ]
        num[positive] += w * log_est
        den[positive] += w
    out = np.zeros(3)
    live = den > 0.0
    if not np.any(live):
        return None
    out[live] = np.exp(num[live] / den[live])
    return out


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _record_to_dict(rec) -> dict:
    if isinstance(rec, CacheRecord):
        return {
            "record_type": "ellipsoid",
            "position": rec.position.tolist(),
            "value": rec.value.tolist(),
            "grad": rec.grad.tolist(),
            "axes": rec.axes.tolist(),
            "radii": rec.radii.tolist(),
        }
    if isinstance(rec, BaselineRecord):
        return {
            "record_type": "sphere",
            "position": rec.position.tolist(),
            "value": rec.value.tolist(),
            "grad": rec.grad.tolist(),
            "radius": rec.radius,
        }
    raise TypeError(f"unknown record type {type(rec)!r}")


def _record_from_dict(d: dict, dim: int):
    try:
        rtype = d["record_type"]
        position = np.asarray(d["position"], dtype=float)
        value = np.asarray(d["value"], dtype=float)
        grad = np.asarray(d["grad"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise CacheFormatError(f"malformed cache record: {exc}") from exc
    if position.shape != (dim,) or value.shape != (3,) or grad.shape != (3, dim):
        raise CacheFormatError("cache record has inconsistent shapes")
    if rtype == "ellipsoid":
        axes = np.asarray(d["axes"], dtype=float)
        radii = np.asarray(d["radii"], dtype=float)
        if axes.shape != (dim, dim) or radii.shape != (dim,):
            raise CacheFormatError("cache record has inconsistent shapes")
        return CacheRecord(position=position, value=value, grad=grad, axes=axes, radii=radii)
    if rtype == "sphere":
        return BaselineRecord(position=position, value=value, grad=grad, radius=float(d["radius"]))
    raise CacheFormatError(f"unknown record_type {rtype!r}")


def save_cache(cache: RadianceCache, path, metadata: dict | None = None) -> None:
    """Write the cache to versioned JSON (records, bounds, optional metadata)."""
    doc = {
        "format": CACHE_FORMAT,
        "version": CACHE_VERSION,
        "dimensionality": cache.dim,
        "bounds": {
            "min": cache.bounds_min.tolist(),
            "max": cache.bounds_max.tolist(),
        },
        "metadata": metadata or {},
        "records": [_record_to_dict(r) for r in cache.records],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_cache(path) -> tuple[RadianceCache, dict]:
    """Read a cache written by save_cache; returns (cache, metadata).

    Raises CacheFormatError on unknown formats or future versions.
    """
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CacheFormatError(f"not a cache file: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != CACHE_FORMAT:
        raise CacheFormatError("not a radiance cache file")
    version = doc.get("version")
    if version != CACHE_VERSION:
        raise CacheFormatError(
            f"unsupported cache version {version!r} (supported: {CACHE_VERSION})"
        )
    try:
        dim = int(doc["dimensionality"])
        bounds_min = np.asarray(doc["bounds"]["min"], dtype=float)
        bounds_max = np.asarray(doc["bounds"]["max"], dtype=float)
        record_dicts = doc["records"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CacheFormatError(f"malformed cache file: {exc}") from exc
    cache = RadianceCache(bounds_min, bounds_max)
    if cache.dim != dim:
        raise CacheFormatError("dimensionality does not match bounds")
    for d in record_dicts:
        cache.insert(_record_from_dict(d, dim))
    return cache, doc.get("metadata", {})
