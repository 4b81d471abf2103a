"""Second-order, occlusion-aware volumetric radiance caching.

A library + CLI for caching in-scattered radiance in homogeneous isotropic
participating media, in both a self-contained 2D world and 3D.  Cache points carry
value, gradient, and Hessian obtained by differentiating a piecewise-linear,
occlusion-free subdivision of the surrounding scene; the Hessian drives an
error-controlled anisotropic valid region per point.  Finite-difference and
path-traced oracles validate every closed-form derivative.
"""

__version__ = "0.1.0"

from .numerics import EigenSystem, eigen_sym, cross_matrix, outer
from .scene import Medium, Surface, Scene, Ray, Hit, intersect, stratified_directions, load_scene
from .transport import (
    Phase,
    TransmittanceDerivs,
    transmittance_derivs,
    phase_eval,
    path_trace_radiance,
    surface_outgoing_radiance,
)
from .formfactor import (
    FormFactorDerivs,
    SolidAngleTerms,
    DegenerateElementError,
    ff_segment_derivs,
    solid_angle_triangle,
    ff_triangle_derivs,
    geometry_term,
)
from .subdivision import (
    RingElement,
    Ring,
    Subdivision,
    Moments,
    build_subdivision,
    element_radiance,
    estimate_moments,
    occlusion_unaware_gradient,
)
from .cache import (
    CacheRecord,
    BaselineRecord,
    RadianceCache,
    valid_radii,
    weight_cubic,
    interpolate,
    log_gradient_radius,
    log_space_interpolate,
)
from .renderer import (
    RenderSettings,
    Camera,
    FieldGrid,
    populate_cache,
    render,
    fd_derivatives,
    gradient_field,
    error_map,
)

__all__ = [name for name in dir() if not name.startswith("_")]
