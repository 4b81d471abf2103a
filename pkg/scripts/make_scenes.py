"""Regenerate the bundled example scenes in scenes/.

Each scene exercises a different regime of the estimator and cache:

- penumbra2d: single emitter over a single occluder strip; wide penumbra band.
- square_emitter: large hot box in a dense medium; the field near each long face
  varies mostly along the face normal, so it rewards anisotropic records.
- cross_shadows: four wall lights of unequal strength plus four interior bars;
  overlapping shadows cross throughout the interior.
- strips: venetian-blind occluders; alternating lit/shadow bands.
- smooth_enclosure: emissive 24-gon enclosure with smoothly varying emission;
  no interior occluders (used for convergence studies).
- box3d: closed unit cube with an emissive ceiling.
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from volcache.scene import Medium, Scene, Surface, save_scene


def seg(a, b, emission=0.0, albedo=0.0):
    return Surface(vertices=np.array([a, b], dtype=float), emission=emission, albedo=albedo)


def tri(a, b, c, emission=0.0, albedo=0.0):
    return Surface(vertices=np.array([a, b, c], dtype=float), emission=emission, albedo=albedo)


def penumbra2d() -> Scene:
    return Scene(
        surfaces=(
            seg([0.3, 0.95], [0.7, 0.95], emission=[12.0, 10.0, 8.0]),
            seg([0.35, 0.55], [0.65, 0.55]),
        ),
        medium=Medium(sigma_s=0.6, sigma_a=0.2),
        bounds_min=np.zeros(2),
        bounds_max=np.ones(2),
    )


def square_emitter() -> Scene:
    # Long emitter faces keep every medium point in the near field of a face,
    # where the radiance varies mostly along the face normal; the dense medium
    # adds transmittance curvature in the same direction.
    lo, hi = 0.25, 0.75
    e = [10.0, 9.0, 7.0]
    return Scene(
        surfaces=(
            seg([lo, lo], [hi, lo], emission=e),
            seg([hi, lo], [hi, hi], emission=e),
            seg([hi, hi], [lo, hi], emission=e),
            seg([lo, hi], [lo, lo], emission=e),
        ),
        medium=Medium(sigma_s=1.5, sigma_a=0.9),
        bounds_min=np.zeros(2),
        bounds_max=np.ones(2),
    )


def cross_shadows() -> Scene:
    # Four wall lights of unequal strength and four interior bars; the bars
    # cast shadows from every wall, so penumbra bands cross throughout the
    # interior while each wall dominates the field in its own neighborhood.
    return Scene(
        surfaces=(
            seg([0.02, 0.97], [0.98, 0.97], emission=[14.0, 11.0, 8.0]),
            seg([0.02, 0.03], [0.98, 0.03], emission=[2.5, 2.0, 1.5]),
            seg([0.03, 0.02], [0.03, 0.98], emission=[7.0, 5.5, 4.0]),
            seg([0.97, 0.02], [0.97, 0.98], emission=[3.5, 2.8, 2.1]),
            seg([0.12, 0.62], [0.42, 0.62]),
            seg([0.55, 0.55], [0.85, 0.55]),
            seg([0.35, 0.15], [0.35, 0.40]),
            seg([0.68, 0.12], [0.68, 0.38]),
        ),
        medium=Medium(sigma_s=1.3, sigma_a=0.7),
        bounds_min=np.zeros(2),
        bounds_max=np.ones(2),
    )


def strips() -> Scene:
    occluders = [
        seg([x0, 0.6], [x0 + 0.15, 0.6])
        for x0 in (0.1, 0.35, 0.6, 0.85 - 0.0)
        if x0 + 0.15 <= 1.0
    ]
    return Scene(
        surfaces=(seg([0.1, 0.95], [0.9, 0.95], emission=[12.0, 12.0, 10.0]), *occluders),
        medium=Medium(sigma_s=0.6, sigma_a=0.2),
        bounds_min=np.zeros(2),
        bounds_max=np.ones(2),
    )


def smooth_enclosure(n_sides: int = 24) -> Scene:
    center = np.array([0.5, 0.5])
    radius = 0.45
    theta = 2.0 * np.pi * np.arange(n_sides) / n_sides
    pts = center + radius * np.column_stack([np.cos(theta), np.sin(theta)])
    surfaces = []
    for i in range(n_sides):
        mid = theta[i] + np.pi / n_sides
        emission = [
            6.0 + 3.0 * np.cos(mid),
            5.0 + 2.0 * np.cos(mid + 1.0),
            4.0 + 2.0 * np.sin(mid),
        ]
        surfaces.append(seg(pts[i], pts[(i + 1) % n_sides], emission=emission))
    return Scene(
        surfaces=tuple(surfaces),
        medium=Medium(sigma_s=0.8, sigma_a=0.2),
        bounds_min=np.zeros(2),
        bounds_max=np.ones(2),
    )


def box3d() -> Scene:
    # Closed unit cube; ceiling (z = 1) is the emitter, other faces are dark walls.
    c = np.array(
        [
            [0, 0, 0],
            [1, 0, 0],
            [1, 1, 0],
            [0, 1, 0],
            [0, 0, 1],
            [1, 0, 1],
            [1, 1, 1],
            [0, 1, 1],
        ],
        dtype=float,
    )
    quads = {
        "floor": (0, 1, 2, 3),
        "ceiling": (4, 5, 6, 7),
        "front": (0, 1, 5, 4),
        "back": (3, 2, 6, 7),
        "left": (0, 3, 7, 4),
        "right": (1, 2, 6, 5),
    }
    emission_top = [10.0, 9.0, 7.0]
    surfaces = []
    for name, (a, b, d, e) in quads.items():
        emission = emission_top if name == "ceiling" else 0.0
        surfaces.append(tri(c[a], c[b], c[d], emission=emission))
        surfaces.append(tri(c[a], c[d], c[e], emission=emission))
    return Scene(
        surfaces=tuple(surfaces),
        medium=Medium(sigma_s=0.4, sigma_a=0.1),
        bounds_min=np.zeros(3),
        bounds_max=np.ones(3),
    )


BUILDERS = {
    "penumbra2d": penumbra2d,
    "square_emitter": square_emitter,
    "cross_shadows": cross_shadows,
    "strips": strips,
    "smooth_enclosure": smooth_enclosure,
    "box3d": box3d,
}


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--out-dir",
        type=Path,
        default=Path(__file__).resolve().parent.parent / "scenes",
        help="directory to write the scene JSON files into",
    )
    args = parser.parse_args()
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for name, build in BUILDERS.items():
        path = args.out_dir / f"{name}.json"
        save_scene(build(), path)
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
