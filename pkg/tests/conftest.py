"""Shared fixtures: bundled scenes and small hand-built configurations."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from volcache.scene import Medium, Scene, Surface, load_scene

SCENE_DIR = Path(__file__).resolve().parent.parent / "scenes"


def load_bundled(name: str) -> Scene:
    return load_scene(SCENE_DIR / f"{name}.json")


@pytest.fixture(scope="session")
def penumbra_scene() -> Scene:
    return load_bundled("penumbra2d")


@pytest.fixture(scope="session")
def square_emitter_scene() -> Scene:
    return load_bundled("square_emitter")


@pytest.fixture(scope="session")
def cross_shadows_scene() -> Scene:
    return load_bundled("cross_shadows")


@pytest.fixture(scope="session")
def strips_scene() -> Scene:
    return load_bundled("strips")


@pytest.fixture(scope="session")
def enclosure_scene() -> Scene:
    return load_bundled("smooth_enclosure")


@pytest.fixture(scope="session")
def box3d_scene() -> Scene:
    return load_bundled("box3d")


@pytest.fixture
def simple_2d_scene() -> Scene:
    """One emissive segment, no occluders, absorbing-and-scattering medium."""
    return Scene(
        surfaces=(
            Surface(
                vertices=np.array([[0.2, 0.8], [0.8, 0.8]]),
                emission=np.array([5.0, 4.0, 3.0]),
            ),
        ),
        medium=Medium(sigma_s=0.5, sigma_a=0.25),
        bounds_min=np.zeros(2),
        bounds_max=np.ones(2),
    )


@pytest.fixture
def vacuum_2d_scene() -> Scene:
    """One emissive segment in vacuum (no medium interaction)."""
    return Scene(
        surfaces=(
            Surface(
                vertices=np.array([[0.2, 0.8], [0.8, 0.8]]),
                emission=np.array([5.0, 4.0, 3.0]),
            ),
        ),
        medium=Medium(sigma_s=0.0, sigma_a=0.0),
        bounds_min=np.zeros(2),
        bounds_max=np.ones(2),
    )


def circle_scene(
    n_sides: int = 64,
    radius: float = 0.4,
    emission=(5.0, 4.0, 3.0),
    sigma_s: float = 0.5,
    sigma_a: float = 0.25,
) -> Scene:
    """Regular polygon enclosure approximating a circle of constant emission.

    At the exact centre the single-scatter source density has the closed form
    f_bar * exp(-sigma_t * d) * L_o with d the apothem-to-vertex averaged
    distance; for large n_sides it converges to f_bar * exp(-sigma_t * R) * L_o.
    """
    center = np.array([0.5, 0.5])
    theta = 2.0 * np.pi * np.arange(n_sides) / n_sides
    pts = center + radius * np.column_stack([np.cos(theta), np.sin(theta)])
    surfaces = tuple(
        Surface(
            vertices=np.array([pts[i], pts[(i + 1) % n_sides]]),
            emission=np.asarray(emission, dtype=float),
        )
        for i in range(n_sides)
    )
    return Scene(
        surfaces=surfaces,
        medium=Medium(sigma_s=sigma_s, sigma_a=sigma_a),
        bounds_min=np.zeros(2),
        bounds_max=np.ones(2),
    )
