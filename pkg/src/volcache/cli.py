"""Command-line interface: render fields/images, build caches, run self-checks.

Exit codes: 0 success, 1 usage error, 2 validation or scene/cache format error
(including failed self-checks), 3 file I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cache import CacheFormatError, load_cache, save_cache, valid_radii
from .formfactor import ff_segment_derivs, ff_triangle_derivs
from .numerics import RECONSTRUCTION_RTOL, eigen_sym
from .oracles import ball_quadrature, disk_quadrature, fd_gradient, fd_hessian, rel_error
from .renderer import (
    CACHE_MODES,
    MODES,
    Camera,
    FieldGrid,
    RenderSettings,
    populate_cache,
    render,
    write_pfm,
    write_ppm,
)
from .scene import Medium, Scene, SceneFormatError, Surface, load_scene
from .subdivision import estimate_moments
from .transport import quadrature_radiance, transmittance_derivs


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse failures to exit code 1
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="volcache", description=__doc__)
    parser.add_argument("--version", action="version", version=f"volcache {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, modes=True):
        p.add_argument("--scene", required=True, help="scene JSON file")
        if modes:
            p.add_argument("--mode", default="ours-aniso", choices=MODES)
        p.add_argument("--epsilon", type=float, default=0.05, help="cache error budget")
        p.add_argument(
            "--epsilon-baseline",
            type=float,
            default=1.0,
            dest="epsilon_baseline",
            help="radius scale for the gradient-magnitude baseline cache",
        )
        p.add_argument("--spp", type=int, default=16, help="camera samples per pixel")
        p.add_argument("--march-step", type=float, default=0.1)
        p.add_argument("--n-angular", type=int, default=None)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument(
            "--frozen",
            action=argparse.BooleanOptionalAction,
            default=True,
            help="freeze caches during rendering (misses evaluated, not inserted)",
        )
        p.add_argument("--path-samples", type=int, default=256)
        p.add_argument("--res", default=None, help="WxH (default 64x64 field, 32x24 camera)")
        p.add_argument(
            "--camera",
            default=None,
            help="3D camera as px,py,pz:lx,ly,lz:ux,uy,uz (default: inside-bounds view)",
        )
        p.add_argument("--fov", type=float, default=60.0, help="vertical field of view")

    p_render = sub.add_parser("render", help="render a field (2D) or camera image (3D)")
    add_common(p_render)
    p_render.add_argument("--out", required=True, help="output PFM path")
    p_render.add_argument("--ppm", default=None, help="optional tonemapped PPM preview")

    p_pop = sub.add_parser("populate", help="build caches and write them to JSON")
    add_common(p_pop)
    p_pop.add_argument("--out", required=True, help="output path stem (two files written)")

    p_grad = sub.add_parser("gradfield", help="write a 2D luminance-gradient field (.npz)")
    add_common(p_grad, modes=False)
    p_grad.add_argument("--out", required=True)

    p_val = sub.add_parser("validate", help="run built-in oracle self-checks")
    p_val.add_argument(
        "--suite",
        default="all",
        choices=("all", "eigen", "transmittance", "formfactor", "radii", "estimator"),
    )
    p_val.add_argument("--seed", type=int, default=0)

    p_conv = sub.add_parser("converge", help="estimator error vs angular refinement")
    p_conv.add_argument("--scene", required=True)
    p_conv.add_argument("--point", default=None, help="probe point 'x,y' (default: center)")
    p_conv.add_argument("--levels", default="128,256,512,1024")
    p_conv.add_argument("--march-step", type=float, default=0.05)
    p_conv.add_argument("--seed", type=int, default=0)
    p_conv.add_argument("--out", default=None, help="optional JSON report path")

    p_dump = sub.add_parser("dumpcache", help="summarize a cache JSON file")
    p_dump.add_argument("--cache", required=True)
    p_dump.add_argument("--records", type=int, default=0, help="print the first N records")
    return parser


def _parse_res(text, default):
    if text is None:
        return default
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError as exc:
        raise _UsageError(f"--res must look like 64x64, got {text!r}") from exc
    if w < 1 or h < 1:
        raise _UsageError("--res components must be positive")
    return w, h


def _parse_camera(text, scene, fov, width, height) -> Camera:
    if text is None:
        center = 0.5 * (scene.bounds_min + scene.bounds_max)
        span = scene.bounds_max - scene.bounds_min
        position = center - np.array([0.0, 0.0, 0.35 * span[2]])
        return Camera(position, center, np.array([0.0, 1.0, 0.0]), fov, width, height)
    try:
        parts = [np.array([float(v) for v in part.split(",")]) for part in text.split(":")]
        position, look_at, up = parts
    except (ValueError, TypeError) as exc:
        raise _UsageError(
            "--camera must look like px,py,pz:lx,ly,lz:ux,uy,uz"
        ) from exc
    if len(parts) != 3 or any(p.shape != (3,) for p in parts):
        raise _UsageError("--camera needs three comma-separated 3-vectors")
    return Camera(position, look_at, up, fov, width, height)


def _settings_from_args(args) -> RenderSettings:
    return RenderSettings(
        mode=getattr(args, "mode", "ours-aniso"),
        epsilon=args.epsilon,
        spp=args.spp,
        march_step=args.march_step,
        n_angular=args.n_angular,
        seed=args.seed,
        frozen=args.frozen,
        baseline_alpha=args.epsilon_baseline,
        path_samples_per_point=args.path_samples,
    )


def _target_from_args(args, scene):
    if scene.dim == 2:
        nx, ny = _parse_res(args.res, (64, 64))
        return FieldGrid.for_scene(scene, nx, ny)
    w, h = _parse_res(args.res, (32, 24))
    return _parse_camera(args.camera, scene, args.fov, w, h)


def _cmd_render(args) -> int:
    scene = load_scene(args.scene)
    settings = _settings_from_args(args)
    target = _target_from_args(args, scene)
    image, stats = render(scene, target, settings)
    write_pfm(args.out, image)
    if args.ppm:
        write_ppm(args.ppm, image)
    stats["out"] = str(args.out)
    print(json.dumps(_jsonable(stats), indent=1))
    return 0


def _cmd_populate(args) -> int:
    scene = load_scene(args.scene)
    settings = _settings_from_args(args)
    if settings.mode not in CACHE_MODES:
        raise _UsageError(f"populate requires a cache mode ({', '.join(CACHE_MODES)})")
    target = _target_from_args(args, scene)
    cache_set, stats = populate_cache(scene, target, settings)
    stem = Path(args.out)
    suffix = stem.suffix or ".json"
    base = stem.with_suffix("")
    paths = {}
    for kind, cache in (("single", cache_set.single), ("multiple", cache_set.multiple)):
        path = base.parent / f"{base.name}.{kind}{suffix}"
        save_cache(
            cache,
            path,
            metadata={
                "kind": kind,
                "mode": settings.mode,
                "epsilon": settings.epsilon,
                "scene": str(args.scene),
                "seed": settings.seed,
            },
        )
        paths[kind] = str(path)
    stats["files"] = paths
    print(json.dumps(_jsonable(stats), indent=1))
    return 0


def _cmd_gradfield(args) -> int:
    from .renderer import gradient_field

    scene = load_scene(args.scene)
    if scene.dim != 2:
        raise SceneFormatError("gradfield requires a 2D scene")
    nx, ny = _parse_res(args.res, (32, 32))
    grid = FieldGrid.for_scene(scene, nx, ny)
    settings = RenderSettings(
        mode="ours-aniso",
        epsilon=args.epsilon,
        march_step=args.march_step,
        n_angular=args.n_angular,
        seed=args.seed,
    )
    grads = gradient_field(scene, grid, settings)
    np.savez(args.out, gradients=grads, centers=grid.centers)
    print(json.dumps({"out": str(args.out), "shape": list(grads.shape)}))
    return 0


def _cmd_converge(args) -> int:
    scene = load_scene(args.scene)
    if scene.dim != 2:
        raise SceneFormatError("converge requires a 2D scene")
    if args.point is None:
        x = 0.5 * (scene.bounds_min + scene.bounds_max)
    else:
        try:
            x = np.array([float(v) for v in args.point.split(",")])
        except ValueError as exc:
            raise _UsageError("--point must look like 0.5,0.5") from exc
        if x.shape != (2,):
            raise _UsageError("--point needs two components")
    levels = [int(v) for v in args.levels.split(",")]
    ref_s, ref_m = quadrature_radiance(scene, x, n_angular=4096, n_dist=64, n_secondary=256)
    reference = ref_s + ref_m
    ref_norm = float(np.linalg.norm(reference))
    rows = []
    for n in levels:
        mom_s, mom_m = estimate_moments(
            scene, x, n_angular=n, march_step=args.march_step, rng_seed=args.seed
        )
        err = float(np.linalg.norm(mom_s.L + mom_m.L - reference)) / max(ref_norm, 1e-12)
        rows.append({"n_angular": n, "relative_error": err})
        print(f"n_angular={n:6d}  relative_error={err:.6f}")
    report = {
        "point": x.tolist(),
        "reference": reference.tolist(),
        "levels": rows,
        "monotone_decreasing": all(
            rows[i + 1]["relative_error"] < rows[i]["relative_error"]
            for i in range(len(rows) - 1)
        ),
    }
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=1) + "\n")
    return 0


def _cmd_dumpcache(args) -> int:
    cache, metadata = load_cache(args.cache)
    records = cache.records
    radii = [r.bounding_radius for r in records]
    summary = {
        "file": str(args.cache),
        "dimensionality": cache.dim,
        "records": len(records),
        "metadata": metadata,
        "bounding_radius": {
            "min": float(np.min(radii)) if radii else None,
            "mean": float(np.mean(radii)) if radii else None,
            "max": float(np.max(radii)) if radii else None,
        },
    }
    print(json.dumps(_jsonable(summary), indent=1))
    for rec in records[: args.records]:
        print(json.dumps(_jsonable({
            "position": rec.position.tolist(),
            "value": rec.value.tolist(),
            "bounding_radius": rec.bounding_radius,
        })))
    return 0


# ---------------------------------------------------------------------------
# Built-in self-checks
# ---------------------------------------------------------------------------


def _check_eigen(rng) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(200):
        d = int(rng.integers(2, 4))
        a = rng.normal(size=(d, d))
        m = a + a.T
        system = eigen_sym(m)
        worst = max(worst, rel_error(system.reconstruct(), m, floor=1e-12))
    ok = worst <= RECONSTRUCTION_RTOL
    return ok, f"worst reconstruction error {worst:.2e}"


def _check_transmittance(rng) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(100):
        d = int(rng.integers(2, 4))
        medium = Medium(sigma_s=float(rng.uniform(0.1, 1.5)), sigma_a=float(rng.uniform(0.0, 0.5)))
        x = rng.uniform(-1.0, 1.0, size=d)
        y = rng.uniform(-1.0, 1.0, size=d)
        r = float(np.linalg.norm(x - y))
        if r < 0.3:
            continue
        derivs = transmittance_derivs(x, y, medium)
        h = 1e-4 * r

        def f(p):
            return float(np.exp(-medium.sigma_t * np.linalg.norm(p - y)))

        worst = max(worst, rel_error(fd_gradient(f, x, h), derivs.grad, floor=1e-12))
        worst = max(worst, rel_error(fd_hessian(f, x, h), derivs.hess, floor=1e-10))
    ok = worst <= 1e-4
    return ok, f"worst FD mismatch {worst:.2e}"


def _check_formfactor(rng) -> tuple[bool, str]:
    x2 = np.zeros(2)
    quarter = ff_segment_derivs(x2, np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    err = abs(quarter.value - 0.25)
    x3 = np.zeros(3)
    octant = ff_triangle_derivs(
        x3, np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0])
    )
    err = max(err, abs(octant.value - 0.125))
    worst_fd = 0.0
    for _ in range(50):
        y0 = rng.uniform(0.5, 1.5) * _unit_angle_2d(rng)
        y1 = rng.uniform(0.5, 1.5) * _unit_angle_2d(rng)
        try:
            derivs = ff_segment_derivs(x2, y0, y1)
        except ValueError:
            continue
        h = 1e-5 * min(np.linalg.norm(y0), np.linalg.norm(y1))

        def f(p):
            return ff_segment_derivs(p, y0, y1).value

        worst_fd = max(worst_fd, rel_error(fd_gradient(f, x2, h), derivs.grad, floor=1e-12))
    ok = err <= 1e-9 and worst_fd <= 1e-3
    return ok, f"exact-value error {err:.2e}, worst FD gradient mismatch {worst_fd:.2e}"


def _unit_angle_2d(rng):
    a = rng.uniform(0.0, 2.0 * np.pi)
    return np.array([np.cos(a), np.sin(a)])


def _check_radii(rng) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(25):
        dim = int(rng.integers(2, 4))
        lum = float(rng.uniform(0.5, 5.0))
        eps = float(rng.uniform(0.01, 0.2))
        lam = rng.uniform(0.5, 10.0, size=dim) * rng.choice([-1.0, 1.0], size=dim)
        radii = valid_radii(lum, lam, eps, dim, scene_scale=1e9)
        for i in range(dim):
            if dim == 2:
                pts, w = disk_quadrature(radii[i], 160, 160)
            else:
                pts, w = ball_quadrature(radii[i], 48, 48, 48)
            integral = float(np.sum(w * np.abs(lam[i]) * pts[:, i] ** 2) / lum)
            worst = max(worst, abs(integral - eps) / eps)
    ok = worst <= 0.02
    return ok, f"worst per-axis budget mismatch {worst:.2%}"


def _check_estimator(rng) -> tuple[bool, str]:
    scene = _builtin_scene()
    x = np.array([0.5, 0.35])
    ref_s, ref_m = quadrature_radiance(scene, x, n_angular=2048, n_dist=48, n_secondary=192)
    mom_s, mom_m = estimate_moments(scene, x, n_angular=2048, march_step=0.02, rng_seed=7, n_inner=8)
    ref = ref_s + ref_m
    err = float(np.linalg.norm(mom_s.L + mom_m.L - ref)) / float(np.linalg.norm(ref))
    ok = err <= 0.05
    return ok, f"subdivision vs quadrature relative error {err:.2%}"


def _builtin_scene() -> Scene:
    return Scene(
        surfaces=(
            Surface(vertices=np.array([[0.3, 0.95], [0.7, 0.95]]), emission=np.array([12.0, 10.0, 8.0])),
            Surface(vertices=np.array([[0.35, 0.55], [0.65, 0.55]])),
        ),
        medium=Medium(sigma_s=0.6, sigma_a=0.2),
        bounds_min=np.zeros(2),
        bounds_max=np.ones(2),
    )


_SUITES = {
    "eigen": _check_eigen,
    "transmittance": _check_transmittance,
    "formfactor": _check_formfactor,
    "radii": _check_radii,
    "estimator": _check_estimator,
}


def _cmd_validate(args) -> int:
    names = list(_SUITES) if args.suite == "all" else [args.suite]
    rng = np.random.default_rng(args.seed)
    all_ok = True
    for name in names:
        ok, detail = _SUITES[name](rng)
        all_ok &= ok
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return 0 if all_ok else 2


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


_COMMANDS = {
    "render": _cmd_render,
    "populate": _cmd_populate,
    "gradfield": _cmd_gradfield,
    "validate": _cmd_validate,
    "converge": _cmd_converge,
    "dumpcache": _cmd_dumpcache,
}


def run(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help/--version paths
        code = exc.code if exc.code is not None else 0
        return 0 if code == 0 else 1
    except (SceneFormatError, CacheFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
