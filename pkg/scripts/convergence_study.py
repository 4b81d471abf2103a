"""Error of the gather estimator under joint angular/march refinement.

Two experiments, each written as a CSV and a log-log PNG:

- value: radiance error at probe points in the smooth enclosure, against a
  deterministic quadrature reference, for a ladder of (n_angular, march_step)
  levels.
- gradient: median relative gradient error at penumbra probe points, against a
  common-random-numbers path-traced finite-difference reference, for a ladder
  of n_angular levels; the occlusion-unaware estimator is plotted alongside to
  show its bias floor.
"""

from __future__ import annotations

import argparse
import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from volcache.renderer import fd_derivatives
from volcache.scene import load_scene
from volcache.subdivision import baseline_estimate, estimate_moments
from volcache.transport import quadrature_radiance

LUM = np.array([0.2126, 0.7152, 0.0722])
SCENE_DIR = Path(__file__).resolve().parent.parent / "scenes"


def value_study(out_dir: Path) -> None:
    scene = load_scene(SCENE_DIR / "smooth_enclosure.json")
    points = [np.array(p) for p in ((0.5, 0.5), (0.35, 0.6), (0.62, 0.4), (0.45, 0.3))]
    refs = []
    for p in points:
        s, m = quadrature_radiance(
            scene, p, n_angular=2048, n_dist=48, n_secondary=128, n_light_samples=8
        )
        refs.append(s + m)

    levels = [(128, 0.2), (256, 0.141), (512, 0.1), (1024, 0.0707), (2048, 0.05)]
    rows = []
    for n_angular, march_step in levels:
        errs = []
        for p, ref in zip(points, refs):
            s, m = estimate_moments(
                scene, p, n_angular=n_angular, march_step=march_step,
                rng_seed=9, n_inner=4, n_light_samples=8,
            )
            errs.append(np.linalg.norm(s.L + m.L - ref) / np.linalg.norm(ref))
        rows.append((n_angular, march_step, float(np.mean(errs))))
        print(f"value  n_angular={n_angular:5d} march={march_step:6.4f} "
              f"mean rel err={rows[-1][2]:.3e}")

    with open(out_dir / "convergence_value.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n_angular", "march_step", "mean_rel_error"])
        w.writerows(rows)

    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog([r[0] for r in rows], [r[2] for r in rows], "o-")
    ax.set_xlabel("angular samples (march step refined jointly)")
    ax.set_ylabel("mean relative radiance error")
    ax.set_title("smooth enclosure: estimator vs quadrature")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_dir / "convergence_value.png", dpi=150)
    plt.close(fig)


def gradient_study(out_dir: Path, fd_samples: int) -> None:
    scene = load_scene(SCENE_DIR / "penumbra2d.json")
    points = [
        np.array([x, y])
        for y in (0.42, 0.35, 0.28)
        for x in (0.25, 0.33, 0.67, 0.75)
    ]
    refs = []
    for i, p in enumerate(points):
        s, m = fd_derivatives(
            scene, p, h=0.015, n_samples=fd_samples, seed=11, n_light_samples=4
        )
        refs.append(LUM @ (s.grad + m.grad))
        print(f"reference {i + 1}/{len(points)} done")

    seeds = (5, 6, 7)
    levels = (256, 512, 1024, 2048, 4096)

    def median_err(estimator, n_angular):
        per_point = []
        for p, g_ref in zip(points, refs):
            errs = []
            for seed in seeds:
                s, m = estimator(p, n_angular, seed)
                g = LUM @ (s.grad + m.grad)
                errs.append(np.linalg.norm(g - g_ref) / np.linalg.norm(g_ref))
            per_point.append(np.mean(errs))
        return float(np.median(per_point))

    def ours(p, n_angular, seed):
        return estimate_moments(
            scene, p, n_angular=n_angular, march_step=0.025, rng_seed=seed,
            n_inner=4, n_light_samples=8,
        )

    def unaware(p, n_angular, seed):
        return baseline_estimate(scene, p, n_angular=n_angular, rng_seed=seed,
                                 n_light_samples=8)

    rows = []
    for n in levels:
        e_ours = median_err(ours, n)
        e_base = median_err(unaware, n)
        rows.append((n, e_ours, e_base))
        print(f"grad   n_angular={n:5d} ours={e_ours:.4f} unaware={e_base:.4f}")

    with open(out_dir / "convergence_gradient.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n_angular", "occlusion_aware", "occlusion_unaware"])
        w.writerows(rows)

    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog([r[0] for r in rows], [r[1] for r in rows], "o-", label="occlusion-aware")
    ax.loglog([r[0] for r in rows], [r[2] for r in rows], "s--", label="occlusion-unaware")
    ax.set_xlabel("angular samples")
    ax.set_ylabel("median relative gradient error")
    ax.set_title("penumbra: gradient error vs path-traced reference")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_dir / "convergence_gradient.png", dpi=150)
    plt.close(fig)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--skip-gradient", action="store_true",
                    help="run only the cheap value study")
    ap.add_argument("--fd-samples", type=int, default=4_000_000,
                    help="paths per finite-difference reference probe")
    args = ap.parse_args()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    value_study(out_dir)
    if not args.skip_gradient:
        gradient_study(out_dir, args.fd_samples)


if __name__ == "__main__":
    main()
