"""Field accuracy at a matched record budget: second-order cache vs baseline.

For each scene: render a dense quadrature reference, populate the second-order
anisotropic cache, bisect the baseline's radius scale until its record count
matches ours within 5%, then render both caches frozen (every pixel
extrapolated, zero direct evaluations) and compare per-pixel relative
luminance error.  Writes the three fields, an error-map pair, and a summary
CSV row per scene.
"""

from __future__ import annotations

import argparse
import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from volcache.renderer import FieldGrid, RenderSettings, populate_cache, render
from volcache.scene import load_scene

LUM = np.array([0.2126, 0.7152, 0.0722])
SCENE_DIR = Path(__file__).resolve().parent.parent / "scenes"


def tonemap(image: np.ndarray) -> np.ndarray:
    peak = float(image.max()) or 1.0
    return np.clip((image / peak) ** (1.0 / 2.2), 0.0, 1.0)


def relative_error_map(image: np.ndarray, reference: np.ndarray) -> np.ndarray:
    lum_i = image @ LUM
    lum_r = reference @ LUM
    floor = 1e-3 * float(lum_r.max())
    return np.abs(lum_i - lum_r) / np.maximum(lum_r, floor)


def match_baseline_budget(scene, grid, common, n_target):
    lo, hi = 0.02, 8.0
    for _ in range(14):
        alpha = float(np.sqrt(lo * hi))
        cache, stats = populate_cache(
            scene, grid,
            RenderSettings(mode="baseline", baseline_alpha=alpha, **common),
        )
        if abs(stats["records"] - n_target) <= 0.05 * n_target:
            return alpha, cache, stats["records"]
        if stats["records"] > n_target:
            lo = alpha
        else:
            hi = alpha
    raise RuntimeError("no baseline radius scale matches the record budget")


def compare(scene_name: str, res: int, epsilon: float, out_dir: Path):
    scene = load_scene(SCENE_DIR / f"{scene_name}.json")
    grid = FieldGrid.for_scene(scene, res, res)
    common = dict(march_step=0.05, n_angular=1024, n_inner=2,
                  n_light_samples=4, seed=3)

    reference, _ = render(
        scene, grid,
        RenderSettings(mode="quadrature", seed=3, quad_gather_grid=64,
                       quad_n_secondary=256, quad_n_angular=1024, quad_n_dist=32),
    )

    ours_cache, ours_stats = populate_cache(
        scene, grid, RenderSettings(mode="ours-aniso", epsilon=epsilon, **common)
    )
    alpha, base_cache, n_base = match_baseline_budget(
        scene, grid, common, ours_stats["records"]
    )

    image_ours, s_o = render(
        scene, grid,
        RenderSettings(mode="ours-aniso", epsilon=epsilon, frozen=True, **common),
        cache_set=ours_cache,
    )
    image_base, s_b = render(
        scene, grid,
        RenderSettings(mode="baseline", baseline_alpha=alpha, frozen=True, **common),
        cache_set=base_cache,
    )
    assert s_o["direct_evaluations"] == 0 and s_b["direct_evaluations"] == 0

    err_ours = relative_error_map(image_ours, reference)
    err_base = relative_error_map(image_base, reference)

    fig, axes = plt.subplots(2, 3, figsize=(12, 7))
    for ax, (title, img) in zip(
        axes.flat,
        [
            ("reference (quadrature)", tonemap(reference)),
            ("second-order anisotropic", tonemap(image_ours)),
            ("baseline (matched count)", tonemap(image_base)),
        ],
    ):
        ax.imshow(img)
        ax.set_title(title)
        ax.axis("off")
    vmax = max(err_ours.max(), err_base.max())
    for ax, (title, err) in zip(
        axes.flat[4:],
        [
            (f"ours err (mean {err_ours.mean():.4f})", err_ours),
            (f"baseline err (mean {err_base.mean():.4f})", err_base),
        ],
    ):
        im = ax.imshow(err, cmap="magma", vmin=0.0, vmax=vmax)
        ax.set_title(title)
        ax.axis("off")
        fig.colorbar(im, ax=ax, fraction=0.046)
    axes.flat[3].axis("off")
    fig.suptitle(
        f"{scene_name}: {ours_stats['records']} records (ours) vs {n_base} "
        f"(baseline, radius scale {alpha:.3f})"
    )
    fig.tight_layout()
    fig.savefig(out_dir / f"field_{scene_name}.png", dpi=150)
    plt.close(fig)

    row = (scene_name, ours_stats["records"], n_base, alpha,
           float(err_ours.mean()), float(err_base.mean()))
    print(f"{scene_name}: ours mean err {row[4]:.4f} vs baseline {row[5]:.4f} "
          f"at {row[1]} vs {row[2]} records")
    return row


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--res", type=int, default=48, help="field resolution")
    ap.add_argument("--epsilon", type=float, default=0.01, help="error budget")
    ap.add_argument("--scenes", nargs="+", default=["cross_shadows", "strips"])
    args = ap.parse_args()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [compare(name, args.res, args.epsilon, out_dir) for name in args.scenes]
    with open(out_dir / "field_comparison.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scene", "records_ours", "records_baseline", "baseline_scale",
                    "mean_rel_err_ours", "mean_rel_err_baseline"])
        w.writerows(rows)


if __name__ == "__main__":
    main()
