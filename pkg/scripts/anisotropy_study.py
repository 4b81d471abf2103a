"""Cache size with anisotropic vs isotropic validity regions.

Populates the cache over a coverage grid at several error budgets, in both
ours-aniso and ours-iso modes, and reports per-cache record counts and their
ratio.  Anisotropic records stretch along the low-curvature eigendirections of
the gathered field, so fewer of them tile the same domain at the same budget.
Writes a CSV and a ratio-vs-epsilon PNG per scene.
"""

from __future__ import annotations

import argparse
import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from volcache.renderer import FieldGrid, RenderSettings, populate_cache
from volcache.scene import load_scene

SCENE_DIR = Path(__file__).resolve().parent.parent / "scenes"


def study(scene_name: str, epsilons, res: int, out_dir: Path) -> None:
    scene = load_scene(SCENE_DIR / f"{scene_name}.json")
    grid = FieldGrid.for_scene(scene, res, res)
    rows = []
    for eps in epsilons:
        counts = {}
        for mode in ("ours-aniso", "ours-iso"):
            settings = RenderSettings(
                mode=mode, epsilon=eps, march_step=0.05, n_angular=1024,
                n_inner=2, n_light_samples=4, seed=3,
            )
            _, stats = populate_cache(scene, grid, settings)
            counts[mode] = stats
        r_single = (counts["ours-aniso"]["records_single"]
                    / counts["ours-iso"]["records_single"])
        r_total = counts["ours-aniso"]["records"] / counts["ours-iso"]["records"]
        rows.append((
            eps,
            counts["ours-aniso"]["records_single"],
            counts["ours-iso"]["records_single"],
            r_single,
            counts["ours-aniso"]["records"],
            counts["ours-iso"]["records"],
            r_total,
        ))
        print(f"{scene_name}  eps={eps:<7g} single {rows[-1][1]:4d}/{rows[-1][2]:4d} "
              f"(ratio {r_single:.3f})  total {rows[-1][4]:4d}/{rows[-1][5]:4d} "
              f"(ratio {r_total:.3f})")

    with open(out_dir / f"anisotropy_{scene_name}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([
            "epsilon", "aniso_single", "iso_single", "ratio_single",
            "aniso_total", "iso_total", "ratio_total",
        ])
        w.writerows(rows)

    fig, ax = plt.subplots(figsize=(5, 4))
    ax.semilogx([r[0] for r in rows], [r[3] for r in rows], "o-", label="surface-gather cache")
    ax.semilogx([r[0] for r in rows], [r[6] for r in rows], "s--", label="both caches")
    ax.axhline(1.0, color="k", lw=0.8, alpha=0.5)
    ax.set_xlabel("error budget epsilon")
    ax.set_ylabel("record count ratio (aniso / iso)")
    ax.set_title(f"{scene_name}: cache size, anisotropic vs isotropic")
    ax.set_ylim(0.0, 1.1)
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_dir / f"anisotropy_{scene_name}.png", dpi=150)
    plt.close(fig)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--res", type=int, default=64, help="coverage grid resolution")
    ap.add_argument("--scenes", nargs="+",
                    default=["square_emitter", "cross_shadows"])
    ap.add_argument("--epsilons", nargs="+", type=float,
                    default=[0.003, 0.01, 0.03, 0.1])
    args = ap.parse_args()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name in args.scenes:
        study(name, args.epsilons, args.res, out_dir)


if __name__ == "__main__":
    main()
