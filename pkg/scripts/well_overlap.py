"""Squared overlap of the Gaussian test function with the quantum-well eigenmodes versus its width.

Runs both the hilltop and inflection variants and writes ``well_overlap_<variant>.csv``
plus a plot when matplotlib is available.

    python scripts/well_overlap.py --out-dir results
"""
import argparse
from pathlib import Path

import numpy as np

from _common import save_plot
from spectraldiff import io as sio
from spectraldiff.inflation import analytic_well_overlap


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out-dir", default="results")
    p.add_argument("--steps", type=int, default=400)
    p.add_argument("--n-max", type=int, default=5)
    args = p.parse_args(argv)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rs = np.linspace(0.05, 3.0, args.steps)
    curves = {}
    for variant in ("hilltop", "inflection"):
        table = np.array([[analytic_well_overlap(variant, n, r) ** 2 for n in range(1, args.n_max + 1)] for r in rs])
        curves[variant] = table
        rows = [(r, *row) for r, row in zip(rs, table)]
        sio.write_csv(out / f"well_overlap_{variant}.csv", ["r"] + [f"n{n}" for n in range(1, args.n_max + 1)], rows,
                      comment="r in units of phi_f; squared overlaps")
        i = int(np.argmax(table[:, 0]))
        print(f"{variant}: max |<f|Psi_1>|^2 = {table[i, 0]:.4f} at r = {rs[i]:.3f}")

    def fig(plt):
        f, axes = plt.subplots(1, 2, figsize=(10, 4), sharey=True)
        for ax, (variant, table) in zip(axes, curves.items()):
            for n in range(table.shape[1]):
                ax.plot(rs, table[:, n], label=f"n={n + 1}")
            ax.set_title(variant)
            ax.set_xlabel("r")
        axes[0].set_ylabel("squared overlap")
        axes[0].legend()
        return f

    save_plot(fig, out / "well_overlap.png")


if __name__ == "__main__":
    main()
