"""Entry-oracle queries of the simulated estimator versus 1/eps, at a fixed grid and end to end.

    python scripts/complexity_sweep.py --eps 2 1 0.5 0.25 --out-dir results
"""
import argparse
from pathlib import Path

import numpy as np

from _common import save_plot
from spectraldiff import io as sio
from spectraldiff.grid import assemble_fd_matrix, laplacian_spec, sample_function
from spectraldiff.qsvt import EstimatorConfig, end_to_end_estimate, est_eig
from spectraldiff.solvers import richardson_fit


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--eps", type=float, nargs="+", default=[2.0, 1.0, 0.5, 0.25])
    p.add_argument("--n-gr", type=int, default=31, help="grid size for the fixed-matrix sweep")
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--out-dir", default="results")
    args = p.parse_args(argv)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = laplacian_spec(dim=args.dim)
    trial_f = lambda x: np.prod(np.sin(np.pi * x), axis=1)  # noqa: E731
    m = assemble_fd_matrix(spec, args.n_gr)
    trial = sample_function(trial_f, m.grid)
    C1 = richardson_fit(spec, [8, 16, 32, 64] if args.dim == 1 else [6, 12, 24]).constant_estimate
    rows, fixed, e2e = [], [], []
    for eps in args.eps:
        cfg = EstimatorConfig(eps=eps, sampling="exact")
        lam, led = est_eig(m, trial, cfg)
        fixed.append(led.entry_oracle_calls)
        rows.append((eps, "fixed", args.n_gr, lam, led.entry_oracle_calls, led.state_prep_calls))
        lam, n_gr, led = end_to_end_estimate(spec, trial_f, cfg, C1, 0.0)
        e2e.append(led.entry_oracle_calls)
        rows.append((eps, "end_to_end", n_gr, lam, led.entry_oracle_calls, led.state_prep_calls))
        print(f"eps={eps:g}: fixed {fixed[-1]:.3e} calls, end-to-end {e2e[-1]:.3e} calls at n_gr={n_gr}")
    sio.write_csv(out / "complexity_sweep.csv", ["eps", "mode", "n_gr", "lambda_hat", "entry_calls", "state_prep_calls"],
                  rows, comment="eps and lambda_hat in eigenvalue units; calls are query counts")
    inv = 1 / np.array(args.eps)
    if len(args.eps) >= 2:
        for name, calls in (("fixed", fixed), ("end-to-end", e2e)):
            print(f"{name} log-log slope: {np.polyfit(np.log(inv), np.log(calls), 1)[0]:.3f}")

    def fig(plt):
        f, ax = plt.subplots(figsize=(5, 4))
        ax.loglog(inv, fixed, "o-", label="fixed grid")
        ax.loglog(inv, e2e, "s-", label="end to end")
        ax.set_xlabel("1/eps")
        ax.set_ylabel("entry-oracle calls")
        ax.legend()
        return f

    save_plot(fig, out / "complexity_sweep.png")


if __name__ == "__main__":
    main()
