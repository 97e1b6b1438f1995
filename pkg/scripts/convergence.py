"""Second-order convergence of the finite-difference ground eigenvalue for the Laplacian and the quantum well.

    python scripts/convergence.py --out-dir results
"""
import argparse
from pathlib import Path

import numpy as np

from spectraldiff import io as sio
from spectraldiff.grid import DomainBox, laplacian_spec
from spectraldiff.inflation import PotentialModel, hermitized_coefficients, quantum_well_eigensystem, reduced_potential
from spectraldiff.solvers import richardson_fit


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--resolutions", type=int, nargs="+", default=[16, 32, 64, 128, 256])
    p.add_argument("--out-dir", default="results")
    args = p.parse_args(argv)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    well = PotentialModel("quantum_well", {"v0": 0.1, "phi_f": 1.0})
    cases = {
        "laplacian": (laplacian_spec(), np.pi**2),
        "quantum_well": (hermitized_coefficients(reduced_potential(well)).to_operator_spec(DomainBox(-1.0, 1.0)),
                         quantum_well_eigensystem(well, 1)[0]),
    }
    rows = []
    for name, (spec, ref) in cases.items():
        fit = richardson_fit(spec, args.resolutions, reference=ref)
        print(f"{name}: order {fit.orders:.3f}, constant {fit.constant_estimate:.4g}")
        rows += [(name, n, float(lam), abs(float(lam) - ref)) for n, lam in zip(args.resolutions, fit.eigenvalues)]
    sio.write_csv(out / "convergence.csv", ["case", "n_gr", "lambda", "abs_error"], rows,
                  comment="eigenvalues in the operator's units")


if __name__ == "__main__":
    main()
