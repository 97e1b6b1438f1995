"""Command-line front end.

Exit codes: 0 ok, 2 configuration error, 3 numerical failure, 4 estimator
failure, 5 root-finding failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io as sio
from .grid import AssemblyError, UniformGrid, assemble_fd_matrix, sample_function
from .inflation import (
    PotentialError,
    PotentialModel,
    RootFindingError,
    analytic_well_overlap,
    assemble_fp_matrix_nonuniform,
    build_hybrid_grid,
    gaussian_test_function,
    hermitized_coefficients,
    overlap_spectrum,
    reduced_potential,
    solve_nonuniform,
)
from .qsvt import EstimatorConfig, EstimatorError, QueryLedger, end_to_end_estimate, est_eig, select_grid_size
from .solvers import ConvergenceError, richardson_fit, smallest_eigs

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ESTIMATOR, EXIT_ROOT = 0, 2, 3, 4, 5


def _threads() -> int:
    raw = os.environ.get("SPECTRALDIFF_THREADS", "")
    try:
        return max(1, int(raw)) if raw else max(1, os.cpu_count() or 1)
    except ValueError:
        raise sio.ConfigError(f"SPECTRALDIFF_THREADS must be an integer, got {raw!r}")


def _out(args) -> Path:
    p = Path(args.out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


# -- commands ----------------------------------------------------------------------


def cmd_eig_fd(args) -> int:
    t0 = time.perf_counter()
    raw = sio.load_json(args.spec)
    spec = sio.spec_from_dict(raw)
    n_gr = int(args.n_gr if args.n_gr is not None else raw.get("n_gr", 31))
    if n_gr < 1:
        raise sio.ConfigError("n_gr must be >= 1")
    k = max(0, int(args.k))
    m = assemble_fd_matrix(spec, n_gr)
    res = smallest_eigs(m, k) if k else None
    out = _out(args)
    vals = [] if res is None else res.eigenvalues
    f1 = sio.write_csv(out / "eigenvalues.csv", ["n", "lambda"], [(i + 1, float(v)) for i, v in enumerate(vals)],
                       comment="lambda in inverse squared domain length units")
    pts = m.grid.points()
    cols = [f"x{i + 1}" for i in range(m.grid.dim)] + [f"v{i + 1}" for i in range(len(vals))]
    vecs = np.column_stack([pts] + ([] if res is None else [v.values for v in res.eigenvectors]))
    f2 = sio.write_csv(out / "eigenvectors.csv", cols, vecs.tolist(), comment="eigenvectors normalised to unit grid norm")
    f3 = sio.write_fd_matrix(out / "matrix.csv", m)
    cfg = {"spec": raw, "n_gr": n_gr, "k": k}
    sio.write_manifest(out, "eig-fd", cfg, None, [f1, f2, f3], t0)
    print(f"eig-fd: n_gr={n_gr} " + " ".join(f"{v:.12g}" for v in vals))
    return EXIT_OK


def _fit_constants(spec, extra: dict) -> tuple[float, float]:
    C1 = extra.get("C1")
    if C1 is None:
        C1 = richardson_fit(spec, [8, 16, 32, 64]).constant_estimate
    return float(C1), float(extra.get("D1", 0.0))


def _load_trial(args, domain):
    if args.trial is None:
        return sio.trial_from_dict(None, domain)
    if args.trial in ("sine", "gaussian"):
        return sio.trial_from_dict(args.trial, domain)
    return sio.trial_from_dict(sio.load_json(args.trial), domain)


def cmd_eig_qsim(args) -> int:
    t0 = time.perf_counter()
    raw_spec = sio.load_json(args.spec)
    spec = sio.spec_from_dict(raw_spec)
    raw_cfg = sio.load_json(args.config)
    cfg, extra = sio.config_from_dict(raw_cfg)
    if args.seed is not None:
        cfg = EstimatorConfig(cfg.eps, cfg.delta, cfg.gamma, cfg.sampling, cfg.shots, int(args.seed))
    trial = _load_trial(args, spec.domain)
    C1, D1 = _fit_constants(spec, extra)
    seeds = [cfg.seed + i for i in range(max(1, int(args.batch_seeds)))]

    def run(seed):
        c = EstimatorConfig(cfg.eps, cfg.delta, cfg.gamma, cfg.sampling, cfg.shots, seed)
        return seed, end_to_end_estimate(spec, trial, c, C1, D1)

    with ThreadPoolExecutor(max_workers=min(_threads(), len(seeds))) as pool:
        results = list(pool.map(run, seeds))

    n_gr = results[0][1][1]
    lam_ref = float(smallest_eigs(assemble_fd_matrix(spec, n_gr), 1).eigenvalues[0])
    rows, total = [], QueryLedger()
    ok = 0
    for seed, (lam, n, ledger) in results:
        hit = abs(lam - lam_ref) <= cfg.eps / 2
        ok += hit
        rows.append((seed, float(lam), n, float(lam_ref), int(hit)))
        total = total + ledger
    out = _out(args)
    f1 = sio.write_csv(out / "estimates.csv", ["seed", "lambda_hat", "n_gr", "lambda_grid_dense", "within_eps_half"], rows,
                       comment="eigenvalues in inverse squared domain length units; within_eps_half is 0 or 1")
    summary = {"C1": C1, "D1": D1, "n_gr": n_gr, "runs": len(rows), "success_rate": ok / len(rows),
               "target_rate": 1 - cfg.delta}
    single = results[0][1][2].to_dict()
    (out / "ledger.json").write_text(json.dumps({"summary": summary, "first_run": single,
                                                 "batch_totals": total.totals()}, indent=2, sort_keys=True) + "\n")
    sio.write_manifest(out, "eig-qsim", {"spec": raw_spec, "config": raw_cfg, "trial": args.trial,
                                         "batch_seeds": len(seeds), **summary},
                       cfg.seed, [f1, out / "ledger.json"], t0, ledger=total.totals())
    print(f"eig-qsim: lambda_hat={rows[0][1]:.10g} n_gr={n_gr} success_rate={ok / len(rows):.3f}")
    return EXIT_OK


def cmd_well_overlap(args) -> int:
    t0 = time.perf_counter()
    if not 0 < args.r_min < args.r_max:
        raise sio.ConfigError("need 0 < r_min < r_max")
    if args.steps < 2 or args.n_max < 1:
        raise sio.ConfigError("need steps >= 2 and n_max >= 1")
    rs = np.linspace(args.r_min, args.r_max, int(args.steps))
    rows = []
    best = (-1.0, None)
    for r in rs:
        for n in range(1, int(args.n_max) + 1):
            o2 = analytic_well_overlap(args.variant, n, float(r)) ** 2
            rows.append((float(r), n, o2))
            if n == 1 and o2 > best[0]:
                best = (o2, float(r))
    out = _out(args)
    f1 = sio.write_csv(out / "overlaps.csv", ["r", "n", "overlap_sq"], rows,
                       comment="r in units of phi_f; overlap_sq dimensionless")
    at_max = [(n, analytic_well_overlap(args.variant, n, best[1]) ** 2) for n in range(1, int(args.n_max) + 1)]
    f2 = sio.write_csv(out / "argmax.csv", ["variant", "r_max", "overlap_sq_n1"], [(args.variant, best[1], best[0])],
                       comment="r_max in units of phi_f")
    f3 = sio.write_csv(out / "overlaps_at_rmax.csv", ["n", "overlap_sq"], at_max, comment="dimensionless")
    sio.write_manifest(out, "well-overlap", vars_config(args), None, [f1, f2, f3], t0)
    print(f"well-overlap: {args.variant} r_max={best[1]:.6g} overlap_sq={best[0]:.6g}")
    return EXIT_OK


def cmd_hybrid(args) -> int:
    t0 = time.perf_counter()
    raw = sio.load_json(args.model) if args.model else {"kind": "hybrid"}
    try:
        model = PotentialModel.from_dict(raw)
    except ValueError as exc:
        raise sio.ConfigError(str(exc)) from exc
    if model.kind != "hybrid":
        raise sio.ConfigError("hybrid command needs a hybrid model")
    if not 0 < args.scale <= 1:
        raise sio.ConfigError("scale must lie in (0, 1]")
    k = max(1, int(args.k))
    grid = build_hybrid_grid(model, args.scale)
    rp = reduced_potential(model)
    hc = hermitized_coefficients(rp, model.mpl)
    op = assemble_fp_matrix_nonuniform(hc, grid, v=rp.v)
    vals, vecs, res = solve_nonuniform(op, k)
    test = gaussian_test_function("hybrid", thresholds=grid.thresholds, phi_c=model.params["phi_c"])
    ov = overlap_spectrum(test, vecs, grid, k)
    out = _out(args)
    f1 = sio.write_csv(out / "eigenvalues.csv", ["n", "Lambda_n", "relative_residual"],
                       [(i + 1, float(v), float(r)) for i, (v, r) in enumerate(zip(vals, res))],
                       comment="Lambda_n per e-fold; residual relative to the largest matrix entry")
    pts = grid.points()
    cols = np.column_stack([pts] + [v.ravel(order="F") for v in vecs])
    f2 = sio.write_csv(out / "eigenfunctions.csv", ["phi", "psi"] + [f"Psi_{i + 1}" for i in range(k)], cols.tolist(),
                       comment="field values in reduced Planck units; Psi normalised with dual cell widths")
    f3 = sio.write_csv(out / "overlaps.csv", ["n", "overlap_sq"], [(i + 1, o) for i, o in enumerate(ov)],
                       comment="weighted squared overlap, dimensionless")
    f4 = sio.write_csv(out / "thresholds.csv", ["name", "value"], sorted(grid.thresholds.items()),
                       comment="field values in reduced Planck units")
    sio.write_manifest(out, "hybrid", {"model": raw, "scale": args.scale, "k": k,
                                       "params": model.params}, None, [f1, f2, f3, f4], t0)
    print("hybrid: Lambda = " + " ".join(f"{v:.6g}" for v in vals))
    return EXIT_OK


def cmd_complexity_sweep(args) -> int:
    t0 = time.perf_counter()
    raw_spec = sio.load_json(args.spec)
    spec = sio.spec_from_dict(raw_spec)
    raw_cfg = sio.load_json(args.config)
    base, extra = sio.config_from_dict(raw_cfg)
    eps_list = [float(e) for e in extra.get("eps_list", [])]
    if len(eps_list) < 3:
        raise sio.ConfigError("complexity-sweep needs at least 3 eps values in eps_list")
    n_fixed = int(extra.get("n_gr", 31))
    trial_f = _load_trial(args, spec.domain)
    C1, D1 = _fit_constants(spec, extra)
    m = assemble_fd_matrix(spec, n_fixed)
    trial = sample_function(trial_f, UniformGrid(spec.domain, n_fixed))

    def fixed(eps):
        c = EstimatorConfig(eps, base.delta, base.gamma, base.sampling, base.shots, base.seed)
        return est_eig(m, trial, c)[1]

    def e2e(eps):
        c = EstimatorConfig(eps, base.delta, base.gamma, base.sampling, base.shots, base.seed)
        _, n, led = end_to_end_estimate(spec, trial_f, c, C1, D1)
        return n, led

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        fixed_l = list(pool.map(fixed, eps_list))
        e2e_l = list(pool.map(e2e, eps_list))
    rows = []
    for eps, led in zip(eps_list, fixed_l):
        rows.append((eps, "fixed", led.entry_oracle_calls, led.state_prep_calls, n_fixed))
    for eps, (n, led) in zip(eps_list, e2e_l):
        rows.append((eps, "end_to_end", led.entry_oracle_calls, led.state_prep_calls, n))
    inv = 1.0 / np.array(eps_list)
    s_fixed = _loglog_slope(inv, [l.entry_oracle_calls for l in fixed_l])
    s_e2e = _loglog_slope(inv, [l.entry_oracle_calls for _, l in e2e_l])
    out = _out(args)
    f1 = sio.write_csv(out / "sweep.csv", ["eps", "mode", "entry_calls", "state_prep_calls", "n_gr"], rows,
                       comment="eps in eigenvalue units; calls are query counts")
    f2 = sio.write_csv(out / "slopes.csv", ["mode", "loglog_slope_vs_inv_eps"], [("fixed", s_fixed), ("end_to_end", s_e2e)],
                       comment="dimensionless log-log slopes")
    sio.write_manifest(out, "complexity-sweep", {"spec": raw_spec, "config": raw_cfg, "C1": C1, "D1": D1},
                       base.seed, [f1, f2], t0)
    print(f"complexity-sweep: fixed slope {s_fixed:.3f}, end-to-end slope {s_e2e:.3f}")
    return EXIT_OK


def vars_config(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("func",) and not callable(v)}


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spectraldiff", description="Sturm-Liouville eigenvalues: classical, simulated QSVT, inflation studies.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out-dir", default="out", help="directory for CSV outputs and manifest.json")

    s = sub.add_parser("eig-fd", help="finite-difference eigenpairs")
    s.add_argument("--spec", required=True)
    s.add_argument("--n-gr", type=int, default=None)
    s.add_argument("--k", type=int, default=1)
    common(s)
    s.set_defaults(func=cmd_eig_fd)

    s = sub.add_parser("eig-qsim", help="simulated quantum eigenvalue estimate")
    s.add_argument("--spec", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--trial", default=None, help="'sine', 'gaussian' or a JSON file")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--batch-seeds", type=int, default=1)
    common(s)
    s.set_defaults(func=cmd_eig_qsim)

    s = sub.add_parser("well-overlap", help="analytic quantum-well overlaps versus r")
    s.add_argument("--variant", choices=["hilltop", "inflection"], default="hilltop")
    s.add_argument("--r-min", type=float, default=0.05)
    s.add_argument("--r-max", type=float, default=3.0)
    s.add_argument("--steps", type=int, default=600)
    s.add_argument("--n-max", type=int, default=10)
    common(s)
    s.set_defaults(func=cmd_well_overlap)

    s = sub.add_parser("hybrid", help="hybrid-inflation spectrum and overlaps")
    s.add_argument("--model", default=None, help="model JSON (defaults to the reference parameters)")
    s.add_argument("--scale", type=float, default=0.1)
    s.add_argument("--k", type=int, default=10)
    common(s)
    s.set_defaults(func=cmd_hybrid)

    s = sub.add_parser("complexity-sweep", help="oracle-query scaling versus eps")
    s.add_argument("--spec", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--trial", default=None)
    common(s)
    s.set_defaults(func=cmd_complexity_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (sio.ConfigError, PotentialError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RootFindingError as exc:
        print(f"root finding failed: {exc}", file=sys.stderr)
        return EXIT_ROOT
    except EstimatorError as exc:
        print(f"estimator failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATOR
    except (ConvergenceError, AssemblyError, np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
