"""Hermitised adjoint Fokker-Planck operators for stochastic inflation.

Internal units set the reduced Planck mass to ``mpl`` (default 1).  The
reduced potential is ``v = V / (24 pi^2 mpl^4)`` and the adjoint
Fokker-Planck operator is ``L^dag / mpl^2 = (1/w) div(w v grad)`` with
weight ``w = exp(1/v) / v``.  Conjugating by ``w^{1/2}`` yields a
Sturm-Liouville operator with ``a_i = mpl^2 v`` and

    a_0 = -mpl^2 sum_i (2 v^2 (1 + v) v_ii - (1 + 4 v + v^2) v_i^2) / (4 v^3).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.optimize as sopt
import scipy.sparse as sp
import scipy.sparse.linalg as spla
import scipy.special as ssp

from .grid import DomainBox, OperatorSpec
from .solvers import lanczos_smallest_eigs

Field = Callable[[np.ndarray], np.ndarray]

MPL_GEV = 2.435e18
KINDS = ("quantum_well", "inflection_well", "hybrid")


class PotentialError(ValueError):
    """The reduced potential is non-positive where it must be positive."""


class RootFindingError(RuntimeError):
    def __init__(self, msg, profile=None):
        super().__init__(msg)
        self.profile = profile or []


# -- models ---------------------------------------------------------------------


@dataclass(frozen=True)
class PotentialModel:
    """Potential family plus parameters.

    Well models take ``v0`` and ``phi_f`` (and an optional ``wall`` strength
    for the steep ascent beyond ``phi_f``).  The hybrid model takes ``V0``
    (units of ``mpl^4``), ``M``, ``phi_c`` (field units) and ``beta``.
    """

    kind: str
    params: dict = field(default_factory=dict)
    mpl: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        need = ("V0", "M", "phi_c", "beta") if self.kind == "hybrid" else ("v0", "phi_f")
        for key in need:
            if key not in self.params:
                raise ValueError(f"{self.kind} model needs parameter {key!r}")
            if not self.params[key] > 0:
                raise ValueError(f"parameter {key} must be positive, got {self.params[key]}")
        if self.params.get("wall", 0.0) < 0:
            raise ValueError("wall strength must be non-negative")
        if not self.mpl > 0:
            raise ValueError("mpl must be positive")

    @property
    def dim(self) -> int:
        return 2 if self.kind == "hybrid" else 1

    @classmethod
    def hybrid(cls, V0=1e-15, M_GeV=1e16, phi_c_over_M=math.sqrt(2.0), beta=1e4, mpl=1.0) -> "PotentialModel":
        M = M_GeV / MPL_GEV * mpl
        return cls("hybrid", {"V0": V0, "M": M, "phi_c": phi_c_over_M * M, "beta": beta}, mpl)

    @classmethod
    def from_dict(cls, d: dict) -> "PotentialModel":
        d = dict(d)
        kind = d.pop("kind", None)
        mpl = float(d.pop("mpl", 1.0))
        if kind == "hybrid":
            allowed = {"V0", "M_GeV", "phi_c_over_M", "beta"}
            extra = set(d) - allowed
            if extra:
                raise ValueError(f"unknown hybrid parameters {sorted(extra)}")
            return cls.hybrid(mpl=mpl, **{k: float(v) for k, v in d.items()})
        if kind in ("quantum_well", "inflection_well"):
            return cls(kind, {k: float(v) for k, v in d.items()}, mpl)
        raise ValueError(f"unknown model kind {kind!r}")


@dataclass(frozen=True)
class ReducedPotential:
    """``v`` with its gradient and diagonal Hessian.

    When ``rel`` is set, ``v = scale (1 + rel)``; differences of ``1/v`` are
    then computed from ``rel`` without cancellation.
    """

    v: Field
    grad: tuple
    hess_diag: tuple
    dim: int
    scale: float | None = None
    rel: Field | None = None


def _col(x: np.ndarray, i: int) -> np.ndarray:
    return np.asarray(x, dtype=float).reshape(len(x), -1)[:, i]


def _well_fields(model: PotentialModel):
    v0, pf = model.params["v0"], model.params["phi_f"]
    kappa = model.params.get("wall", 0.0) if model.kind == "inflection_well" else 0.0

    def m(x):
        return np.maximum(_col(x, 0) - pf, 0.0)

    rel = lambda x: kappa * m(x) ** 3  # noqa: E731
    v = lambda x: v0 * (1.0 + rel(x))  # noqa: E731
    dv = lambda x: 3.0 * kappa * v0 * m(x) ** 2  # noqa: E731
    d2v = lambda x: 6.0 * kappa * v0 * m(x)  # noqa: E731
    return v, (dv,), (d2v,), v0, rel


def _hybrid_fields(model: PotentialModel):
    p, mpl = model.params, model.mpl
    V0, M, pc, beta = p["V0"], p["M"], p["phi_c"], p["beta"]
    norm = 24.0 * math.pi**2 * mpl**4
    c = V0 / norm
    b = beta / mpl**3

    def rel(x):
        f, s = _col(x, 0), _col(x, 1)
        return b * (f - pc) ** 3 - (s / M) ** 2 + 2.0 * (f * s / (pc * M)) ** 2

    def v(x):
        return c * (1.0 + rel(x))

    def v_f(x):
        f, s = _col(x, 0), _col(x, 1)
        return c * (3.0 * b * (f - pc) ** 2 + 4.0 * f * s**2 / (pc * M) ** 2)

    def v_s(x):
        f, s = _col(x, 0), _col(x, 1)
        return c * s * (-2.0 / M**2 + 4.0 * f**2 / (pc * M) ** 2)

    def v_ff(x):
        f, s = _col(x, 0), _col(x, 1)
        return c * (6.0 * b * (f - pc) + 4.0 * s**2 / (pc * M) ** 2)

    def v_ss(x):
        f = _col(x, 0)
        return c * (-2.0 / M**2 + 4.0 * f**2 / (pc * M) ** 2)

    return v, (v_f, v_s), (v_ff, v_ss), c, rel


def default_validation_points(model: PotentialModel, n: int = 41) -> np.ndarray:
    """Points where ``v > 0`` is required: the well, or a box around ``(phi_c, 0)``."""
    if model.kind != "hybrid":
        pf = model.params["phi_f"]
        return np.linspace(-pf, pf, n)[:, None]
    p = model.params
    half = 0.5 * p["beta"] ** (-1 / 3) * model.mpl
    f = np.linspace(p["phi_c"] - half, p["phi_c"] + half, n)
    s = np.linspace(-0.5 * p["M"], 0.5 * p["M"], n)
    F, S = np.meshgrid(f, s, indexing="ij")
    return np.column_stack([F.ravel(), S.ravel()])


def reduced_potential(model: PotentialModel, validation_points: np.ndarray | None = None) -> ReducedPotential:
    """Reduced potential with closed-form gradient and diagonal Hessian.

    Raises
    ------
    PotentialError
        If ``v <= 0`` at any validation point.
    """
    v, grad, hess, scale, rel = _hybrid_fields(model) if model.kind == "hybrid" else _well_fields(model)
    pts = default_validation_points(model) if validation_points is None else np.atleast_2d(validation_points)
    if pts.shape[1] != model.dim:
        pts = pts.reshape(-1, model.dim)
    vals = v(pts)
    bad = vals <= 0
    if bad.any():
        lo, hi = pts[bad].min(axis=0), pts[bad].max(axis=0)
        raise PotentialError(f"v <= 0 at {int(bad.sum())} validation points spanning {lo.tolist()} to {hi.tolist()}")
    return ReducedPotential(v, tuple(grad), tuple(hess), model.dim, scale, rel)


# -- Hermitisation ------------------------------------------------------------------


@dataclass(frozen=True)
class HermitizedCoefficients:
    a_diffusion: tuple
    a_zero: Field
    weight: Field
    log_weight: Field
    dim: int
    mpl: float = 1.0
    log_weight_diff: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None

    def to_operator_spec(self, domain: DomainBox, name: str = "hermitized_fp") -> OperatorSpec:
        if domain.dim != self.dim:
            raise ValueError(f"domain has dim {domain.dim}, coefficients have dim {self.dim}")
        return OperatorSpec(domain, self.a_zero, list(self.a_diffusion), name)


def _positive(v: np.ndarray, where: str) -> np.ndarray:
    if (v <= 0).any():
        raise PotentialError(f"v <= 0 while evaluating {where}; the Hermitised operator needs v > 0")
    return v


def hermitized_coefficients(rp: ReducedPotential, mpl: float = 1.0) -> HermitizedCoefficients:
    """Sturm-Liouville coefficients of ``-w^{1/2} L^dag w^{-1/2}``."""
    m2 = mpl**2

    def a_i(x):
        return m2 * _positive(rp.v(x), "a_i")

    def a_zero(x):
        v = _positive(rp.v(x), "a_0")
        acc = np.zeros_like(v)
        for g, h in zip(rp.grad, rp.hess_diag):
            vi, vii = g(x), h(x)
            acc += 2.0 * v**2 * (1.0 + v) * vii - (1.0 + 4.0 * v + v**2) * vi**2
        return -m2 * acc / (4.0 * v**3)

    def log_weight(x):
        v = _positive(rp.v(x), "w")
        return 1.0 / v - np.log(v)

    def weight(x):
        return np.exp(log_weight(x))

    def log_weight_diff(x, y):
        """``log w(y) - log w(x)``; ``+inf`` where ``v(y) <= 0``."""
        if rp.rel is None:
            with np.errstate(invalid="ignore", divide="ignore"):
                vx, vy = rp.v(x), rp.v(y)
                out = (1.0 / vy - np.log(vy)) - (1.0 / vx - np.log(vx))
            return np.where(vy > 0, out, np.inf)
        gx, gy = rp.rel(x), rp.rel(y)
        ok = 1.0 + gy > 0
        with np.errstate(invalid="ignore", divide="ignore"):
            out = (gx - gy) / (rp.scale * (1.0 + gx) * (1.0 + gy)) - (np.log1p(gy) - np.log1p(gx))
        return np.where(ok, out, np.inf)

    return HermitizedCoefficients(tuple([a_i] * rp.dim), a_zero, weight, log_weight, rp.dim, mpl, log_weight_diff)


def adjoint_fp_apply(rp: ReducedPotential, f: Field, x: np.ndarray, mpl: float = 1.0, h: float = 1e-4) -> np.ndarray:
    """``-L^dag f`` in one dimension by central differences of ``f``."""
    x = np.asarray(x, dtype=float).reshape(-1, 1)
    fp = (f(x + h) - f(x - h)) / (2 * h)
    fpp = (f(x + h) - 2 * f(x) + f(x - h)) / h**2
    v = rp.v(x)
    return -mpl**2 * (v * fpp - rp.grad[0](x) / v * fp)


def direct_adjoint_fp_matrix(rp: ReducedPotential, lower: float, upper: float, n: int, mpl: float = 1.0) -> sp.csr_matrix:
    """Nonsymmetric central-difference matrix of ``-L^dag`` on ``n`` interior nodes (Dirichlet)."""
    if rp.dim != 1:
        raise ValueError("direct discretisation is one-dimensional")
    h = (upper - lower) / (n + 1)
    x = (lower + h * (np.arange(n) + 1))[:, None]
    v, dv = rp.v(x), rp.grad[0](x)
    _positive(v, "the adjoint operator")
    m2 = mpl**2
    lo = -m2 * (v / h**2 + dv / v / (2 * h))
    hi = -m2 * (v / h**2 - dv / v / (2 * h))
    main = 2 * m2 * v / h**2
    return sp.diags([lo[1:], main, hi[:-1]], [-1, 0, 1], format="csr")


def nonsymmetric_smallest_eigs(A: sp.spmatrix, k: int, sigma: float = 0.0) -> np.ndarray:
    """Smallest-real-part eigenvalues of a nonsymmetric matrix by shift-invert Arnoldi."""
    n = A.shape[0]
    vals = spla.eigs(sp.csc_matrix(A), k=min(k + 4, n - 2), sigma=sigma, which="LM", return_eigenvectors=False)
    if np.abs(vals.imag).max() > 1e-8 * np.abs(vals).max():
        warnings.warn("complex eigenvalues in the direct discretisation", RuntimeWarning, stacklevel=2)
    return np.sort(vals.real)[:k]


# -- analytic quantum-well baselines -------------------------------------------------


def quantum_well_eigensystem(model: PotentialModel, n: int, boundary: str = "absorbing_both"):
    """Analytic eigenvalue ``Lambda_n`` and normalised eigenfunction ``Psi_n``.

    ``absorbing_reflective`` puts the reflective end at ``+phi_f``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if boundary not in ("absorbing_both", "absorbing_reflective"):
        raise ValueError(f"unknown boundary {boundary!r}")
    v0, pf, mpl = model.params["v0"], model.params["phi_f"], model.mpl
    q = n if boundary == "absorbing_both" else n - 0.5
    lam = q**2 * math.pi**2 * mpl**2 * v0 / (4 * pf**2)

    def psi(x):
        f = _col(x, 0) if np.ndim(x) == 2 else np.asarray(x, dtype=float)
        out = np.sin(q * math.pi * (f + pf) / (2 * pf)) / math.sqrt(pf)
        return np.where(np.abs(f) <= pf, out, 0.0)

    return lam, psi


def gaussian_test_function(variant: str, r: float | None = None, phi_f: float = 1.0,
                           thresholds: dict | None = None, phi_c: float | None = None) -> Field:
    """Gaussian trial functions.

    ``hilltop`` is centred at 0 and ``inflection`` at ``phi_f``; both are
    normalised on ``[-phi_f, phi_f]``.  ``hybrid`` is centred at
    ``(phi_c, 0)`` with widths set by the stochastic thresholds and is left
    unnormalised.
    """
    if variant == "hybrid":
        if thresholds is None or phi_c is None:
            raise ValueError("hybrid test function needs thresholds and phi_c")
        sf = thresholds["phi_sto_plus"] - phi_c
        ss = thresholds["psi_sto_plus"]
        return lambda x: np.exp(-((_col(x, 0) - phi_c) ** 2) / (2 * sf**2) - _col(x, 1) ** 2 / (2 * ss**2))
    if r is None or not r > 0:
        raise ValueError("r must be positive")
    if variant == "hilltop":
        c = (math.sqrt(math.pi) * r * phi_f * math.erf(1 / r)) ** -0.5
        centre = 0.0
    elif variant == "inflection":
        c = (0.5 * math.sqrt(math.pi) * r * phi_f * math.erf(2 / r)) ** -0.5
        centre = phi_f
    else:
        raise ValueError(f"unknown variant {variant!r}")

    def f(x):
        p = _col(x, 0) if np.ndim(x) == 2 else np.asarray(x, dtype=float)
        return c * np.exp(-((p - centre) ** 2) / (2 * r**2 * phi_f**2))

    return f


def _damped_erf_sum(a: float, b: float) -> float:
    """``exp(-b^2) (erf(a - ib) + erf(a + ib))`` without overflow.

    Uses ``exp(-b^2) erf(z) = exp(-b^2) - exp(-a^2 + 2iab) w(iz)`` with
    ``z = a - ib`` and the Faddeeva function ``w``.
    """
    z = complex(a, -b)
    val = math.exp(-b * b) - np.exp(complex(-a * a, 2 * a * b)) * ssp.wofz(1j * z)
    return 2.0 * val.real


def analytic_well_overlap(variant: str, n: int, r: float) -> float:
    """Closed-form ``<f_1|Psi_n>`` for the hilltop and inflection wells.

    Independent of ``phi_f``.  Hilltop overlaps vanish for even ``n``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not r > 0:
        raise ValueError("r must be positive")
    if variant == "hilltop":
        if n % 2 == 0:
            return 0.0
        pref = math.pi**0.25 * math.sqrt(r) / math.sqrt(2 * math.erf(1 / r))
        phase = (-1) ** ((n - 1) // 2)
        a, b = 1 / (math.sqrt(2) * r), n * math.pi * r / (2 * math.sqrt(2))
        return pref * phase * _damped_erf_sum(a, b)
    if variant == "inflection":
        pref = -((-1) ** n) * math.pi**0.25 * math.sqrt(r) / (2 * math.sqrt(math.erf(2 / r)))
        a, b = math.sqrt(2) / r, (2 * n - 1) * math.pi * r / (4 * math.sqrt(2))
        return pref * _damped_erf_sum(a, b)
    raise ValueError(f"unknown variant {variant!r}")


# -- single-field diagnostics ---------------------------------------------------------------


@dataclass(frozen=True)
class InflationDiagnostics:
    """Single-field slow-roll and stochasticity diagnostics (``omega_n_sq`` is approximate)."""

    p_zeta: Field
    eta_sto: Field
    eta_v: Field
    omega_n_sq: Callable[[float, np.ndarray], np.ndarray]


def _safe_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = num / den
    flat = den == 0
    out[flat] = np.where(num[flat] == 0, np.nan, np.copysign(np.inf, num[flat]))
    return out


def diagnostics(rp: ReducedPotential, mpl: float = 1.0) -> InflationDiagnostics:
    """``P_zeta = 2v^3/(v'^2 mpl^2)``, ``eta_sto = v^2 v''/v'^2``, ``eta_V = mpl^2 v''/v``.

    ``P_zeta`` is ``+inf`` at flat points.  ``omega_n^2`` is evaluated in the
    equivalent finite form ``-v'^2/(4v^4) + Lambda/(mpl^2 v) + v''/(2v^2)``.
    """
    if rp.dim != 1:
        raise ValueError("diagnostics are defined for single-field models")
    g, hh = rp.grad[0], rp.hess_diag[0]

    def p_zeta(x):
        v, d = rp.v(x), g(x)
        return _safe_ratio(2 * v**3, d**2 * mpl**2)

    def eta_sto(x):
        v, d, d2 = rp.v(x), g(x), hh(x)
        return _safe_ratio(v**2 * d2, d**2)

    def eta_v(x):
        # mpl^2 v''/v: the form for which eta_sto = eta_V P_zeta / 2 holds
        return mpl**2 * hh(x) / rp.v(x)

    def omega_n_sq(lam, x):
        v, d, d2 = rp.v(x), g(x), hh(x)
        return -(d**2) / (4 * v**4) + lam / (mpl**2 * v) + d2 / (2 * v**2)

    return InflationDiagnostics(p_zeta, eta_sto, eta_v, omega_n_sq)


# -- hybrid grid ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NonuniformGrid2D:
    """Tensor grid whose first and last node on each axis are Dirichlet boundary nodes."""

    phi_nodes: np.ndarray
    psi_nodes: np.ndarray
    thresholds: dict

    def __post_init__(self):
        for name in ("phi_nodes", "psi_nodes"):
            x = getattr(self, name)
            if x.ndim != 1 or len(x) < 3 or not (np.diff(x) > 0).all():
                raise ValueError(f"{name} must be strictly increasing with at least 3 nodes")

    @property
    def axes(self) -> tuple:
        return (self.phi_nodes, self.psi_nodes)

    @property
    def shape(self) -> tuple:
        return (len(self.phi_nodes), len(self.psi_nodes))

    @staticmethod
    def forward_widths(x: np.ndarray) -> np.ndarray:
        """``x_{k+1} - x_k``, zero for the last node."""
        return np.append(np.diff(x), 0.0)

    @property
    def cell_weights(self) -> np.ndarray:
        """``dphi_k dpsi_l`` on the full node grid, indexed ``[k, l]``."""
        return np.outer(self.forward_widths(self.phi_nodes), self.forward_widths(self.psi_nodes))

    def points(self) -> np.ndarray:
        """All nodes, first axis fastest, shape ``(n_phi n_psi, 2)``."""
        F, S = np.meshgrid(self.phi_nodes, self.psi_nodes, indexing="ij")
        return np.column_stack([F.ravel(order="F"), S.ravel(order="F")])


def _scan_root(g: Callable[[float], float], start: float, stop: float, factor: float = 2.0,
               rtol: float = 1e-12, what: str = "root") -> float:
    """Bisection root of ``g`` on ``(start, stop]`` after geometric bracketing."""
    profile = []
    x0 = start
    g0 = g(x0)
    profile.append((x0, g0))
    x = x0
    while x < stop:
        x1 = min(x * factor, stop)
        g1 = g(x1)
        profile.append((x1, g1))
        if np.sign(g1) != np.sign(g0):
            return float(sopt.bisect(g, x, x1, xtol=1e-300, rtol=max(rtol, 4 * np.finfo(float).eps), maxiter=2000))
        x, g0 = x1, g1
    signs = " ".join(f"{p:.3e}:{'+' if q > 0 else '-'}" for p, q in profile[:: max(1, len(profile) // 12)])
    raise RootFindingError(f"no sign change found for {what}; scanned {signs}", profile)


def hybrid_thresholds(model: PotentialModel, eta_target: float = 0.1) -> dict:
    """All eight window edges of the hybrid grid, each located by bisection."""
    if model.kind != "hybrid":
        raise ValueError("thresholds are defined for the hybrid model")
    p, mpl = model.params, model.mpl
    pc, beta, M = p["phi_c"], p["beta"], p["M"]
    v, grad, hess, _, _ = _hybrid_fields(model)

    def at(f, s):
        return np.array([[f, s]])

    # edge of the inflating range: beta |phi - phi_c|^3 = mpl^3
    u_max = _scan_root(lambda u: beta * u**3 / mpl**3 - 1.0, 1e-30 * mpl, 1e3 * mpl, what="phi range")

    def eta_phi(u):
        x = at(pc + u, 0.0)
        return float(v(x)[0] ** 2 * hess[0](x)[0] / grad[0](x)[0] ** 2) - eta_target

    # offsets below float resolution around phi_c collapse onto phi_c
    u_start = max(1e-30 * mpl, 64 * np.finfo(float).eps * abs(pc))
    u_sto = _scan_root(eta_phi, u_start, u_max, what="phi_sto")
    f_sto = pc + u_sto

    def eta_psi(s):
        x = at(f_sto, s)
        return float(v(x)[0] ** 2 * hess[1](x)[0] / grad[1](x)[0] ** 2) - eta_target

    def slow_roll_end(s):
        x = at(pc, s)
        return float(mpl**2 * abs(hess[1](x)[0] / v(x)[0])) - 1.0

    s_max = _scan_root(slow_roll_end, 1e-30 * mpl, 1e6 * mpl, what="psi range")
    s_sto = _scan_root(eta_psi, 1e-40 * mpl, s_max, what="psi_sto")
    return {
        "phi_sto_plus": f_sto,
        "phi_sto_minus": pc - u_sto,
        "psi_sto_plus": s_sto,
        "psi_sto_minus": -s_sto,
        "phi_min": pc - u_max,
        "phi_max": pc + u_max,
        "psi_min": -s_max,
        "psi_max": s_max,
    }


def _axis_nodes(centre: float, inner: float, outer: float, n_lin: int, n_log: int) -> np.ndarray:
    """Linear nodes on ``centre +- inner`` plus log-spaced offsets out to ``outer`` per side."""
    lin = centre + np.linspace(-inner, inner, n_lin)
    off = np.exp(np.linspace(math.log(inner), math.log(outer), n_log + 1))[1:]
    right = centre + off
    left = centre - off[::-1]
    return np.concatenate([left, lin, right])


def build_hybrid_grid(model: PotentialModel, resolution_scale: float = 1.0, eta_target: float = 0.1) -> NonuniformGrid2D:
    """Hybrid-inflation grid: ``ceil(1000 s)`` linear nodes inside the stochastic window and
    ``ceil(500 s)`` log-spaced nodes on each side, per axis."""
    if not 0 < resolution_scale <= 1:
        raise ValueError("resolution_scale must lie in (0, 1]")
    th = hybrid_thresholds(model, eta_target)
    n_lin = int(math.ceil(1000 * resolution_scale))
    n_log = int(math.ceil(500 * resolution_scale))
    pc = model.params["phi_c"]
    phi = _axis_nodes(pc, th["phi_sto_plus"] - pc, th["phi_max"] - pc, n_lin, n_log)
    psi = _axis_nodes(0.0, th["psi_sto_plus"], th["psi_max"], n_lin, n_log)
    # make the psi axis exactly antisymmetric
    psi = 0.5 * (psi - psi[::-1])
    return NonuniformGrid2D(phi, psi, th)


# -- nonuniform assembly ------------------------------------------------------------------------


@dataclass
class NonuniformOperator:
    """``A = W^{-1} K`` on the active interior nodes of a tensor grid.

    ``K`` is the symmetric flux-form matrix and ``W`` the product of dual
    cell widths, so ``S = W^{-1/2} K W^{-1/2}`` is symmetric with the same
    spectrum as ``A``.
    """

    matrix: sp.csr_matrix
    symmetric: sp.csr_matrix
    weights: np.ndarray
    active: np.ndarray
    axes: tuple

    @property
    def interior_shape(self) -> tuple:
        return tuple(len(x) - 2 for x in self.axes)

    def to_full(self, u: np.ndarray) -> np.ndarray:
        """Zero-pad a vector on active nodes to the full node grid (first axis fastest)."""
        inner = np.zeros(int(np.prod(self.interior_shape)))
        inner[self.active] = u
        full = np.zeros(tuple(len(x) for x in self.axes))
        full[tuple(slice(1, -1) for _ in self.axes)] = inner.reshape(self.interior_shape, order="F")
        return full


def _interior_points(axes: Sequence[np.ndarray]) -> np.ndarray:
    grids = np.meshgrid(*[x[1:-1] for x in axes], indexing="ij")
    return np.column_stack([g.ravel(order="F") for g in grids])


EXPONENT_CAP = 100.0


def assemble_nonuniform(a: Sequence[Field], a0: Field | None, axes: Sequence[np.ndarray],
                        active: np.ndarray | None = None, positivity: Field | None = None,
                        log_weight_diff: Callable | None = None) -> NonuniformOperator:
    """Conservative second-order scheme on a tensor grid with Dirichlet ends.

    Parameters
    ----------
    a, a0 : fields
        Diffusion coefficients (evaluated at edge midpoints) and potential.
    axes : sequence of arrays
        Full node coordinates per axis, endpoints included.
    active : bool array over interior nodes, optional
        Nodes kept as unknowns; the rest are treated as absorbing.
    positivity : field, optional
        Nodes where this field is non-positive, at the node or at an
        adjacent edge midpoint, are dropped from ``active``.
    log_weight_diff : callable, optional
        ``(x, y) -> log w(y) - log w(x)``.  When given, the operator is the
        conjugation by ``w^{1/2}`` of the flux-form discretisation of
        ``-(1/w) div(w a grad)``: each edge adds ``G_e exp((L_k - L_j)/2)``
        to the diagonal of node ``j`` and ``a0`` is not used.  This keeps the
        discrete zero mode of the unconjugated operator exact and makes the
        matrix positive definite.  Exponents are capped at ``EXPONENT_CAP``.
    """
    axes = [np.asarray(x, dtype=float) for x in axes]
    for x in axes:
        if len(x) < 3 or not (np.diff(x) > 0).all():
            raise ValueError("node coordinates must be strictly increasing with at least 3 nodes")
    d = len(axes)
    shape = [len(x) - 2 for x in axes]
    N = int(np.prod(shape))
    strides = np.cumprod([1] + shape[:-1])
    J = np.arange(N)
    idx = np.stack([(J // strides[i]) % shape[i] for i in range(d)], axis=1)
    pts = _interior_points(axes)
    active = np.ones(N, dtype=bool) if active is None else np.asarray(active, dtype=bool).copy()

    # dual widths and edge geometry
    dual = [0.5 * (x[2:] - x[:-2]) for x in axes]
    W = np.prod([dual[i][idx[:, i]] for i in range(d)], axis=0)

    edges = []
    for i in range(d):
        x = axes[i]
        j = idx[:, i]
        e_pts = []
        for side in (0, 1):  # left edge between nodes j, j+1 of the full axis; right between j+1, j+2
            p = pts.copy()
            p[:, i] = 0.5 * (x[j + side] + x[j + side + 1])
            e_pts.append(p)
        edges.append(e_pts)
    if positivity is not None:
        ok = positivity(pts) > 0
        for i in range(d):
            for p in edges[i]:
                ok &= positivity(p) > 0
        active &= ok

    diag = np.zeros(N)
    rows, cols, vals = [], [], []
    sel = np.flatnonzero(active)
    if log_weight_diff is None:
        a0v = np.zeros(N)
        if sel.size:
            a0v[sel] = a0(pts[sel])
        diag += W * a0v
    for i in range(d):
        x = axes[i]
        j = idx[:, i]
        other = W / dual[i][j]
        left = np.zeros(N)
        right = np.zeros(N)
        if sel.size:
            left[sel] = a[i](edges[i][0][sel])
            right[sel] = a[i](edges[i][1][sel])
        gl = other * left / (x[j + 1] - x[j])
        gr = other * right / (x[j + 2] - x[j + 1])
        if log_weight_diff is None:
            diag += gl + gr
        else:
            for g, side in ((gl, 0), (gr, 2)):
                ex = np.zeros(N)
                if sel.size:
                    nb = pts[sel].copy()
                    nb[:, i] = x[j[sel] + side]
                    ex[sel] = np.minimum(0.5 * log_weight_diff(pts[sel], nb), EXPONENT_CAP)
                diag += g * np.exp(ex)
        has_right = (j < shape[i] - 1)
        src = J[has_right]
        dst = src + strides[i]
        both = active[src] & active[dst]
        src, dst = src[both], dst[both]
        w = -gr[src]
        rows += [src, dst]
        cols += [dst, src]
        vals += [w, w]
    rows.append(J)
    cols.append(J)
    vals.append(diag)
    K = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))
    K = K[sel][:, sel].tocsr()
    Wa = W[sel]
    isq = sp.diags(1.0 / np.sqrt(Wa))
    S = (isq @ K @ isq).tocsr()
    S = ((S + S.T) * 0.5).tocsr()
    A = (sp.diags(1.0 / Wa) @ K).tocsr()
    for m in (S, A):
        m.sort_indices()
    return NonuniformOperator(A, S, Wa, active, tuple(axes))


def assemble_fp_matrix_nonuniform(coeffs: HermitizedCoefficients, grid: NonuniformGrid2D,
                                  v: Field | None = None, scheme: str = "ground_state") -> NonuniformOperator:
    """Hermitised operator on the hybrid grid; nodes touching ``v <= 0`` are absorbing.

    ``scheme="coefficient"`` uses ``a_i`` and ``a_0`` directly.  On the hybrid
    grid that form loses the near-exact cancellation between the waterfall
    zero-point energy and ``a_0`` (errors of order ``kappa (h/sigma)^2`` swamp
    eigenvalues near ``1e-3``), so the default ``"ground_state"`` scheme
    discretises ``-L^dag`` in flux form and conjugates by ``w^{1/2}`` exactly.
    """
    if scheme == "coefficient":
        return assemble_nonuniform(list(coeffs.a_diffusion), coeffs.a_zero, grid.axes, positivity=v)
    if scheme != "ground_state":
        raise ValueError(f"unknown scheme {scheme!r}")
    if coeffs.log_weight_diff is None:
        raise ValueError("ground_state scheme needs log_weight_diff")
    return assemble_nonuniform(list(coeffs.a_diffusion), None, grid.axes, positivity=v,
                               log_weight_diff=coeffs.log_weight_diff)


def solve_nonuniform(op: NonuniformOperator, k: int, sigma: float = 0.0, tol: float = 1e-10):
    """Smallest ``k`` eigenpairs of ``A``; eigenvectors returned on the full node grid.

    Each eigenfunction is scaled so that ``sum u^2 W = 1`` over active nodes
    and its largest-magnitude entry is positive.  Residuals are reported
    relative to ``||S||_max``.
    """
    res = lanczos_smallest_eigs(op.symmetric, k, tol=tol, sigma=sigma)
    vecs = []
    for y in res.eigenvectors:
        u = np.asarray(y) / np.sqrt(op.weights)
        u /= math.sqrt(float(u @ (u * op.weights)))
        vecs.append(op.to_full(u))
    smax = float(abs(op.symmetric).max())
    return res.eigenvalues, vecs, res.residuals / smax


def overlap_spectrum(test: Field, eigvecs: Sequence[np.ndarray], grid: NonuniformGrid2D, k: int | None = None) -> list:
    """Squared overlaps weighted by ``dphi_k dpsi_l`` for ``n = 1..k``."""
    k = len(eigvecs) if k is None else int(k)
    if k > len(eigvecs):
        raise ValueError(f"requested {k} overlaps but only {len(eigvecs)} eigenvectors")
    cw = grid.cell_weights
    f = np.asarray(test(grid.points()), dtype=float).reshape(grid.shape, order="F")
    ff = float((f * f * cw).sum())
    if ff == 0:
        raise ValueError("test function has zero weighted norm")
    out = []
    for psi in eigvecs[:k]:
        psi = np.asarray(psi).reshape(grid.shape)
        pp = float((psi * psi * cw).sum())
        if pp == 0:
            raise ValueError("eigenvector has zero weighted norm")
        out.append(float((f * psi * cw).sum()) ** 2 / (ff * pp))
    return out
