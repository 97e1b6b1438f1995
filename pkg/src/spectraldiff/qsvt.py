"""Matrix-level simulation of the QSVT ground-energy estimator.

The block-encoded Hamiltonian is never materialised.  A polynomial
``S(Hbar)`` is applied to the trial state with the Chebyshev three-term
recurrence and each Chebyshev step is counted as one use of the
block-encoding ``U_H``, which in turn costs one row, one column and two
entry oracle queries.

Step polynomial
---------------
``S(x) = (1 - s P(x)) / 2`` where ``P`` is the odd Chebyshev truncation of
``erf(k x)`` and ``s = 1 - tail/2``.  ``S`` is close to 1 below ``-w`` and
close to 0 above ``+w`` and satisfies ``S(-x) + S(x) = 1`` exactly.

Decision rule
-------------
The success probability ``p = ||S(Hbar) phi||^2`` is compared against the
midpoint ``((gamma - eps'/2)^2 + (eps'/2)^2) / 2``.  Ties resolve to BELOW.
"""
from __future__ import annotations

import enum
import functools
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
import scipy.sparse as sp
import scipy.special as ssp

from . import _kernels
from .grid import FDMatrix, GridVector, OperatorSpec, UniformGrid, assemble_fd_matrix, sample_function

DEGREE_CAP = 1_000_000
SHOT_CONSTANT = 8.0


class EstimatorError(RuntimeError):
    pass


class PolynomialDegreeError(EstimatorError):
    pass


class Decision(enum.Enum):
    BELOW = "below"
    ABOVE = "above"


# -- overlap bookkeeping ------------------------------------------------------


def eta_closed(x: float) -> float:
    """``(x^2 + sqrt(4 - 5x^2 + x^4)) / 2`` on the closed interval ``[0, 1]``."""
    x = float(x)
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"eta needs x in [0, 1], got {x}")
    return 0.5 * (x * x + math.sqrt(max(4.0 - 5.0 * x * x + x**4, 0.0)))


def eta(x: float) -> float:
    """Overlap that the grid eigenvector must keep with the continuum one.

    Parameters
    ----------
    x : float
        Overlap lower bound in the open interval ``(0, 1)``.

    Returns
    -------
    float
        A value in ``(1/2, 1)``.
    """
    if not 0.0 < float(x) < 1.0:
        raise ValueError(f"eta needs x in (0, 1), got {x}")
    return eta_closed(x)


def select_grid_size(eps: float, gamma: float, C1: float, D1: float, domain) -> int:
    """Grid size that keeps the discretisation error below ``eps/2``.

    ``ceil(max(sqrt(2 C1/eps), sqrt(2 D1/(1 - eta(gamma))) (U - L)^{d/4}))``.
    """
    if eps <= 0 or C1 <= 0 or D1 < 0:
        raise ValueError("eps and C1 must be positive, D1 non-negative")
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    a = math.sqrt(2.0 * C1 / eps)
    b = math.sqrt(2.0 * D1 / (1.0 - eta(gamma))) * domain.width ** (domain.dim / 4)
    return int(math.ceil(max(a, b)))


# -- configuration and accounting --------------------------------------------


@dataclass
class EstimatorConfig:
    eps: float
    delta: float = 0.05
    gamma: float = 0.5
    sampling: str = "exact"
    shots: int | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.sampling not in ("exact", "bernoulli"):
            raise ValueError(f"unknown sampling mode {self.sampling!r}")
        if self.shots is not None and int(self.shots) < 1:
            raise ValueError("shots must be a positive integer")

    @property
    def eps_prime(self) -> float:
        return self.gamma / 2


@dataclass
class QueryLedger:
    entry_oracle_calls: int = 0
    row_col_oracle_calls: int = 0
    state_prep_calls: int = 0
    matvec_count: int = 0
    coefficient_evals: int = 0
    levels: list = field(default_factory=list)

    _COUNTERS = ("entry_oracle_calls", "row_col_oracle_calls", "state_prep_calls", "matvec_count", "coefficient_evals")

    def totals(self) -> dict:
        return {k: getattr(self, k) for k in self._COUNTERS}

    def record_uh(self, uses: int, coeff_per_entry: int = 0) -> None:
        """Account ``uses`` block-encoding applications."""
        self.row_col_oracle_calls += 2 * uses
        self.entry_oracle_calls += 2 * uses
        self.coefficient_evals += 2 * uses * coeff_per_entry

    def __add__(self, other: "QueryLedger") -> "QueryLedger":
        out = QueryLedger(**{k: getattr(self, k) + getattr(other, k) for k in self._COUNTERS})
        out.levels = list(self.levels) + list(other.levels)
        return out

    def to_dict(self) -> dict:
        return {"totals": self.totals(), "levels": list(self.levels)}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


@dataclass(frozen=True)
class BlockEncodingParams:
    alpha: float
    a_qubits: int
    eps_tilde: float


def _csr(H) -> sp.csr_matrix:
    if isinstance(H, FDMatrix):
        A = H.csr
    elif sp.issparse(H):
        A = sp.csr_matrix(H)
    else:
        A = sp.csr_matrix(np.asarray(H, dtype=float))
    A = A.astype(float)
    A.sort_indices()
    return A


def sparsity(H) -> int:
    if isinstance(H, FDMatrix):
        return H.sparsity
    A = _csr(H)
    return int(np.diff(A.indptr).max()) if A.nnz else 1


def normalisation(H) -> float:
    """``alpha = s ||H||_max``, an upper bound on the spectral norm."""
    A = _csr(H)
    return sparsity(H) * (float(abs(A).max()) if A.nnz else 0.0)


def block_encoding_params(H, degree: int, eps_prime: float) -> BlockEncodingParams:
    alpha = normalisation(H)
    n = _csr(H).shape[0]
    return BlockEncodingParams(
        alpha=alpha,
        a_qubits=int(math.ceil(math.log2(max(n, 2)))) + 3,
        eps_tilde=(eps_prime / (8.0 * degree)) ** 2 * alpha,
    )


def _coeff_per_entry(H) -> int:
    return 2 * H.grid.dim + 1 if isinstance(H, FDMatrix) else 0


# -- step polynomial -----------------------------------------------------------


@dataclass(frozen=True)
class StepPolynomial:
    degree: int
    chebyshev_coeffs: np.ndarray
    threshold_width: float
    tail_bound: float

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return _kernels.clenshaw(self.chebyshev_coeffs, x.ravel()).reshape(x.shape)


def constant_polynomial(c: float = 1.0) -> StepPolynomial:
    return StepPolynomial(0, np.array([float(c)]), 1.0, 0.0)


def _cheb_coeffs(f, m: int) -> np.ndarray:
    """Chebyshev coefficients of ``f`` from ``m`` first-kind nodes."""
    x = np.cos(np.pi * (np.arange(m) + 0.5) / m)
    c = sfft.dct(f(x), type=2) / m
    c[0] /= 2
    return c


def _node_values(coeffs: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Series values at ``m`` first-kind Chebyshev nodes (fast inverse transform)."""
    a = np.zeros(m)
    n = min(len(coeffs), m)
    a[:n] = coeffs[:n] / 2
    a[0] = coeffs[0]
    x = np.cos(np.pi * (np.arange(m) + 0.5) / m)
    return x, sfft.dct(a, type=3)


def _step_coeffs(p_coeffs: np.ndarray, degree: int, tail: float) -> np.ndarray:
    c = -(1.0 - tail / 2) * p_coeffs[: degree + 1] / 2
    c[0] += 0.5
    c[2::2] = 0.0
    return c


def _passes(c: np.ndarray, w: float, tail: float, density: int = 4) -> bool:
    deg = len(c) - 1
    x, s = _node_values(c, max(10_000, density * deg))
    edge = _kernels.clenshaw(c, np.array([-1.0, -w, w, 1.0]))
    x = np.concatenate([x, [-1.0, -w, w, 1.0]])
    s = np.concatenate([s, edge])
    slack = 1e-12
    if np.abs(s).max() > 1.0 + slack:
        return False
    low, high = x <= -w, x >= w
    return bool((s[low] >= 1.0 - tail - slack).all() and (np.abs(s[high]) <= tail + slack).all())


@functools.lru_cache(maxsize=64)
def build_step_polynomial(alpha: float, eps: float, eps_prime: float, max_degree: int = DEGREE_CAP) -> StepPolynomial:
    """Chebyshev step polynomial switching at ``0`` with width ``eps/(2 alpha)``.

    The degree is found by doubling until the dense-sample check passes,
    then bisecting down to the smallest passing odd degree.

    Parameters
    ----------
    alpha, eps : float
        Normalisation and resolution; the threshold width is ``eps/(2 alpha)``.
    eps_prime : float
        The plateau tolerance is ``eps_prime/2``.
    max_degree : int
        Degree cap.

    Raises
    ------
    PolynomialDegreeError
        If no degree below ``max_degree`` meets the tolerance.
    """
    if alpha <= 0 or eps <= 0 or eps_prime <= 0:
        raise ValueError("alpha, eps and eps_prime must be positive")
    w = eps / (2.0 * alpha)
    if w >= 1:
        raise ValueError("eps/(2 alpha) must be below 1")
    tail = eps_prime / 2
    if tail >= 0.5:
        raise ValueError("eps_prime must be below 1")
    k = float(ssp.erfcinv(tail)) / w
    erf = lambda x: ssp.erf(k * x)  # noqa: E731

    cache: dict[int, np.ndarray] = {}

    def coeffs_up_to(n: int) -> np.ndarray:
        m = 1 << max(6, int(math.ceil(math.log2(4 * n + 4))))
        if m not in cache:
            cache[m] = _cheb_coeffs(erf, m)
        return cache[m]

    deg = 15
    while True:
        if _passes(_step_coeffs(coeffs_up_to(deg), deg, tail), w, tail):
            break
        if deg >= max_degree:
            raise PolynomialDegreeError(
                f"step polynomial needs degree above {max_degree} for width {w:.3e} and tail {tail:.3e}; "
                "raise max_degree or relax eps_prime"
            )
        deg = min(2 * deg + 1, max_degree | 1)
    lo, hi = max(1, (deg - 1) // 2) | 1, deg
    base = coeffs_up_to(hi)
    while hi - lo > 2:
        mid = ((lo + hi) // 2) | 1
        if mid >= hi:
            mid = hi - 2
        if _passes(_step_coeffs(base, mid, tail), w, tail):
            hi = mid
        else:
            lo = mid
    # the search grid can miss narrow overshoots: pad the degree, recheck densely
    while True:
        deg = min(int(math.ceil(1.1 * hi)) | 1, max_degree | 1)
        c = _step_coeffs(coeffs_up_to(deg), deg, tail)
        if _passes(c, w, tail, density=16):
            break
        if deg >= max_degree:
            raise PolynomialDegreeError(f"step polynomial fails the dense check at degree cap {max_degree}")
        hi = deg
    c.setflags(write=False)
    return StepPolynomial(deg, c, w, tail)


# -- polynomial action ---------------------------------------------------------


def apply_matrix_polynomial(H, shift: float, scale: float, poly: StepPolynomial, v, ledger: QueryLedger | None = None):
    """``S((H - shift I)/scale) v`` via the Chebyshev recurrence.

    Returns a ``GridVector`` when ``v`` is one, otherwise an array.
    """
    A = _csr(H)
    x = np.asarray(v.values if isinstance(v, GridVector) else v, dtype=float)
    if x.shape != (A.shape[0],):
        raise ValueError(f"dimension mismatch: matrix {A.shape}, vector {x.shape}")
    if scale <= 0:
        raise ValueError("scale must be positive")
    out = _kernels.cheb_apply_csr(
        A.indptr.astype(np.int64), A.indices.astype(np.int64), A.data, float(shift), float(scale),
        np.ascontiguousarray(poly.chebyshev_coeffs, dtype=float), np.ascontiguousarray(x),
    )
    if ledger is not None:
        ledger.matvec_count += poly.degree
        ledger.record_uh(poly.degree, _coeff_per_entry(H))
    return GridVector(out, v.grid) if isinstance(v, GridVector) else out


def default_shots(levels: int, delta: float, gamma: float) -> int:
    """Per-level repetitions from a Chernoff bound: ``ceil(8 log(levels/delta)/gamma^2)``."""
    return int(math.ceil(SHOT_CONSTANT * math.log(max(levels, 1) / delta) / gamma**2))


def proj_success_probability(
    H,
    mu: float,
    config: EstimatorConfig,
    poly: StepPolynomial,
    phi1,
    ledger: QueryLedger | None = None,
    rng: np.random.Generator | None = None,
    shots: int | None = None,
    alpha: float | None = None,
) -> float:
    """Success probability of the projection step at ``mu``.

    Exact mode returns ``||S(Hbar) phi||^2``; Bernoulli mode returns the
    fraction of successes over ``shots`` draws.  Every nominal shot is
    accounted as one state preparation and ``degree`` uses of ``U_H``.
    """
    alpha = normalisation(H) if alpha is None else alpha
    phi = np.asarray(phi1.values if isinstance(phi1, GridVector) else phi1, dtype=float)
    phi = phi / np.linalg.norm(phi)
    y = apply_matrix_polynomial(H, mu, alpha + abs(mu), poly, phi, ledger)
    p = float(min(max(y @ y, 0.0), 1.0))
    n_shots = int(shots if shots is not None else (config.shots or 1))
    if ledger is not None:
        ledger.state_prep_calls += n_shots
        ledger.record_uh(poly.degree * (n_shots - 1), _coeff_per_entry(H))
    if config.sampling == "exact":
        return p
    rng = np.random.default_rng(config.seed) if rng is None else rng
    return rng.binomial(n_shots, p) / n_shots


def decision_threshold(gamma: float, eps_prime: float) -> float:
    return ((gamma - eps_prime / 2) ** 2 + (eps_prime / 2) ** 2) / 2


def fuzzy_bisection_decision(prob_estimate: float, gamma: float, eps_prime: float) -> Decision:
    """BELOW when the estimate reaches the midpoint threshold, else ABOVE."""
    return Decision.BELOW if prob_estimate >= decision_threshold(gamma, eps_prime) else Decision.ABOVE


# -- estimators ------------------------------------------------------------------


def est_eig(H, trial, config: EstimatorConfig, alpha: float | None = None, max_degree: int = DEGREE_CAP):
    """Estimate the smallest eigenvalue of ``H`` to within ``config.eps``.

    Parameters
    ----------
    H : FDMatrix, OperatorSpec, sparse or dense matrix
        Symmetric matrix.  An ``OperatorSpec`` needs ``trial`` to be a
        ``GridVector`` so that the grid is known.
    trial : GridVector or array
        Trial state overlapping the ground state.
    config : EstimatorConfig

    Returns
    -------
    lambda_hat : float
    ledger : QueryLedger
        Totals plus one record per bisection level.
    """
    if isinstance(H, OperatorSpec):
        if not isinstance(trial, GridVector):
            raise ValueError("an OperatorSpec input needs a GridVector trial")
        H = assemble_fd_matrix(H, trial.grid.n_gr)
    alpha = normalisation(H) if alpha is None else float(alpha)
    if alpha <= 0:
        raise EstimatorError("matrix is zero")
    eps, gamma, eps_p = config.eps, config.gamma, config.eps_prime
    rho = eps / 2
    rho = min(rho, alpha * 0.999)
    poly = build_step_polynomial(alpha, rho, eps_p, max_degree)
    levels = max(1, int(math.ceil(math.log2(2 * alpha / eps))))
    shots = int(config.shots) if config.shots else default_shots(levels, config.delta, gamma)
    rng = np.random.default_rng(config.seed)
    ledger = QueryLedger()
    lo, hi = -alpha, alpha
    for level in range(levels):
        mu = 0.5 * (lo + hi)
        before = ledger.totals()
        p = proj_success_probability(H, mu, config, poly, trial, ledger, rng, shots, alpha)
        dec = fuzzy_bisection_decision(p, gamma, eps_p)
        if dec is Decision.BELOW:
            hi = min(hi, mu + rho)
        else:
            lo = max(lo, mu - rho)
        if lo > hi:
            raise EstimatorError(f"search interval collapsed at level {level}: [{lo}, {hi}]")
        after = ledger.totals()
        ledger.levels.append(
            {"level": level, "mu": mu, "probability": p, "decision": dec.value, "lo": lo, "hi": hi,
             **{k: after[k] - before[k] for k in after}}
        )
    return 0.5 * (lo + hi), ledger


def end_to_end_estimate(spec: OperatorSpec, trial_field, config: EstimatorConfig, C1: float, D1: float,
                        max_degree: int = DEGREE_CAP):
    """Continuum eigenvalue estimate accurate to ``config.eps``.

    Half the budget goes to discretisation (grid size from ``C1, D1``) and
    half to the estimator, which runs with ``eps/2`` and ``gamma/2``.

    Returns
    -------
    lambda_hat : float
    n_gr : int
    ledger : QueryLedger
    """
    n_gr = max(3, select_grid_size(config.eps, config.gamma, C1, D1, spec.domain))
    m = assemble_fd_matrix(spec, n_gr)
    trial = sample_function(trial_field, UniformGrid(spec.domain, n_gr))
    inner = EstimatorConfig(config.eps / 2, config.delta, config.gamma / 2, config.sampling, config.shots, config.seed)
    lam, ledger = est_eig(m, trial, inner, max_degree=max_degree)
    return lam, n_gr, ledger

