"""Classical eigensolvers and convergence / overlap utilities.

These provide the ground truth that the simulated quantum estimator is
checked against.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import (
    FDMatrix,
    GridVector,
    OperatorSpec,
    UniformGrid,
    assemble_fd_matrix,
    check_positivity,
    grid_norm,
    sample_function,
)

DENSE_CAP = 4096


class ConvergenceError(RuntimeError):
    def __init__(self, msg, residuals=None):
        super().__init__(msg)
        self.residuals = residuals


@dataclass
class EigenResult:
    eigenvalues: np.ndarray
    eigenvectors: list
    residuals: np.ndarray

    def __len__(self):
        return len(self.eigenvalues)


@dataclass
class ConvergenceFit:
    orders: float
    constant_estimate: float
    reference: float
    resolutions: tuple = ()
    eigenvalues: tuple = ()
    eigvec_constant: float | None = None


def _as_csr(m) -> sp.csr_matrix:
    if isinstance(m, FDMatrix):
        return m.csr
    if sp.issparse(m):
        return sp.csr_matrix(m)
    return sp.csr_matrix(np.asarray(m, dtype=float))


def _max_abs(A: sp.csr_matrix) -> float:
    return float(abs(A).max()) if A.nnz else 0.0


def fix_sign(v: np.ndarray) -> np.ndarray:
    """Flip ``v`` so that its first entry of largest magnitude is positive."""
    i = int(np.argmax(np.abs(v)))
    return -v if v[i] < 0 else v


def _package(m, vals, vecs, A) -> EigenResult:
    res = np.array([np.linalg.norm(A @ vecs[:, i] - vals[i] * vecs[:, i]) / np.linalg.norm(vecs[:, i])
                    for i in range(len(vals))])
    out = []
    for i in range(len(vals)):
        v = fix_sign(vecs[:, i])
        if isinstance(m, FDMatrix):
            g = GridVector(v, m.grid)
            g.values = v / grid_norm(g)
            out.append(g)
        else:
            out.append(v / np.linalg.norm(v))
    return EigenResult(np.asarray(vals, dtype=float), out, res)


def dense_smallest_eigs(m, k: int, cap: int = DENSE_CAP) -> EigenResult:
    """First ``k`` eigenpairs by full symmetric diagonalisation."""
    A = _as_csr(m)
    n = A.shape[0]
    if n > cap:
        raise ValueError(f"matrix dimension {n} exceeds dense cap {cap}")
    k = min(int(k), n)
    if k <= 0:
        return EigenResult(np.empty(0), [], np.empty(0))
    vals, vecs = sla.eigh(A.toarray(), subset_by_index=[0, k - 1])
    return _package(m, vals, vecs, A)


def _lanczos_pass(A, op, k, bound, tol, max_iter, rng, sigma, check_every, locked):
    """One Lanczos run kept orthogonal to the columns of ``locked``."""
    n = A.shape[0]

    def orth(w, Q):
        for _ in range(2):
            if locked.shape[1]:
                w -= locked @ (locked.T @ w)
            w -= Q @ (Q.T @ w)
        return w

    max_iter = min(max_iter, n - locked.shape[1])
    Q = np.zeros((n, max_iter))
    alpha = np.zeros(max_iter)
    beta = np.zeros(max_iter)
    q = orth(rng.standard_normal(n), Q[:, :0])
    q /= np.linalg.norm(q)
    best = None
    for j in range(max_iter):
        Q[:, j] = q
        w = op(q)
        alpha[j] = q @ w
        w = orth(w, Q[:, : j + 1])
        b = np.linalg.norm(w)
        beta[j] = b
        last = j + 1 == max_iter
        breakdown = b <= 1e-12 * max(abs(alpha[: j + 1]).max(), 1.0)
        if j + 1 >= k and ((j + 1) % check_every == 0 or last or breakdown):
            theta, S = sla.eigh_tridiagonal(alpha[: j + 1], beta[:j]) if j else (alpha[:1], np.ones((1, 1)))
            order = np.argsort(theta if sigma is None else -theta)[:k]
            vecs = Q[:, : j + 1] @ S[:, order]
            lam = theta[order] if sigma is None else sigma + 1.0 / theta[order]
            res = np.linalg.norm(A @ vecs - vecs * lam, axis=0) / np.linalg.norm(vecs, axis=0)
            best = res
            if sigma is None:
                done = (res <= bound).all()
            else:
                # Ritz residual of the inverted operator, relative to its eigenvalue
                ritz = np.abs(b * S[-1, order]) if j else np.zeros(k)
                done = (ritz <= tol * np.abs(theta[order])).all()
            if done:
                return lam, vecs, res
        if last:
            break
        if breakdown:
            # invariant subspace: continue with a fresh direction orthogonal to Q
            w = orth(rng.standard_normal(n), Q[:, : j + 1])
            beta[j] = 0.0
            b = np.linalg.norm(w)
        q = w / b
    raise ConvergenceError(f"Lanczos did not converge in {max_iter} iterations", residuals=best)


def lanczos_smallest_eigs(
    m,
    k: int,
    tol: float = 1e-10,
    max_iter: int | None = None,
    seed: int = 0,
    sigma: float | None = None,
    check_every: int = 10,
) -> EigenResult:
    """Smallest ``k`` eigenpairs by Lanczos with full reorthogonalisation.

    With ``sigma`` set, Lanczos runs on ``(A - sigma I)^{-1}`` (sparse LU) and
    the largest Ritz values are mapped back; ``sigma`` must lie below the
    wanted eigenvalues.  Convergence requires
    ``||A v - lam v|| <= tol * ||A||_max * ||v||`` for every returned pair, or
    in shift-invert mode a Ritz residual below ``tol`` relative to each
    inverted eigenvalue (scale-free for badly scaled matrices).
    A single start vector cannot resolve repeated eigenvalues, so converged
    pairs are locked and the search is repeated in their orthogonal
    complement until no smaller eigenvalue turns up.
    """
    A = _as_csr(m)
    n = A.shape[0]
    k = min(int(k), n)
    if k <= 0:
        return EigenResult(np.empty(0), [], np.empty(0))
    if max_iter is None:
        # plain Lanczos on a stiff matrix may need a full sweep; shift-invert converges fast
        max_iter = max(20 * k, 300) if sigma is not None else max(20 * k, 2000)
    max_iter = min(int(max_iter), n)
    bound = tol * max(_max_abs(A), np.finfo(float).tiny)

    if sigma is None:
        op = lambda x: A @ x  # noqa: E731
    else:
        lu = spla.splu(sp.csc_matrix(A - sigma * sp.identity(n, format="csr")))
        op = lu.solve

    rng = np.random.default_rng(seed)
    locked = np.zeros((n, 0))
    lam, vecs, res = _lanczos_pass(A, op, k, bound, tol, max_iter, rng, sigma, check_every, locked)
    while vecs.shape[1] < n:
        locked = np.linalg.qr(vecs)[0]
        kk = min(k, n - locked.shape[1])
        try:
            l2, v2, r2 = _lanczos_pass(A, op, kk, bound, tol, max_iter, rng, sigma, check_every, locked)
        except ConvergenceError:
            break
        if l2.min() >= lam.max() - bound:
            break
        lam, vecs, res = np.concatenate([lam, l2]), np.hstack([vecs, v2]), np.concatenate([res, r2])
        keep = np.argsort(lam)[:k]
        lam, vecs, res = lam[keep], vecs[:, keep], res[keep]
    srt = np.argsort(lam)[:k]
    return _package(m, lam[srt], vecs[:, srt], A)


def gershgorin_lower(m) -> float:
    A = _as_csr(m)
    d = A.diagonal()
    off = np.asarray(abs(A).sum(axis=1)).ravel() - np.abs(d)
    return float((d - off).min())


def smallest_eigs(m, k: int, tol: float = 1e-10, cap: int = DENSE_CAP) -> EigenResult:
    """Dense below ``cap``, otherwise shift-invert Lanczos below the Gershgorin bound."""
    n = _as_csr(m).shape[0]
    if n <= cap:
        return dense_smallest_eigs(m, k, cap=cap)
    lo = gershgorin_lower(m)
    return lanczos_smallest_eigs(m, k, tol=tol, sigma=lo - 1e-3 * max(abs(lo), 1.0))


def richardson_fit(
    spec: OperatorSpec,
    resolutions: Sequence[int],
    k: int = 1,
    reference: float | None = None,
    eigenfunction: Callable[[np.ndarray], np.ndarray] | None = None,
) -> ConvergenceFit:
    """Fit ``|lam^k(n) - lam_ref| ~ C n^-p`` over ``resolutions``.

    Without ``reference`` the two finest grids are Richardson-extrapolated in
    ``h^2``.  ``eigenfunction`` (the continuum ``f_k``) additionally yields the
    max-norm eigenvector constant ``max_n n^2 ||v_n - f_k||_max``.
    """
    res = [int(n) for n in resolutions]
    if len(res) < 3:
        raise ValueError("richardson_fit needs at least 3 resolutions")
    if any(b <= a for a, b in zip(res, res[1:])):
        raise ValueError("resolutions must be strictly ascending")
    bad = check_positivity(spec, res[0])
    if bad:
        raise ValueError(f"operator is not elliptic: a_{bad[0] + 1} <= 0 somewhere on the grid")

    lams, vecs = [], []
    for n in res:
        r = smallest_eigs(assemble_fd_matrix(spec, n), k)
        lams.append(float(r.eigenvalues[k - 1]))
        vecs.append(r.eigenvectors[k - 1])
    lams = np.array(lams)
    if reference is None:
        h = np.array([UniformGrid(spec.domain, n).h for n in res[-2:]])
        reference = float((lams[-1] * h[0] ** 2 - lams[-2] * h[1] ** 2) / (h[0] ** 2 - h[1] ** 2))
    err = np.abs(lams - reference)
    mask = err > 0
    if mask.sum() < 2 or np.ptp(lams) == 0:
        raise ValueError("degenerate fit: eigenvalue errors are zero or identical")
    ns = np.array(res, dtype=float)
    slope = np.polyfit(np.log(ns[mask]), np.log(err[mask]), 1)[0]
    C = float(np.max(err * ns**2))

    D = None
    if eigenfunction is not None:
        D = 0.0
        for n, v in zip(res, vecs):
            f = sample_function(eigenfunction, v.grid).values
            vv = v.values if f @ v.values >= 0 else -v.values
            D = max(D, float(np.abs(vv - f).max()) * n**2)
    return ConvergenceFit(float(-slope), C, float(reference), tuple(res), tuple(lams), D)


def _vec(u) -> np.ndarray:
    return np.asarray(u.values if isinstance(u, GridVector) else u, dtype=float)


def overlap(u, v) -> float:
    """``|<u, v>| / (||u|| ||v||)``."""
    a, b = _vec(u), _vec(v)
    if a.shape != b.shape:
        raise ValueError("vectors live on different grids")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("zero vector has no overlap")
    return float(min(abs(a @ b) / (na * nb), 1.0))


def lemma1_bound_check(u: GridVector, v: GridVector, eps: float) -> bool:
    """Check ``<u|v> >= 1 - 2 (U - L)^{d/2} eps`` for normalised states.

    Requires ``||v||_{n_gr} = 1`` and ``||u - v||_max <= eps``.
    """
    g = v.grid
    if abs(grid_norm(v) - 1.0) > 1e-9:
        raise ValueError("v must have unit grid norm")
    if np.abs(u.values - v.values).max() > eps * (1 + 1e-12):
        raise ValueError("||u - v||_max exceeds eps")
    a, b = u.values, v.values
    inner = float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
    return inner >= 1.0 - 2.0 * g.domain.width ** (g.dim / 2) * eps - 1e-12


def lemma2_bound_check(phi, psi, zeta, gamma: float) -> bool:
    """Check ``|<phi|zeta>| >= gamma/2`` given the overlap preconditions.

    Inputs are normalised here; preconditions are ``|<phi|psi>| >= gamma`` and
    ``|<psi|zeta>| >= eta(gamma)``.
    """
    from .qsvt import eta_closed

    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    p, s, z = (_vec(x) / np.linalg.norm(_vec(x)) for x in (phi, psi, zeta))
    if abs(p @ s) < gamma * (1 - 1e-12):
        raise ValueError("precondition |<phi|psi>| >= gamma violated")
    if abs(s @ z) < eta_closed(gamma) * (1 - 1e-12):
        raise ValueError("precondition |<psi|zeta>| >= eta(gamma) violated")
    return abs(p @ z) >= gamma / 2 - 1e-12
