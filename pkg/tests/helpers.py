"""Shared instance generators for the test suite."""
import numpy as np

from spectraldiff.qsvt import EstimatorConfig, build_step_polynomial, eta_closed, normalisation, proj_success_probability


def random_symmetric(rng: np.random.Generator, n: int, density: float = 0.3) -> np.ndarray:
    """Sparse-ish random symmetric matrix with a nonzero diagonal."""
    A = rng.standard_normal((n, n)) * (rng.random((n, n)) < density)
    A = (A + A.T) / 2
    A[np.diag_indices(n)] = rng.standard_normal(n) * 2
    return A


def trial_with_overlap(rng: np.random.Generator, ground: np.ndarray, gamma: float) -> np.ndarray:
    """Unit vector whose overlap with ``ground`` is exactly ``gamma``."""
    w = rng.standard_normal(ground.size)
    w -= (w @ ground) * ground
    w /= np.linalg.norm(w)
    return gamma * ground + np.sqrt(1 - gamma**2) * w


def proj_contract_violations(rng: np.random.Generator, n: int, gamma: float, eps_ratio: float, n_mu: int = 9):
    """Check the two-sided projection bound on one random matrix over a sweep of ``mu``.

    Returns ``(violations, checks)``.  The bound is stated on the success
    amplitude ``sqrt(p)``: at least ``gamma - eps'/2`` when ``lambda_1 <= mu - eps``
    and at most ``eps'/2`` when ``lambda_1 >= mu + eps``.
    """
    A = random_symmetric(rng, n)
    lam, V = np.linalg.eigh(A)
    alpha = normalisation(A)
    eps = eps_ratio * alpha
    cfg = EstimatorConfig(eps=eps, gamma=gamma)
    eps_p = cfg.eps_prime
    poly = build_step_polynomial(alpha, eps, eps_p)
    phi = trial_with_overlap(rng, V[:, 0], gamma)
    mus = np.concatenate([np.linspace(-alpha, alpha, n_mu), lam[0] + np.array([-2, -1, 1, 2]) * eps])
    mus = mus[np.abs(mus) <= alpha]
    bad = checks = 0
    for mu in mus:
        amp = np.sqrt(proj_success_probability(A, mu, cfg, poly, phi, alpha=alpha))
        if lam[0] <= mu - eps:
            checks += 1
            bad += amp < gamma - eps_p / 2 - 1e-12
        elif lam[0] >= mu + eps:
            checks += 1
            bad += amp > eps_p / 2 + 1e-12
    return bad, checks


def random_lemma2_triple(rng, gamma, dim):
    """``phi, psi, zeta`` meeting both overlap preconditions, at random angles."""
    psi = rng.standard_normal(dim)
    psi /= np.linalg.norm(psi)

    def at_overlap(c):
        w = rng.standard_normal(dim)
        w -= (w @ psi) * psi
        w /= np.linalg.norm(w)
        return c * psi + np.sqrt(max(1 - c * c, 0.0)) * w

    phi = at_overlap(rng.uniform(gamma, 1.0))
    zeta = at_overlap(rng.uniform(eta_closed(gamma), 1.0))
    return phi, psi, zeta
