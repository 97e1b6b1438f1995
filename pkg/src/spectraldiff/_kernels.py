"""Compiled inner loops for high-degree Chebyshev polynomials."""
import numba as nb
import numpy as np


@nb.njit(cache=True, nogil=True)
def _spmv_shifted(indptr, indices, data, x, shift, scale, out):
    n = x.shape[0]
    for i in range(n):
        acc = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            acc += data[p] * x[indices[p]]
        out[i] = (acc - shift * x[i]) / scale


@nb.njit(cache=True, nogil=True)
def cheb_apply_csr(indptr, indices, data, shift, scale, coeffs, v):
    """``sum_k c_k T_k(Hbar) v`` with ``Hbar = (H - shift I) / scale``.

    Forward three-term recurrence; ``H`` given in CSR arrays.
    """
    n = v.shape[0]
    deg = coeffs.shape[0] - 1
    out = coeffs[0] * v
    if deg == 0:
        return out
    t_prev = v.copy()
    t_cur = np.empty(n)
    _spmv_shifted(indptr, indices, data, v, shift, scale, t_cur)
    out += coeffs[1] * t_cur
    t_next = np.empty(n)
    for k in range(2, deg + 1):
        _spmv_shifted(indptr, indices, data, t_cur, shift, scale, t_next)
        c = coeffs[k]
        for i in range(n):
            t_next[i] = 2.0 * t_next[i] - t_prev[i]
            out[i] += c * t_next[i]
        t_prev, t_cur, t_next = t_cur, t_next, t_prev
    return out


@nb.njit(cache=True, nogil=True)
def clenshaw(coeffs, x):
    """Evaluate a Chebyshev series at each entry of ``x``."""
    out = np.empty(x.shape[0])
    deg = coeffs.shape[0] - 1
    for j in range(x.shape[0]):
        t = x[j]
        b1 = 0.0
        b2 = 0.0
        for k in range(deg, 0, -1):
            b1, b2 = 2.0 * t * b1 - b2 + coeffs[k], b1
        out[j] = t * b1 - b2 + coeffs[0]
    return out
