"""Pure-Python twin of the compiled flow kernel (same signature)."""

import numpy as np
from scipy.sparse import csr_matrix


def _csr(indptr, indices, data, ncols):
    return csr_matrix((data, indices, indptr), shape=(len(indptr) - 1, ncols))


def advance_rk4(
    S_indptr, S_indices, S_data, C_indptr, C_indices, C_data,
    c0, xi_bar, nu_bar, p, xi, Af, Bf, alpha, h, nsteps, mu_start,
):
    npk, n, m = p.shape[0], xi.shape[0], nu_bar.shape[0]
    S = _csr(S_indptr, S_indices, S_data, npk)
    Cx = _csr(C_indptr, C_indices, C_data, n)
    mu_min = 0.0

    def field(c, q):
        raw = S @ q + c
        tail = raw[mu_start:]
        tail[(q[mu_start:] <= 0.0) & (tail < 0.0)] = 0.0
        return alpha * raw

    for _ in range(int(nsteps)):
        c = c0 + Cx @ (xi - xi_bar)
        nu = nu_bar + p[:m]
        k1 = field(c, p)
        k2 = field(c, p + 0.5 * h * k1)
        k3 = field(c, p + 0.5 * h * k2)
        k4 = field(c, p + h * k3)
        p += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        mu_min = min(mu_min, float(p[mu_start:].min(initial=0.0)))
        np.maximum(p[mu_start:], 0.0, out=p[mu_start:])
        xi[:] = Af @ xi + Bf @ nu
    return mu_min
