# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled RK4 integrator for the projected primal-dual flow.

The packed state ``p = (z, lam, mu)`` evolves by

    p' = alpha * proj(S p + c),   c = c0 + Cx (xi - xi_bar)

where rows from ``mu_start`` on are zeroed when ``mu_i <= 0`` and the raw
derivative is negative.  The plant is advanced by one ZOH step per RK4 step
with ``nu = nu_bar + p[:m]`` held over the step.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline void _field(
    const int[::1] ip, const int[::1] ix, const double[::1] dv,
    const double[::1] c, const double[::1] p, double[::1] out,
    int mu_start, double alpha,
) noexcept nogil:
    cdef Py_ssize_t i, k
    cdef Py_ssize_t npk = p.shape[0]
    cdef double acc
    for i in range(npk):
        acc = c[i]
        for k in range(ip[i], ip[i + 1]):
            acc = acc + dv[k] * p[ix[k]]
        if i >= mu_start and p[i] <= 0.0 and acc < 0.0:
            acc = 0.0
        out[i] = alpha * acc


def advance_rk4(
    const int[::1] S_indptr, const int[::1] S_indices, const double[::1] S_data,
    const int[::1] C_indptr, const int[::1] C_indices, const double[::1] C_data,
    const double[::1] c0, const double[::1] xi_bar, const double[::1] nu_bar,
    double[::1] p, double[::1] xi,
    const double[:, ::1] Af, const double[:, ::1] Bf,
    double alpha, double h, long nsteps, int mu_start,
):
    """Advance ``p`` and ``xi`` in place by ``nsteps`` steps of length ``h``.

    Returns the smallest multiplier seen before clamping.
    """
    cdef Py_ssize_t npk = p.shape[0]
    cdef Py_ssize_t n = xi.shape[0]
    cdef Py_ssize_t m = nu_bar.shape[0]
    cdef double[::1] c = np.empty(npk)
    cdef double[::1] k1 = np.empty(npk)
    cdef double[::1] k2 = np.empty(npk)
    cdef double[::1] k3 = np.empty(npk)
    cdef double[::1] k4 = np.empty(npk)
    cdef double[::1] w = np.empty(npk)
    cdef double[::1] dx = np.empty(n)
    cdef double[::1] nu = np.empty(m)
    cdef double[::1] xn = np.empty(n)
    cdef double acc, mu_min = 0.0, h2 = 0.5 * h, h6 = h / 6.0
    cdef long s
    cdef Py_ssize_t i, j, k
    with nogil:
        for s in range(nsteps):
            for j in range(n):
                dx[j] = xi[j] - xi_bar[j]
            for i in range(npk):
                acc = c0[i]
                for k in range(C_indptr[i], C_indptr[i + 1]):
                    acc = acc + C_data[k] * dx[C_indices[k]]
                c[i] = acc
            for j in range(m):
                nu[j] = nu_bar[j] + p[j]

            _field(S_indptr, S_indices, S_data, c, p, k1, mu_start, alpha)
            for i in range(npk):
                w[i] = p[i] + h2 * k1[i]
            _field(S_indptr, S_indices, S_data, c, w, k2, mu_start, alpha)
            for i in range(npk):
                w[i] = p[i] + h2 * k2[i]
            _field(S_indptr, S_indices, S_data, c, w, k3, mu_start, alpha)
            for i in range(npk):
                w[i] = p[i] + h * k3[i]
            _field(S_indptr, S_indices, S_data, c, w, k4, mu_start, alpha)
            for i in range(npk):
                p[i] = p[i] + h6 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            for i in range(mu_start, npk):
                if p[i] < mu_min:
                    mu_min = p[i]
                if p[i] < 0.0:
                    p[i] = 0.0

            for j in range(n):
                acc = 0.0
                for k in range(n):
                    acc = acc + Af[j, k] * xi[k]
                for k in range(m):
                    acc = acc + Bf[j, k] * nu[k]
                xn[j] = acc
            for j in range(n):
                xi[j] = xn[j]
    return mu_min
