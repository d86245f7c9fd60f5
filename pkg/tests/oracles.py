"""Independent reference computations used only by the tests."""

import itertools

import numpy as np


def taylor_expm(M, tol=1e-14, max_terms=200):
    """exp(M) by scaling, a truncated Taylor series and repeated squaring."""
    M = np.asarray(M, dtype=float)
    s = max(0, int(np.ceil(np.log2(max(np.abs(M).sum(axis=1).max(), 1e-300)))) + 1)
    X = M / 2**s
    E = np.eye(M.shape[0])
    T = np.eye(M.shape[0])
    for k in range(1, max_terms):
        T = T @ X / k
        E = E + T
        if np.abs(T).max() < tol * 1e-3:
            break
    for _ in range(s):
        E = E @ E
    return E


def zoh_taylor(A_c, B_c, tau):
    n, m = B_c.shape
    M = np.zeros((n + m, n + m))
    M[:n, :n] = A_c
    M[:n, n:] = B_c
    E = taylor_expm(M * tau)
    return E[:n, :n], E[:n, n:]


def finite_difference_gradient(f, x, step=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (f(x + e) - f(x - e)) / (2 * step)
    return g


def interval_projection(gamma, lo, hi):
    return min(max(gamma, lo), hi)


def dense_qp_by_kkt(H, c, G, g, A, b):
    """Brute-force QP: every active subset, keep the best feasible point."""
    best = None
    p = A.shape[0]
    nz = H.shape[0]
    for size in range(p + 1):
        for rows in itertools.combinations(range(p), size):
            E = np.vstack([G, A[list(rows)]])
            e = np.concatenate([g, -b[list(rows)]])
            K = np.block([[H, E.T], [E, np.zeros((E.shape[0], E.shape[0]))]])
            try:
                sol = np.linalg.solve(K, np.concatenate([-c, e]))
            except np.linalg.LinAlgError:
                continue
            z = sol[:nz]
            if np.any(A @ z + b > 1e-9) or np.abs(G @ z - g).max(initial=0) > 1e-9:
                continue
            val = 0.5 * z @ H @ z + c @ z
            if best is None or val < best[0] - 1e-12:
                best = (val, z)
    return None if best is None else best[1]
