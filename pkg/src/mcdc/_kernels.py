"""Compiled E/M-step loops on flat parameter arrays.

Parameters are passed as ``mu (G, d)``, ``sigma (G, d, d)``, ``tau (G,)``,
``pi (G,)``. Status codes are returned instead of raising so the callers
can produce descriptive errors.
"""

import numpy as np
from numba import njit

LOG_2PI = np.log(2.0 * np.pi)


@njit(cache=True)
def cholesky(a, out):
    """Lower Cholesky factor of ``a`` into ``out``; False if not positive definite."""
    d = a.shape[0]
    for j in range(d):
        s = a[j, j]
        for m in range(j):
            s -= out[j, m] * out[j, m]
        if not s > 0.0:
            return False
        out[j, j] = np.sqrt(s)
        for i in range(j + 1, d):
            s = a[i, j]
            for m in range(j):
                s -= out[i, m] * out[j, m]
            out[i, j] = s / out[j, j]
        for i in range(j):
            out[i, j] = 0.0
    return True


@njit(cache=True)
def _maha(Y, i, mu, k, chol, buf):
    d = mu.shape[1]
    acc = 0.0
    for a in range(d):
        s = Y[i, a] - mu[k, a]
        for m in range(a):
            s -= chol[a, m] * buf[m]
        buf[a] = s / chol[a, a]
        acc += buf[a] * buf[a]
    return acc


@njit(cache=True)
def log_terms(X, Xinv, mu, sigma, tau, pi, log_jac, out):
    """Fill ``out[i, k, 1] = log tau pi f(y)``, ``out[i, k, 0] = log tau (1-pi) f(T^-1 y) + log_jac``.

    Returns -1 on success or the index of a non-positive-definite component.
    """
    n, d = X.shape
    G = mu.shape[0]
    chol = np.empty((d, d))
    buf = np.empty(d)
    for k in range(G):
        if not cholesky(sigma[k], chol):
            return k
        logdet = 0.0
        for j in range(d):
            logdet += 2.0 * np.log(chol[j, j])
        const = -0.5 * (d * LOG_2PI + logdet)
        lt = np.log(tau[k]) if tau[k] > 0.0 else -np.inf
        l1 = np.log(pi[k]) if pi[k] > 0.0 else -np.inf
        l0 = np.log1p(-pi[k]) + log_jac if pi[k] < 1.0 else -np.inf
        for i in range(n):
            out[i, k, 1] = lt + l1 + const - 0.5 * _maha(X, i, mu, k, chol, buf)
            out[i, k, 0] = lt + l0 + const - 0.5 * _maha(Xinv, i, mu, k, chol, buf)
    return -1


@njit(cache=True)
def e_step(X, Xinv, mu, sigma, tau, pi, log_jac, joint):
    """Normalize joint terms in place; returns (loglik, bad_point, bad_component)."""
    n = X.shape[0]
    G = mu.shape[0]
    bad_k = log_terms(X, Xinv, mu, sigma, tau, pi, log_jac, joint)
    if bad_k >= 0:
        return np.nan, -1, bad_k
    total = 0.0
    for i in range(n):
        m = -np.inf
        for k in range(G):
            for b in range(2):
                if joint[i, k, b] > m:
                    m = joint[i, k, b]
        if not np.isfinite(m):
            return np.nan, i, -1
        s = 0.0
        for k in range(G):
            for b in range(2):
                e = np.exp(joint[i, k, b] - m)
                joint[i, k, b] = e
                s += e
        total += m + np.log(s)
        inv = 1.0 / s
        for k in range(G):
            for b in range(2):
                joint[i, k, b] *= inv
    return total, -1, -1


@njit(cache=True)
def m_step(X, Xinv, joint, ridge, mu, sigma, tau, pi):
    """Update parameters in place; returns -1 or the index of a degenerate component."""
    n, d = X.shape
    G = joint.shape[1]
    shifted = np.empty((d, d))
    chol = np.empty((d, d))
    for k in range(G):
        s1 = 0.0
        s0 = 0.0
        for i in range(n):
            s1 += joint[i, k, 1]
            s0 += joint[i, k, 0]
        nk = s1 + s0
        if nk < d + 1:
            return k
        tau[k] = nk / n
        pi[k] = min(max(s1 / nk, 0.0), 1.0)
        for j in range(d):
            acc = 0.0
            for i in range(n):
                acc += joint[i, k, 1] * X[i, j] + joint[i, k, 0] * Xinv[i, j]
            mu[k, j] = acc / nk
        for a in range(d):
            for b in range(a, d):
                acc = 0.0
                for i in range(n):
                    acc += (joint[i, k, 1] * (X[i, a] - mu[k, a]) * (X[i, b] - mu[k, b])
                            + joint[i, k, 0] * (Xinv[i, a] - mu[k, a]) * (Xinv[i, b] - mu[k, b]))
                sigma[k, a, b] = acc / nk
                sigma[k, b, a] = acc / nk
        tr = 0.0
        for j in range(d):
            tr += sigma[k, j, j]
        if not tr > 0.0:
            return k
        floor = ridge * tr / d
        # smallest eigenvalue < floor  <=>  sigma - floor*I not positive definite
        shifted[:, :] = sigma[k]
        for j in range(d):
            shifted[j, j] -= floor
        if not cholesky(shifted, chol):
            for j in range(d):
                sigma[k, j, j] += floor
    total = 0.0
    for k in range(G):
        total += tau[k]
    for k in range(G):
        tau[k] /= total
    return -1
