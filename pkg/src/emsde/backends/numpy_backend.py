"""Vectorized numpy implementation of the hot kernels.

Used when the compiled extension is unavailable (or forced via
EMSDE_BACKEND=numpy). Semantics match ``emsde._emcore``; floating-point
results may differ from the compiled kernels at reassociation level because
reduction orders differ.
"""

from __future__ import annotations

import numpy as np

name = "numpy"


def _matvec(x, a):
    # row-wise a @ x[i] with a fixed-order reduction over the last axis, so a
    # path inside a batch reproduces the same path simulated alone bit-for-bit
    return (x[:, None, :] * a[None, :, :]).sum(axis=2)


def em_paths(a1, a2, a3, b, bias, x0, tau, dbeta):
    """Euler-Maruyama paths for a batch of pre-drawn increment arrays.

    Parameters are the model matrices (d, d), a bias vector (d,), initial
    states (n, d) and increments (n, steps, d). Returns states of shape
    (n, steps + 1, d) and a status array (n,) holding -1 for finite paths or
    the index of the first non-finite state. Stepping continues after a
    failure (NaNs propagate), so statuses are independent across paths.
    """
    n, steps, _ = dbeta.shape
    states = np.empty((n, steps + 1, dbeta.shape[2]))
    states[:, 0, :] = x0
    status = np.full(n, -1, dtype=np.int64)
    cur = np.array(x0, dtype=np.float64)
    with np.errstate(all="ignore"):
        for t in range(steps):
            u1 = _matvec(cur, a1)
            u2 = _matvec(cur, a2)
            u3 = _matvec(cur, a3)
            scale = _matvec(cur, b) + bias
            cur = cur + tau * (u1 + u2 * u3) + scale * dbeta[:, t, :]
            states[:, t + 1, :] = cur
            bad = ~np.all(np.isfinite(cur), axis=1)
            status[bad & (status == -1)] = t + 1
    return states, status


def nll_terms(a1, a2, a3, b, bias, eps, tau, x, dx, identity_cov, want_grad):
    """Loss terms (and optionally gradients) of the Gaussian transition NLL.

    x holds the states at the left of each transition pair, shape (T, d), and
    dx the increments x_{t+1} - x_t. Returns (mahalanobis_sum, logdet_sum,
    grads) where grads is (ga1, ga2, ga3, gb, gbias) or None. With
    identity_cov the covariance is fixed to the identity: the Mahalanobis
    term becomes the plain sum of squared one-step prediction errors, the
    log-determinant is zero and the diffusion gradients vanish.
    """
    with np.errstate(all="ignore"):
        u1 = x @ a1.T
        u2 = x @ a2.T
        u3 = x @ a3.T
        f = u1 + u2 * u3
        r = dx - tau * f
        if identity_cov:
            mah = float(np.sum(r * r))
            logdet = 0.0
            if not want_grad:
                return mah, logdet, None
            g = (-2.0 * tau) * r
            gb = np.zeros_like(b)
            gbias = np.zeros(b.shape[0])
        else:
            scale = x @ b.T + bias
            v = tau * (scale * scale + eps)
            rr = r * r
            mah = float(np.sum(rr / v))
            logdet = float(np.sum(np.log(v)))
            if not want_grad:
                return mah, logdet, None
            g = (-2.0 * tau) * r / v
            h = (1.0 / v - rr / (v * v)) * (2.0 * tau) * scale
            gb = h.T @ x
            gbias = h.sum(axis=0)
        ga1 = g.T @ x
        ga2 = (g * u3).T @ x
        ga3 = (g * u2).T @ x
    return mah, logdet, (ga1, ga2, ga3, gb, gbias)


def pair_losses(a1, a2, a3, b, bias, eps, tau, x, dx, identity_cov):
    """Per-pair loss contributions, used for non-finite diagnostics."""
    with np.errstate(all="ignore"):
        f = x @ a1.T + (x @ a2.T) * (x @ a3.T)
        r = dx - tau * f
        if identity_cov:
            return np.sum(r * r, axis=1)
        scale = x @ b.T + bias
        v = tau * (scale * scale + eps)
        return np.sum(r * r / v + np.log(v), axis=1)
