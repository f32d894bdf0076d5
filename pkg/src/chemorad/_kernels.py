"""Compiled inner loops: tridiagonal elimination, the elliptic solve and one time step.

Array conventions (``N`` cells, faces ``0..N``):

* ``vol[i]``  cell volume over sigma_n, ``(s_{i+1}^n - s_i^n) / n``
* ``w[k]``    face weight ``s_k^{n-1}`` with ``w[0] == 0``
"""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def thomas(lower, diag, upper, rhs):
    """Solve a tridiagonal system without pivoting.

    ``lower[i]`` multiplies ``x[i-1]`` and ``upper[i]`` multiplies ``x[i+1]``;
    ``lower[0]`` and ``upper[-1]`` are ignored.  Valid for diagonally dominant
    matrices only.
    """
    n = diag.size
    cp = np.empty(n)
    dp = np.empty(n)
    cp[0] = upper[0] / diag[0]
    dp[0] = rhs[0] / diag[0]
    for i in range(1, n):
        denom = diag[i] - lower[i] * cp[i - 1]
        cp[i] = upper[i] / denom
        dp[i] = (rhs[i] - lower[i] * dp[i - 1]) / denom
    x = np.empty(n)
    x[n - 1] = dp[n - 1]
    for i in range(n - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    return x


@njit(cache=True)
def elliptic_solve(u, M, vol, w, h):
    """Finite-volume solve of ``(s^{n-1} v_s)_s = s^{n-1} u v`` with ``v(R) = M``.

    Outer closure by a ghost value ``2M - v[N-1]``, which doubles the last
    face coefficient.
    """
    N = u.size
    lower = np.zeros(N)
    upper = np.zeros(N)
    diag = np.empty(N)
    rhs = np.zeros(N)
    for i in range(N):
        a_in = w[i] / h
        a_out = w[i + 1] / h
        if i == N - 1:
            a_out = 2.0 * a_out
            rhs[i] = a_out * M
        else:
            upper[i] = -a_out
        lower[i] = -a_in
        diag[i] = a_in + a_out + vol[i] * u[i]
    return thomas(lower, diag, upper, rhs)


@njit(cache=True)
def drift_limits(v, M, vol, w, h):
    """Largest ``|v_s|`` over all faces and the explicit positivity bound on dt."""
    N = v.size
    gmax = 2.0 * abs(M - v[N - 1]) / h
    out = np.zeros(N)
    for k in range(1, N):
        g = (v[k] - v[k - 1]) / h
        if abs(g) > gmax:
            gmax = abs(g)
        if g > 0.0:
            out[k] += w[k] * g
        else:
            out[k - 1] -= w[k] * g
    bound = np.inf
    for i in range(N):
        if out[i] > 0.0:
            b = vol[i] / out[i]
            if b < bound:
                bound = b
    return gmax, bound


@njit(cache=True)
def advance_kernel(u, v, M, m, k_diff, vol, w, h, dt, picard_iters):
    """One step of the scheme for ``u``; returns the new ``u`` and ``v = solve_v(u_new)``.

    Drift is explicit and upwinded along the velocity ``-v_s``; diffusion is
    implicit with its coefficient lagged over ``picard_iters`` sweeps.  The
    unknown is the increment ``u_new - u`` so that rounding in the
    elimination scales with the change rather than with ``u`` itself.
    """
    N = u.size
    # explicit part: divergence of the drift flux, F_k = w_k g_k u_donor
    drift = np.zeros(N)
    for k in range(1, N):
        g = (v[k] - v[k - 1]) / h
        if g > 0.0:
            flux = w[k] * g * u[k]
        else:
            flux = w[k] * g * u[k - 1]
        drift[k - 1] += flux
        drift[k] -= flux

    lower = np.zeros(N)
    upper = np.zeros(N)
    diag = np.empty(N)
    rhs = np.empty(N)
    coef = np.zeros(N + 1)
    ustar = u.copy()
    for _ in range(picard_iters):
        for k in range(1, N):
            avg = 0.5 * (ustar[k - 1] + ustar[k])
            if avg < 0.0:
                avg = 0.0
            coef[k] = w[k] * k_diff * (1.0 + avg) ** (m - 1.0) / h
        for i in range(N):
            diag[i] = vol[i] / dt + coef[i] + coef[i + 1]
            lower[i] = -coef[i]
            upper[i] = -coef[i + 1]
            diff = 0.0
            if i > 0:
                diff -= coef[i] * (u[i] - u[i - 1])
            if i < N - 1:
                diff += coef[i + 1] * (u[i + 1] - u[i])
            rhs[i] = diff + drift[i]
        delta = thomas(lower, diag, upper, rhs)
        for i in range(N):
            ustar[i] = u[i] + delta[i]
    vnew = elliptic_solve(ustar, M, vol, w, h)
    return ustar, vnew
