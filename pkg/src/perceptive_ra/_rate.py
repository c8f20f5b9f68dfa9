"""Spectral-efficiency constraint callbacks in normalised variables.

With ``u = p / P_total`` and ``v = b / B_total`` the rate of comm user ``k`` per
hertz of total band is ``v_k log2(1 + c_k u_k / v_k)`` with ``c_k = P ς_k / B``.
The factories below return ``g(x) = R/B - Γ_c`` as concave callbacks in
whichever block is being optimised; the other block is held fixed.
"""

import numpy as np

LN2 = np.log(2.0)


def _pick(a, idx):
    a = np.asarray(a, float)
    return a[idx] if a.ndim == 2 else np.broadcast_to(a, (len(idx),) + a.shape)


def spectral_efficiency(u, v, c):
    """Per-user terms ``v log2(1 + c u / v)``; zero where ``v == 0``."""
    u, v, c = np.broadcast_arrays(*(np.asarray(a, float) for a in (u, v, c)))
    safe = np.where(v > 0, v, 1.0)
    return np.where(v > 0, safe * np.log2(1.0 + c * u / safe), 0.0)


def rate_in_power(cols, c, v, gamma_c, dim):
    """Concave ``g(x) = Σ_k v_k log2(1 + c_k x[cols_k] / v_k) - Γ_c`` in the power block.

    ``c``, ``v`` have shape ``(K,)`` or ``(B, K)``; ``gamma_c`` is scalar or ``(B,)``.
    """
    cols = np.asarray(cols, int)
    gam = np.asarray(gamma_c, float)

    def g(x, idx, order):
        cc, vv = _pick(c, idx), _pick(v, idx)
        gc = gam[idx] if gam.ndim else gam
        u = x[:, cols]
        r = cc * u / vv
        val = (vv * np.log1p(r)).sum(axis=1) / LN2 - gc
        if order == 0:
            return val, None, None
        k = len(x)
        grad = np.zeros((k, dim))
        grad[:, cols] = cc / ((1.0 + r) * LN2)
        hess = np.zeros((k, dim, dim))
        hess[:, cols, cols] = -(cc**2) / (vv * (1.0 + r) ** 2 * LN2)
        return val, grad, hess

    return g


def rate_in_bandwidth(cols, c, u, gamma_c, dim):
    """Concave rate constraint in the bandwidth block with powers ``u`` fixed."""
    cols = np.asarray(cols, int)
    gam = np.asarray(gamma_c, float)

    def g(x, idx, order):
        cc, uu = _pick(c, idx), _pick(u, idx)
        gc = gam[idx] if gam.ndim else gam
        v = x[:, cols]
        r = cc * uu / v
        val = (v * np.log1p(r)).sum(axis=1) / LN2 - gc
        if order == 0:
            return val, None, None
        k = len(x)
        grad = np.zeros((k, dim))
        grad[:, cols] = (np.log1p(r) - r / (1.0 + r)) / LN2
        hess = np.zeros((k, dim, dim))
        hess[:, cols, cols] = -(r**2) / (v * (1.0 + r) ** 2 * LN2)
        return val, grad, hess

    return g


def neg_rate_in_power(cols, c, v, dim, scale=1.0):
    """Objective ``-R/B`` (times ``scale``) in the power block, for rate maximisation."""
    g = rate_in_power(cols, c, v, 0.0, dim)

    def f(x, idx, order):
        val, gr, he = g(x, idx, order)
        if order == 0:
            return -scale * val, None, None
        return -scale * val, -scale * gr, -scale * he

    return f


def neg_rate_in_bandwidth(cols, c, u, dim, scale=1.0):
    g = rate_in_bandwidth(cols, c, u, 0.0, dim)

    def f(x, idx, order):
        val, gr, he = g(x, idx, order)
        if order == 0:
            return -scale * val, None, None
        return -scale * val, -scale * gr, -scale * he

    return f
