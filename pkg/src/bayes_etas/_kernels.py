"""Compiled pairwise loops shared by the likelihood, the gradient and the
branching sampler. Spatial kernels are encoded as ``kind`` (0 none,
1 Gaussian with variances ``s1, s2``, 2 power law with ``d=s1, q=s2``).

All per-event inner sums run serially in index order, so results do not
depend on the number of threads used for the outer loop.
"""

import math

import numpy as np
from numba import njit, prange

LOG_2PI = math.log(2.0 * math.pi)
LOG_PI = math.log(math.pi)


@njit(cache=True, inline="always")
def log_spatial(dx, dy, kind, s1, s2):
    if kind == 1:
        return -LOG_2PI - 0.5 * (math.log(s1) + math.log(s2)) - 0.5 * (dx * dx / s1 + dy * dy / s2)
    if kind == 2:
        return math.log(s2 - 1.0) + (s2 - 1.0) * math.log(s1) - LOG_PI - s2 * math.log(dx * dx + dy * dy + s1)
    return 0.0


@njit(cache=True)
def _intensity_row(i, t, x, y, kappa, log_norm, c, p, kind, s1, s2):
    acc = 0.0
    ti = t[i]
    for j in range(i):
        lw = log_norm - p * math.log(ti - t[j] + c)
        if kind != 0:
            lw += log_spatial(x[i] - x[j], y[i] - y[j], kind, s1, s2)
        acc += kappa[j] * math.exp(lw)
    return acc


@njit(cache=True)
def triggered_intensity(t, x, y, kappa, c, p, kind, s1, s2):
    """Sum of triggering terms at each event time (the double sum of the log-likelihood)."""
    n = t.size
    out = np.empty(n)
    log_norm = math.log(p - 1.0) + (p - 1.0) * math.log(c)
    for i in range(n):
        out[i] = _intensity_row(i, t, x, y, kappa, log_norm, c, p, kind, s1, s2)
    return out


@njit(cache=True, parallel=True)
def triggered_intensity_parallel(t, x, y, kappa, c, p, kind, s1, s2):
    n = t.size
    out = np.empty(n)
    log_norm = math.log(p - 1.0) + (p - 1.0) * math.log(c)
    for i in prange(n):
        out[i] = _intensity_row(i, t, x, y, kappa, log_norm, c, p, kind, s1, s2)
    return out


@njit(cache=True)
def intensity_at(t0, x0, y0, t, m_exc, x, y, K, alpha, c, p, kind, s1, s2):
    """Triggering part of the intensity at an arbitrary point, history ``t < t0``."""
    acc = 0.0
    log_norm = math.log(p - 1.0) + (p - 1.0) * math.log(c)
    for j in range(t.size):
        if t[j] >= t0:
            break
        lw = log_norm - p * math.log(t0 - t[j] + c)
        if kind != 0:
            lw += log_spatial(x0 - x[j], y0 - y[j], kind, s1, s2)
        acc += K * math.exp(alpha * m_exc[j] + lw)
    return acc


@njit(cache=True)
def triggered_gradient(t, x, y, m_exc, K, alpha, c, p, kind, s1, s2):
    """Triggering intensity at each event and its partials in (K, alpha, c, p).

    Returns an ``(n, 5)`` array with columns ``[lam_trig, dK, dalpha, dc, dp]``.
    """
    n = t.size
    out = np.zeros((n, 5))
    log_norm = math.log(p - 1.0) + (p - 1.0) * math.log(c)
    inv_pm1 = 1.0 / (p - 1.0)
    log_c = math.log(c)
    for i in range(n):
        g0 = 0.0
        g_a = 0.0
        g_c = 0.0
        g_p = 0.0
        for j in range(i):
            z = t[i] - t[j] + c
            lz = math.log(z)
            lw = log_norm - p * lz
            if kind != 0:
                lw += log_spatial(x[i] - x[j], y[i] - y[j], kind, s1, s2)
            e = math.exp(alpha * m_exc[j] + lw)
            g0 += e
            g_a += e * m_exc[j]
            g_c += e * ((p - 1.0) / c - p / z)
            g_p += e * (inv_pm1 + log_c - lz)
        out[i, 0] = K * g0
        out[i, 1] = g0
        out[i, 2] = K * g_a
        out[i, 3] = K * g_c
        out[i, 4] = K * g_p
    return out


@njit(cache=True)
def _draw_parent(i, t, x, y, log_bg, log_kappa, log_norm, c, p, kind, s1, s2, u, buf):
    lw0 = log_bg[i]
    mx = lw0
    ti = t[i]
    for j in range(i):
        lw = log_kappa[j] + log_norm - p * math.log(ti - t[j] + c)
        if kind != 0:
            lw += log_spatial(x[i] - x[j], y[i] - y[j], kind, s1, s2)
        buf[j] = lw
        if lw > mx:
            mx = lw
    if not (mx > -np.inf and mx < np.inf):
        return -1
    w0 = math.exp(lw0 - mx)
    total = w0
    for j in range(i):
        buf[j] = math.exp(buf[j] - mx)
        total += buf[j]
    target = u * total
    acc = w0
    if target < acc:
        return 0
    last = 0
    for j in range(i):
        if buf[j] > 0.0:
            last = j + 1
        acc += buf[j]
        if target < acc:
            return j + 1
    return last


@njit(cache=True)
def sample_parents(t, x, y, log_bg, log_kappa, c, p, kind, s1, s2, u):
    """Draw one parent per event from its normalized intensity shares.

    Parents are 1-based event indices with 0 meaning background; ``-1``
    flags an event whose weights are all zero or non-finite.
    """
    n = t.size
    out = np.empty(n, dtype=np.int64)
    buf = np.empty(max(n, 1))
    log_norm = math.log(p - 1.0) + (p - 1.0) * math.log(c)
    for i in range(n):
        out[i] = _draw_parent(i, t, x, y, log_bg, log_kappa, log_norm, c, p, kind, s1, s2, u[i], buf)
    return out


@njit(cache=True, parallel=True)
def sample_parents_parallel(t, x, y, log_bg, log_kappa, c, p, kind, s1, s2, u):
    n = t.size
    out = np.empty(n, dtype=np.int64)
    log_norm = math.log(p - 1.0) + (p - 1.0) * math.log(c)
    for i in prange(n):
        buf = np.empty(max(i, 1))
        out[i] = _draw_parent(i, t, x, y, log_bg, log_kappa, log_norm, c, p, kind, s1, s2, u[i], buf)
    return out


# packed lower-triangular pair storage: pair (i, j), j < i, lives at i*(i-1)/2 + j


@njit(cache=True)
def fill_lags(t, out):
    k = 0
    for i in range(t.size):
        ti = t[i]
        for j in range(i):
            out[k] = ti - t[j]
            k += 1


@njit(cache=True)
def fill_pair_sq(x, out):
    k = 0
    for i in range(x.size):
        xi = x[i]
        for j in range(i):
            d = xi - x[j]
            out[k] = d * d
            k += 1


@njit(cache=True)
def fill_gauss_weights(dx2, dy2, s1, s2, out):
    log_norm = -LOG_2PI - 0.5 * (math.log(s1) + math.log(s2))
    a = 0.5 / s1
    b = 0.5 / s2
    for k in range(dx2.size):
        out[k] = math.exp(log_norm - a * dx2[k] - b * dy2[k])


@njit(cache=True)
def fill_powerlaw_weights(r2, d, q, out):
    log_norm = math.log(q - 1.0) + (q - 1.0) * math.log(d) - LOG_PI
    for k in range(r2.size):
        out[k] = math.exp(log_norm - q * math.log(r2[k] + d))


@njit(cache=True)
def _draw_parent_cached(i, bg, kappa, wt, ws, use_space, u, buf):
    off = i * (i - 1) // 2
    total = bg[i]
    for j in range(i):
        w = kappa[j] * wt[off + j]
        if use_space:
            w *= ws[off + j]
        buf[j] = w
        total += w
    if not (total > 1e-280 and total < 1e280):
        return -2
    target = u * total
    acc = bg[i]
    if target < acc:
        return 0
    last = 0
    for j in range(i):
        if buf[j] > 0.0:
            last = j + 1
        acc += buf[j]
        if target < acc:
            return j + 1
    return last


@njit(cache=True)
def sample_parents_cached(t, x, y, bg, kappa, wt, ws, use_space, log_bg, log_kappa, c, p, kind, s1, s2, u):
    """Parent draws from cached pair weights ``kappa_j * w_time * w_space``.

    Rows whose linear-scale total is near under- or overflow are redrawn in
    log space with the same uniform.
    """
    n = t.size
    out = np.empty(n, dtype=np.int64)
    buf = np.empty(max(n, 1))
    log_norm = math.log(p - 1.0) + (p - 1.0) * math.log(c)
    for i in range(n):
        b = _draw_parent_cached(i, bg, kappa, wt, ws, use_space, u[i], buf)
        if b == -2:
            b = _draw_parent(i, t, x, y, log_bg, log_kappa, log_norm, c, p, kind, s1, s2, u[i], buf)
        out[i] = b
    return out


@njit(cache=True, parallel=True)
def sample_parents_cached_parallel(t, x, y, bg, kappa, wt, ws, use_space, log_bg, log_kappa, c, p, kind, s1, s2, u):
    n = t.size
    out = np.empty(n, dtype=np.int64)
    log_norm = math.log(p - 1.0) + (p - 1.0) * math.log(c)
    for i in prange(n):
        buf = np.empty(max(i, 1))
        b = _draw_parent_cached(i, bg, kappa, wt, ws, use_space, u[i], buf)
        if b == -2:
            b = _draw_parent(i, t, x, y, log_bg, log_kappa, log_norm, c, p, kind, s1, s2, u[i], buf)
        out[i] = b
    return out


# Metropolis chains for the latent sampler's parameter blocks. Each takes
# pre-drawn standard normals ``z`` (steps x 2) and log-uniforms, and returns
# the final state and the number of accepted steps. Out-of-box proposals are
# rejected without evaluating the target.


@njit(cache=True)
def _k_alpha_logpdf(K, alpha, x, H, n_trig, sx):
    acc = 0.0
    for j in range(x.size):
        acc += math.exp(alpha * x[j]) * H[j]
    return -K * acc + n_trig * math.log(K) + alpha * sx


@njit(cache=True)
def mh_k_alpha(K, alpha, x, H, n_trig, sx, sd_K, sd_alpha, K_max, alpha_max, z, log_u):
    lp = _k_alpha_logpdf(K, alpha, x, H, n_trig, sx)
    n_acc = 0
    for s in range(log_u.size):
        Kp = K + sd_K * z[s, 0]
        ap = alpha + sd_alpha * z[s, 1]
        if not (0.0 < Kp < K_max and 0.0 < ap < alpha_max):
            continue
        lpp = _k_alpha_logpdf(Kp, ap, x, H, n_trig, sx)
        if log_u[s] < lpp - lp:
            K, alpha, lp = Kp, ap, lpp
            n_acc += 1
    return K, alpha, n_acc


@njit(cache=True)
def _c_p_logpdf(c, p, kap, z_end, lags):
    log_c = math.log(c)
    acc = 0.0
    for j in range(kap.size):
        acc += kap[j] * math.exp((p - 1.0) * (log_c - math.log(z_end[j] + c)))
    s = 0.0
    for k in range(lags.size):
        s += math.log(lags[k] + c)
    return acc + lags.size * (math.log(p - 1.0) + (p - 1.0) * log_c) - p * s


@njit(cache=True)
def mh_c_p(c, p, kap, z_end, lags, sd_c, sd_p, c_max, p_max, z, log_u):
    lp = _c_p_logpdf(c, p, kap, z_end, lags)
    n_acc = 0
    for s in range(log_u.size):
        cp = c + sd_c * z[s, 0]
        pp = p + sd_p * z[s, 1]
        if not (0.0 < cp < c_max and 1.0 < pp < p_max):
            continue
        lpp = _c_p_logpdf(cp, pp, kap, z_end, lags)
        if log_u[s] < lpp - lp:
            c, p, lp = cp, pp, lpp
            n_acc += 1
    return c, p, n_acc


@njit(cache=True)
def _powerlaw_logpdf(d, q, r2):
    s = 0.0
    for k in range(r2.size):
        s += math.log(r2[k] + d)
    return r2.size * (math.log(q - 1.0) + (q - 1.0) * math.log(d) - LOG_PI) - q * s


@njit(cache=True)
def mh_powerlaw(d, q, r2, sd_d, sd_q, d_max, q_max, z, log_u):
    lp = _powerlaw_logpdf(d, q, r2)
    n_acc = 0
    for s in range(log_u.size):
        dp = d + sd_d * z[s, 0]
        qp = q + sd_q * z[s, 1]
        if not (0.0 < dp < d_max and 1.0 < qp < q_max):
            continue
        lpp = _powerlaw_logpdf(dp, qp, r2)
        if log_u[s] < lpp - lp:
            d, q, lp = dp, qp, lpp
            n_acc += 1
    return d, q, n_acc
