"""Hot numeric kernels, each with a numba loop form and a numpy form.

The public names at the bottom of the module (``cross_moments``,
``logp_grad``, ``pointwise_loglik``, ``ar_filter``) are bound to one of the
two implementations according to :data:`gtfm._accel.USE_NUMBA`.  Tests and
the benchmark import both forms directly.

Model kernels take the parameter layout used by :mod:`gtfm.model`::

    z = [coef_0 .. coef_{p-1}, phi (or phi_0), log sigma_E,
         (log eta), (log sigma_phi), (phi_1 .. phi_T), (E_1 .. E_T)]

where the bracketed blocks are present only for ``eta_free`` /
time-varying specifications.
"""

import math

import numpy as np
from scipy import signal, special

from ._accel import njit, pick

NORMAL, HALFNORMAL_POS, HALFNORMAL_NEG, BETA, INV_GAMMA, GAMMA = range(6)
LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
SQRT2 = math.sqrt(2.0)


# ---------------------------------------------------------------- impact


@njit
def _cross_moments_nb(y, x, max_lag, power):
    R, T = y.shape
    out = np.zeros((R, max_lag + 1))
    for r in range(R):
        ym = 0.0
        xm = 0.0
        for t in range(T):
            ym += y[r, t]
            xm += x[r, t]
        ym /= T
        xm /= T
        for j in range(max_lag + 1):
            acc = 0.0
            for t in range(T - j):
                dy = y[r, t + j] - ym
                acc += dy ** power * (x[r, t] - xm)
            out[r, j] = acc / T
    return out


def _cross_moments_np(y, x, max_lag, power):
    T = y.shape[1]
    yc = y - y.mean(axis=1, keepdims=True)
    xc = x - x.mean(axis=1, keepdims=True)
    if power != 1:
        yc = yc ** power
    out = np.empty((y.shape[0], max_lag + 1))
    for j in range(max_lag + 1):
        out[:, j] = np.einsum("rt,rt->r", yc[:, j:], xc[:, : T - j]) / T
    return out


# ---------------------------------------------------------------- simulation


@njit
def _ar_filter_nb(u, phi):
    R, T = u.shape
    out = np.empty_like(u)
    for r in range(R):
        prev = 0.0
        for t in range(T):
            prev = phi * prev + u[r, t]
            out[r, t] = prev
    return out


def _ar_filter_np(u, phi):
    return signal.lfilter([1.0], [1.0, -phi], u, axis=1)


# ---------------------------------------------------------------- priors


@njit
def _prior_nb(code, a, b, v):
    if code <= HALFNORMAL_NEG:
        z = (v - a) / b
        lp = -0.5 * z * z - math.log(b) - LOG_SQRT_2PI
        if code == HALFNORMAL_POS:
            lp -= math.log(0.5 * math.erfc(-(a / b) / SQRT2))
        elif code == HALFNORMAL_NEG:
            lp -= math.log(0.5 * math.erfc((a / b) / SQRT2))
        return lp, -z / b
    if code == BETA:
        lbeta = math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
        lp = (a - 1.0) * math.log(v) + (b - 1.0) * math.log1p(-v) - lbeta
        return lp, (a - 1.0) / v - (b - 1.0) / (1.0 - v)
    if code == INV_GAMMA:
        lp = a * math.log(b) - math.lgamma(a) - (a + 1.0) * math.log(v) - b / v
        return lp, -(a + 1.0) / v + b / (v * v)
    lp = a * math.log(b) - math.lgamma(a) + (a - 1.0) * math.log(v) - b * v
    return lp, (a - 1.0) / v - b


def _prior_np(code, a, b, v):
    """Vectorised prior log-density and slope; ``code`` must be scalar."""
    if code <= HALFNORMAL_NEG:
        z = (v - a) / b
        lp = -0.5 * z * z - np.log(b) - LOG_SQRT_2PI
        if code == HALFNORMAL_POS:
            lp = lp - special.log_ndtr(a / b)
        elif code == HALFNORMAL_NEG:
            lp = lp - special.log_ndtr(-a / b)
        return lp, -z / b
    if code == BETA:
        lp = (a - 1.0) * np.log(v) + (b - 1.0) * np.log1p(-v) - special.betaln(a, b)
        return lp, (a - 1.0) / v - (b - 1.0) / (1.0 - v)
    if code == INV_GAMMA:
        lp = a * np.log(b) - special.gammaln(a) - (a + 1.0) * np.log(v) - b / v
        return lp, -(a + 1.0) / v + b / (v * v)
    lp = a * np.log(b) - special.gammaln(a) + (a - 1.0) * np.log(v) - b * v
    return lp, (a - 1.0) / v - b


# ---------------------------------------------------------------- joint density


@njit
def _logp_grad_nb(z, y, X, coef_code, coef_a, coef_b, sc_code, sc_a, sc_b, phi_sign, tv, eta_free):
    T, p = X.shape
    grad = np.zeros(z.shape[0])
    lp = 0.0

    beta = np.empty(p)
    for k in range(p):
        u = z[k]
        c = coef_code[k]
        if c == NORMAL:
            v = u
        elif c == HALFNORMAL_POS:
            v = math.exp(u)
        else:
            v = -math.exp(u)
        beta[k] = v
        l, d = _prior_nb(c, coef_a[k], coef_b[k], v)
        if c == NORMAL:
            lp += l
            grad[k] += d
        else:
            lp += l + u
            grad[k] += d * v + 1.0

    # resilience (fixed phi, or phi_0 of the walk)
    u = z[p]
    q = 1.0 / (1.0 + math.exp(-u))
    dq = q * (1.0 - q)
    phi_c = phi_sign * q
    l, d = _prior_nb(sc_code[0], sc_a[0], sc_b[0], q)
    lp += l + math.log(dq)
    grad[p] += d * dq + (1.0 - 2.0 * q)
    dphi_du = phi_sign * dq

    i_se = p + 1
    s_e = math.exp(z[i_se])
    l, d = _prior_nb(sc_code[1], sc_a[1], sc_b[1], s_e)
    lp += l + z[i_se]
    grad[i_se] += d * s_e + 1.0

    pos = p + 2
    i_eta = -1
    eta = 0.0
    if eta_free:
        i_eta = pos
        eta = math.exp(z[pos])
        l, d = _prior_nb(sc_code[2], sc_a[2], sc_b[2], eta)
        lp += l + z[pos]
        grad[pos] += d * eta + 1.0
        pos += 1
    i_sp = -1
    s_phi = 0.0
    if tv:
        i_sp = pos
        s_phi = math.exp(z[pos])
        l, d = _prior_nb(sc_code[3], sc_a[3], sc_b[3], s_phi)
        lp += l + z[pos]
        grad[pos] += d * s_phi + 1.0
        pos += 1
    i_path = pos
    if tv:
        pos += T
    i_e = pos

    inv_ve = 1.0 / (s_e * s_e)
    log_se = math.log(s_e)

    s0 = z[i_e] if eta_free else y[0]
    r0 = s0 - y[0]
    lp += -0.5 * r0 * r0 * inv_ve - log_se - LOG_SQRT_2PI
    g_log_se = r0 * r0 * inv_ve - 1.0
    if eta_free:
        grad[i_e] -= r0 * inv_ve

    g_beta = np.zeros(p)
    g_phi_fixed = 0.0
    for t in range(1, T):
        prev = z[i_e + t - 1] if eta_free else y[t - 1]
        cur = z[i_e + t] if eta_free else y[t]
        ph = z[i_path + t] if tv else phi_c
        mu = ph * prev
        for k in range(p):
            mu += X[t, k] * beta[k]
        r = cur - mu
        lp += -0.5 * r * r * inv_ve - log_se - LOG_SQRT_2PI
        g_log_se += r * r * inv_ve - 1.0
        w = r * inv_ve
        if eta_free:
            grad[i_e + t] -= w
            grad[i_e + t - 1] += w * ph
        if tv:
            grad[i_path + t] += w * prev
        else:
            g_phi_fixed += w * prev
        for k in range(p):
            g_beta[k] += w * X[t, k]

    if eta_free:
        s_v = eta * s_e
        inv_vv = 1.0 / (s_v * s_v)
        log_sv = math.log(s_v)
        g_log_sv = 0.0
        for t in range(T):
            e = y[t] - z[i_e + t]
            lp += -0.5 * e * e * inv_vv - log_sv - LOG_SQRT_2PI
            g_log_sv += e * e * inv_vv - 1.0
            grad[i_e + t] += e * inv_vv
        g_log_se += g_log_sv
        grad[i_eta] += g_log_sv

    if tv:
        inv_vp = 1.0 / (s_phi * s_phi)
        log_sp = math.log(s_phi)
        g_log_sp = 0.0
        prev = phi_c
        g_phi0 = 0.0
        for t in range(T):
            cur = z[i_path + t]
            dd = cur - prev
            lp += -0.5 * dd * dd * inv_vp - log_sp - LOG_SQRT_2PI
            g_log_sp += dd * dd * inv_vp - 1.0
            grad[i_path + t] -= dd * inv_vp
            if t == 0:
                g_phi0 += dd * inv_vp
            else:
                grad[i_path + t - 1] += dd * inv_vp
            prev = cur
        grad[i_sp] += g_log_sp
        grad[p] += g_phi0 * dphi_du
    else:
        grad[p] += g_phi_fixed * dphi_du

    grad[i_se] += g_log_se
    for k in range(p):
        if coef_code[k] == NORMAL:
            grad[k] += g_beta[k]
        else:
            grad[k] += g_beta[k] * beta[k]
    return lp, grad


def _unpack_np(z, T, p, tv, eta_free):
    pos = p + 2
    i_eta = i_sp = -1
    if eta_free:
        i_eta = pos
        pos += 1
    if tv:
        i_sp = pos
        pos += 1
    i_path = pos
    if tv:
        pos += T
    return i_eta, i_sp, i_path, pos


def _logp_grad_np(z, y, X, coef_code, coef_a, coef_b, sc_code, sc_a, sc_b, phi_sign, tv, eta_free):
    T, p = X.shape
    grad = np.zeros(z.shape[0])
    lp = 0.0

    u = z[:p]
    ident = coef_code == NORMAL
    beta = np.where(ident, u, np.where(coef_code == HALFNORMAL_POS, 1.0, -1.0) * np.exp(np.where(ident, 0.0, u)))
    dbeta = np.where(ident, 1.0, beta)
    for c in np.unique(coef_code):
        m = coef_code == c
        l, d = _prior_np(int(c), coef_a[m], coef_b[m], beta[m])
        lp += l.sum()
        grad[:p][m] += d * dbeta[m]
    lp += u[~ident].sum()
    grad[:p][~ident] += 1.0

    q = special.expit(z[p])
    dq = q * (1.0 - q)
    phi_c = phi_sign * q
    l, d = _prior_np(int(sc_code[0]), sc_a[0], sc_b[0], q)
    lp += l + np.log(dq)
    grad[p] += d * dq + (1.0 - 2.0 * q)
    dphi_du = phi_sign * dq

    i_se = p + 1
    s_e = np.exp(z[i_se])
    l, d = _prior_np(int(sc_code[1]), sc_a[1], sc_b[1], s_e)
    lp += l + z[i_se]
    grad[i_se] += d * s_e + 1.0

    i_eta, i_sp, i_path, i_e = _unpack_np(z, T, p, tv, eta_free)
    if eta_free:
        eta = np.exp(z[i_eta])
        l, d = _prior_np(int(sc_code[2]), sc_a[2], sc_b[2], eta)
        lp += l + z[i_eta]
        grad[i_eta] += d * eta + 1.0
    if tv:
        s_phi = np.exp(z[i_sp])
        l, d = _prior_np(int(sc_code[3]), sc_a[3], sc_b[3], s_phi)
        lp += l + z[i_sp]
        grad[i_sp] += d * s_phi + 1.0

    s = z[i_e:i_e + T] if eta_free else y
    inv_ve = 1.0 / (s_e * s_e)
    log_se = np.log(s_e)

    r0 = s[0] - y[0]
    phis = z[i_path:i_path + T][1:] if tv else phi_c
    r = s[1:] - phis * s[:-1] - X[1:] @ beta
    lp += -0.5 * (r0 * r0 + r @ r) * inv_ve - T * (log_se + LOG_SQRT_2PI)
    g_log_se = (r0 * r0 + r @ r) * inv_ve - T
    w = r * inv_ve
    if eta_free:
        g_s = np.zeros(T)
        g_s[0] -= r0 * inv_ve
        g_s[1:] -= w
        g_s[:-1] += w * phis
        e = y - s
        s_v = eta * s_e
        inv_vv = 1.0 / (s_v * s_v)
        lp += -0.5 * (e @ e) * inv_vv - T * (np.log(s_v) + LOG_SQRT_2PI)
        g_log_sv = (e @ e) * inv_vv - T
        g_s += e * inv_vv
        grad[i_e:i_e + T] += g_s
        g_log_se += g_log_sv
        grad[i_eta] += g_log_sv
    g_phi_t = w * s[:-1]

    if tv:
        path = z[i_path:i_path + T]
        dd = np.diff(path, prepend=phi_c)
        inv_vp = 1.0 / (s_phi * s_phi)
        lp += -0.5 * (dd @ dd) * inv_vp - T * (np.log(s_phi) + LOG_SQRT_2PI)
        grad[i_sp] += (dd @ dd) * inv_vp - T
        g_path = -dd * inv_vp
        g_path[:-1] += dd[1:] * inv_vp
        g_path[1:] += g_phi_t
        grad[i_path:i_path + T] += g_path
        grad[p] += dd[0] * inv_vp * dphi_du
    else:
        grad[p] += g_phi_t.sum() * dphi_du

    grad[i_se] += g_log_se
    grad[:p] += (w @ X[1:]) * dbeta
    return float(lp), grad


@njit
def _pointwise_nb(z, y, X, coef_code, phi_sign, tv, eta_free):
    T, p = X.shape
    beta = np.empty(p)
    for k in range(p):
        c = coef_code[k]
        if c == NORMAL:
            beta[k] = z[k]
        elif c == HALFNORMAL_POS:
            beta[k] = math.exp(z[k])
        else:
            beta[k] = -math.exp(z[k])
    phi_c = phi_sign / (1.0 + math.exp(-z[p]))
    s_e = math.exp(z[p + 1])
    pos = p + 2
    eta = 0.0
    if eta_free:
        eta = math.exp(z[pos])
        pos += 1
    if tv:
        pos += 1
    i_path = pos
    if tv:
        pos += T
    i_e = pos
    out = np.empty(T)
    if eta_free:
        s_v = eta * s_e
        for t in range(T):
            e = y[t] - z[i_e + t]
            out[t] = -0.5 * e * e / (s_v * s_v) - math.log(s_v) - LOG_SQRT_2PI
        return out
    out[0] = -math.log(s_e) - LOG_SQRT_2PI
    for t in range(1, T):
        ph = z[i_path + t] if tv else phi_c
        mu = ph * y[t - 1]
        for k in range(p):
            mu += X[t, k] * beta[k]
        r = y[t] - mu
        out[t] = -0.5 * r * r / (s_e * s_e) - math.log(s_e) - LOG_SQRT_2PI
    return out


def _pointwise_np(z, y, X, coef_code, phi_sign, tv, eta_free):
    T, p = X.shape
    u = z[:p]
    beta = np.where(coef_code == NORMAL, u, np.where(coef_code == HALFNORMAL_POS, 1.0, -1.0) * np.exp(u))
    phi_c = phi_sign * special.expit(z[p])
    s_e = np.exp(z[p + 1])
    i_eta, _, i_path, i_e = _unpack_np(z, T, p, tv, eta_free)
    if eta_free:
        s_v = np.exp(z[i_eta]) * s_e
        e = y - z[i_e:i_e + T]
        return -0.5 * e * e / (s_v * s_v) - np.log(s_v) - LOG_SQRT_2PI
    phis = z[i_path:i_path + T][1:] if tv else phi_c
    r = y[1:] - phis * y[:-1] - X[1:] @ beta
    out = np.empty(T)
    out[0] = -np.log(s_e) - LOG_SQRT_2PI
    out[1:] = -0.5 * r * r / (s_e * s_e) - np.log(s_e) - LOG_SQRT_2PI
    return out




# ---------------------------------------------------------------- non-centred form
#
# Latent blocks hold standardised innovations instead of paths:
#   phi_t = phi_{t-1} + sigma_phi * w_t          (phi_0 the initial resilience)
#   E_1   = y_1 + sigma_E * e_1
#   E_t   = phi_t E_{t-1} + x_t' beta + sigma_E * e_t
# The density of (e, w) is standard normal, so no Jacobian is needed.


@njit
def _nc_paths_nb(z, y, X, coef_code, phi_sign, tv, eta_free):
    T, p = X.shape
    beta = np.empty(p)
    for k in range(p):
        c = coef_code[k]
        if c == NORMAL:
            beta[k] = z[k]
        elif c == HALFNORMAL_POS:
            beta[k] = math.exp(z[k])
        else:
            beta[k] = -math.exp(z[k])
    phi_c = phi_sign / (1.0 + math.exp(-z[p]))
    s_e = math.exp(z[p + 1])
    pos = p + 2
    if eta_free:
        pos += 1
    s_phi = 0.0
    if tv:
        s_phi = math.exp(z[pos])
        pos += 1
    i_path = pos
    if tv:
        pos += T
    i_e = pos
    path = np.full(T, phi_c)
    if tv:
        prev = phi_c
        for t in range(T):
            prev = prev + s_phi * z[i_path + t]
            path[t] = prev
    E = y.copy()
    if eta_free:
        E[0] = y[0] + s_e * z[i_e]
        for t in range(1, T):
            mu = path[t] * E[t - 1]
            for k in range(p):
                mu += X[t, k] * beta[k]
            E[t] = mu + s_e * z[i_e + t]
    return path, E


def _nc_paths_np(z, y, X, coef_code, phi_sign, tv, eta_free):
    T, p = X.shape
    u = z[:p]
    beta = np.where(coef_code == NORMAL, u, np.where(coef_code == HALFNORMAL_POS, 1.0, -1.0) * np.exp(u))
    phi_c = phi_sign * special.expit(z[p])
    s_e = np.exp(z[p + 1])
    i_eta, i_sp, i_path, i_e = _unpack_np(z, T, p, tv, eta_free)
    if tv:
        path = phi_c + np.exp(z[i_sp]) * np.cumsum(z[i_path:i_path + T])
    else:
        path = np.full(T, phi_c)
    if not eta_free:
        return path, y.copy()
    drive = X @ beta + s_e * z[i_e:i_e + T]
    drive[0] = y[0] + s_e * z[i_e]
    if not tv:
        return path, signal.lfilter([1.0], [1.0, -phi_c], drive)
    E = np.empty(T)
    E[0] = drive[0]
    for t in range(1, T):
        E[t] = path[t] * E[t - 1] + drive[t]
    return path, E


@njit
def _logp_grad_nc_nb(z, y, X, coef_code, coef_a, coef_b, sc_code, sc_a, sc_b, phi_sign, tv, eta_free):
    T, p = X.shape
    grad = np.zeros(z.shape[0])
    lp = 0.0

    beta = np.empty(p)
    for k in range(p):
        u = z[k]
        c = coef_code[k]
        if c == NORMAL:
            v = u
        elif c == HALFNORMAL_POS:
            v = math.exp(u)
        else:
            v = -math.exp(u)
        beta[k] = v
        l, d = _prior_nb(c, coef_a[k], coef_b[k], v)
        if c == NORMAL:
            lp += l
            grad[k] += d
        else:
            lp += l + u
            grad[k] += d * v + 1.0

    u = z[p]
    q = 1.0 / (1.0 + math.exp(-u))
    dq = q * (1.0 - q)
    phi_c = phi_sign * q
    l, d = _prior_nb(sc_code[0], sc_a[0], sc_b[0], q)
    lp += l + math.log(dq)
    grad[p] += d * dq + (1.0 - 2.0 * q)
    dphi_du = phi_sign * dq

    i_se = p + 1
    s_e = math.exp(z[i_se])
    l, d = _prior_nb(sc_code[1], sc_a[1], sc_b[1], s_e)
    lp += l + z[i_se]
    grad[i_se] += d * s_e + 1.0

    pos = p + 2
    i_eta = -1
    eta = 0.0
    if eta_free:
        i_eta = pos
        eta = math.exp(z[pos])
        l, d = _prior_nb(sc_code[2], sc_a[2], sc_b[2], eta)
        lp += l + z[pos]
        grad[pos] += d * eta + 1.0
        pos += 1
    i_sp = -1
    s_phi = 0.0
    if tv:
        i_sp = pos
        s_phi = math.exp(z[pos])
        l, d = _prior_nb(sc_code[3], sc_a[3], sc_b[3], s_phi)
        lp += l + z[pos]
        grad[pos] += d * s_phi + 1.0
        pos += 1
    i_path = pos
    if tv:
        pos += T
    i_e = pos

    # forward paths and standard normal innovation terms
    path = np.full(T, phi_c)
    if tv:
        prev = phi_c
        for t in range(T):
            w = z[i_path + t]
            lp += -0.5 * w * w - LOG_SQRT_2PI
            grad[i_path + t] -= w
            prev = prev + s_phi * w
            path[t] = prev
    g_path = np.zeros(T)
    g_beta = np.zeros(p)
    g_log_se = 0.0

    if eta_free:
        E = np.empty(T)
        E[0] = y[0] + s_e * z[i_e]
        for t in range(1, T):
            mu = path[t] * E[t - 1]
            for k in range(p):
                mu += X[t, k] * beta[k]
            E[t] = mu + s_e * z[i_e + t]
        s_v = eta * s_e
        inv_vv = 1.0 / (s_v * s_v)
        log_sv = math.log(s_v)
        g_log_sv = 0.0
        for t in range(T):
            e = z[i_e + t]
            lp += -0.5 * e * e - LOG_SQRT_2PI
            grad[i_e + t] -= e
            r = y[t] - E[t]
            lp += -0.5 * r * r * inv_vv - log_sv - LOG_SQRT_2PI
            g_log_sv += r * r * inv_vv - 1.0
        # reverse sweep through the state recursion
        carry = 0.0
        for t in range(T - 1, -1, -1):
            gE = (y[t] - E[t]) * inv_vv + carry
            grad[i_e + t] += gE * s_e
            g_log_se += gE * s_e * z[i_e + t]
            if t > 0:
                g_path[t] += gE * E[t - 1]
                for k in range(p):
                    g_beta[k] += gE * X[t, k]
                carry = gE * path[t]
        g_log_se += g_log_sv
        grad[i_eta] += g_log_sv
    else:
        inv_ve = 1.0 / (s_e * s_e)
        lp += -math.log(s_e) - LOG_SQRT_2PI
        g_log_se -= 1.0
        for t in range(1, T):
            mu = path[t] * y[t - 1]
            for k in range(p):
                mu += X[t, k] * beta[k]
            r = y[t] - mu
            lp += -0.5 * r * r * inv_ve - math.log(s_e) - LOG_SQRT_2PI
            g_log_se += r * r * inv_ve - 1.0
            w = r * inv_ve
            g_path[t] += w * y[t - 1]
            for k in range(p):
                g_beta[k] += w * X[t, k]

    if tv:
        cum = 0.0
        g_log_sp = 0.0
        for t in range(T - 1, -1, -1):
            cum += g_path[t]
            grad[i_path + t] += cum * s_phi
            g_log_sp += cum * s_phi * z[i_path + t]
        grad[i_sp] += g_log_sp
        grad[p] += cum * dphi_du
    else:
        acc = 0.0
        for t in range(T):
            acc += g_path[t]
        grad[p] += acc * dphi_du

    grad[i_se] += g_log_se
    for k in range(p):
        if coef_code[k] == NORMAL:
            grad[k] += g_beta[k]
        else:
            grad[k] += g_beta[k] * beta[k]
    return lp, grad



def _logp_grad_nc_np(z, y, X, coef_code, coef_a, coef_b, sc_code, sc_a, sc_b, phi_sign, tv, eta_free):
    T, p = X.shape
    grad = np.zeros(z.shape[0])
    lp = 0.0

    u = z[:p]
    ident = coef_code == NORMAL
    beta = np.where(ident, u, np.where(coef_code == HALFNORMAL_POS, 1.0, -1.0) * np.exp(np.where(ident, 0.0, u)))
    dbeta = np.where(ident, 1.0, beta)
    for c in np.unique(coef_code):
        m = coef_code == c
        l, d = _prior_np(int(c), coef_a[m], coef_b[m], beta[m])
        lp += l.sum()
        grad[:p][m] += d * dbeta[m]
    lp += u[~ident].sum()
    grad[:p][~ident] += 1.0

    q = special.expit(z[p])
    dq = q * (1.0 - q)
    l, d = _prior_np(int(sc_code[0]), sc_a[0], sc_b[0], q)
    lp += l + np.log(dq)
    grad[p] += d * dq + (1.0 - 2.0 * q)
    dphi_du = phi_sign * dq

    s_e = np.exp(z[p + 1])
    l, d = _prior_np(int(sc_code[1]), sc_a[1], sc_b[1], s_e)
    lp += l + z[p + 1]
    grad[p + 1] += d * s_e + 1.0

    i_eta, i_sp, i_path, i_e = _unpack_np(z, T, p, tv, eta_free)
    if eta_free:
        eta = np.exp(z[i_eta])
        l, d = _prior_np(int(sc_code[2]), sc_a[2], sc_b[2], eta)
        lp += l + z[i_eta]
        grad[i_eta] += d * eta + 1.0
    if tv:
        s_phi = np.exp(z[i_sp])
        l, d = _prior_np(int(sc_code[3]), sc_a[3], sc_b[3], s_phi)
        lp += l + z[i_sp]
        grad[i_sp] += d * s_phi + 1.0
        w = z[i_path:i_path + T]
        lp += -0.5 * (w @ w) - T * LOG_SQRT_2PI
        grad[i_path:i_path + T] -= w

    path, E = _nc_paths_np(z, y, X, coef_code, phi_sign, tv, eta_free)
    g_path = np.zeros(T)
    g_log_se = 0.0
    if eta_free:
        e = z[i_e:i_e + T]
        r = y - E
        s_v = eta * s_e
        inv_vv = 1.0 / (s_v * s_v)
        lp += -0.5 * (e @ e) - 0.5 * (r @ r) * inv_vv - T * (np.log(s_v) + 2 * LOG_SQRT_2PI)
        g_log_sv = (r @ r) * inv_vv - T
        grad[i_e:i_e + T] -= e
        # adjoint of E_t = path_t E_{t-1} + drive_t, swept backwards
        direct = r * inv_vv
        if tv:
            gE = np.empty(T)
            carry = 0.0
            for t in range(T - 1, -1, -1):
                gE[t] = direct[t] + carry
                carry = gE[t] * path[t]
        else:
            gE = signal.lfilter([1.0], [1.0, -path[0]], direct[::-1])[::-1]
        grad[i_e:i_e + T] += gE * s_e
        g_log_se += s_e * (gE @ e) + g_log_sv
        grad[i_eta] += g_log_sv
        g_path[1:] = gE[1:] * E[:-1]
        g_beta = gE[1:] @ X[1:]
    else:
        r = y[1:] - path[1:] * y[:-1] - X[1:] @ beta
        inv_ve = 1.0 / (s_e * s_e)
        lp += -0.5 * (r @ r) * inv_ve - T * (np.log(s_e) + LOG_SQRT_2PI)
        g_log_se += (r @ r) * inv_ve - T
        wr = r * inv_ve
        g_path[1:] = wr * y[:-1]
        g_beta = wr @ X[1:]

    if tv:
        cum = np.cumsum(g_path[::-1])[::-1]
        grad[i_path:i_path + T] += cum * s_phi
        grad[i_sp] += s_phi * (cum @ z[i_path:i_path + T])
        grad[p] += cum[0] * dphi_du
    else:
        grad[p] += g_path.sum() * dphi_du
    grad[p + 1] += g_log_se
    grad[:p] += g_beta * dbeta
    return float(lp), grad


cross_moments = pick(_cross_moments_nb, _cross_moments_np)
ar_filter = pick(_ar_filter_nb, _ar_filter_np)
logp_grad = pick(_logp_grad_nb, _logp_grad_np)
logp_grad_nc = pick(_logp_grad_nc_nb, _logp_grad_nc_np)
nc_paths = pick(_nc_paths_nb, _nc_paths_np)
pointwise_loglik = pick(_pointwise_nb, _pointwise_np)
