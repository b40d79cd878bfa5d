# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled numerical core.

Same functions as ``_pykernels`` with the same floating-point expressions in
the same order; built with FP contraction disabled so the two backends agree
bit for bit. See ``_pykernels`` for the cell row layout.
"""

from libc.math cimport exp, log, log1p, sqrt, fabs, floor, pow, erfc, M_PI, INFINITY
from libc.stdint cimport uint64_t
from libc.stdlib cimport malloc, free
from cython.parallel cimport prange, parallel

import numpy as np

BACKEND = "cython"
ROW_WIDTH = 12

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t STREAM_MULT = 0xD1B54A32D192ED03ULL
cdef uint64_t SEED_SALT = 0x6A09E667F3BCC909ULL
cdef double INV_2_53 = 1.0 / 9007199254740992.0

cdef double EPS = 1e-15
cdef double FPMIN = 1e-300
cdef int MAXIT = 100000
cdef double LN_SQRT_2PI = 0.91893853320467274178
cdef double SQRT1_2 = 0.70710678118654752440
cdef double INF = INFINITY


# -- counter-based random numbers ------------------------------------------

cdef inline uint64_t _mix64(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline uint64_t _stream_key(uint64_t seed, uint64_t stream) noexcept nogil:
    return _mix64(_mix64(seed ^ SEED_SALT) ^ (stream * STREAM_MULT + GOLDEN))


cdef inline double _uniform(uint64_t key, uint64_t counter) noexcept nogil:
    cdef uint64_t x = _mix64(key + (counter + 1) * GOLDEN)
    return (<double>(x >> 11) + 0.5) * INV_2_53


# -- special functions -------------------------------------------------------

cdef inline double _stirling_corr(double x) noexcept nogil:
    cdef double r = 1.0 / x
    cdef double r2 = r * r
    return r * (1.0 / 12.0 - r2 * (1.0 / 360.0 - r2 * (1.0 / 1260.0 - r2 * (
        1.0 / 1680.0 - r2 * (1.0 / 1188.0 - r2 * (691.0 / 360360.0 - r2 / 156.0))))))


cdef double _lgamma(double x) noexcept nogil:
    cdef double prod
    if x >= 10.0:
        return (x - 0.5) * log(x) - x + LN_SQRT_2PI + _stirling_corr(x)
    prod = 1.0
    while x < 10.0:
        prod *= x
        x += 1.0
    return (x - 0.5) * log(x) - x + LN_SQRT_2PI + _stirling_corr(x) - log(prod)


cdef double _log1pmx(double e) noexcept nogil:
    cdef double term, total, k, inc
    if -0.1 < e < 0.1:
        term = e
        total = 0.0
        k = 2.0
        while True:
            term *= -e
            inc = term / k
            total += inc
            if fabs(inc) <= 1e-17 * fabs(total):
                break
            k += 1.0
        return total
    return log1p(e) - e


cdef double _log_gamma_prefactor(double a, double x) noexcept nogil:
    cdef double e, core
    if x <= 0.0:
        return -INF
    if a >= 10.0:
        e = (x - a) / a
        if -0.5 < e < 0.5:
            core = a * _log1pmx(e)
        else:
            core = a * log(x / a) - (x - a)
        return core + 0.5 * log(a) - LN_SQRT_2PI - _stirling_corr(a)
    return a * log(x) - x - _lgamma(a)


cdef double _gamma_series(double a, double x) noexcept nogil:
    cdef double ap = a
    cdef double delta = 1.0 / a
    cdef double total = delta
    cdef int it
    for it in range(MAXIT):
        ap += 1.0
        delta *= x / ap
        total += delta
        if fabs(delta) < fabs(total) * EPS:
            break
    return total


cdef double _gamma_cf(double a, double x) noexcept nogil:
    cdef double b = x + 1.0 - a
    cdef double c = 1.0 / FPMIN
    cdef double d = 1.0 / b
    cdef double h = d
    cdef double i = 1.0
    cdef double an, delta
    while i < MAXIT:
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if fabs(d) < FPMIN:
            d = FPMIN
        c = b + an / c
        if fabs(c) < FPMIN:
            c = FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if fabs(delta - 1.0) < EPS:
            break
        i += 1.0
    return h


cdef double _gamma_p(double a, double x) noexcept nogil:
    if x <= 0.0:
        return 0.0
    if x == INF:
        return 1.0
    if x < a + 1.0:
        return exp(_log_gamma_prefactor(a, x)) * _gamma_series(a, x)
    return 1.0 - exp(_log_gamma_prefactor(a, x)) * _gamma_cf(a, x)


cdef double _gamma_q(double a, double x) noexcept nogil:
    if x <= 0.0:
        return 1.0
    if x == INF:
        return 0.0
    if x < a + 1.0:
        return 1.0 - exp(_log_gamma_prefactor(a, x)) * _gamma_series(a, x)
    return exp(_log_gamma_prefactor(a, x)) * _gamma_cf(a, x)


cdef double _log_gamma_p(double a, double x) noexcept nogil:
    cdef double lp
    if x <= 0.0:
        return -INF
    if x == INF:
        return 0.0
    lp = _log_gamma_prefactor(a, x)
    if x < a + 1.0:
        return lp + log(_gamma_series(a, x))
    return log1p(-exp(lp) * _gamma_cf(a, x))


cdef double _log_gamma_q(double a, double x) noexcept nogil:
    cdef double lp
    if x <= 0.0:
        return 0.0
    if x == INF:
        return -INF
    lp = _log_gamma_prefactor(a, x)
    if x < a + 1.0:
        return log1p(-exp(lp) * _gamma_series(a, x))
    return lp + log(_gamma_cf(a, x))


cdef double _gamma_guess(double a, double plow, double pupp) noexcept nogil:
    cdef double xs, pp, t, z, w
    if plow < 0.5:
        xs = exp((log(plow) + _lgamma(a + 1.0)) / a)
        if xs < 0.01 * (a + 1.0):
            return xs
    if a > 1.0:
        pp = plow if plow < 0.5 else pupp
        t = sqrt(-2.0 * log(pp))
        z = (2.30753 + t * 0.27061) / (1.0 + t * (0.99229 + t * 0.04481)) - t
        if plow < 0.5:
            z = -z
        w = 1.0 - 1.0 / (9.0 * a) - z / (3.0 * sqrt(a))
        if w <= 0.0:
            return 1e-3
        xs = a * w * w * w
        return xs if xs > 1e-3 else 1e-3
    t = 1.0 - a * (0.253 + a * 0.12)
    if plow < t:
        return pow(plow / t, 1.0 / a)
    return 1.0 - log(pupp / (1.0 - t))


cdef double _gamma_inv(double a, double p, bint upper) noexcept nogil:
    cdef double x, target, y, lo, hi, expand, lt, h, slope, yn, tol
    cdef int it
    if p <= 0.0:
        return INF if upper else 0.0
    if p >= 1.0:
        return 0.0 if upper else INF
    if upper:
        x = _gamma_guess(a, 1.0 - p, p)
    else:
        x = _gamma_guess(a, p, 1.0 - p)
    if not (x > 0.0) or x == INF:
        x = a
    target = log(p)
    y = log(x)
    lo = -INF
    hi = INF
    expand = 1.0
    for it in range(300):
        x = exp(y)
        if upper:
            lt = _log_gamma_q(a, x)
            h = target - lt
        else:
            lt = _log_gamma_p(a, x)
            h = lt - target
        if h == 0.0:
            return x
        if h < 0.0:
            lo = y
        else:
            hi = y
        slope = exp(_log_gamma_prefactor(a, x) - lt)
        yn = y - h / slope if slope > 0.0 else INF
        if not (lo < yn < hi):
            if hi == INF:
                yn = y + expand
                expand *= 2.0
            elif lo == -INF:
                yn = y - expand
                expand *= 2.0
            else:
                yn = 0.5 * (lo + hi)
        if yn > 709.0:
            yn = 709.0
        tol = 4e-16 * (fabs(yn) if fabs(yn) > 1.0 else 1.0)
        if fabs(yn - y) <= tol or (hi - lo) <= tol:
            return exp(yn)
        y = yn
    return exp(y)


cdef inline double _norm_cdf(double x) noexcept nogil:
    return 0.5 * erfc(-x * SQRT1_2)


cdef inline double _norm_sf(double x) noexcept nogil:
    return 0.5 * erfc(x * SQRT1_2)


cdef double _norm_ppf(double p) noexcept nogil:
    cdef double q, r, val
    if p <= 0.0:
        return -INF
    if p >= 1.0:
        return INF
    q = p - 0.5
    if fabs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * (((((((2509.0809287301226727 * r + 33430.575583588128105) * r
                          + 67265.770927008700853) * r + 45921.953931549871457) * r
                        + 13731.693765509461125) * r + 1971.5909503065514427) * r
                      + 133.14166789178437745) * r + 3.387132872796366608) / (
            ((((((5226.495278852545925 * r + 28729.085735721942674) * r
                 + 39307.89580009271061) * r + 21213.794301586595867) * r
               + 5394.1960214247511077) * r + 687.1870074920579083) * r
             + 42.313330701600911252) * r + 1.0)
    r = p if q < 0.0 else 1.0 - p
    r = sqrt(-log(r))
    if r <= 5.0:
        r -= 1.6
        val = (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r
                    + 0.24178072517745061177) * r + 1.27045825245236838258) * r
                  + 3.64784832476320460504) * r + 5.7694972214606914055) * r
                + 4.6303378461565452959) * r + 1.42343711074968357734) / (
            ((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r
                 + 0.0151986665636164571966) * r + 0.14810397642748007459) * r
               + 0.68976733498510000455) * r + 1.6763848301838038494) * r
             + 2.05319162663775882187) * r + 1.0)
    else:
        r -= 5.0
        val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
                    + 0.0012426609473880784386) * r + 0.026532189526576123093) * r
                  + 0.29656057182850489123) * r + 1.7848265399172913358) * r
                + 5.4637849111641143699) * r + 6.6579046435011037772) / (
            ((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r
                 + 1.8463183175100546818e-5) * r + 7.868691311456132591e-4) * r
               + 0.0148753612908506148525) * r + 0.13692988092273580531) * r
             + 0.59983220655588793769) * r + 1.0)
    return -val if q < 0.0 else val


cdef double _beta_cf(double a, double b, double x) noexcept nogil:
    cdef double qab = a + b
    cdef double qap = a + 1.0
    cdef double qam = a - 1.0
    cdef double c = 1.0
    cdef double d = 1.0 - qab * x / qap
    cdef double h, m, m2, aa, delta
    cdef int it
    if fabs(d) < FPMIN:
        d = FPMIN
    d = 1.0 / d
    h = d
    m = 1.0
    for it in range(MAXIT):
        m2 = 2.0 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if fabs(d) < FPMIN:
            d = FPMIN
        c = 1.0 + aa / c
        if fabs(c) < FPMIN:
            c = FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if fabs(d) < FPMIN:
            d = FPMIN
        c = 1.0 + aa / c
        if fabs(c) < FPMIN:
            c = FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if fabs(delta - 1.0) < EPS:
            break
        m += 1.0
    return h


cdef double _beta_inc(double a, double b, double x) noexcept nogil:
    cdef double lbt
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    lbt = _lgamma(a + b) - _lgamma(a) - _lgamma(b) + a * log(x) + b * log1p(-x)
    if x < (a + 1.0) / (a + b + 2.0):
        return exp(lbt) * _beta_cf(a, b, x) / a
    return 1.0 - exp(lbt) * _beta_cf(b, a, 1.0 - x) / b


cdef double _t_tail(double t, double nu) noexcept nogil:
    cdef double a = 0.5 * nu
    cdef double logx, x, lbt
    if t > 1e150:
        logx = log(nu) - 2.0 * log(t)
        x = exp(logx)
        lbt = _lgamma(a + 0.5) - _lgamma(a) - _lgamma(0.5) + a * logx + 0.5 * log1p(-x)
        return 0.5 * exp(lbt) * _beta_cf(a, 0.5, x) / a
    return 0.5 * _beta_inc(a, 0.5, nu / (nu + t * t))


cdef double _t_cdf(double t, double nu) noexcept nogil:
    if t > 0.0:
        return 1.0 - _t_tail(t, nu)
    return _t_tail(-t, nu)


cdef double _t_ppf(double p, double nu) noexcept nogil:
    cdef double pp, lnorm, t, le, tail_t, lo, hi, f, ldens, dens, tn
    cdef int it
    if p <= 0.0:
        return -INF
    if p >= 1.0:
        return INF
    if p == 0.5:
        return 0.0
    pp = p if p < 0.5 else 1.0 - p
    lnorm = _lgamma(0.5 * (nu + 1.0)) - _lgamma(0.5 * nu) - 0.5 * log(nu * M_PI)
    t = -_norm_ppf(pp)
    if pp < 1e-3:
        le = (lnorm + 0.5 * (nu - 1.0) * log(nu) - log(pp)) / nu
        if le > 709.0:
            return -INF if p < 0.5 else INF
        tail_t = exp(le)
        if tail_t > t:
            t = tail_t
    lo = 0.0
    hi = INF
    for it in range(400):
        f = pp - _t_tail(t, nu)
        if f == 0.0:
            break
        if f < 0.0:
            lo = t
        else:
            hi = t
        if t > 1e150:
            ldens = lnorm - (nu + 1.0) * (log(t) - 0.5 * log(nu))
        else:
            ldens = lnorm - 0.5 * (nu + 1.0) * log1p(t * t / nu)
        dens = exp(ldens)
        tn = -1.0
        if dens > 0.0:
            tn = t - f / dens
        if not (lo < tn < hi):
            if hi == INF:
                tn = 2.0 * t
            elif lo == 0.0:
                tn = 0.5 * hi
            elif hi > 4.0 * lo:
                tn = sqrt(lo * hi)
            else:
                tn = 0.5 * (lo + hi)
        if fabs(tn - t) <= 4e-16 * tn or (hi < INF and hi - lo <= 4e-16 * hi):
            t = tn
            break
        t = tn
    return -t if p < 0.5 else t


# -- scalar samplers ---------------------------------------------------------

cdef double _gamma_mt(double a, uint64_t key, uint64_t* counter) noexcept nogil:
    cdef double boost = 1.0
    cdef double d, c, z, v, u, z2
    if a < 1.0:
        boost = pow(_uniform(key, counter[0]), 1.0 / a)
        counter[0] += 1
        a += 1.0
    d = a - 1.0 / 3.0
    c = 1.0 / sqrt(9.0 * d)
    while True:
        z = _norm_ppf(_uniform(key, counter[0]))
        counter[0] += 1
        v = 1.0 + c * z
        if v <= 0.0:
            continue
        v = v * v * v
        u = _uniform(key, counter[0])
        counter[0] += 1
        z2 = z * z
        if u < 1.0 - 0.0331 * z2 * z2:
            return d * v * boost
        if log(u) < 0.5 * z2 + d * (1.0 - v + log(v)):
            return d * v * boost


cdef double _trunc_gamma_from_u(double a, double scale, double lower, double upper,
                                double u) noexcept nogil:
    cdef double xl = lower / scale
    cdef double xu = upper / scale
    cdef double pl = _gamma_p(a, xl)
    cdef double pu, ql, qu
    if pl <= 0.5:
        pu = _gamma_p(a, xu)
        return scale * _gamma_inv(a, pl + u * (pu - pl), 0)
    ql = _gamma_q(a, xl)
    qu = _gamma_q(a, xu)
    return scale * _gamma_inv(a, qu + (1.0 - u) * (ql - qu), 1)


cdef long _poisson(double mean, uint64_t key, uint64_t* counter) noexcept nogil:
    cdef double u, p, f, slam, loglam, b, a, invalpha, vr, v, us, k
    cdef long n
    if mean < 10.0:
        u = _uniform(key, counter[0])
        counter[0] += 1
        p = exp(-mean)
        f = p
        n = 0
        while u > f:
            n += 1
            p *= mean / n
            f += p
            if p < 1e-17 * f:
                break
        return n
    slam = sqrt(mean)
    loglam = log(mean)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    invalpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)
    while True:
        u = _uniform(key, counter[0]) - 0.5
        v = _uniform(key, counter[0] + 1)
        counter[0] += 2
        us = 0.5 - fabs(u)
        k = floor((2.0 * a / us + b) * u + mean + 0.43)
        if us >= 0.07 and v <= vr:
            return <long>k
        if k < 0.0 or (us < 0.013 and v > us):
            continue
        if (log(v) + log(invalpha) - log(a / (us * us) + b)
                <= -mean + k * loglam - _lgamma(k + 1.0)):
            return <long>k


# -- compound annual loss ----------------------------------------------------

cdef double _cell_year(const double[::1] row, uint64_t key, uint64_t* counter,
                       double u_freq, double u_sev) noexcept nogil:
    cdef double fk = row[0]
    cdef double sk = row[5]
    cdef double lam, g, mu, sigma, xi, nu, beta, theta, phi, dev, s2
    cdef double total, threshold, expo
    cdef bint lognormal
    cdef long n, i
    if fk == 0.0:
        lam = row[1]
    elif fk == 1.0:
        if u_freq >= 0.0:
            lam = row[2] * _gamma_inv(row[1], u_freq, 0)
        else:
            g = _gamma_mt(row[1], key, counter)
            lam = row[2] * g
    else:
        if u_freq < 0.0:
            u_freq = _uniform(key, counter[0])
            counter[0] += 1
        lam = _trunc_gamma_from_u(row[1], row[2], row[3], row[11], u_freq)

    lognormal = sk <= 2.0
    mu = 0.0
    sigma = 0.0
    xi = 0.0
    if sk == 0.0:
        mu = row[6]
        sigma = row[7]
    elif sk == 1.0:
        if u_sev < 0.0:
            u_sev = _uniform(key, counter[0])
            counter[0] += 1
        mu = row[6] + row[7] * _norm_ppf(u_sev)
        sigma = row[8]
    elif sk == 2.0:
        nu = row[6]
        beta = row[7]
        theta = row[8]
        phi = row[9]
        if u_sev >= 0.0:
            mu = theta + sqrt(beta / (phi * nu)) * _t_ppf(u_sev, nu)
            g = _gamma_mt(0.5 * (nu + 1.0), key, counter)
            dev = mu - theta
            sigma = sqrt((beta + phi * dev * dev) / (2.0 * g))
        else:
            g = _gamma_mt(0.5 * nu, key, counter)
            s2 = beta / (2.0 * g)
            mu = theta + sqrt(s2 / phi) * _norm_ppf(_uniform(key, counter[0]))
            counter[0] += 1
            sigma = sqrt(s2)
    elif sk == 3.0:
        xi = row[6]
    elif sk == 4.0:
        if u_sev >= 0.0:
            xi = row[7] * _gamma_inv(row[6], u_sev, 0)
        else:
            g = _gamma_mt(row[6], key, counter)
            xi = row[7] * g
    else:
        if u_sev < 0.0:
            u_sev = _uniform(key, counter[0])
            counter[0] += 1
        xi = _trunc_gamma_from_u(row[6], row[7], row[8], row[9], u_sev)

    n = _poisson(lam * row[4], key, counter)
    total = 0.0
    if lognormal:
        for i in range(n):
            total += exp(mu + sigma * _norm_ppf(_uniform(key, counter[0])))
            counter[0] += 1
    else:
        threshold = row[10]
        expo = -1.0 / xi
        for i in range(n):
            total += threshold * pow(1.0 - _uniform(key, counter[0]), expo)
            counter[0] += 1
    return total


cdef void _replication(const double[:, ::1] rows, Py_ssize_t k, uint64_t seed,
                       const double[:, ::1] factor, const long[::1] coord_cell,
                       const long[::1] coord_kind, double[:, ::1] out,
                       double* u_freq, double* u_sev, double* z) noexcept nogil:
    cdef uint64_t key = _stream_key(seed, <uint64_t>k)
    cdef uint64_t counter = 0
    cdef Py_ssize_t n_cells = rows.shape[0]
    cdef Py_ssize_t d = factor.shape[0]
    cdef Py_ssize_t i, m, j
    cdef double y, u
    for j in range(n_cells):
        u_freq[j] = -1.0
        u_sev[j] = -1.0
    if d > 0:
        for i in range(d):
            z[i] = _norm_ppf(_uniform(key, counter))
            counter += 1
        for i in range(d):
            y = 0.0
            for m in range(d):
                y += factor[i, m] * z[m]
            u = _norm_cdf(y)
            if u < 1e-300:
                u = 1e-300
            elif u >= 1.0:
                u = 1.0 - 1.1102230246251565e-16
            if coord_kind[i] == 0:
                u_freq[coord_cell[i]] = u
            else:
                u_sev[coord_cell[i]] = u
    for j in range(n_cells):
        out[k, j] = _cell_year(rows[j], key, &counter, u_freq[j], u_sev[j])


# -- Python-visible API ------------------------------------------------------

def mix64(z):
    return _mix64(<uint64_t>(z & 0xFFFFFFFFFFFFFFFF))


def stream_key(seed, stream):
    return _stream_key(<uint64_t>(seed & 0xFFFFFFFFFFFFFFFF),
                       <uint64_t>(stream & 0xFFFFFFFFFFFFFFFF))


def uniform(key, counter):
    """Value number ``counter`` of stream ``key``, strictly inside (0, 1)."""
    return _uniform(<uint64_t>key, <uint64_t>counter)


def lgamma(double x):
    return _lgamma(x)


def gamma_p(double a, double x):
    """Regularized lower incomplete gamma P(a, x)."""
    return _gamma_p(a, x)


def gamma_q(double a, double x):
    """Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x)."""
    return _gamma_q(a, x)


def log_gamma_p(double a, double x):
    return _log_gamma_p(a, x)


def log_gamma_q(double a, double x):
    return _log_gamma_q(a, x)


def gamma_inv(double a, double p, upper):
    """Unit-scale gamma quantile; upper-tail probability when ``upper``."""
    return _gamma_inv(a, p, bool(upper))


def norm_cdf(double x):
    return _norm_cdf(x)


def norm_sf(double x):
    return _norm_sf(x)


def norm_ppf(double p):
    return _norm_ppf(p)


def beta_inc(double a, double b, double x):
    return _beta_inc(a, b, x)


def t_cdf(double t, double nu):
    return _t_cdf(t, nu)


def t_ppf(double p, double nu):
    return _t_ppf(p, nu)


def sample_into(int kind, params, key, counter, double[::1] out, double[::1] out2=None):
    """Fill ``out`` with draws of sampler ``kind``; returns the next counter."""
    cdef Py_ssize_t n = out.shape[0]
    cdef Py_ssize_t i
    cdef uint64_t k = <uint64_t>key
    cdef uint64_t c = <uint64_t>counter
    cdef double p0 = params[0] if len(params) > 0 else 0.0
    cdef double p1 = params[1] if len(params) > 1 else 0.0
    cdef double p2 = params[2] if len(params) > 2 else 0.0
    cdef double p3 = params[3] if len(params) > 3 else 0.0
    cdef double g, s2
    if kind < 0 or kind > 7:
        raise ValueError(f"unknown sampler kind {kind}")
    if kind == 7 and out2 is None:
        raise ValueError("normal-inverse-chi2 sampling needs a second output array")
    with nogil:
        for i in range(n):
            if kind == 0:
                out[i] = _uniform(k, c)
                c += 1
            elif kind == 1:
                out[i] = p0 + p1 * _norm_ppf(_uniform(k, c))
                c += 1
            elif kind == 2:
                out[i] = exp(p0 + p1 * _norm_ppf(_uniform(k, c)))
                c += 1
            elif kind == 3:
                g = _gamma_mt(p0, k, &c)
                out[i] = p1 * g
            elif kind == 4:
                out[i] = _trunc_gamma_from_u(p0, p1, p2, p3, _uniform(k, c))
                c += 1
            elif kind == 5:
                out[i] = p1 * pow(1.0 - _uniform(k, c), -1.0 / p0)
                c += 1
            elif kind == 6:
                out[i] = <double>_poisson(p0, k, &c)
            else:
                g = _gamma_mt(0.5 * p0, k, &c)
                s2 = p1 / (2.0 * g)
                out2[i] = s2
                out[i] = p2 + sqrt(s2 / p3) * _norm_ppf(_uniform(k, c))
                c += 1
    return c


def cell_year(row, key, counter, double u_freq, double u_sev):
    """One annual loss for one cell; returns ``(loss, counter)``."""
    cdef double[::1] r = np.ascontiguousarray(row, dtype=np.float64)
    cdef uint64_t c = <uint64_t>counter
    cdef double loss = _cell_year(r, <uint64_t>key, &c, u_freq, u_sev)
    return loss, c


def simulate(rows, Py_ssize_t n_reps, seed, factor, coord_cell, coord_kind, int workers=1):
    """Annual losses for ``n_reps`` replications; replication k uses stream (seed, k)."""
    cdef const double[:, ::1] r = np.ascontiguousarray(rows, dtype=np.float64)
    cdef Py_ssize_t n_cells = r.shape[0]
    fac = np.asarray(factor, dtype=np.float64)
    if fac.size == 0:
        fac = np.zeros((0, 0), dtype=np.float64)
    cdef const double[:, ::1] f = np.ascontiguousarray(fac)
    cdef const long[::1] cc = np.ascontiguousarray(coord_cell, dtype=np.int_).reshape(-1)
    cdef const long[::1] ck = np.ascontiguousarray(coord_kind, dtype=np.int_).reshape(-1)
    out_arr = np.zeros((n_reps, n_cells), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef uint64_t s = <uint64_t>(seed & 0xFFFFFFFFFFFFFFFF)
    cdef Py_ssize_t d = f.shape[0]
    cdef Py_ssize_t k
    cdef double* buf
    if workers < 1:
        workers = 1
    with nogil, parallel(num_threads=workers):
        buf = <double*>malloc((2 * n_cells + d + 1) * sizeof(double))
        if buf != NULL:
            for k in prange(n_reps, schedule="static"):
                _replication(r, k, s, f, cc, ck, out, buf, buf + n_cells, buf + 2 * n_cells)
            free(buf)
    return out_arr
