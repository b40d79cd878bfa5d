"""Pure-Python numerical core.

Mirror of ``_kernels.pyx`` operation for operation. Both backends evaluate
the same floating-point expressions in the same order, so given identical
libm results they produce identical streams and samples.

Cell rows passed to :func:`cell_year` and :func:`simulate` are float64
vectors of length ``ROW_WIDTH``::

    0  frequency kind  (0 fixed rate, 1 gamma, 2 truncated gamma)
    1  rate / alpha
    2  beta (scale)
    3  lower truncation bound
    4  exposure
    5  severity kind   (0 fixed lognormal, 1 lognormal with normal mu,
                        2 lognormal normal-inverse-chi2, 3 fixed pareto,
                        4 pareto with gamma xi, 5 pareto with truncated xi)
    6-9 severity profile parameters
    10 pareto threshold
    11 upper truncation bound (inf when absent)
"""

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

BACKEND = "python"
ROW_WIDTH = 12

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15
STREAM_MULT = 0xD1B54A32D192ED03
SEED_SALT = 0x6A09E667F3BCC909
INV_2_53 = 1.0 / 9007199254740992.0

EPS = 1e-15
FPMIN = 1e-300
MAXIT = 100000
LN_SQRT_2PI = 0.91893853320467274178
SQRT1_2 = 0.70710678118654752440
INF = float("inf")


# -- counter-based random numbers ------------------------------------------

def mix64(z):
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def stream_key(seed, stream):
    return mix64(mix64(seed ^ SEED_SALT) ^ ((stream * STREAM_MULT + GOLDEN) & MASK64))


def uniform(key, counter):
    """Value number ``counter`` of stream ``key``, strictly inside (0, 1)."""
    x = mix64(key + (counter + 1) * GOLDEN)
    return ((x >> 11) + 0.5) * INV_2_53


# -- special functions -------------------------------------------------------

def _stirling_corr(x):
    # lgamma(x) - [(x - 0.5) ln x - x + ln sqrt(2 pi)], valid for x >= 10
    r = 1.0 / x
    r2 = r * r
    return r * (1.0 / 12.0 - r2 * (1.0 / 360.0 - r2 * (1.0 / 1260.0 - r2 * (
        1.0 / 1680.0 - r2 * (1.0 / 1188.0 - r2 * (691.0 / 360360.0 - r2 / 156.0))))))


def lgamma(x):
    if x >= 10.0:
        return (x - 0.5) * math.log(x) - x + LN_SQRT_2PI + _stirling_corr(x)
    prod = 1.0
    while x < 10.0:
        prod *= x
        x += 1.0
    return (x - 0.5) * math.log(x) - x + LN_SQRT_2PI + _stirling_corr(x) - math.log(prod)


def _log1pmx(e):
    # log(1 + e) - e
    if -0.1 < e < 0.1:
        term = e
        total = 0.0
        k = 2.0
        while True:
            term *= -e
            inc = term / k
            total += inc
            if abs(inc) <= 1e-17 * abs(total):
                break
            k += 1.0
        return total
    return math.log1p(e) - e


def _log_gamma_prefactor(a, x):
    # log(x^a e^-x / Gamma(a))
    if x <= 0.0:
        return -INF
    if a >= 10.0:
        e = (x - a) / a
        if -0.5 < e < 0.5:
            core = a * _log1pmx(e)
        else:
            core = a * math.log(x / a) - (x - a)
        return core + 0.5 * math.log(a) - LN_SQRT_2PI - _stirling_corr(a)
    return a * math.log(x) - x - lgamma(a)


def _gamma_series(a, x):
    ap = a
    delta = 1.0 / a
    total = delta
    for _ in range(MAXIT):
        ap += 1.0
        delta *= x / ap
        total += delta
        if abs(delta) < abs(total) * EPS:
            break
    return total


def _gamma_cf(a, x):
    b = x + 1.0 - a
    c = 1.0 / FPMIN
    d = 1.0 / b
    h = d
    i = 1.0
    while i < MAXIT:
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < FPMIN:
            d = FPMIN
        c = b + an / c
        if abs(c) < FPMIN:
            c = FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < EPS:
            break
        i += 1.0
    return h


def gamma_p(a, x):
    """Regularized lower incomplete gamma P(a, x)."""
    if x <= 0.0:
        return 0.0
    if x == INF:
        return 1.0
    if x < a + 1.0:
        return math.exp(_log_gamma_prefactor(a, x)) * _gamma_series(a, x)
    return 1.0 - math.exp(_log_gamma_prefactor(a, x)) * _gamma_cf(a, x)


def gamma_q(a, x):
    """Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x)."""
    if x <= 0.0:
        return 1.0
    if x == INF:
        return 0.0
    if x < a + 1.0:
        return 1.0 - math.exp(_log_gamma_prefactor(a, x)) * _gamma_series(a, x)
    return math.exp(_log_gamma_prefactor(a, x)) * _gamma_cf(a, x)


def log_gamma_p(a, x):
    """log P(a, x), accurate far into the lower tail."""
    if x <= 0.0:
        return -INF
    if x == INF:
        return 0.0
    lp = _log_gamma_prefactor(a, x)
    if x < a + 1.0:
        return lp + math.log(_gamma_series(a, x))
    return math.log1p(-math.exp(lp) * _gamma_cf(a, x))


def log_gamma_q(a, x):
    """log Q(a, x), accurate far into the upper tail."""
    if x <= 0.0:
        return 0.0
    if x == INF:
        return -INF
    lp = _log_gamma_prefactor(a, x)
    if x < a + 1.0:
        return math.log1p(-math.exp(lp) * _gamma_series(a, x))
    return lp + math.log(_gamma_cf(a, x))


def _gamma_guess(a, plow, pupp):
    if plow < 0.5:
        # P(a, x) ~ x^a / Gamma(a + 1) near zero
        xs = math.exp((math.log(plow) + lgamma(a + 1.0)) / a)
        if xs < 0.01 * (a + 1.0):
            return xs
    if a > 1.0:
        pp = plow if plow < 0.5 else pupp
        t = math.sqrt(-2.0 * math.log(pp))
        z = (2.30753 + t * 0.27061) / (1.0 + t * (0.99229 + t * 0.04481)) - t
        if plow < 0.5:
            z = -z
        w = 1.0 - 1.0 / (9.0 * a) - z / (3.0 * math.sqrt(a))
        if w <= 0.0:
            return 1e-3
        return max(1e-3, a * w * w * w)
    t = 1.0 - a * (0.253 + a * 0.12)
    if plow < t:
        return (plow / t) ** (1.0 / a)
    return 1.0 - math.log(pupp / (1.0 - t))


def gamma_inv(a, p, upper):
    """Unit-scale gamma quantile.

    Solves P(a, x) = p, or Q(a, x) = p when ``upper`` is true. Newton steps
    on log-probability against log x, kept inside a shrinking bracket with
    bisection as the fallback, so extreme tails converge as fast as the body.
    """
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
    target = math.log(p)
    y = math.log(x)
    lo = -INF
    hi = INF
    expand = 1.0
    for _ in range(300):
        x = math.exp(y)
        if upper:
            lt = log_gamma_q(a, x)
            h = target - lt
        else:
            lt = log_gamma_p(a, x)
            h = lt - target
        if h == 0.0:
            return x
        if h < 0.0:
            lo = y
        else:
            hi = y
        slope = math.exp(_log_gamma_prefactor(a, x) - lt)
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
        tol = 4e-16 * max(1.0, abs(yn))
        if abs(yn - y) <= tol or (hi - lo) <= tol:
            return math.exp(yn)
        y = yn
    return math.exp(y)


def norm_cdf(x):
    return 0.5 * math.erfc(-x * SQRT1_2)


def norm_sf(x):
    return 0.5 * math.erfc(x * SQRT1_2)


def norm_ppf(p):
    """Standard normal quantile (Wichura's AS241, about 1e-16 relative)."""
    if p <= 0.0:
        return -INF
    if p >= 1.0:
        return INF
    q = p - 0.5
    if abs(q) <= 0.425:
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
    r = math.sqrt(-math.log(r))
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


def _beta_cf(a, b, x):
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < FPMIN:
        d = FPMIN
    d = 1.0 / d
    h = d
    m = 1.0
    while m < MAXIT:
        m2 = 2.0 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < FPMIN:
            d = FPMIN
        c = 1.0 + aa / c
        if abs(c) < FPMIN:
            c = FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < FPMIN:
            d = FPMIN
        c = 1.0 + aa / c
        if abs(c) < FPMIN:
            c = FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < EPS:
            break
        m += 1.0
    return h


def beta_inc(a, b, x):
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    lbt = lgamma(a + b) - lgamma(a) - lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(lbt) * _beta_cf(a, b, x) / a
    return 1.0 - math.exp(lbt) * _beta_cf(b, a, 1.0 - x) / b


def _t_tail(t, nu):
    # Pr[T > t] for t >= 0
    a = 0.5 * nu
    if t > 1e150:
        # x = nu / t^2 may underflow; keep log x exact
        logx = math.log(nu) - 2.0 * math.log(t)
        x = math.exp(logx)
        lbt = lgamma(a + 0.5) - lgamma(a) - lgamma(0.5) + a * logx + 0.5 * math.log1p(-x)
        return 0.5 * math.exp(lbt) * _beta_cf(a, 0.5, x) / a
    return 0.5 * beta_inc(a, 0.5, nu / (nu + t * t))


def t_cdf(t, nu):
    if t > 0.0:
        return 1.0 - _t_tail(t, nu)
    return _t_tail(-t, nu)


def t_ppf(p, nu):
    """Student-t quantile with ``nu`` degrees of freedom."""
    if p <= 0.0:
        return -INF
    if p >= 1.0:
        return INF
    if p == 0.5:
        return 0.0
    pp = p if p < 0.5 else 1.0 - p
    lnorm = lgamma(0.5 * (nu + 1.0)) - lgamma(0.5 * nu) - 0.5 * math.log(nu * math.pi)
    t = -norm_ppf(pp)
    if pp < 1e-3:
        # Pr[T > t] ~ exp(lnorm) nu^((nu - 1) / 2) t^-nu for large t
        le = (lnorm + 0.5 * (nu - 1.0) * math.log(nu) - math.log(pp)) / nu
        if le > 709.0:
            return -INF if p < 0.5 else INF
        tail_t = math.exp(le)
        if tail_t > t:
            t = tail_t
    lo = 0.0
    hi = INF
    for _ in range(400):
        f = pp - _t_tail(t, nu)
        if f == 0.0:
            break
        if f < 0.0:
            lo = t
        else:
            hi = t
        if t > 1e150:
            ldens = lnorm - (nu + 1.0) * (math.log(t) - 0.5 * math.log(nu))
        else:
            ldens = lnorm - 0.5 * (nu + 1.0) * math.log1p(t * t / nu)
        dens = math.exp(ldens)
        tn = -1.0
        if dens > 0.0:
            tn = t - f / dens
        if not (lo < tn < hi):
            if hi == INF:
                tn = 2.0 * t
            elif lo == 0.0:
                tn = 0.5 * hi
            elif hi > 4.0 * lo:
                tn = math.sqrt(lo * hi)
            else:
                tn = 0.5 * (lo + hi)
        if abs(tn - t) <= 4e-16 * tn or (hi < INF and hi - lo <= 4e-16 * hi):
            t = tn
            break
        t = tn
    return -t if p < 0.5 else t


# -- scalar samplers ---------------------------------------------------------
# Each takes (key, counter, ...) and returns (value, new_counter).

def _gamma_mt(a, key, counter):
    # Marsaglia-Tsang, unit scale
    boost = 1.0
    if a < 1.0:
        boost = uniform(key, counter) ** (1.0 / a)
        counter += 1
        a += 1.0
    d = a - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        z = norm_ppf(uniform(key, counter))
        counter += 1
        v = 1.0 + c * z
        if v <= 0.0:
            continue
        v = v * v * v
        u = uniform(key, counter)
        counter += 1
        z2 = z * z
        if u < 1.0 - 0.0331 * z2 * z2:
            return d * v * boost, counter
        if math.log(u) < 0.5 * z2 + d * (1.0 - v + math.log(v)):
            return d * v * boost, counter


def _trunc_gamma_from_u(a, scale, lower, upper, u):
    xl = lower / scale
    xu = upper / scale
    pl = gamma_p(a, xl)
    if pl <= 0.5:
        pu = gamma_p(a, xu)
        return scale * gamma_inv(a, pl + u * (pu - pl), 0)
    ql = gamma_q(a, xl)
    qu = gamma_q(a, xu)
    return scale * gamma_inv(a, qu + (1.0 - u) * (ql - qu), 1)


def _poisson(mean, key, counter):
    if mean < 10.0:
        u = uniform(key, counter)
        counter += 1
        p = math.exp(-mean)
        f = p
        n = 0
        while u > f:
            n += 1
            p *= mean / n
            f += p
            if p < 1e-17 * f:
                break
        return n, counter
    # Hormann's PTRS transformed rejection
    slam = math.sqrt(mean)
    loglam = math.log(mean)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    invalpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)
    while True:
        u = uniform(key, counter) - 0.5
        v = uniform(key, counter + 1)
        counter += 2
        us = 0.5 - abs(u)
        k = math.floor((2.0 * a / us + b) * u + mean + 0.43)
        if us >= 0.07 and v <= vr:
            return int(k), counter
        if k < 0.0 or (us < 0.013 and v > us):
            continue
        if (math.log(v) + math.log(invalpha) - math.log(a / (us * us) + b)
                <= -mean + k * loglam - lgamma(k + 1.0)):
            return int(k), counter


# -- bulk sampling -----------------------------------------------------------
# kinds: 0 uniform, 1 normal(mu, sigma), 2 lognormal(mu, sigma),
# 3 gamma(alpha, scale), 4 truncated gamma(alpha, scale, lower, upper),
# 5 pareto(xi, threshold), 6 poisson(mean), 7 normal-inverse-chi2
# (nu, beta, theta, phi) filling mu into ``out`` and sigma^2 into ``out2``.

def sample_into(kind, params, key, counter, out, out2=None):
    n = out.shape[0]
    p0 = params[0] if len(params) > 0 else 0.0
    p1 = params[1] if len(params) > 1 else 0.0
    p2 = params[2] if len(params) > 2 else 0.0
    p3 = params[3] if len(params) > 3 else 0.0
    for i in range(n):
        if kind == 0:
            out[i] = uniform(key, counter)
            counter += 1
        elif kind == 1:
            out[i] = p0 + p1 * norm_ppf(uniform(key, counter))
            counter += 1
        elif kind == 2:
            out[i] = math.exp(p0 + p1 * norm_ppf(uniform(key, counter)))
            counter += 1
        elif kind == 3:
            g, counter = _gamma_mt(p0, key, counter)
            out[i] = p1 * g
        elif kind == 4:
            out[i] = _trunc_gamma_from_u(p0, p1, p2, p3, uniform(key, counter))
            counter += 1
        elif kind == 5:
            out[i] = p1 * (1.0 - uniform(key, counter)) ** (-1.0 / p0)
            counter += 1
        elif kind == 6:
            k, counter = _poisson(p0, key, counter)
            out[i] = k
        elif kind == 7:
            g, counter = _gamma_mt(0.5 * p0, key, counter)
            s2 = p1 / (2.0 * g)
            out2[i] = s2
            out[i] = p2 + math.sqrt(s2 / p3) * norm_ppf(uniform(key, counter))
            counter += 1
        else:
            raise ValueError(f"unknown sampler kind {kind}")
    return counter


# -- compound annual loss ----------------------------------------------------

def cell_year(row, key, counter, u_freq, u_sev):
    """One annual loss for one cell.

    ``u_freq`` / ``u_sev`` are copula uniforms for the frequency and severity
    profiles; a negative value means draw that profile independently.
    Returns ``(loss, counter)``.
    """
    fk = row[0]
    if fk == 0.0:
        lam = row[1]
    elif fk == 1.0:
        if u_freq >= 0.0:
            lam = row[2] * gamma_inv(row[1], u_freq, 0)
        else:
            g, counter = _gamma_mt(row[1], key, counter)
            lam = row[2] * g
    else:
        if u_freq < 0.0:
            u_freq = uniform(key, counter)
            counter += 1
        lam = _trunc_gamma_from_u(row[1], row[2], row[3], row[11], u_freq)

    sk = row[5]
    lognormal = sk <= 2.0
    mu = 0.0
    sigma = 0.0
    xi = 0.0
    if sk == 0.0:
        mu = row[6]
        sigma = row[7]
    elif sk == 1.0:
        if u_sev < 0.0:
            u_sev = uniform(key, counter)
            counter += 1
        mu = row[6] + row[7] * norm_ppf(u_sev)
        sigma = row[8]
    elif sk == 2.0:
        nu = row[6]
        beta = row[7]
        theta = row[8]
        phi = row[9]
        if u_sev >= 0.0:
            mu = theta + math.sqrt(beta / (phi * nu)) * t_ppf(u_sev, nu)
            g, counter = _gamma_mt(0.5 * (nu + 1.0), key, counter)
            dev = mu - theta
            sigma = math.sqrt((beta + phi * dev * dev) / (2.0 * g))
        else:
            g, counter = _gamma_mt(0.5 * nu, key, counter)
            s2 = beta / (2.0 * g)
            mu = theta + math.sqrt(s2 / phi) * norm_ppf(uniform(key, counter))
            counter += 1
            sigma = math.sqrt(s2)
    elif sk == 3.0:
        xi = row[6]
    elif sk == 4.0:
        if u_sev >= 0.0:
            xi = row[7] * gamma_inv(row[6], u_sev, 0)
        else:
            g, counter = _gamma_mt(row[6], key, counter)
            xi = row[7] * g
    else:
        if u_sev < 0.0:
            u_sev = uniform(key, counter)
            counter += 1
        xi = _trunc_gamma_from_u(row[6], row[7], row[8], row[9], u_sev)

    n, counter = _poisson(lam * row[4], key, counter)
    total = 0.0
    if lognormal:
        for _ in range(n):
            total += math.exp(mu + sigma * norm_ppf(uniform(key, counter)))
            counter += 1
    else:
        threshold = row[10]
        expo = -1.0 / xi
        for _ in range(n):
            total += threshold * (1.0 - uniform(key, counter)) ** expo
            counter += 1
    return total, counter


def _replication(rows, k, seed, factor, coord_cell, coord_kind, out):
    key = stream_key(seed, k)
    counter = 0
    n_cells = len(rows)
    u_freq = [-1.0] * n_cells
    u_sev = [-1.0] * n_cells
    d = len(factor)
    if d > 0:
        z = [0.0] * d
        for i in range(d):
            z[i] = norm_ppf(uniform(key, counter))
            counter += 1
        for i in range(d):
            y = 0.0
            for m in range(d):
                y += factor[i][m] * z[m]
            u = norm_cdf(y)
            # keep the copula uniform strictly inside (0, 1)
            if u < 1e-300:
                u = 1e-300
            elif u >= 1.0:
                u = 1.0 - 1.1102230246251565e-16
            if coord_kind[i] == 0:
                u_freq[coord_cell[i]] = u
            else:
                u_sev[coord_cell[i]] = u
    for j in range(n_cells):
        z_j, counter = cell_year(rows[j], key, counter, u_freq[j], u_sev[j])
        out[k, j] = z_j


def simulate(rows, n_reps, seed, factor, coord_cell, coord_kind, workers=1):
    """Annual losses for ``n_reps`` replications; replication k uses stream (seed, k)."""
    rows = np.ascontiguousarray(rows, dtype=np.float64)
    out = np.zeros((n_reps, rows.shape[0]), dtype=np.float64)
    row_list = rows.tolist()
    factor_list = np.asarray(factor, dtype=np.float64).tolist()
    cells = [int(c) for c in coord_cell]
    kinds = [int(c) for c in coord_kind]

    def run(start, stop):
        for k in range(start, stop):
            _replication(row_list, k, seed, factor_list, cells, kinds, out)

    if workers <= 1 or n_reps < 2:
        run(0, n_reps)
    else:
        bounds = np.linspace(0, n_reps, workers + 1).astype(int)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, bounds[:-1], bounds[1:]))
    return out
