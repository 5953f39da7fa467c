"""Gaussian and copula primitives: normal CDF/quantile, bivariate normal
log-density and sampling, rank correlation and its Gaussian-copula mapping."""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr

from .errors import DataError, DomainError

LOG_2PI = float(np.log(2.0 * np.pi))


def std_normal_cdf(z):
    """Standard normal CDF, accurate to ~1e-16 absolute over the whole real line."""
    out = ndtr(np.asarray(z, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


# Wichura (1988), algorithm AS 241 (PPND16).
_A = (3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
      1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
      3.3430575583588128105e4, 2.5090809287301226727e3)
_B = (1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
      2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
      5.2264952788528545610e3)
_C = (1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
      3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
      2.27238449892691845833e-2, 7.74545014278341407640e-4)
_D = (1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
      1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
      1.05075007164441684324e-9)
_E = (6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
      2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
      7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
      2.04426310338993978564e-15)


def _ratio(num, den, x):
    return np.polyval(num[::-1], x) / np.polyval(den[::-1], x)


def std_normal_quantile(u):
    """Inverse standard normal CDF via the AS 241 rational approximation.

    Relative accuracy is about 1e-16 on (0, 1). Raises DomainError for
    arguments outside the open unit interval.
    """
    u_arr = np.asarray(u, dtype=float)
    if np.any(~(u_arr > 0.0)) or np.any(~(u_arr < 1.0)):
        raise DomainError("std_normal_quantile requires 0 < u < 1")
    q = u_arr - 0.5
    out = np.empty_like(q)

    central = np.abs(q) <= 0.425
    r = 0.180625 - q[central] ** 2
    out[central] = q[central] * _ratio(_A, _B, r)

    tail = ~central
    p = np.where(q[tail] < 0.0, u_arr[tail], 1.0 - u_arr[tail])
    r = np.sqrt(-np.log(p))
    near = r <= 5.0
    val = np.empty_like(r)
    val[near] = _ratio(_C, _D, r[near] - 1.6)
    val[~near] = _ratio(_E, _F, r[~near] - 5.0)
    out[tail] = np.where(q[tail] < 0.0, -val, val)
    return float(out) if out.ndim == 0 else out


def _check_rho(rho: float) -> float:
    rho = float(rho)
    if not -1.0 <= rho <= 1.0:
        raise DomainError(f"copula correlation must lie in [-1, 1], got {rho}")
    return rho


def bivariate_normal_logpdf(z_a, z_y, rho: float):
    """Log-density of the standard bivariate normal with correlation ``rho``."""
    rho = _check_rho(rho)
    if abs(rho) >= 1.0:
        raise DomainError("bivariate normal density is degenerate for |rho| = 1")
    z_a = np.asarray(z_a, dtype=float)
    z_y = np.asarray(z_y, dtype=float)
    one_m = 1.0 - rho * rho
    quad = (z_a * z_a - 2.0 * rho * z_a * z_y + z_y * z_y) / one_m
    out = -LOG_2PI - 0.5 * np.log(one_m) - 0.5 * quad
    return float(out) if out.ndim == 0 else out


def sample_bivariate(rho: float, n: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` latent pairs (z_a, z_y) from the Gaussian copula with correlation ``rho``.

    Uses z_y = rho * z_a + sqrt(1 - rho^2) * e with independent standard normals.
    """
    rho = _check_rho(rho)
    if n < 1:
        raise DomainError("n must be at least 1")
    rng = np.random.default_rng(seed)
    z_a = rng.standard_normal(n)
    e = rng.standard_normal(n)
    z_y = rho * z_a + np.sqrt(1.0 - rho * rho) * e
    return z_a, z_y


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(len(x), dtype=float)
    # boundaries of runs of tied values
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], len(xs)]
    avg = 0.5 * (starts + ends - 1) + 1.0
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def spearman(a, y) -> float:
    """Spearman rank correlation; ties receive average ranks."""
    a = np.asarray(a, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if a.shape != y.shape:
        raise DataError("spearman needs equal-length inputs")
    if a.size < 2:
        raise DataError("spearman needs at least two observations")
    ra = _average_ranks(a)
    ry = _average_ranks(y)
    ra -= ra.mean()
    ry -= ry.mean()
    sa = np.sqrt(np.dot(ra, ra))
    sy = np.sqrt(np.dot(ry, ry))
    if sa == 0.0 or sy == 0.0:
        raise DataError("spearman correlation undefined for a constant variable")
    return float(np.clip(np.dot(ra, ry) / (sa * sy), -1.0, 1.0))


def pearson_from_spearman(rho_s: float) -> float:
    """Gaussian-copula Pearson correlation implied by a Spearman correlation."""
    rho_s = float(rho_s)
    if not -1.0 <= rho_s <= 1.0:
        raise DomainError(f"Spearman correlation must lie in [-1, 1], got {rho_s}")
    return float(np.clip(2.0 * np.sin(np.pi * rho_s / 6.0), -1.0, 1.0))
