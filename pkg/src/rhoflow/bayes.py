"""Priors over the copula correlation and the induced posterior of a causal quantity."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import betaln, ndtr

from .errors import DomainError

# ---------------------------------------------------------------------------
# regularized incomplete beta


def _beta_cf(a: float, b: float, x: float) -> float:
    """Continued fraction for I_x(a, b) (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, 10_000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc_regularized(a: float, b: float, x: float) -> float:
    """I_x(a, b), the CDF of Beta(a, b) at x."""
    if a <= 0 or b <= 0:
        raise DomainError("beta parameters must be positive")
    if not 0.0 <= x <= 1.0:
        raise DomainError("incomplete beta argument must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = a * math.log(x) + b * math.log1p(-x) - betaln(a, b)
    # the fraction converges fast for x < (a+1)/(a+b+2); use the symmetry otherwise
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _beta_cf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _beta_cf(b, a, 1.0 - x) / b


# ---------------------------------------------------------------------------
# priors


@dataclass(frozen=True)
class RhoPrior:
    """Prior on [-1, 1]: ``uniform``, ``beta`` (scaled and shifted) or ``truncnorm``."""

    family: str = "uniform"
    p1: float | None = None
    p2: float | None = None

    def __post_init__(self):
        if self.family == "uniform":
            if self.p1 is not None or self.p2 is not None:
                raise DomainError("the uniform prior takes no parameters")
        elif self.family == "beta":
            if not (self.p1 and self.p2 and self.p1 > 0 and self.p2 > 0):
                raise DomainError("beta prior needs positive alpha and beta")
        elif self.family == "truncnorm":
            if self.p1 is None or not math.isfinite(self.p1) or not (self.p2 and self.p2 > 0):
                raise DomainError("truncated normal prior needs a finite mu and positive sigma")
        else:
            raise DomainError(f"unknown prior family {self.family!r}")

    @classmethod
    def uniform(cls) -> "RhoPrior":
        return cls("uniform")

    @classmethod
    def beta(cls, alpha: float, beta: float) -> "RhoPrior":
        return cls("beta", float(alpha), float(beta))

    @classmethod
    def truncnorm(cls, mu: float, sigma: float) -> "RhoPrior":
        return cls("truncnorm", float(mu), float(sigma))

    @classmethod
    def parse(cls, text: str) -> "RhoPrior":
        """``uniform``, ``beta:ALPHA,BETA`` or ``truncnorm:MU,SIGMA``."""
        name, _, args = text.strip().partition(":")
        if name == "uniform" and not args:
            return cls.uniform()
        if name in ("beta", "truncnorm"):
            try:
                x, y = (float(v) for v in args.split(","))
            except ValueError:
                raise DomainError(f"prior {name} needs two comma-separated numbers, got {args!r}") from None
            return cls(name, x, y)
        raise DomainError(f"cannot parse prior {text!r}")

    def __str__(self) -> str:
        if self.family == "uniform":
            return "uniform"
        return f"{self.family}:{self.p1:g},{self.p2:g}"

    def to_dict(self) -> dict:
        out = {"family": self.family}
        if self.family == "beta":
            out.update(alpha=self.p1, beta=self.p2)
        elif self.family == "truncnorm":
            out.update(mu=self.p1, sigma=self.p2)
        return out

    def pdf(self, rho: float) -> float:
        rho = _check_rho(rho)
        if self.family == "uniform":
            return 0.5
        if self.family == "beta":
            x = 0.5 * (rho + 1.0)
            if x in (0.0, 1.0):
                expo = self.p1 - 1 if x == 0.0 else self.p2 - 1
                if expo != 0:
                    return math.inf if expo < 0 else 0.0
                return 0.5 * math.exp(-betaln(self.p1, self.p2))
            return 0.5 * math.exp((self.p1 - 1) * math.log(x) + (self.p2 - 1) * math.log1p(-x) - betaln(self.p1, self.p2))
        mu, sigma = self.p1, self.p2
        mass = ndtr((1 - mu) / sigma) - ndtr((-1 - mu) / sigma)
        return math.exp(-0.5 * ((rho - mu) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi) * mass)


def _check_rho(rho: float) -> float:
    rho = float(rho)
    if not -1.0 <= rho <= 1.0:
        raise DomainError(f"rho must lie in [-1, 1], got {rho}")
    return rho


def prior_cdf(prior: RhoPrior, rho: float) -> float:
    rho = _check_rho(rho)
    if prior.family == "uniform":
        return 0.5 * (rho + 1.0)
    if prior.family == "beta":
        return betainc_regularized(prior.p1, prior.p2, 0.5 * (rho + 1.0))
    mu, sigma = prior.p1, prior.p2
    lo = ndtr((-1.0 - mu) / sigma)
    hi = ndtr((1.0 - mu) / sigma)
    if hi - lo <= 0.0:
        raise DomainError("truncated normal prior has no mass on [-1, 1]")
    return float(min(max((ndtr((rho - mu) / sigma) - lo) / (hi - lo), 0.0), 1.0))


def _check_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise DomainError("a prior grid needs at least two points")
    if np.any(np.diff(grid) <= 0):
        raise DomainError("grid must be strictly increasing")
    if grid[0] < -1.0 or grid[-1] > 1.0:
        raise DomainError("grid must lie within [-1, 1]")
    return grid


def discretize_prior(prior: RhoPrior, grid) -> np.ndarray:
    """Prior mass of each grid point: the CDF increment between neighbouring midpoints."""
    grid = _check_grid(grid)
    cdf = np.array([prior_cdf(prior, m) for m in 0.5 * (grid[1:] + grid[:-1])])
    edges = np.concatenate([[0.0], cdf, [1.0]])
    return np.diff(edges)


# ---------------------------------------------------------------------------
# posterior of a quantity Q = h(rho)


@dataclass(frozen=True)
class GridEvaluation:
    """Values h(rho_i) of a causal quantity at each grid correlation."""

    grid: tuple
    q_values: tuple

    def __post_init__(self):
        grid = tuple(float(g) for g in self.grid)
        q = tuple(float(v) for v in self.q_values)
        if len(grid) != len(q):
            raise DomainError("grid and q_values differ in length")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise DomainError("grid must be strictly increasing")
        if not all(math.isfinite(v) for v in q):
            raise DomainError("q_values must be finite")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "q_values", q)


@dataclass(frozen=True)
class DiscretePosterior:
    support: np.ndarray
    pmf: np.ndarray

    def __post_init__(self):
        support = np.asarray(self.support, dtype=float)
        pmf = np.asarray(self.pmf, dtype=float)
        if support.shape != pmf.shape or support.ndim != 1 or support.size == 0:
            raise DomainError("support and pmf must be equal-length non-empty vectors")
        if np.any(np.diff(support) <= 0):
            raise DomainError("support must be sorted and distinct")
        if np.any(pmf < 0) or abs(pmf.sum() - 1.0) > 1e-12:
            raise DomainError("pmf must be non-negative and sum to 1")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "pmf", pmf)

    @property
    def mean(self) -> float:
        return float(np.dot(self.support, self.pmf))

    @property
    def bandwidth(self) -> float:
        """Kernel standard deviation: sqrt(Var(support) / 16), with a floor for degenerate supports."""
        var = float(np.var(self.support))
        if var > 0.0:
            return math.sqrt(var / 16.0)
        return max(1e-6, 1e-3 * abs(float(np.mean(self.support))))


def _round_sig(x: float, digits: int = 12) -> float:
    return float(f"{x:.{digits - 1}e}")


def posterior_q(evaluation: GridEvaluation, prior_pmf) -> DiscretePosterior:
    """Push the prior on the grid through h: equal q values pool their masses."""
    prior_pmf = np.asarray(prior_pmf, dtype=float)
    if prior_pmf.shape != (len(evaluation.grid),):
        raise DomainError("prior pmf length does not match the grid")
    groups: dict = {}  # rounded q -> [representative q, mass]
    for q, p in zip(evaluation.q_values, prior_pmf):
        entry = groups.setdefault(_round_sig(q), [q, 0.0])
        entry[1] += float(p)
    keys = sorted(groups)
    support = np.array([groups[k][0] for k in keys])
    pmf = np.array([groups[k][1] for k in keys])
    return DiscretePosterior(support, pmf / pmf.sum())


def smooth_density(posterior: DiscretePosterior, eval_points) -> np.ndarray:
    """Gaussian-kernel smoothing of the discrete posterior."""
    x = np.asarray(eval_points, dtype=float)
    b = posterior.bandwidth
    z = (x[..., None] - posterior.support) / b
    return np.exp(-0.5 * z * z) @ posterior.pmf / (b * math.sqrt(2 * math.pi))


def smooth_cdf(posterior: DiscretePosterior, x):
    x = np.asarray(x, dtype=float)
    return ndtr((x[..., None] - posterior.support) / posterior.bandwidth) @ posterior.pmf


def smooth_quantile(posterior: DiscretePosterior, p: float) -> float:
    if not 0.0 < p < 1.0:
        raise DomainError("quantile level must lie in (0, 1)")
    b = posterior.bandwidth
    lo = posterior.support[0] - 40 * b
    hi = posterior.support[-1] + 40 * b
    return float(brentq(lambda x: float(smooth_cdf(posterior, x)) - p, lo, hi, xtol=1e-14 * max(1.0, b), rtol=1e-15, maxiter=500))


def credible_interval(posterior: DiscretePosterior, level: float = 0.95) -> tuple[float, float]:
    """Equal-tailed interval of the smoothed density."""
    if not 0.0 < level < 1.0:
        raise DomainError("credible level must lie in (0, 1)")
    tail = 0.5 * (1.0 - level)
    return smooth_quantile(posterior, tail), smooth_quantile(posterior, 1.0 - tail)


def prob_greater(posterior: DiscretePosterior, threshold: float) -> float:
    """P(Q > threshold) from the discrete pmf (no kernel leakage across the threshold)."""
    return float(posterior.pmf[posterior.support > threshold].sum())


DENSITY_POINTS = 512


def density_samples(posterior: DiscretePosterior, n_points: int = DENSITY_POINTS) -> tuple[np.ndarray, np.ndarray]:
    """Smoothed density on an even grid spanning the support +/- 4 bandwidths."""
    b = posterior.bandwidth
    x = np.linspace(posterior.support[0] - 4 * b, posterior.support[-1] + 4 * b, n_points)
    return x, smooth_density(posterior, x)


def bayesian_summary(
    evaluation: GridEvaluation, prior: RhoPrior, level: float = 0.95, threshold: float = 0.0
) -> dict:
    """Posterior of Q plus its credible interval, tail probability and density table."""
    post = posterior_q(evaluation, discretize_prior(prior, evaluation.grid))
    lo, hi = credible_interval(post, level)
    x, f = density_samples(post)
    return {
        "posterior": post,
        "credible_interval": {"level": level, "lo": lo, "hi": hi},
        "prob_greater": {"threshold": threshold, "value": prob_greater(post, threshold), "convention": "discrete pmf"},
        "density_samples": (x, f),
        "bandwidth": post.bandwidth,
        "mean": post.mean,
    }
