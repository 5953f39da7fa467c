"""Ground-truth structural causal models used for experiments and property checks."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import flow
from .data import BINARY, ObservationalDataset
from .errors import DomainError

# ---------------------------------------------------------------------------
# linear-Gaussian SCMs: A = e_A, Y = alpha * A + e_Y, Cov(e) = [[1, beta], [beta, delta]]


@dataclass(frozen=True)
class LinearScmSpec:
    alpha: float
    beta: float
    delta: float

    def __post_init__(self):
        if not self.delta > 0:
            raise DomainError("outcome-noise variance delta must be positive")
        if self.beta * self.beta > self.delta * (1 + 1e-12):
            raise DomainError(f"noise covariance is not positive semi-definite (beta^2={self.beta**2} > delta={self.delta})")

    def to_dict(self) -> dict:
        return asdict(self)


TABLE1 = {
    1: LinearScmSpec(0.2, -0.6, 0.72),
    2: LinearScmSpec(0.0, -0.4, 0.52),
    3: LinearScmSpec(-0.2, -0.2, 0.40),
    4: LinearScmSpec(0.2, 0.2, 0.40),
    5: LinearScmSpec(0.0, 0.4, 0.52),
    6: LinearScmSpec(-0.2, 0.6, 0.72),
}


@dataclass(frozen=True)
class LinearScmStats:
    rho_p_obs: float
    rho_true: float
    ace_true: float


def linear_scm_stats(spec: LinearScmSpec) -> LinearScmStats:
    """Observed Pearson correlation, true noise correlation and true ACE."""
    var_y = spec.alpha**2 + spec.delta + 2 * spec.alpha * spec.beta
    return LinearScmStats(
        (spec.alpha + spec.beta) / math.sqrt(var_y),
        spec.beta / math.sqrt(spec.delta),
        spec.alpha,
    )


def sample_linear_scm(spec: LinearScmSpec, n: int, seed, name: str = "linear_scm") -> ObservationalDataset:
    if n < 1:
        raise DomainError("n must be at least 1")
    rng = np.random.default_rng(seed)
    e_a = rng.standard_normal(n)
    # Cholesky factor of [[1, beta], [beta, delta]]
    resid = math.sqrt(max(spec.delta - spec.beta**2, 0.0))
    e_y = spec.beta * e_a + resid * rng.standard_normal(n)
    a = e_a
    y = spec.alpha * a + e_y
    return ObservationalDataset(a, y, name=name, meta={"scm": spec.to_dict()})


# ---------------------------------------------------------------------------
# binary treatment and outcome with a hidden binary confounder U


@dataclass(frozen=True)
class BinaryScmSpec:
    """P(U=1), P(A=1|U=u) for u=0,1 and P(Y=1|A=a,U=u) ordered (a0u0, a0u1, a1u0, a1u1)."""

    p_u: float
    p_a_given_u: tuple
    p_y_given_a_u: tuple

    def __post_init__(self):
        pa = tuple(float(v) for v in self.p_a_given_u)
        py = tuple(float(v) for v in self.p_y_given_a_u)
        if len(pa) != 2 or len(py) != 4:
            raise DomainError("need 2 entries for P(A|U) and 4 for P(Y|A,U)")
        if not all(0.0 <= v <= 1.0 for v in (float(self.p_u), *pa, *py)):
            raise DomainError("all binary SCM entries must be probabilities")
        object.__setattr__(self, "p_a_given_u", pa)
        object.__setattr__(self, "p_y_given_a_u", py)

    def p_y(self, a: int, u: int) -> float:
        return self.p_y_given_a_u[2 * a + u]

    @property
    def ace_true(self) -> float:
        """Adjustment formula over U."""
        pu = (1.0 - self.p_u, self.p_u)
        return sum((self.p_y(1, u) - self.p_y(0, u)) * pu[u] for u in (0, 1))

    def to_dict(self) -> dict:
        return {"p_u": self.p_u, "p_a_given_u": list(self.p_a_given_u), "p_y_given_a_u": list(self.p_y_given_a_u)}


def random_binary_spec(seed) -> BinaryScmSpec:
    """All seven probabilities drawn independently from U(0, 1)."""
    v = np.random.default_rng(seed).uniform(0.0, 1.0, 7)
    return BinaryScmSpec(float(v[0]), tuple(v[1:3]), tuple(v[3:7]))


def binary_suite_specs(master_seed: int, count: int = 20) -> list:
    """Reproducible family of random binary-confounder SCMs."""
    return [random_binary_spec(s) for s in np.random.SeedSequence(master_seed).spawn(count)]


def sample_binary_scm(spec: BinaryScmSpec, n: int, seed, name: str = "binary_scm"):
    """Observational (A, Y) sample with U discarded, plus the exact ACE."""
    if n < 1:
        raise DomainError("n must be at least 1")
    rng = np.random.default_rng(seed)
    u = (rng.random(n) < spec.p_u).astype(int)
    a = (rng.random(n) < np.asarray(spec.p_a_given_u)[u]).astype(int)
    y = (rng.random(n) < np.asarray(spec.p_y_given_a_u)[2 * a + u]).astype(int)
    ds = ObservationalDataset(a, y, BINARY, BINARY, name=name, meta={"scm": spec.to_dict()})
    return ds, spec.ace_true


# ---------------------------------------------------------------------------
# equivalent SCM with an explicit hidden confounder U, built from a flow


@dataclass(frozen=True)
class EquivScmSpec:
    rho: float
    gamma: float
    delta: float
    lam: float
    tau: float

    def to_dict(self) -> dict:
        return asdict(self)


def delta_bound(rho: float, gamma: float) -> float:
    """Largest |delta| for which tau stays real (infinite when rho = 0)."""
    if rho == 0.0:
        return math.inf
    return math.sqrt((1.0 - rho * rho) * gamma * gamma / (rho * rho))


def equiv_scm_params(rho: float, gamma: float, delta: float) -> EquivScmSpec:
    rho, gamma, delta = float(rho), float(gamma), float(delta)
    if not abs(rho) < 1.0:
        raise DomainError("need |rho| < 1")
    if gamma == 0.0:
        raise DomainError("gamma must be non-zero")
    if abs(delta) > delta_bound(rho, gamma) * (1 + 1e-12):
        raise DomainError(f"|delta| = {abs(delta)} exceeds its bound {delta_bound(rho, gamma)} for rho={rho}, gamma={gamma}")
    ratio = (gamma * gamma + delta * delta) / (gamma * gamma)
    lam = math.sqrt(gamma * gamma + delta * delta) / gamma
    tau_sq = 1.0 / (1.0 - rho * rho) - ratio * rho * rho / (1.0 - rho * rho)
    return EquivScmSpec(rho, gamma, delta, lam, math.sqrt(max(tau_sq, 0.0)))


def random_equiv_spec(seed) -> EquivScmSpec:
    """A random valid triple: rho in (-0.95, 0.95) \\ {0}, gamma away from 0, delta within its bound."""
    rng = np.random.default_rng(seed)
    rho = 0.0
    while abs(rho) < 0.05:
        rho = rng.uniform(-0.95, 0.95)
    gamma = rng.choice([-1.0, 1.0]) * rng.uniform(0.2, 2.0)
    bound = min(delta_bound(rho, gamma), 3.0)
    delta = rng.uniform(-bound, bound)
    return equiv_scm_params(rho, gamma, delta)


def equiv_structural(spec: EquivScmSpec, model: flow.RhoGnfModel, u, e_a, e_y):
    """Structural equations of the confounded SCM: (U, e_A, e_Y) -> (A, Y)."""
    u, e_a, e_y = (np.asarray(x, dtype=float) for x in (u, e_a, e_y))
    norm = math.hypot(spec.gamma, spec.delta)
    z_a = (spec.gamma * u + spec.delta * e_a) / norm
    z_y = spec.lam * spec.rho * u + spec.tau * math.sqrt(1.0 - spec.rho**2) * e_y
    a = model.treatment_transformer().inverse(z_a)
    y = flow.outcome_inverse(model, z_y, a)
    return a, y


def sample_equiv_scm(spec: EquivScmSpec, model: flow.RhoGnfModel, n: int, seed):
    """Draw (U, A, Y) from the confounded SCM equivalent to ``model`` at ``spec.rho``."""
    if n < 1:
        raise DomainError("n must be at least 1")
    if not math.isclose(spec.rho, model.rho, abs_tol=1e-12):
        raise DomainError(f"spec rho {spec.rho} differs from model rho {model.rho}")
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(n)
    e_a = rng.standard_normal(n)
    e_y = rng.standard_normal(n)
    a, y = equiv_structural(spec, model, u, e_a, e_y)
    return u, a, y


def influence_signs(spec: EquivScmSpec) -> tuple[int, int]:
    """Signs of dA/dU and of dY/dU (with A held fixed) in the confounded SCM."""
    if spec.rho == 0.0:
        raise DomainError("influence of U on Y has no sign when rho = 0")
    sign_a = 1 if spec.gamma > 0 else -1
    sign_y = (1 if spec.rho > 0 else -1) * sign_a
    return sign_a, sign_y


def influence_finite_differences(spec: EquivScmSpec, model: flow.RhoGnfModel, n: int, seed, step: float = 1e-4):
    """Central differences dA/dU and dY/dU at random (U, e_A, e_Y).

    dY/dU perturbs U in the outcome equation while the treatment argument is
    held at its unperturbed value, i.e. the direct influence of U on Y.
    """
    rng = np.random.default_rng(seed)
    u, e_a, e_y = rng.standard_normal((3, n))
    a_plus, _ = equiv_structural(spec, model, u + step, e_a, e_y)
    a_minus, _ = equiv_structural(spec, model, u - step, e_a, e_y)
    a0, _ = equiv_structural(spec, model, u, e_a, e_y)
    noise_y = spec.tau * math.sqrt(1.0 - spec.rho**2) * e_y
    y_plus = flow.outcome_inverse(model, spec.lam * spec.rho * (u + step) + noise_y, a0)
    y_minus = flow.outcome_inverse(model, spec.lam * spec.rho * (u - step) + noise_y, a0)
    return (a_plus - a_minus) / (2 * step), (y_plus - y_minus) / (2 * step)
