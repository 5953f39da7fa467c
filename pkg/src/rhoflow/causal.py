"""Causal quantities from fitted flows: potential outcomes, ACE, rho-curves and bounds."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import flow
from .copula import pearson_from_spearman, sample_bivariate, spearman
from .data import ObservationalDataset, VariableKind
from .errors import DataError, DomainError, SchemaError
from .training import TrainConfig, check_grid, fit_grid


@dataclass(frozen=True)
class AfBounds:
    """Assumption-free ACE bounds for binary outcomes."""

    lower: float
    upper: float

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise DomainError("AF lower bound exceeds upper bound")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def to_dict(self) -> dict:
        return {"lower": self.lower, "upper": self.upper}


@dataclass(frozen=True)
class RhoCurve:
    """ACE as a function of the assumed copula correlation.

    ``rho_value`` is the rank-based analytic value; ``crossing`` is where the
    piecewise-linear curve first reaches zero (None if it never does).
    """

    points: tuple
    rho_value: float
    crossing: float | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        pts = tuple((float(r), float(v)) for r, v in self.points)
        if not pts:
            raise DomainError("a rho-curve needs at least one point")
        if any(b[0] <= a[0] for a, b in zip(pts, pts[1:])):
            raise DomainError("rho-curve points must be sorted by strictly increasing rho")
        object.__setattr__(self, "points", pts)

    @property
    def rhos(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    @property
    def aces(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])

    @property
    def inf_ace(self) -> float:
        return float(self.aces.min())

    @property
    def sup_ace(self) -> float:
        return float(self.aces.max())

    def interpolate(self, rho):
        """Piecewise-linear ACE at ``rho``; DomainError outside the grid."""
        r = np.asarray(rho, dtype=float)
        if np.any(r < self.rhos[0] - 1e-12) or np.any(r > self.rhos[-1] + 1e-12):
            raise DomainError(f"rho outside the curve's grid [{self.rhos[0]}, {self.rhos[-1]}]")
        out = np.interp(r, self.rhos, self.aces)
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class PotentialOutcomes:
    """Per-unit outcomes under an intervention; ``quantized`` only for discrete outcomes."""

    continuous: np.ndarray
    quantized: np.ndarray | None = None

    def values(self, scale: str) -> np.ndarray:
        if scale == "quantized":
            if self.quantized is None:
                raise DomainError("quantized outcomes exist only for discrete outcome variables")
            return self.quantized.astype(float)
        return self.continuous


def _check_level(kind: VariableKind, level: float) -> float:
    level = float(level)
    if not np.isfinite(level):
        raise DomainError("treatment level must be finite")
    if kind.is_discrete and (level != round(level) or not 0 <= level < kind.cardinality):
        raise DomainError(f"treatment level {level} is not a category of {kind}")
    return level


def _default_scale(model: flow.RhoGnfModel, scale: str | None) -> str:
    if scale is None:
        return "quantized" if model.y_kind.is_discrete else "continuous"
    if scale not in ("continuous", "quantized"):
        raise DomainError(f"unknown outcome scale {scale!r}")
    if scale == "quantized" and not model.y_kind.is_discrete:
        raise DomainError("quantized outcomes exist only for discrete outcome variables")
    return scale


def recover_noise(model: flow.RhoGnfModel, dataset: ObservationalDataset) -> np.ndarray:
    """Latent outcome scores z_y = T_{Y|A=a}(y) of every observation."""
    a, y = flow.model_inputs(model, dataset)
    return np.atleast_1d(flow.forward(model, a, y)[1])


def dequantization_noise(model: flow.RhoGnfModel, dataset: ObservationalDataset):
    """Per-unit dequantization noise (j_a, j_y) the model saw; None for continuous columns."""
    a, y = flow.model_inputs(model, dataset)
    j_a = a - dataset.a if model.a_kind.is_discrete else None
    j_y = y - dataset.y if model.y_kind.is_discrete else None
    return j_a, j_y


def potential_outcomes(model: flow.RhoGnfModel, z_y, a, a_jitter=None, y_jitter=None) -> PotentialOutcomes:
    """Y_a = T_{Y|A=a}^-1(z_y) for each latent score.

    Dequantization noise is treated as part of each unit's exogenous state:
    a discrete treatment level is shifted by the unit's ``a_jitter`` and a
    discrete outcome has ``y_jitter`` removed before rounding. Intervening at
    a unit's observed level then reproduces its observed outcome exactly.
    """
    level = _check_level(model.a_kind, a)
    z_y = np.atleast_1d(np.asarray(z_y, dtype=float))
    a_in = np.full(z_y.shape, level)
    if a_jitter is not None:
        a_in = a_in + np.broadcast_to(np.asarray(a_jitter, dtype=float), z_y.shape)
    y = flow.outcome_inverse(model, z_y, a_in)
    quantized = None
    if model.y_kind.is_discrete:
        y_core = y if y_jitter is None else y - np.broadcast_to(np.asarray(y_jitter, dtype=float), z_y.shape)
        quantized = flow.quantize(y_core, model.y_kind)
    return PotentialOutcomes(y, quantized)


def _noise_sample(model, dataset, method, n_samples, seed):
    if method == "recover":
        if dataset is None:
            raise DomainError("method 'recover' needs the training dataset")
        return (recover_noise(model, dataset), *dequantization_noise(model, dataset))
    if method == "sample":
        n = n_samples or (dataset.n if dataset is not None else 50_000)
        ss_latent, ss_a, ss_y = np.random.SeedSequence(seed).spawn(3)
        _, z_y = sample_bivariate(model.rho, n, ss_latent)
        j_a = j_y = None
        if model.a_kind.is_discrete:
            j_a = model.dequant_sigma * np.random.default_rng(ss_a).standard_normal(n)
        if model.y_kind.is_discrete:
            j_y = model.dequant_sigma * np.random.default_rng(ss_y).standard_normal(n)
        return z_y, j_a, j_y
    raise DomainError(f"unknown estimation method {method!r}")


def expected_outcomes(
    model: flow.RhoGnfModel,
    dataset: ObservationalDataset | None,
    levels,
    method: str = "recover",
    n_samples: int | None = None,
    seed=None,
    scale: str | None = None,
) -> dict:
    """Monte-Carlo E[Y_a] for each treatment level, over one shared noise sample."""
    scale = _default_scale(model, scale)
    z_y, j_a, j_y = _noise_sample(model, dataset, method, n_samples, seed)
    return {float(a): float(np.mean(potential_outcomes(model, z_y, a, j_a, j_y).values(scale))) for a in levels}


def estimate_ace(
    model: flow.RhoGnfModel,
    dataset: ObservationalDataset | None,
    a1: float = 1.0,
    a0: float = 0.0,
    method: str = "recover",
    n_samples: int | None = None,
    seed=None,
    scale: str | None = None,
) -> float:
    """E[Y_{a1}] - E[Y_{a0}] by recovering (or sampling) latent outcome noise.

    Discrete outcomes are averaged after rounding back to categories unless
    ``scale="continuous"`` is requested.
    """
    if float(a1) == float(a0):
        raise DomainError("a1 and a0 must differ")
    means = expected_outcomes(model, dataset, (a1, a0), method, n_samples, seed, scale)
    return means[float(a1)] - means[float(a0)]


def rho_value(dataset: ObservationalDataset) -> float:
    """Copula correlation at which an association is fully explained by confounding."""
    return pearson_from_spearman(spearman(dataset.a, dataset.y))


def zero_crossing(rhos, aces) -> float | None:
    """First rho where the piecewise-linear curve reaches zero."""
    rhos = np.asarray(rhos, dtype=float)
    aces = np.asarray(aces, dtype=float)
    for i in range(len(rhos)):
        if aces[i] == 0.0:
            return float(rhos[i])
        if i + 1 < len(rhos) and aces[i] * aces[i + 1] < 0.0:
            t = aces[i] / (aces[i] - aces[i + 1])
            return float(rhos[i] + t * (rhos[i + 1] - rhos[i]))
    return None


def curve_from_models(
    dataset: ObservationalDataset, fits, a1: float = 1.0, a0: float = 0.0, scale: str | None = None
) -> RhoCurve:
    """Build a curve from ``(rho, model)`` or ``(rho, model, report)`` tuples."""
    points = sorted((float(f[0]), estimate_ace(f[1], dataset, a1, a0, scale=scale)) for f in fits)
    rhos = [p[0] for p in points]
    aces = [p[1] for p in points]
    meta = {"a1": float(a1), "a0": float(a0), "seeds": [f[1].meta.get("train_seed") for f in sorted(fits, key=lambda f: f[0])]}
    return RhoCurve(tuple(points), rho_value(dataset), zero_crossing(rhos, aces), meta)


def rho_curve(
    dataset: ObservationalDataset,
    grid,
    config: TrainConfig | None = None,
    a1: float = 1.0,
    a0: float = 0.0,
    jobs: int = 1,
    scale: str | None = None,
) -> RhoCurve:
    """Train one flow per grid value and evaluate the ACE of each."""
    _check_level(dataset.a_kind, a1)
    _check_level(dataset.a_kind, a0)
    fits = fit_grid(dataset, check_grid(grid), config, jobs)
    return curve_from_models(dataset, fits, a1, a0, scale)


def ace_interval(curve: RhoCurve, rho_min: float, rho_max: float) -> tuple[float, float]:
    """Range of the interpolated curve over [rho_min, rho_max]."""
    if rho_min > rho_max:
        raise DomainError("rho_min must not exceed rho_max")
    rhos = curve.rhos
    if rho_min < rhos[0] - 1e-12 or rho_max > rhos[-1] + 1e-12:
        raise DomainError(f"[{rho_min}, {rho_max}] is not inside the grid range [{rhos[0]}, {rhos[-1]}]")
    inner = rhos[(rhos > rho_min) & (rhos < rho_max)]
    vals = curve.interpolate(np.concatenate([[rho_min, rho_max], inner]))
    return float(np.min(vals)), float(np.max(vals))


def _binary_column(values, name: str) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.size == 0 or np.any((values != 0) & (values != 1)):
        raise SchemaError(f"{name} must be a non-empty binary (0/1) column")
    return values


def af_bounds_from_probs(p1: float, q1: float, q0: float) -> AfBounds:
    """Bounds from P(A=1) = p1 and P(Y=1 | A=a) = q_a."""
    for v in (p1, q1, q0):
        if not 0.0 <= v <= 1.0:
            raise DomainError("AF bound inputs must be probabilities")
    p0 = 1.0 - p1
    mid = q1 * p1 - q0 * p0
    return AfBounds(mid - p1, mid + p0)


def af_bounds(dataset: ObservationalDataset) -> AfBounds:
    """Plug-in assumption-free bounds for a binary treatment and binary outcome."""
    if dataset.a_kind.kind != "binary" or dataset.y_kind.kind != "binary":
        raise SchemaError("AF bounds need a binary treatment and a binary outcome")
    return _af_from_columns(dataset.a, dataset.y)


def _af_from_columns(a: np.ndarray, y: np.ndarray) -> AfBounds:
    treated = a == 1
    if treated.all() or not treated.any():
        raise DataError("AF bounds need both treatment arms to be non-empty")
    return af_bounds_from_probs(float(treated.mean()), float(y[treated].mean()), float(y[~treated].mean()))


def af_bounds_sum(a, indicators) -> AfBounds:
    """Bounds on the ACE of a sum of binary indicators: componentwise bounds, summed."""
    a = _binary_column(a, "treatment")
    ind = np.asarray(indicators, dtype=float)
    if ind.ndim == 1:
        ind = ind[:, None]
    if ind.ndim != 2 or ind.shape[0] != a.size or ind.shape[1] == 0:
        raise DataError("indicators must be an (n, k) array matching the treatment column")
    parts = [_af_from_columns(a, _binary_column(ind[:, j], f"indicator {j}")) for j in range(ind.shape[1])]
    return AfBounds(sum(p.lower for p in parts), sum(p.upper for p in parts))
