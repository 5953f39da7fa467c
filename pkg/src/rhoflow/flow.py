"""Bivariate normalizing flow with a Gaussian-copula base distribution.

The treatment is mapped to its latent score by an unconditional monotone
transformer, the outcome by a transformer whose parameters are emitted by a
small conditioner network fed with the treatment value (an MLP plus a linear
skip path). Each transformer is

    T(x) = offset + exp(log_scale) * R(x)

where ``R`` is a monotone rational-quadratic spline on ``[-BOUND, BOUND]`` with
unit boundary derivatives and identity tails, so ``T`` continues linearly
with slope ``exp(log_scale)`` outside the knot range.

All arithmetic runs in float64 through JAX; importing this module enables
``jax_enable_x64``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import jax

jax.config.update("jax_enable_x64", True)

import jax.numpy as jnp  # noqa: E402
import numpy as np  # noqa: E402

from .copula import LOG_2PI, sample_bivariate  # noqa: E402
from .data import CONTINUOUS, ObservationalDataset, VariableKind  # noqa: E402
from .errors import DataError, DomainError, NumericError, SchemaError, StorageError  # noqa: E402

N_BINS = 8
BOUND = 4.0
MIN_BIN = 1e-3
MIN_DERIVATIVE = 1e-3
N_TRANSFORMER_PARAMS = 3 * N_BINS + 1
DEFAULT_HIDDEN = (32, 32)
DEFAULT_DEQUANT_SIGMA = 0.25

# raw parameter layout of one transformer
_W = slice(0, N_BINS)
_H = slice(N_BINS, 2 * N_BINS)
_D = slice(2 * N_BINS, 3 * N_BINS - 1)
OFFSET_INDEX = 3 * N_BINS - 1
LOG_SCALE_INDEX = 3 * N_BINS


def _positive(r):
    # smooth, strictly positive, equals 1 at r = 0
    return 0.5 * (r + jnp.sqrt(r * r + 4.0))


def _positive_inverse(v):
    return v - 1.0 / v


def _knots(raw):
    K = N_BINS
    wr = _positive(raw[..., _W])
    hr = _positive(raw[..., _H])
    widths = 2 * BOUND * (MIN_BIN + (1 - K * MIN_BIN) * wr / jnp.sum(wr, axis=-1, keepdims=True))
    heights = 2 * BOUND * (MIN_BIN + (1 - K * MIN_BIN) * hr / jnp.sum(hr, axis=-1, keepdims=True))
    inner = MIN_DERIVATIVE + (1 - MIN_DERIVATIVE) * _positive(raw[..., _D])
    ones = jnp.ones_like(inner[..., :1])
    derivs = jnp.concatenate([ones, inner, ones], axis=-1)
    xk = jnp.concatenate([-BOUND * ones, -BOUND + jnp.cumsum(widths, axis=-1)[..., :-1], BOUND * ones], axis=-1)
    yk = jnp.concatenate([-BOUND * ones, -BOUND + jnp.cumsum(heights, axis=-1)[..., :-1], BOUND * ones], axis=-1)
    return xk, yk, widths, heights, derivs


def _take(arr, idx):
    return jnp.take_along_axis(arr, idx[..., None], axis=-1)[..., 0]


def transformer_forward(x, raw):
    """Evaluate a transformer and its log-derivative.

    ``raw`` has trailing dimension N_TRANSFORMER_PARAMS and broadcasts
    against ``x``.
    """
    x = jnp.asarray(x)
    raw = jnp.broadcast_to(raw, x.shape + (N_TRANSFORMER_PARAMS,))
    xk, yk, widths, heights, derivs = _knots(raw)
    inside = (x > -BOUND) & (x < BOUND)
    xc = jnp.clip(x, -BOUND, BOUND)
    idx = jnp.clip(jnp.sum(xc[..., None] >= xk[..., 1:-1], axis=-1), 0, N_BINS - 1)
    x0, y0 = _take(xk, idx), _take(yk, idx)
    w, h = _take(widths, idx), _take(heights, idx)
    d0, d1 = _take(derivs, idx), _take(derivs[..., 1:], idx)
    s = h / w
    t = jnp.clip((xc - x0) / w, 0.0, 1.0)
    t1 = t * (1.0 - t)
    den = s + (d0 + d1 - 2.0 * s) * t1
    r_in = y0 + h * (s * t * t + d0 * t1) / den
    grad_in = s * s * (d1 * t * t + 2.0 * s * t1 + d0 * (1.0 - t) ** 2) / (den * den)
    r = jnp.where(inside, r_in, x)
    log_grad = jnp.where(inside, jnp.log(grad_in), 0.0)
    log_scale = raw[..., LOG_SCALE_INDEX]
    return raw[..., OFFSET_INDEX] + jnp.exp(log_scale) * r, log_scale + log_grad


def transformer_inverse(z, raw):
    """Closed-form inverse of :func:`transformer_forward`."""
    z = jnp.asarray(z)
    raw = jnp.broadcast_to(raw, z.shape + (N_TRANSFORMER_PARAMS,))
    xk, yk, widths, heights, derivs = _knots(raw)
    r = (z - raw[..., OFFSET_INDEX]) * jnp.exp(-raw[..., LOG_SCALE_INDEX])
    inside = (r > -BOUND) & (r < BOUND)
    rc = jnp.clip(r, -BOUND, BOUND)
    idx = jnp.clip(jnp.sum(rc[..., None] >= yk[..., 1:-1], axis=-1), 0, N_BINS - 1)
    x0, y0 = _take(xk, idx), _take(yk, idx)
    w, h = _take(widths, idx), _take(heights, idx)
    d0, d1 = _take(derivs, idx), _take(derivs[..., 1:], idx)
    s = h / w
    xi = rc - y0
    dd = d0 + d1 - 2.0 * s
    qa = h * (s - d0) + xi * dd
    qb = h * d0 - xi * dd
    qc = -s * xi
    disc = jnp.maximum(qb * qb - 4.0 * qa * qc, 0.0)
    t = jnp.clip(2.0 * qc / (-qb - jnp.sqrt(disc)), 0.0, 1.0)
    return jnp.where(inside, x0 + t * w, r)


def conditioner_apply(layers, a):
    """Map treatment values to outcome-transformer parameters (SiLU MLP)."""
    h = jnp.asarray(a)[..., None]
    for layer in layers[:-1]:
        h = h @ layer["w"] + layer["b"]
        h = h * jax.nn.sigmoid(h)
    return h @ layers[-1]["w"] + layers[-1]["b"]


def outcome_raw(params, a_std):
    """Raw outcome-transformer parameters: MLP output plus a linear skip path in ``a``."""
    a_std = jnp.asarray(a_std)
    skip = params["skip"]
    return conditioner_apply(params["conditioner"], a_std) + a_std[..., None] * skip["w"] + skip["b"]


def latent_terms(params, a_std, y_std):
    """Latent scores and log-derivatives for standardized inputs."""
    z_a, ld_a = transformer_forward(a_std, params["t_a"])
    z_y, ld_y = transformer_forward(y_std, outcome_raw(params, a_std))
    return z_a, z_y, ld_a, ld_y


def pointwise_log_likelihood(params, a_std, y_std, rho):
    """Per-sample log-density of standardized data (no standardization Jacobian)."""
    z_a, z_y, ld_a, ld_y = latent_terms(params, a_std, y_std)
    one_m = 1.0 - rho * rho
    quad = (z_a * z_a - 2.0 * rho * z_a * z_y + z_y * z_y) / one_m
    return -LOG_2PI - 0.5 * jnp.log(one_m) - 0.5 * quad + ld_a + ld_y


_latent_jit = jax.jit(latent_terms)
_loglik_jit = jax.jit(pointwise_log_likelihood)
_inverse_jit = jax.jit(transformer_inverse)
_outcome_raw_jit = jax.jit(outcome_raw)


def _total_loglik(params, a_std, y_std, rho):
    return jnp.sum(pointwise_log_likelihood(params, a_std, y_std, rho))


_total_loglik_grad = jax.jit(jax.grad(_total_loglik))


def _inverse_outcome(params, z_y, a_std):
    return transformer_inverse(z_y, outcome_raw(params, a_std))


_inverse_outcome_jit = jax.jit(_inverse_outcome)


# ---------------------------------------------------------------------------
# parameter construction


def identity_raw() -> np.ndarray:
    return np.zeros(N_TRANSFORMER_PARAMS)


def affine_raw(slope: float, intercept: float = 0.0) -> np.ndarray:
    """Raw parameters of the transformer ``x -> slope * x + intercept``."""
    if slope <= 0:
        raise DomainError("transformer slope must be positive")
    raw = identity_raw()
    raw[OFFSET_INDEX] = intercept
    raw[LOG_SCALE_INDEX] = np.log(slope)
    return raw


def init_params(seed=0, hidden=DEFAULT_HIDDEN, perturb: float = 0.0) -> dict:
    """Fresh flow parameters.

    With ``perturb=0`` both transformers are the identity map, whatever the
    treatment; hidden layers still get random weights so training can move
    away from it. ``perturb > 0`` adds Gaussian noise of that scale to every
    parameter, which is how tests obtain random monotone models.
    """
    rng = np.random.default_rng(seed)
    sizes = (1, *hidden, N_TRANSFORMER_PARAMS)
    layers = []
    for i, (m, n) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = i == len(sizes) - 2
        w = np.zeros((m, n)) if last else rng.normal(0.0, np.sqrt(2.0 / m), size=(m, n))
        layers.append({"w": w, "b": np.zeros(n)})
    skip = {"w": np.zeros(N_TRANSFORMER_PARAMS), "b": np.zeros(N_TRANSFORMER_PARAMS)}
    params = {"t_a": identity_raw(), "conditioner": layers, "skip": skip}
    if perturb:
        params = jax.tree.map(lambda p: p + perturb * rng.standard_normal(p.shape), params)
    return params


def param_count(params) -> int:
    return int(sum(np.size(p) for p in jax.tree.leaves(params)))


# ---------------------------------------------------------------------------
# model


@dataclass(frozen=True)
class MonotoneTransformer:
    """One strictly increasing transformer expressed in data units."""

    raw: np.ndarray
    loc: float = 0.0
    scale: float = 1.0

    def _std(self, x):
        return (np.asarray(x, dtype=float) - self.loc) / self.scale

    def __call__(self, x):
        return np.asarray(transformer_forward(self._std(x), self.raw)[0])

    def log_derivative(self, x):
        return np.asarray(transformer_forward(self._std(x), self.raw)[1]) - np.log(self.scale)

    def inverse(self, z):
        return self.loc + self.scale * np.asarray(transformer_inverse(np.asarray(z, dtype=float), self.raw))

    @property
    def knot_positions(self) -> np.ndarray:
        return self.loc + self.scale * np.asarray(_knots(jnp.asarray(self.raw))[0])

    @property
    def knot_values(self) -> np.ndarray:
        r = np.asarray(_knots(jnp.asarray(self.raw))[1])
        return self.raw[OFFSET_INDEX] + np.exp(self.raw[LOG_SCALE_INDEX]) * r

    @property
    def derivatives(self) -> np.ndarray:
        d = np.asarray(_knots(jnp.asarray(self.raw))[4])
        return d * np.exp(self.raw[LOG_SCALE_INDEX]) / self.scale

    @property
    def tail_slope(self) -> float:
        return float(np.exp(self.raw[LOG_SCALE_INDEX]) / self.scale)


@dataclass(frozen=True)
class RhoGnfModel:
    """A trained (or initialised) flow at a fixed copula correlation ``rho``.

    ``a_loc``/``a_scale`` and ``y_loc``/``y_scale`` standardize the
    (dequantized) inputs before the transformers; they are part of the
    density's Jacobian.
    """

    params: dict
    rho: float
    a_kind: VariableKind = CONTINUOUS
    y_kind: VariableKind = CONTINUOUS
    a_loc: float = 0.0
    a_scale: float = 1.0
    y_loc: float = 0.0
    y_scale: float = 1.0
    dequant_sigma: float = DEFAULT_DEQUANT_SIGMA
    dequant_seed: int | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        rho = float(self.rho)
        if not -1.0 < rho < 1.0:
            raise DomainError(f"model correlation must satisfy |rho| < 1, got {rho}")
        if self.a_scale <= 0 or self.y_scale <= 0:
            raise DomainError("standardization scales must be positive")
        object.__setattr__(self, "rho", rho)
        params = jax.tree.map(lambda p: np.array(p, dtype=float), self.params)
        object.__setattr__(self, "params", params)

    @classmethod
    def identity(cls, rho: float, seed=0, hidden=DEFAULT_HIDDEN, **kwargs) -> "RhoGnfModel":
        return cls(init_params(seed, hidden), rho, **kwargs)

    @property
    def hidden(self) -> tuple:
        return tuple(layer["w"].shape[1] for layer in self.params["conditioner"][:-1])

    def standardize(self, a, y):
        a = (np.asarray(a, dtype=float) - self.a_loc) / self.a_scale
        y = (np.asarray(y, dtype=float) - self.y_loc) / self.y_scale
        return a, y

    def treatment_transformer(self) -> MonotoneTransformer:
        return MonotoneTransformer(self.params["t_a"], self.a_loc, self.a_scale)

    def outcome_transformer(self, a: float) -> MonotoneTransformer:
        a_std = (float(a) - self.a_loc) / self.a_scale
        raw = np.asarray(_outcome_raw_jit(self.params, jnp.asarray(a_std)))
        return MonotoneTransformer(raw, self.y_loc, self.y_scale)

    def with_params(self, params) -> "RhoGnfModel":
        return replace(self, params=params)


def _as_array(x):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("flow inputs must be finite")
    return arr


def _unwrap(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


def _std_level(model: RhoGnfModel, level):
    return (np.asarray(level, dtype=float) - model.a_loc) / model.a_scale


def forward(model: RhoGnfModel, a, y):
    """Latent pair (z_a, z_y) = (T_A(a), T_{Y|A=a}(y)) for (dequantized) data."""
    a_std, y_std = model.standardize(_as_array(a), _as_array(y))
    z_a, z_y, _, _ = _latent_jit(model.params, jnp.asarray(a_std), jnp.asarray(y_std))
    return _unwrap(z_a), _unwrap(z_y)


def inverse(model: RhoGnfModel, z_a, z_y, a_for_outcome=None):
    """Map latent scores back to data: a = T_A^-1(z_a), y = T_{Y|A=a'}^-1(z_y).

    ``a_for_outcome`` is the treatment value the outcome transformer is
    conditioned on; by default the recovered ``a`` itself.
    """
    z_a = _as_array(z_a)
    z_y = _as_array(z_y)
    a_std = np.asarray(_inverse_jit(jnp.asarray(z_a), model.params["t_a"]))
    a = model.a_loc + model.a_scale * a_std
    if a_for_outcome is None:
        c_std = a_std
    else:
        c_std = np.broadcast_to(_std_level(model, _as_array(a_for_outcome)), z_y.shape)
    y_std = np.asarray(_inverse_outcome_jit(model.params, jnp.asarray(z_y), jnp.asarray(c_std)))
    return _unwrap(a), _unwrap(model.y_loc + model.y_scale * y_std)


def outcome_inverse(model: RhoGnfModel, z_y, a):
    """T_{Y|A=a}^-1(z_y) for arrays of latent outcome scores and treatment values."""
    z_y = _as_array(z_y)
    c_std = np.broadcast_to(_std_level(model, _as_array(a)), z_y.shape)
    y_std = np.asarray(_inverse_outcome_jit(model.params, jnp.asarray(z_y), jnp.asarray(c_std)))
    return model.y_loc + model.y_scale * y_std


def _batch(model, a, y, what):
    a = np.atleast_1d(_as_array(a))
    y = np.atleast_1d(_as_array(y))
    if a.size == 0 or a.shape != y.shape:
        raise DataError(f"{what} needs a non-empty batch of equal-length columns")
    a_std, y_std = model.standardize(a, y)
    return jnp.asarray(a_std), jnp.asarray(y_std)


def pointwise_loglik(model: RhoGnfModel, a, y) -> np.ndarray:
    a_std, y_std = _batch(model, a, y, "pointwise_loglik")
    lp = np.asarray(_loglik_jit(model.params, a_std, y_std, model.rho))
    return lp - np.log(model.a_scale) - np.log(model.y_scale)


def log_likelihood(model: RhoGnfModel, a, y) -> float:
    """Total log-likelihood of a (dequantized) batch by change of variables."""
    lp = pointwise_loglik(model, a, y)
    if not np.all(np.isfinite(lp)):
        raise NumericError("log-likelihood is not finite (a transformer derivative underflowed)")
    return float(np.sum(lp))


def log_likelihood_gradient(model: RhoGnfModel, a, y) -> dict:
    """Exact gradient of :func:`log_likelihood` w.r.t. every trainable parameter.

    The result mirrors ``model.params``; ``rho`` is a fixed hyperparameter
    and gets no gradient.
    """
    a_std, y_std = _batch(model, a, y, "log_likelihood_gradient")
    grad = _total_loglik_grad(model.params, a_std, y_std, model.rho)
    grad = jax.tree.map(np.asarray, grad)
    if not all(np.all(np.isfinite(g)) for g in jax.tree.leaves(grad)):
        raise NumericError("log-likelihood gradient is not finite")
    return grad


def sample(model: RhoGnfModel, n: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` continuous (a, y) pairs from the model's joint law."""
    z_a, z_y = sample_bivariate(model.rho, n, seed)
    return inverse(model, z_a, z_y)


# ---------------------------------------------------------------------------
# dequantization


def dequantize(values, kind: VariableKind, sigma: float = DEFAULT_DEQUANT_SIGMA, seed=None):
    """Add N(0, sigma^2) noise to integer categories; continuous values pass through."""
    values = np.asarray(values, dtype=float)
    if not kind.is_discrete:
        return values.copy()
    if sigma < 0:
        raise DomainError("dequantization sigma must be non-negative")
    bad = (values != np.round(values)) | (values < 0) | (values >= kind.cardinality)
    if np.any(bad):
        raise SchemaError(f"value outside the categories of {kind}")
    rng = np.random.default_rng(seed)
    out = values + sigma * rng.standard_normal(values.shape)
    return float(out) if out.ndim == 0 else out


def quantize(values, kind: VariableKind):
    """Nearest category, clamped to the valid range."""
    if not kind.is_discrete:
        raise DomainError("quantize applies to discrete variables only")
    out = np.clip(np.rint(np.asarray(values, dtype=float)), 0, kind.cardinality - 1).astype(int)
    return int(out) if out.ndim == 0 else out


def dequantize_dataset(dataset: ObservationalDataset, sigma: float, seed) -> tuple[np.ndarray, np.ndarray]:
    """Continuous version of both columns; the same seed gives the same noise."""
    seed_a, seed_y = np.random.SeedSequence(seed).spawn(2)
    a = dequantize(dataset.a, dataset.a_kind, sigma, seed_a)
    y = dequantize(dataset.y, dataset.y_kind, sigma, seed_y)
    return np.atleast_1d(a), np.atleast_1d(y)


def model_inputs(model: RhoGnfModel, dataset: ObservationalDataset) -> tuple[np.ndarray, np.ndarray]:
    """The continuous inputs the model saw for ``dataset`` (same dequantization noise)."""
    if dataset.a_kind != model.a_kind or dataset.y_kind != model.y_kind:
        raise SchemaError(
            f"dataset schema ({dataset.a_kind}, {dataset.y_kind}) does not match "
            f"model schema ({model.a_kind}, {model.y_kind})"
        )
    if not (model.a_kind.is_discrete or model.y_kind.is_discrete):
        return dataset.a.copy(), dataset.y.copy()
    seed = 0 if model.dequant_seed is None else model.dequant_seed
    return dequantize_dataset(dataset, model.dequant_sigma, seed)


# ---------------------------------------------------------------------------
# serialization

FORMAT = "rhoflow.model/1"


def model_to_dict(model: RhoGnfModel) -> dict:
    return {
        "format": FORMAT,
        "rho": model.rho,
        "a_kind": str(model.a_kind),
        "y_kind": str(model.y_kind),
        "a_loc": model.a_loc,
        "a_scale": model.a_scale,
        "y_loc": model.y_loc,
        "y_scale": model.y_scale,
        "dequant_sigma": model.dequant_sigma,
        "dequant_seed": model.dequant_seed,
        "transformer": {"n_bins": N_BINS, "bound": BOUND},
        "params": {
            "t_a": model.params["t_a"].tolist(),
            "conditioner": [
                {"w": layer["w"].tolist(), "b": layer["b"].tolist()} for layer in model.params["conditioner"]
            ],
            "skip": {k: v.tolist() for k, v in model.params["skip"].items()},
        },
        "meta": model.meta,
    }


def _params_from_doc(doc: dict) -> dict:
    return {
        "t_a": np.array(doc["t_a"], dtype=float).reshape(N_TRANSFORMER_PARAMS),
        "conditioner": [
            {"w": np.array(layer["w"], dtype=float).reshape(-1, len(layer["b"])), "b": np.array(layer["b"], dtype=float)}
            for layer in doc["conditioner"]
        ],
        "skip": {k: np.array(doc["skip"][k], dtype=float).reshape(N_TRANSFORMER_PARAMS) for k in ("w", "b")},
    }


def model_from_dict(doc: dict) -> RhoGnfModel:
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise SchemaError(f"not a {FORMAT} document")
    spline = doc.get("transformer", {})
    if spline.get("n_bins") != N_BINS or spline.get("bound") != BOUND:
        raise SchemaError("model was written with a different transformer layout")
    try:
        params = _params_from_doc(doc["params"])
        return RhoGnfModel(
            params,
            doc["rho"],
            VariableKind.parse(doc["a_kind"]),
            VariableKind.parse(doc["y_kind"]),
            doc["a_loc"],
            doc["a_scale"],
            doc["y_loc"],
            doc["y_scale"],
            doc["dequant_sigma"],
            doc["dequant_seed"],
            doc.get("meta", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DomainError):
            raise
        raise SchemaError(f"malformed model document: {exc}") from exc


def save_model(model: RhoGnfModel, path) -> Path:
    path = Path(path)
    try:
        path.write_text(json.dumps(model_to_dict(model), indent=1) + "\n", encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot write model {path}: {exc}") from exc
    return path


def load_model(path) -> RhoGnfModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise StorageError(f"cannot read model {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path} is not valid JSON: {exc}") from exc
    return model_from_dict(doc)
