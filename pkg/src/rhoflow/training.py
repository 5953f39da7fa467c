"""Maximum-likelihood fitting of a flow at a fixed copula correlation."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
import multiprocessing

import jax
import jax.numpy as jnp
import numpy as np

from . import flow
from .data import ObservationalDataset
from .errors import DataError, DomainError, RhoFlowError, TrainingDivergedError

log = logging.getLogger(__name__)

RHO_LIMIT = 0.99
DIVERGENCE_NLL = 1e6

CURVE_GRID = (-0.99, -0.8, -0.6, -0.4, -0.2, 0.0, 0.2, 0.4, 0.6, 0.8, 0.99)
BAYES_GRID = (-0.99,) + tuple(round(-0.95 + 0.05 * i, 2) for i in range(39)) + (0.99,)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 512
    max_epochs: int = 200
    patience: int = 20
    validation_fraction: float = 0.1
    seed: int = 0
    hidden: tuple = flow.DEFAULT_HIDDEN
    dequant_sigma: float = flow.DEFAULT_DEQUANT_SIGMA

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise DomainError("learning_rate must be positive")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise DomainError("batch_size, max_epochs and patience must be positive")
        if not 0.0 < self.validation_fraction < 1.0:
            raise DomainError("validation_fraction must lie in (0, 1)")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {k: v for k, v in doc.items() if k in cls.__dataclass_fields__}
        if "hidden" in known:
            known["hidden"] = tuple(known["hidden"])
        return cls(**known)


@dataclass
class TrainReport:
    epochs_run: int
    best_epoch: int
    final_train_nll: float
    final_val_nll: float
    nll_history: list = field(default_factory=list)  # (epoch, train_nll, val_nll)

    def to_dict(self) -> dict:
        return asdict(self)


def derive_seed(base_seed: int, rho: float) -> int:
    """Seed for the fit at ``rho`` within a grid run.

    Keyed on the correlation value (not its position) so nested grids reuse
    identical fits.
    """
    key = int(round((float(rho) + 1.0) * 1_000_000))
    return int(np.random.SeedSequence([int(base_seed), key]).generate_state(1, dtype=np.uint32)[0])


def _adam_epoch(state, a, y, batches, rho, lr):
    """One pass over ``batches`` (rows of indices) with Adam; returns per-batch NLL."""

    def loss(params, a_b, y_b):
        return -jnp.mean(flow.pointwise_log_likelihood(params, a_b, y_b, rho))

    grad_fn = jax.value_and_grad(loss)
    b1, b2, eps = 0.9, 0.999, 1e-8

    def step(carry, idx):
        params, m, v, t = carry
        value, g = grad_fn(params, a[idx], y[idx])
        t = t + 1.0
        m = jax.tree.map(lambda m_, g_: b1 * m_ + (1 - b1) * g_, m, g)
        v = jax.tree.map(lambda v_, g_: b2 * v_ + (1 - b2) * g_ * g_, v, g)
        c1 = 1 - b1**t
        c2 = 1 - b2**t
        params = jax.tree.map(lambda p, m_, v_: p - lr * (m_ / c1) / (jnp.sqrt(v_ / c2) + eps), params, m, v)
        return (params, m, v, t), value

    return jax.lax.scan(step, state, batches)


_adam_epoch_jit = jax.jit(_adam_epoch)


@jax.jit
def _mean_nll(params, a, y, rho):
    return -jnp.mean(flow.pointwise_log_likelihood(params, a, y, rho))


def gaussian_warm_start(params: dict, a_std: np.ndarray, y_std: np.ndarray, rho: float) -> dict:
    """Set the affine part of the outcome transformer to the Gaussian-copula optimum.

    For standardized data with correlation r, z_y = (rho - c r) a + c y with
    c = sqrt((1 - rho^2) / (1 - r^2)) makes the latents exactly N(0, Sigma_rho)
    when the data are jointly Gaussian. Splines stay at the identity; training
    then only has to learn departures from Gaussianity.
    """
    r = float(np.clip(np.mean(a_std * y_std), -0.999, 0.999))
    c = np.sqrt((1.0 - rho * rho) / (1.0 - r * r))
    skip = {"w": np.array(params["skip"]["w"], dtype=float), "b": np.array(params["skip"]["b"], dtype=float)}
    skip["w"][flow.OFFSET_INDEX] = rho - c * r
    skip["b"][flow.LOG_SCALE_INDEX] = np.log(c)
    return {**params, "skip": skip}


def _check_data(a: np.ndarray, y: np.ndarray):
    for name, col in (("a", a), ("y", y)):
        if np.std(col) == 0.0:
            raise DataError(f"variable {name} is constant; nothing to model")


def fit(dataset: ObservationalDataset, rho: float, config: TrainConfig | None = None):
    """Train a flow on ``dataset`` with the copula correlation held at ``rho``.

    Returns ``(model, report)`` where the model is the parameter snapshot with
    the lowest validation NLL. Identical inputs give bit-identical models.
    """
    config = config or TrainConfig()
    rho = float(rho)
    if not abs(rho) <= RHO_LIMIT + 1e-12:
        raise DomainError(f"|rho| must not exceed {RHO_LIMIT}, got {rho}")
    if dataset.n < 2:
        raise DataError("need at least two observations to train")

    init_seed, split_seed, shuffle_seed, dequant_seed = np.random.SeedSequence(config.seed).generate_state(4)
    dequant_seed = int(dequant_seed)
    if dataset.a_kind.is_discrete or dataset.y_kind.is_discrete:
        a_raw, y_raw = flow.dequantize_dataset(dataset, config.dequant_sigma, dequant_seed)
    else:
        a_raw, y_raw = dataset.a.copy(), dataset.y.copy()
    _check_data(a_raw, y_raw)

    a_loc, a_scale = float(np.mean(a_raw)), float(np.std(a_raw))
    y_loc, y_scale = float(np.mean(y_raw)), float(np.std(y_raw))
    a_std = (a_raw - a_loc) / a_scale
    y_std = (y_raw - y_loc) / y_scale
    log_jac = np.log(a_scale) + np.log(y_scale)

    order = np.random.default_rng(split_seed).permutation(dataset.n)
    n_val = min(max(1, int(round(config.validation_fraction * dataset.n))), dataset.n - 1)
    val_idx, train_idx = order[:n_val], order[n_val:]
    a_tr, y_tr = jnp.asarray(a_std[train_idx]), jnp.asarray(y_std[train_idx])
    a_va, y_va = jnp.asarray(a_std[val_idx]), jnp.asarray(y_std[val_idx])
    n_train = train_idx.size
    batch = min(config.batch_size, n_train)
    n_batches = n_train // batch

    params = gaussian_warm_start(flow.init_params(int(init_seed), config.hidden), a_std, y_std, rho)
    params = jax.tree.map(jnp.asarray, params)
    zeros = jax.tree.map(jnp.zeros_like, params)
    state = (params, zeros, zeros, jnp.asarray(0.0))
    shuffle_rng = np.random.default_rng(shuffle_seed)
    rho_j = jnp.asarray(rho)
    lr = jnp.asarray(config.learning_rate)

    best_params, best_val, best_epoch, best_train = params, np.inf, 0, np.inf
    history = []
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        perm = shuffle_rng.permutation(n_train)[: n_batches * batch].reshape(n_batches, batch)
        state, losses = _adam_epoch_jit(state, a_tr, y_tr, jnp.asarray(perm), rho_j, lr)
        losses = np.asarray(losses)
        if not np.all(np.isfinite(losses)) or np.any(losses + log_jac > DIVERGENCE_NLL):
            raise TrainingDivergedError(f"training diverged at epoch {epoch} (rho={rho})")
        train_nll = float(np.mean(losses)) + log_jac
        val_nll = float(_mean_nll(state[0], a_va, y_va, rho_j)) + log_jac
        if not np.isfinite(val_nll):
            raise TrainingDivergedError(f"validation NLL is not finite at epoch {epoch} (rho={rho})")
        history.append((epoch, train_nll, val_nll))
        if val_nll < best_val:
            best_val, best_epoch, best_train, best_params = val_nll, epoch, train_nll, state[0]
        elif epoch - best_epoch >= config.patience:
            break
    log.debug("rho=%.3f: %d epochs, best val NLL %.5f at epoch %d", rho, epoch, best_val, best_epoch)

    model = flow.RhoGnfModel(
        jax.tree.map(np.asarray, best_params),
        rho,
        dataset.a_kind,
        dataset.y_kind,
        a_loc,
        a_scale,
        y_loc,
        y_scale,
        config.dequant_sigma,
        dequant_seed,
        meta={"train_seed": int(config.seed)},
    )
    report = TrainReport(epoch, best_epoch, best_train, best_val, history)
    return model, report


class GridPointError(RhoFlowError):
    """A fit within a grid run failed; ``rho`` names the grid point."""

    def __init__(self, rho: float, cause: Exception):
        super().__init__(f"fit at rho={rho} failed: {cause}")
        self.rho = rho
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)


def check_grid(grid) -> tuple:
    grid = tuple(float(r) for r in grid)
    if not grid:
        raise DomainError("rho grid is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise DomainError("rho grid must be strictly increasing")
    if grid[0] < -RHO_LIMIT - 1e-12 or grid[-1] > RHO_LIMIT + 1e-12:
        raise DomainError(f"rho grid must lie within [-{RHO_LIMIT}, {RHO_LIMIT}]")
    return grid


def _fit_point(args):
    dataset, rho, config = args
    try:
        return rho, fit(dataset, rho, config)
    except RhoFlowError as exc:
        raise GridPointError(rho, exc) from exc


def fit_grid(dataset: ObservationalDataset, rho_grid, config: TrainConfig | None = None, jobs: int = 1):
    """Independently fit one flow per grid value.

    Returns a list of ``(rho, model, report)`` sorted by rho. Each fit uses
    ``derive_seed(config.seed, rho)``, so results do not depend on the order
    or parallelism of evaluation.
    """
    config = config or TrainConfig()
    grid = check_grid(rho_grid)
    tasks = [(dataset, rho, replace(config, seed=derive_seed(config.seed, rho))) for rho in grid]
    if jobs > 1 and len(tasks) > 1:
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as pool:
            results = list(pool.map(_fit_point, tasks))
    else:
        results = [_fit_point(t) for t in tasks]
    return sorted(((rho, model, report) for rho, (model, report) in results), key=lambda r: r[0])
