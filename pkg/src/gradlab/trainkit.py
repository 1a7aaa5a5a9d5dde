"""Losses, models, mini-batching, and the SGD training loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .exceptions import DimensionError, DivergenceError, DomainError
from .layers import ModelSpec, init_mlp_params, mlp_forward
from .ndcore import RngState, permutation, split

LOSSES = ("squared", "bce")


@dataclass(frozen=True)
class Dataset:
    """Ordered examples; row ``i`` of ``inputs`` pairs with row ``i`` of ``targets``."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.targets, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if y.ndim == 1:
            y = y[:, None]
        if x.ndim != 2 or y.ndim != 2:
            raise DimensionError(f"inputs/targets must be rank 2, got {x.shape} and {y.shape}")
        if len(x) != len(y) or len(x) < 1:
            raise DimensionError(f"need equal, non-zero lengths, got {len(x)} inputs and {len(y)} targets")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)

    def __len__(self):
        return len(self.inputs)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.inputs[idx], self.targets[idx])


# -- per-example losses ---------------------------------------------------

def squared_error(pred, Y):
    """Per-row ``0.5 * ||pred - y||^2``; ``pred`` and ``Y`` are ``n x k``."""
    k = np.shape(ad.value_of(pred))[1]
    d = ad.sub(pred, Y)
    return ad.mul(0.5, ad.matmul(ad.mul(d, d), np.ones(k)))


def bce_with_logits(z, Y):
    """Per-row binary cross-entropy from logits ``z`` (``n x 1``)."""
    n = np.shape(ad.value_of(z))[0]
    z = ad.reshape(z, (n,))
    y = np.asarray(Y, dtype=np.float64).reshape(n)
    # softplus(z) - y z, with softplus(z) = z - m + log(exp(m - z) + exp(m)).
    # The identity holds for any m; m = min(z, 0) keeps both exponents <= 0,
    # and m cancels from the derivative so its tie-break at 0 is irrelevant.
    m = ad.minimum(z, 0.0)
    softplus = ad.add(ad.sub(z, m), ad.log(ad.add(ad.exp(ad.sub(m, z)), ad.exp(m))))
    return ad.sub(softplus, ad.mul(y, z))


# -- models ---------------------------------------------------------------

class MLPModel:
    """Feed-forward network plus a per-example loss.

    ``loss`` is ``"squared"`` or ``"bce"``; bce requires a single sigmoid
    output unit and is computed from logits.
    """

    def __init__(self, spec: ModelSpec, loss="squared"):
        if loss not in LOSSES:
            raise DomainError(f"loss must be one of {LOSSES}, got {loss!r}")
        if loss == "bce" and (spec.output_kind != "sigmoid" or spec.layer_dims[-1] != 1):
            raise DomainError("bce loss needs a single sigmoid output unit")
        self.spec = spec
        self.loss = loss

    def __repr__(self):
        return f"MLPModel({self.spec!r}, loss={self.loss!r})"

    @property
    def has_dropout(self):
        return self.spec.has_dropout

    def init_params(self, rng):
        return init_mlp_params(self.spec, rng)

    def example_losses(self, p, X, Y, mode="production", rng=None):
        """Vector of per-example losses for the rows of ``X``; returns ``(losses, rng)``."""
        out, rng = mlp_forward(self.spec, p, X, mode, rng, logits=self.loss == "bce")
        if self.loss == "bce":
            return bce_with_logits(out, Y), rng
        return squared_error(out, Y), rng

    def predict(self, params, X):
        out, _ = mlp_forward(self.spec, params, np.asarray(X, dtype=np.float64), "production")
        return np.asarray(out)


class QuadraticModel:
    """Data-independent loss ``0.5 * (w - center)^T A (w - center)`` on a vector ``w``.

    Every example contributes the same loss, which makes analytic
    reference values easy to derive.
    """

    has_dropout = False

    def __init__(self, A, center=None, w0=None):
        self.A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        dim = self.A.shape[0]
        if self.A.shape != (dim, dim):
            raise DimensionError(f"A must be square, got {self.A.shape}")
        self.center = np.zeros(dim) if center is None else np.asarray(center, dtype=np.float64).reshape(dim)
        self.w0 = np.zeros(dim) if w0 is None else np.asarray(w0, dtype=np.float64).reshape(dim)

    def init_params(self, rng):
        return {"w": self.w0.copy()}, rng

    def objective(self, w):
        d = ad.sub(w, self.center)
        return ad.mul(0.5, ad.reduce_sum(ad.mul(d, ad.matmul(self.A, d))))

    def example_losses(self, p, X, Y, mode="production", rng=None):
        n = np.shape(X)[0]
        return ad.mul(self.objective(p["w"]), np.ones(n)), rng


# -- batch losses and gradients -------------------------------------------

def batch_objective(model, batch, mode="production", rng=None):
    """Autodiff computation ``f(env)`` for the mean loss of ``model`` on ``batch``."""

    def f(env):
        losses, _ = model.example_losses(env, batch.inputs, batch.targets, mode, rng)
        return ad.reduce_mean(losses)

    return f


def loss_mean(model, params, batch: Dataset):
    """Mean per-example loss over ``batch`` in production mode."""
    value, _ = ad.eval_with_tape(batch_objective(model, batch), params)
    return float(value)


def grad_of_mean(model, params, batch: Dataset, rng=None):
    """Gradient of the batch-mean loss, one forward sweep over the whole batch."""
    mode = "train" if rng is not None and model.has_dropout else "production"
    return ad.grad(batch_objective(model, batch, mode, rng), params)


def hvp_of_mean(model, params, batch: Dataset, v):
    return ad.hvp(batch_objective(model, batch), params, None, v)


def grad_mean(model, params, batch: Dataset, rng=None):
    """Average of per-example gradients, summed in example order.

    With ``rng`` and a dropout model, example ``i`` uses the ``i``-th stream
    of ``split(rng, len(batch))`` in train mode.
    """
    n = len(batch)
    train = rng is not None and model.has_dropout
    streams = split(rng, n) if train else [None] * n
    mode = "train" if train else "production"
    total = None
    for i in range(n):
        g = ad.grad(batch_objective(model, batch.subset([i]), mode, streams[i]), params)
        if total is None:
            total = g
        else:
            total = {k: total[k] + g[k] for k in total}
    return {k: v / n for k, v in total.items()}


# -- mini-batching --------------------------------------------------------

def batch_indices(n, batch_size, rng: RngState):
    """Shuffle ``range(n)`` once, cut into contiguous blocks; final short block kept."""
    if batch_size < 1:
        raise DomainError(f"batch_size must be >= 1, got {batch_size}")
    perm, rng = permutation(rng, n)
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)], rng


def minibatches(data: Dataset, batch_size, rng: RngState):
    idx, rng = batch_indices(len(data), batch_size, rng)
    return [data.subset(i) for i in idx], rng


def seed_streams(seed):
    """Independent (init, shuffle, dropout) streams derived from one seed."""
    init, shuffle, dropout = split(RngState(seed), 3)
    return init, shuffle, dropout


def batch_schedule(n, batch_size, epochs, seed):
    """Index arrays for every SGD step of a run, as :func:`train` draws them."""
    _, rng, _ = seed_streams(seed)
    steps = []
    for _ in range(epochs):
        idx, rng = batch_indices(n, batch_size, rng)
        steps.extend(idx)
    return steps


def step_dropout_rng(seed, step):
    _, _, base = seed_streams(seed)
    return RngState(base.seed, base.counter + step * (1 << 32))


# -- updates --------------------------------------------------------------

def _map(g, fn):
    if isinstance(g, dict):
        return {k: fn(np.asarray(v, dtype=np.float64)) for k, v in g.items()}
    return fn(np.asarray(g, dtype=np.float64))


def clip_gradient(g, threshold):
    """Componentwise clipping: ``sign(g_i) * min(|g_i|, threshold)``."""
    if not threshold > 0:
        raise DomainError(f"clip threshold must be positive, got {threshold}")
    return _map(g, lambda a: np.clip(a, -threshold, threshold))


def sgd_step(w, g, eta):
    if isinstance(w, dict):
        return {k: np.asarray(w[k], dtype=np.float64) - eta * np.asarray(g[k], dtype=np.float64) for k in w}
    return np.asarray(w, dtype=np.float64) - eta * np.asarray(g, dtype=np.float64)


# -- early stopping -------------------------------------------------------

@dataclass(frozen=True)
class EarlyStopConfig:
    patience: int
    min_delta: float = 0.0

    def __post_init__(self):
        if self.patience < 1:
            raise DomainError("patience must be >= 1")
        if self.min_delta < 0:
            raise DomainError("min_delta must be >= 0")


@dataclass(frozen=True)
class StopState:
    best_val_loss: float = math.inf
    best_params: dict | None = None
    evals_since_improvement: int = 0
    best_epoch: int = -1


def early_stop_update(state: StopState, val_loss, params, cfg: EarlyStopConfig, epoch=None):
    """Returns ``(new_state, halt)``."""
    if val_loss < state.best_val_loss - cfg.min_delta:
        snapshot = {k: np.array(v, copy=True) for k, v in params.items()} if isinstance(params, dict) else np.array(params, copy=True)
        state = StopState(float(val_loss), snapshot, 0, state.best_epoch + 1 if epoch is None else epoch)
    else:
        state = StopState(
            state.best_val_loss,
            state.best_params,
            state.evals_since_improvement + 1,
            state.best_epoch,
        )
    return state, state.evals_since_improvement >= cfg.patience


# -- training loop --------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    eta: float
    batch_size: int
    max_epochs: int
    seed: int
    clip_threshold: float | None = None
    early_stop: EarlyStopConfig | None = None

    def __post_init__(self):
        if not self.eta > 0:
            raise DomainError(f"eta must be positive, got {self.eta}")
        if self.batch_size < 1:
            raise DomainError("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise DomainError("max_epochs must be >= 0")
        if self.clip_threshold is not None and not self.clip_threshold > 0:
            raise DomainError("clip_threshold must be positive")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class TrainResult:
    params: dict
    history: list = field(default_factory=list)
    halted_early: bool = False
    best_epoch: int | None = None


def train(model, data_train: Dataset, data_val: Dataset, cfg: TrainConfig, params0=None):
    """Minibatched SGD with optional clipping and early stopping.

    Returns a :class:`TrainResult`. When early stopping is configured the
    returned parameters are the best-validation snapshot.
    """
    init_rng, _, _ = seed_streams(cfg.seed)
    if params0 is None:
        params, _ = model.init_params(init_rng)
    else:
        params = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params0.items()}
    n = len(data_train)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    schedule = batch_schedule(n, cfg.batch_size, cfg.max_epochs, cfg.seed)
    stop = StopState()
    result = TrainResult(params)
    step = 0
    for epoch in range(cfg.max_epochs):
        for idx in schedule[epoch * steps_per_epoch : (epoch + 1) * steps_per_epoch]:
            rng = step_dropout_rng(cfg.seed, step) if model.has_dropout else None
            g = grad_mean(model, params, data_train.subset(idx), rng)
            if cfg.clip_threshold is not None:
                g = clip_gradient(g, cfg.clip_threshold)
            params = sgd_step(params, g, cfg.eta)
            step += 1
        if not all(np.all(np.isfinite(v)) for v in params.values()):
            raise DivergenceError(f"non-finite weights after epoch {epoch}", step=step)
        rec = EpochRecord(epoch, loss_mean(model, params, data_train), loss_mean(model, params, data_val))
        result.history.append(rec)
        if cfg.early_stop is not None:
            stop, halt = early_stop_update(stop, rec.val_loss, params, cfg.early_stop, epoch)
            if halt:
                result.halted_early = True
                break
    if cfg.early_stop is not None and stop.best_params is not None:
        result.params = stop.best_params
        result.best_epoch = stop.best_epoch
    else:
        result.params = params
    return result
