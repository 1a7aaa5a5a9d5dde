"""Unbiased Hessian-inverse-vector estimates and a stochastic Newton step.

For an operator ``H`` with spectrum in ``(0, 1)``, ``H^-1 = sum_i (I - H)^i``.
Drawing a truncation index ``i`` with probability ``p(i)`` and returning
``(I - H)^i v / p(i)`` gives an unbiased estimate of ``H^-1 v`` that costs
``i`` Hessian-vector products. Here ``p`` is geometric,
``p(i) = (1 - q) q^i``. The estimator has finite variance only when
``q > rho^2`` (``rho`` the spectral radius of ``I - H``), so ``q`` is
derived from a power-iteration estimate of the spectrum unless given.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .exceptions import DimensionError, DivergenceError, DomainError, NotPositiveDefiniteError
from .ndcore import RngState, choice, normal_array, rng_uniform
from .trainkit import Dataset, grad_of_mean, hvp_of_mean

POWER_ITERS = 50
_POWER_SEED = 0x5EED


@dataclass(frozen=True)
class NeumannConfig:
    """Estimator settings. ``q=None`` picks ``q`` from the spectral estimate."""

    q: float | None = None
    scale_margin: float = 0.25
    damping: float = 0.0
    repeats: int = 10

    def __post_init__(self):
        if self.q is not None and not 0.0 < self.q < 1.0:
            raise DomainError(f"q must lie in (0, 1), got {self.q}")
        if not self.scale_margin > 0:
            raise DomainError("scale_margin must be positive")
        if self.damping < 0:
            raise DomainError("damping must be non-negative")
        if self.repeats < 1:
            raise DomainError("repeats must be >= 1")


@dataclass(frozen=True)
class HvpOracle:
    """A (possibly stochastic) linear operator ``v -> H v``.

    ``apply(v, rng)`` returns ``(Hv, rng)``; exact oracles pass ``rng``
    through untouched. ``rho`` optionally records the spectral radius of
    ``I - H`` when it is known.
    """

    apply: Callable
    kind: str
    dim: int
    rho: float | None = None

    def __post_init__(self):
        if self.kind not in ("exact", "stochastic"):
            raise DomainError(f"oracle kind must be 'exact' or 'stochastic', got {self.kind!r}")

    def __call__(self, v, rng=None):
        return self.apply(np.asarray(v, dtype=np.float64), rng)


def choose_q(rho):
    """Geometric parameter giving finite estimator variance (needs ``q > rho^2``)."""
    r2 = rho * rho
    if r2 + 0.1 < 1.0:
        return max(0.5, r2 + 0.1)
    return 0.5 * (1.0 + r2)


def matrix_oracle(H):
    """Exact oracle for an explicit symmetric matrix."""
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise DimensionError(f"need a square matrix, got shape {H.shape}")
    eig = np.linalg.eigvalsh(0.5 * (H + H.T))
    rho = float(np.max(np.abs(1.0 - eig)))
    return HvpOracle(lambda v, rng: (H @ v, rng), "exact", H.shape[0], rho)


def exact_hvp_oracle(model, params, data: Dataset):
    """Full-data Hessian of the mean loss, applied via autodiff."""
    like = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    dim = ad.ravel(like).size

    def apply(v, rng):
        return ad.ravel(hvp_of_mean(model, like, data, ad.unravel(v, like))), rng

    return HvpOracle(apply, "exact", dim)


def stochastic_hvp_oracle(model, params, data: Dataset, batch_size):
    """Each application draws a fresh mini-batch (without replacement) from ``rng``."""
    n = len(data)
    if not 1 <= batch_size <= n:
        raise DomainError(f"batch_size must lie in [1, {n}], got {batch_size}")
    like = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    dim = ad.ravel(like).size

    def apply(v, rng):
        if rng is None:
            raise DomainError("stochastic oracle needs an rng state")
        idx, rng = choice(rng, n, batch_size)
        hv = hvp_of_mean(model, like, data.subset(idx), ad.unravel(v, like))
        return ad.ravel(hv), rng

    return HvpOracle(apply, "stochastic" if batch_size < n else "exact", dim)


def sample_truncation(q, rng: RngState):
    """Draw ``i ~ (1-q) q^i``; returns ``(i, p(i), rng)``."""
    if not 0.0 < q < 1.0:
        raise DomainError(f"q must lie in (0, 1), got {q}")
    u, rng = rng_uniform(rng)
    i = int(math.floor(math.log1p(-u) / math.log(q)))  # log(1-u), 1-u in (0, 1]
    return i, (1.0 - q) * q**i, rng


def _power_iteration(op, dim, rng):
    v, rng = normal_array(rng, dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(POWER_ITERS):
        w, rng = op(v, rng)
        lam = float(v @ w)
        nrm = np.linalg.norm(w)
        if nrm == 0.0 or not np.isfinite(nrm):
            return lam if nrm == 0.0 else math.nan, rng
        v = w / nrm
    w, rng = op(v, rng)
    return float(v @ w), rng


def spectral_bounds(oracle: HvpOracle, damping=0.0):
    """Power-iteration estimates of the largest and smallest eigenvalue of ``H + damping*I``.

    The smallest comes from power iteration on the shifted operator
    ``lam_max*I - (H + damping*I)``. Fixed start vector seed.
    """
    rng = RngState(_POWER_SEED)

    def damped(v, r):
        hv, r = oracle(v, r)
        return hv + damping * v, r

    lam_max, rng = _power_iteration(damped, oracle.dim, rng)
    if not lam_max > 0:
        return lam_max, lam_max

    def shifted(v, r):
        hv, r = damped(v, r)
        return lam_max * v - hv, r

    mu, _ = _power_iteration(shifted, oracle.dim, rng)
    return lam_max, lam_max - max(mu, 0.0)


def scale_oracle(oracle: HvpOracle, cfg: NeumannConfig):
    """Rescale ``H + damping*I`` so its spectrum lies in ``(0, 1)``.

    Returns ``(scaled_oracle, c)``; recover ``H^-1 v`` as ``c * scaled^-1 v``.
    """
    lam_max, lam_min = spectral_bounds(oracle, cfg.damping)
    if not lam_max > 0:
        raise NotPositiveDefiniteError(
            f"estimated largest eigenvalue {lam_max:.6g} <= 0; increase damping"
        )
    if not lam_min > 0:
        raise NotPositiveDefiniteError(
            f"estimated smallest eigenvalue {lam_min:.6g} <= 0; increase damping"
        )
    c = 1.0 / (lam_max * (1.0 + cfg.scale_margin))
    rho = 1.0 - c * lam_min
    damping = cfg.damping

    def apply(v, rng):
        hv, rng = oracle(v, rng)
        return c * (hv + damping * v), rng

    return HvpOracle(apply, oracle.kind, oracle.dim, rho), c


def resolve_q(oracle: HvpOracle, cfg: NeumannConfig):
    if cfg.q is None:
        return choose_q(oracle.rho) if oracle.rho is not None else 0.5
    if oracle.rho is not None and cfg.q <= oracle.rho**2:
        raise DomainError(
            f"q={cfg.q} gives infinite estimator variance: need q > rho^2 = {oracle.rho**2:.6g}"
        )
    return cfg.q


def estimate_hinv_v(oracle: HvpOracle, v, cfg: NeumannConfig, rng: RngState):
    """Average of ``cfg.repeats`` independent randomly truncated Neumann estimates.

    Returns ``(estimate, rng)``.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (oracle.dim,):
        raise DomainError(f"v has shape {v.shape}, oracle dimension is {oracle.dim}")
    q = resolve_q(oracle, cfg)
    total = np.zeros_like(v)
    for _ in range(cfg.repeats):
        i, prob, rng = sample_truncation(q, rng)
        u = v
        for _ in range(i):
            hu, rng = oracle(u, rng)
            u = u - hu
        if not np.all(np.isfinite(u)):
            raise DivergenceError(
                f"Neumann product diverged after {i} terms; rescale the oracle (larger scale_margin or damping)"
            )
        total = total + u / prob
    return total / cfg.repeats, rng


def newton_direction(oracle: HvpOracle, g, cfg: NeumannConfig, rng: RngState):
    """Estimate of ``(H + damping*I)^-1 g``; returns ``(direction, rng)``."""
    scaled, c = scale_oracle(oracle, cfg)
    d, rng = estimate_hinv_v(scaled, g, cfg, rng)
    return c * d, rng


def stochastic_newton_step(model, params, data: Dataset, cfg: NeumannConfig, alpha, rng: RngState,
                           batch_size=None, hvp_batch_size=None):
    """One step ``w <- w - alpha * H^-1 g`` with stochastic gradient and HVPs.

    ``batch_size`` sizes the gradient mini-batch, ``hvp_batch_size`` the
    mini-batch of every Hessian-vector product; both default to the full
    dataset. Returns ``(new_params, rng)``.
    """
    n = len(data)
    batch_size = n if batch_size is None else batch_size
    hvp_batch_size = n if hvp_batch_size is None else hvp_batch_size
    like = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    idx, rng = choice(rng, n, batch_size)
    g = ad.ravel(grad_of_mean(model, like, data.subset(idx)))
    if not np.any(g):
        return like, rng
    oracle = stochastic_hvp_oracle(model, like, data, hvp_batch_size)
    d, rng = newton_direction(oracle, g, cfg, rng)
    w = ad.ravel(like) - alpha * d
    return ad.unravel(w, like), rng


def truncated_series(H, v, k):
    """Deterministic partial sum ``sum_{i<=k} (I - H)^i v``."""
    H = np.asarray(H, dtype=np.float64)
    u = np.asarray(v, dtype=np.float64)
    total = u.copy()
    for _ in range(k):
        u = u - H @ u
        total = total + u
    return total


__all__ = [
    "NeumannConfig",
    "HvpOracle",
    "choose_q",
    "matrix_oracle",
    "exact_hvp_oracle",
    "stochastic_hvp_oracle",
    "sample_truncation",
    "spectral_bounds",
    "scale_oracle",
    "resolve_q",
    "estimate_hinv_v",
    "newton_direction",
    "stochastic_newton_step",
    "truncated_series",
]
