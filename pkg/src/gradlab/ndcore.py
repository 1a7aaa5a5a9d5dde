"""Dense float64 tensors, a counter-based RNG, and the shared numeric kernels.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 and rank 0, 1
or 2; :func:`as_tensor` is the gatekeeper that enforces this.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError, DomainError

__all__ = [
    "RngState",
    "as_tensor",
    "matmul",
    "reduce_mean",
    "rng_uniform",
    "uniform_array",
    "normal_array",
    "integers",
    "permutation",
    "split",
    "choice",
]

_WORDS_PER_BLOCK = 4
_STREAM_STRIDE = 1 << 40


def as_tensor(x, *, allow_nonfinite=False):
    """Convert ``x`` to a float64 array of rank <= 2."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim > 2:
        raise DimensionError(f"tensors have rank <= 2, got shape {arr.shape}")
    if not allow_nonfinite and not np.all(np.isfinite(arr)):
        raise DomainError("tensor contains non-finite values")
    return arr


def matmul(a, b):
    """Matrix-matrix or matrix-vector product of float64 tensors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim not in (1, 2):
        raise DimensionError(
            f"matmul expects rank-2 @ rank-1|2, got {a.shape} and {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} and {b.shape}")
    return a @ b


def reduce_mean(a):
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0:
        raise DomainError("reduce_mean of an empty tensor")
    total = 0.0
    for v in a.ravel().tolist():
        total += v
    return np.float64(total / a.size)


@dataclass(frozen=True)
class RngState:
    """Position in a counter-based Philox stream.

    ``counter`` counts 64-bit words already consumed. The same
    ``(seed, counter)`` pair always yields the same words.
    """

    seed: int
    counter: int = 0

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise DomainError(f"seed must fit in 64 unsigned bits, got {self.seed}")
        if self.counter < 0:
            raise DomainError("counter must be non-negative")


def _raw_words(state: RngState, n: int):
    block, offset = divmod(state.counter, _WORDS_PER_BLOCK)
    bitgen = np.random.Philox(key=state.seed, counter=[block, 0, 0, 0])
    words = bitgen.random_raw(offset + n)[offset:]
    return words, RngState(state.seed, state.counter + n)


def _unit_doubles(words):
    # top 53 bits -> [0, 1)
    return (words >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def uniform_array(state: RngState, lo, hi, n):
    """``n`` i.i.d. draws on ``[lo, hi)``; returns ``(values, next_state)``."""
    if not lo < hi:
        raise DomainError(f"uniform requires lo < hi, got [{lo}, {hi})")
    words, state = _raw_words(state, int(n))
    vals = lo + (hi - lo) * _unit_doubles(words)
    # rounding can land exactly on hi
    vals = np.where(vals >= hi, np.nextafter(hi, lo), vals)
    return vals, state


def rng_uniform(state: RngState, lo=0.0, hi=1.0):
    vals, state = uniform_array(state, lo, hi, 1)
    return float(vals[0]), state


def normal_array(state: RngState, n, mean=0.0, std=1.0):
    """Standard normal draws via Box-Muller."""
    m = (int(n) + 1) // 2
    u, state = uniform_array(state, 0.0, 1.0, 2 * m)
    u1 = 1.0 - u[:m]  # (0, 1]
    u2 = u[m:]
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
    return mean + std * z[: int(n)], state


def integers(state: RngState, high, n):
    """Uniform integers on ``[0, high)`` (multiply-shift on the 53-bit fraction)."""
    u, state = uniform_array(state, 0.0, 1.0, n)
    return np.minimum((u * high).astype(np.int64), high - 1), state


def permutation(state: RngState, n):
    """Fisher-Yates shuffle of ``range(n)``."""
    perm = np.arange(n)
    if n < 2:
        return perm, state
    u, state = uniform_array(state, 0.0, 1.0, n - 1)
    for k, i in enumerate(range(n - 1, 0, -1)):
        j = min(int(u[k] * (i + 1)), i)
        perm[i], perm[j] = perm[j], perm[i]
    return perm, state


def split(state: RngState, n_streams):
    """Disjoint child streams by partitioning the counter space."""
    base = state.counter
    return [RngState(state.seed, base + (k + 1) * _STREAM_STRIDE) for k in range(n_streams)]


def choice(state: RngState, n, k):
    """``k`` distinct indices from ``range(n)`` (partial Fisher-Yates), sorted."""
    if not 0 <= k <= n:
        raise DomainError(f"cannot draw {k} distinct items from {n}")
    if k == n:
        return np.arange(n), state
    pool = np.arange(n)
    u, state = uniform_array(state, 0.0, 1.0, k)
    for i in range(k):
        j = i + min(int(u[i] * (n - i)), n - i - 1)
        pool[i], pool[j] = pool[j], pool[i]
    return np.sort(pool[:k]), state
