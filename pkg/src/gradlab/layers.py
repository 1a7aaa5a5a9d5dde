"""Network building blocks written in autodiff primitives.

Everything here accepts either raw arrays or tape :class:`~gradlab.autodiff.Node`
objects, so the same code serves plain evaluation and differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .exceptions import DimensionError, DomainError
from .ndcore import RngState, uniform_array

ACTIVATIONS = ("sigmoid", "relu", "elu", "tanh")
OUTPUT_KINDS = ("linear", "sigmoid")


@dataclass(frozen=True)
class ModelSpec:
    """Feed-forward network layout.

    ``dropout_prob`` may be a single probability applied to every hidden
    layer or one probability per hidden layer.
    """

    layer_dims: tuple
    activation: str = "sigmoid"
    dropout_prob: float | tuple = 0.0
    output_kind: str = "linear"
    elu_alpha: float = 1.0

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2 or min(dims) < 1:
            raise DomainError(f"layer_dims needs >= 2 positive entries, got {self.layer_dims}")
        object.__setattr__(self, "layer_dims", dims)
        if self.activation not in ACTIVATIONS:
            raise DomainError(f"unknown activation {self.activation!r}")
        if self.output_kind not in OUTPUT_KINDS:
            raise DomainError(f"unknown output_kind {self.output_kind!r}")
        n_hidden = len(dims) - 2
        probs = self.dropout_prob
        if np.isscalar(probs):
            probs = (float(probs),) * n_hidden
        probs = tuple(float(p) for p in probs)
        if len(probs) != n_hidden:
            raise DomainError(f"need {n_hidden} dropout probabilities, got {len(probs)}")
        for p in probs:
            if not 0.0 <= p < 1.0:
                raise DomainError(f"dropout probability must lie in [0, 1), got {p}")
        object.__setattr__(self, "dropout_prob", probs)

    @property
    def n_layers(self):
        return len(self.layer_dims) - 1

    @property
    def has_dropout(self):
        return any(p > 0 for p in self.dropout_prob)


@dataclass(frozen=True)
class LstmCellState:
    hidden: np.ndarray
    cell: np.ndarray

    def __post_init__(self):
        if np.shape(ad.value_of(self.hidden)) != np.shape(ad.value_of(self.cell)):
            raise DimensionError(
                f"hidden {np.shape(ad.value_of(self.hidden))} and cell "
                f"{np.shape(ad.value_of(self.cell))} sizes differ"
            )

    @classmethod
    def zeros(cls, size):
        return cls(np.zeros(size), np.zeros(size))


# -- activations ----------------------------------------------------------

def sigmoid(x):
    return ad.sigmoid(x)


def relu(x):
    return ad.relu(x)


def elu(x, alpha=1.0):
    """``x`` for positive inputs, ``alpha * (exp(x) - 1)`` otherwise."""
    neg_part = ad.minimum(x, 0.0)
    return ad.add(ad.sub(x, neg_part), ad.mul(alpha, ad.sub(ad.exp(neg_part), 1.0)))


def tanh(x):
    return ad.tanh(x)


def activate(x, kind, alpha=1.0):
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "relu":
        return relu(x)
    if kind == "elu":
        return elu(x, alpha)
    if kind == "tanh":
        return tanh(x)
    raise DomainError(f"unknown activation {kind!r}")


# -- initialization and dropout -------------------------------------------

def glorot_init(fan_in, fan_out, rng: RngState):
    """Uniform normalized initialization, returns a ``fan_out x fan_in`` matrix."""
    if fan_in < 1 or fan_out < 1:
        raise DomainError(f"fans must be positive, got fan_in={fan_in}, fan_out={fan_out}")
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    vals, rng = uniform_array(rng, -bound, bound, fan_in * fan_out)
    return vals.reshape(fan_out, fan_in), rng


def dropout_forward(x, p_drop, mode, rng=None):
    """Returns ``(output, mask, rng)``; ``mask`` is None in production mode."""
    if not 0.0 <= p_drop < 1.0:
        raise DomainError(f"dropout probability must lie in [0, 1), got {p_drop}")
    if mode == "production":
        return ad.mul(x, 1.0 - p_drop), None, rng
    if mode != "train":
        raise DomainError(f"mode must be 'train' or 'production', got {mode!r}")
    shape = np.shape(ad.value_of(x))
    if p_drop == 0.0:
        return x, np.ones(shape), rng
    if rng is None:
        raise DomainError("train-mode dropout needs an rng state")
    u, rng = uniform_array(rng, 0.0, 1.0, int(np.prod(shape)))
    mask = (u.reshape(shape) >= p_drop).astype(np.float64)
    return ad.mul(x, mask), mask, rng


# -- multilayer perceptron ------------------------------------------------

def init_mlp_params(spec: ModelSpec, rng: RngState):
    params = {}
    dims = spec.layer_dims
    for layer in range(spec.n_layers):
        params[f"W{layer}"], rng = glorot_init(dims[layer], dims[layer + 1], rng)
        params[f"b{layer}"] = np.zeros(dims[layer + 1])
    return params, rng


def _affine(W, b, x):
    if np.ndim(ad.value_of(x)) == 1:
        return ad.add(ad.matmul(W, x), b)
    n = np.shape(ad.value_of(x))[0]
    h = np.shape(ad.value_of(b))[0]
    # bias broadcast over rows as ones(n,1) @ b(1,h)
    return ad.add(
        ad.matmul(x, ad.transpose(W)),
        ad.matmul(np.ones((n, 1)), ad.reshape(b, (1, h))),
    )


def mlp_forward(spec: ModelSpec, params, x, mode="production", rng=None, *, logits=False):
    """Forward pass for a single example (rank-1 ``x``) or a batch (rows of ``x``).

    Returns ``(output, rng)``. With ``logits=True`` a sigmoid output layer
    returns its pre-activation instead.
    """
    dims = spec.layer_dims
    xv = np.asarray(ad.value_of(x))
    if xv.ndim not in (1, 2) or xv.shape[-1] != dims[0]:
        raise DimensionError(f"input shape {xv.shape} does not match input dim {dims[0]}")
    h = x
    for layer in range(spec.n_layers):
        h = _affine(params[f"W{layer}"], params[f"b{layer}"], h)
        if layer < spec.n_layers - 1:
            h = activate(h, spec.activation, spec.elu_alpha)
            p = spec.dropout_prob[layer]
            if p > 0:
                h, _, rng = dropout_forward(h, p, mode, rng)
    if spec.output_kind == "sigmoid" and not logits:
        h = ad.sigmoid(h)
    return h, rng


# -- LSTM -----------------------------------------------------------------

_GATES = ("i", "f", "o", "g")


def init_lstm_params(input_size, hidden_size, rng: RngState):
    params = {}
    for gate in _GATES:
        params[f"W_{gate}"], rng = glorot_init(input_size + hidden_size, hidden_size, rng)
        params[f"b_{gate}"] = np.zeros(hidden_size)
    return params, rng


def lstm_cell(params, x, state: LstmCellState):
    """One step of a peephole-free LSTM cell.

    Each gate has one weight matrix acting on the concatenation ``[x; h]``.
    """
    d = np.shape(ad.value_of(x))[0]
    hsz = np.shape(ad.value_of(state.hidden))[0]
    for gate in _GATES:
        wshape = np.shape(ad.value_of(params[f"W_{gate}"]))
        if wshape != (hsz, d + hsz):
            raise DimensionError(
                f"W_{gate} has shape {wshape}, expected {(hsz, d + hsz)} for input {d}, hidden {hsz}"
            )
    # concatenation via constant selector matrices
    sel_x = np.vstack([np.eye(d), np.zeros((hsz, d))])
    sel_h = np.vstack([np.zeros((d, hsz)), np.eye(hsz)])
    xh = ad.add(ad.matmul(sel_x, x), ad.matmul(sel_h, state.hidden))

    def pre(gate):
        return ad.add(ad.matmul(params[f"W_{gate}"], xh), params[f"b_{gate}"])

    i = ad.sigmoid(pre("i"))
    f = ad.sigmoid(pre("f"))
    o = ad.sigmoid(pre("o"))
    g = ad.tanh(pre("g"))
    cell = ad.add(ad.mul(f, state.cell), ad.mul(i, g))
    hidden = ad.mul(o, ad.tanh(cell))
    return LstmCellState(hidden, cell)
