"""Independent numerical oracles used by experiments and tests."""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad


def rel_err(a, b):
    """Scale-aware relative error ``|a-b| / max(1, |a|, |b|)``, elementwise."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))


def fd_grad(f, params, inputs=None, h=1e-5):
    """Central finite differences of the scalar computation ``f`` for every parameter entry."""
    out = {}
    for name, value in params.items():
        value = np.asarray(value, dtype=np.float64)
        g = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            shifted = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
            shifted[name][idx] = value[idx] + h
            fp, _ = ad.eval_with_tape(f, shifted, inputs)
            shifted[name][idx] = value[idx] - h
            fm, _ = ad.eval_with_tape(f, shifted, inputs)
            g[idx] = (fp - fm) / (2 * h)
        out[name] = g
    return out


def fd_hvp(f, params, inputs, v, h=1e-5):
    """``(grad(w + h v) - grad(w - h v)) / 2h`` on flat vectors."""
    w = ad.ravel(params)
    v = np.asarray(v, dtype=np.float64)
    gp = ad.ravel(ad.grad(f, ad.unravel(w + h * v, params), inputs))
    gm = ad.ravel(ad.grad(f, ad.unravel(w - h * v, params), inputs))
    return (gp - gm) / (2 * h)


def kink_distance(f, params, inputs=None):
    """Smallest distance of any ReLU / max / min input to its switching point."""
    _, tape = ad.eval_with_tape(f, params, inputs)
    best = np.inf
    for node in tape.nodes:
        if node.op == "relu":
            thr = 0.0
        elif node.op in ("maximum", "minimum"):
            thr = node.attrs["c"]
        else:
            continue
        x = node.parents[0].value
        if x.size:
            best = min(best, float(np.min(np.abs(x - thr))))
    return best


def check_gradient(f, params, inputs=None, h=1e-5):
    """Max scale-aware relative error per parameter between reverse mode and finite differences."""
    analytic = ad.grad(f, params, inputs)
    numeric = fd_grad(f, params, inputs, h)
    return {k: float(np.max(rel_err(analytic[k], numeric[k]))) if np.size(numeric[k]) else 0.0 for k in params}
