"""Synthetic dataset generators. Train and validation rows never overlap."""

from __future__ import annotations

import numpy as np

from ..ndcore import RngState, normal_array, split, uniform_array
from ..trainkit import Dataset
from .config import DatasetSpec

BLOB_SEPARATION = 4.0


def _normals(rng, shape):
    vals, rng = normal_array(rng, int(np.prod(shape)))
    return vals.reshape(shape), rng


def generate_dataset(spec: DatasetSpec, seed):
    """Returns ``(train, val)``, deterministic in ``seed``."""
    n = spec.n_train + spec.n_val
    rng_x, rng_noise, rng_teacher = split(RngState(seed), 3)
    if spec.generator == "linear_teacher":
        X, _ = _normals(rng_x, (n, spec.dim))
        w, rng_teacher = _normals(rng_teacher, (spec.dim,))
        b, _ = _normals(rng_teacher, (1,))
        noise, _ = _normals(rng_noise, (n,))
        y = X @ w + b[0] + spec.noise_sigma * noise
    elif spec.generator == "noisy_poly":
        u, _ = uniform_array(rng_x, -1.0, 1.0, n * spec.dim)
        X = u.reshape(n, spec.dim)
        noise, _ = _normals(rng_noise, (n,))
        y = np.sum(X - 2.0 * X**3 + 0.5 * X**2, axis=1) + spec.noise_sigma * noise
    else:  # gaussian_blobs
        labels = (np.arange(n) % 2).astype(np.float64)
        center = np.full(spec.dim, 0.5 * BLOB_SEPARATION / np.sqrt(spec.dim))
        noise, _ = _normals(rng_noise, (n, spec.dim))
        X = np.where(labels[:, None] > 0, center, -center) + spec.noise_sigma * noise
        y = labels
    train = Dataset(X[: spec.n_train], y[: spec.n_train])
    val = Dataset(X[spec.n_train :], y[spec.n_train :])
    return train, val
