"""Hypergradients through an SGD run by running the updates backwards.

The forward pass keeps only the final weights plus, per step, the small
correction needed to turn the backwards prediction
``w(t+1) + eta * grad E(x_t; w(t+1))`` into the exact ``w(t)``. The
correction is stored as the integer distance between the two float64 bit
patterns (in the monotone "ordered integer" encoding), so reconstruction is
bit-exact rather than approximate. Small corrections have many leading
zero bytes, which :func:`residual_encode` drops.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .exceptions import DivergenceError, DomainError, TraceCorruptionError
from .trainkit import Dataset, TrainConfig, batch_schedule, grad_mean, hvp_of_mean

MAGIC = b"GLRT"
VERSION = 1
_HEADER = struct.Struct("<4sHQQdQQI")  # magic, version, T, |w|, eta, seed, n_data, batch_size
_BLOCK = struct.Struct("<II")  # residual length, crc32 of w(t)
_LOW63 = np.int64(0x7FFF_FFFF_FFFF_FFFF)


# -- lossless residual coding ---------------------------------------------

def _ordered(x):
    bits = np.ascontiguousarray(x, dtype=np.float64).view(np.int64)
    return bits ^ ((bits >> np.int64(63)) & _LOW63)


def _from_ordered(k):
    k = np.asarray(k, dtype=np.int64)
    return (k ^ ((k >> np.int64(63)) & _LOW63)).view(np.float64)


def ulp_residual(w, w_hat):
    """Integer offsets ``d`` with ``apply_residual(w_hat, d)`` bit-identical to ``w``."""
    return _ordered(w) - _ordered(w_hat)  # wraps mod 2**64, undone in apply_residual


def apply_residual(w_hat, delta):
    return _from_ordered(_ordered(w_hat) + np.asarray(delta, dtype=np.int64))


def residual_encode(delta):
    """Zigzag each int64 offset, drop its leading zero bytes, prefix the byte count."""
    d = np.ascontiguousarray(delta, dtype=np.int64).ravel()
    z = ((d << np.int64(1)) ^ (d >> np.int64(63))).view(np.uint64)
    be = z.astype(">u8").view(np.uint8).reshape(-1, 8)
    nbytes = 8 - np.argmax(be != 0, axis=1)
    nbytes[z == 0] = 0
    rows = np.concatenate([nbytes.astype(np.uint8)[:, None], be], axis=1)
    keep = np.concatenate([np.ones((len(d), 1), bool), np.arange(8)[None, :] >= (8 - nbytes)[:, None]], axis=1)
    return rows[keep].tobytes()


def residual_decode(data, shape):
    size = int(np.prod(shape)) if shape else 1
    buf = memoryview(data)
    z = np.zeros(size, dtype=np.uint64)
    pos = 0
    for i in range(size):
        k = buf[pos]
        if k > 8:
            raise TraceCorruptionError(f"invalid residual length byte {k} at element {i}")
        z[i] = int.from_bytes(buf[pos + 1 : pos + 1 + k], "big")
        pos += 1 + k
    if pos != len(buf):
        raise TraceCorruptionError(f"residual block has {len(buf) - pos} trailing bytes")
    zs = z.view(np.int64)
    d = (z >> np.uint64(1)).view(np.int64) ^ -(zs & np.int64(1))
    return d.reshape(shape)


def checksum(w):
    return zlib.crc32(np.ascontiguousarray(w, dtype="<f8").tobytes())


# -- trace ----------------------------------------------------------------

@dataclass
class ResidualTrace:
    eta: float
    seed: int
    n_params: int
    n_data: int
    batch_size: int
    residuals: list = field(default_factory=list)
    checksums: list = field(default_factory=list)
    final_checksum: int = 0
    max_abs_residual: list = field(default_factory=list)  # diagnostics, not serialized
    max_abs_step: list = field(default_factory=list)

    @property
    def steps(self):
        return len(self.residuals)

    def schedule(self):
        per_epoch = math.ceil(self.n_data / self.batch_size)
        epochs = math.ceil(self.steps / per_epoch) if self.steps else 0
        return batch_schedule(self.n_data, self.batch_size, epochs, self.seed)[: self.steps]

    @property
    def stored_bytes(self):
        """Bytes of encoded residuals."""
        return sum(len(r) for r in self.residuals)

    @property
    def raw_trajectory_bytes(self):
        """Bytes needed to keep ``w(0) ... w(T-1)`` as float64."""
        return self.steps * self.n_params * 8

    @property
    def compression_ratio(self):
        raw = self.raw_trajectory_bytes
        return self.stored_bytes / raw if raw else 0.0

    def to_bytes(self):
        parts = [
            _HEADER.pack(MAGIC, VERSION, self.steps, self.n_params, self.eta, self.seed, self.n_data, self.batch_size),
            struct.pack("<I", self.final_checksum),
        ]
        for res, crc in zip(self.residuals, self.checksums):
            parts.append(_BLOCK.pack(len(res), crc))
            parts.append(res)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data):
        if len(data) < _HEADER.size + 4:
            raise TraceCorruptionError("trace file truncated in header")
        magic, version, steps, n_params, eta, seed, n_data, batch_size = _HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise TraceCorruptionError(f"bad magic {magic!r}")
        if version != VERSION:
            raise TraceCorruptionError(f"unsupported trace version {version}")
        pos = _HEADER.size
        (final,) = struct.unpack_from("<I", data, pos)
        pos += 4
        trace = cls(eta, seed, n_params, n_data, batch_size, final_checksum=final)
        for t in range(steps):
            if pos + _BLOCK.size > len(data):
                raise TraceCorruptionError(f"trace truncated at step {t}", step=t)
            length, crc = _BLOCK.unpack_from(data, pos)
            pos += _BLOCK.size
            if pos + length > len(data):
                raise TraceCorruptionError(f"trace truncated inside step {t}", step=t)
            trace.residuals.append(bytes(data[pos : pos + length]))
            trace.checksums.append(crc)
            pos += length
        if pos != len(data):
            raise TraceCorruptionError("trailing bytes after last step")
        return trace

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path):
        return cls.from_bytes(Path(path).read_bytes())


@dataclass
class Hypergrad:
    d_eta: float
    d_w0: dict
    stored_bytes: int = 0


# -- shared pieces --------------------------------------------------------

def _check_cfg(model, cfg: TrainConfig):
    if model.has_dropout:
        raise DomainError("reversible training needs a deterministic model (no dropout)")
    if cfg.clip_threshold is not None:
        raise DomainError("reversible training does not support gradient clipping")


def _flat_grad(model, like, w, batch):
    return ad.ravel(grad_mean(model, ad.unravel(w, like), batch))


def _flat_hvp(model, like, w, batch, v):
    return ad.ravel(hvp_of_mean(model, ad.unravel(w, like), batch, ad.unravel(v, like)))


def _schedule(data, cfg):
    return batch_schedule(len(data), cfg.batch_size, cfg.max_epochs, cfg.seed)


def _adjoint_step(model, like, w_t, batch, eta, dw, d_eta):
    g = _flat_grad(model, like, w_t, batch)
    d_eta = d_eta - float(np.dot(g, dw))
    dw = dw - eta * _flat_hvp(model, like, w_t, batch, dw)
    return dw, d_eta


def _val_grad(val_loss_fn, like, w):
    return ad.ravel(ad.grad(val_loss_fn, ad.unravel(w, like)))


# -- forward recording and reverse replay ---------------------------------

def train_forward_record(model, w0, data: Dataset, cfg: TrainConfig):
    """Plain SGD from ``w0`` that also records the reversal residuals.

    Returns ``(wT, trace)``; ``wT`` matches :func:`gradlab.trainkit.train`
    under the same config.
    """
    _check_cfg(model, cfg)
    like = {k: np.asarray(v, dtype=np.float64) for k, v in w0.items()}
    w = ad.ravel(like)
    eta = float(cfg.eta)
    trace = ResidualTrace(eta, cfg.seed, w.size, len(data), cfg.batch_size)
    for t, idx in enumerate(_schedule(data, cfg)):
        batch = data.subset(idx)
        with np.errstate(over="ignore", invalid="ignore"):
            w_next = w - eta * _flat_grad(model, like, w, batch)
        if not np.all(np.isfinite(w_next)):
            raise DivergenceError(f"non-finite weights at step {t}", step=t)
        w_hat = w_next + eta * _flat_grad(model, like, w_next, batch)
        trace.residuals.append(residual_encode(ulp_residual(w, w_hat)))
        trace.checksums.append(checksum(w))
        trace.max_abs_residual.append(float(np.max(np.abs(w - w_hat))) if w.size else 0.0)
        trace.max_abs_step.append(float(np.max(np.abs(w_next - w))) if w.size else 0.0)
        w = w_next
    trace.final_checksum = checksum(w)
    return ad.unravel(w, like), trace


def reconstruct(model, wT, trace: ResidualTrace, data: Dataset):
    """Yield ``(t, w(t))`` for ``t = T-1 ... 0`` by backwards replay."""
    like = {k: np.asarray(v, dtype=np.float64) for k, v in wT.items()}
    w = ad.ravel(like)
    if checksum(w) != trace.final_checksum:
        raise TraceCorruptionError("final weights do not match the trace checksum", step=trace.steps)
    schedule = trace.schedule()
    for t in range(trace.steps - 1, -1, -1):
        batch = data.subset(schedule[t])
        w_hat = w + trace.eta * _flat_grad(model, like, w, batch)
        w = apply_residual(w_hat, residual_decode(trace.residuals[t], w.shape))
        if checksum(w) != trace.checksums[t]:
            raise TraceCorruptionError(f"reconstructed weights fail checksum at step {t}", step=t)
        yield t, batch, w


def reverse_replay_hypergrad(model, wT, trace: ResidualTrace, val_loss_fn, data: Dataset):
    """d(validation loss)/d(eta) and d/d(w0), reconstructing weights backwards.

    ``val_loss_fn`` is an autodiff computation ``f(env) -> scalar`` over the
    model parameters.
    """
    like = {k: np.asarray(v, dtype=np.float64) for k, v in wT.items()}
    dw = _val_grad(val_loss_fn, like, ad.ravel(like))
    d_eta = 0.0
    for _, batch, w_t in reconstruct(model, wT, trace, data):
        dw, d_eta = _adjoint_step(model, like, w_t, batch, trace.eta, dw, d_eta)
    return Hypergrad(d_eta, ad.unravel(dw, like), trace.stored_bytes)


def hypergrad_full_tape(model, w0, data: Dataset, cfg: TrainConfig, val_loss_fn):
    """Reference implementation that stores every ``w(t)``."""
    _check_cfg(model, cfg)
    like = {k: np.asarray(v, dtype=np.float64) for k, v in w0.items()}
    eta = float(cfg.eta)
    w = ad.ravel(like)
    tape = []
    schedule = _schedule(data, cfg)
    for t, idx in enumerate(schedule):
        tape.append(w)
        with np.errstate(over="ignore", invalid="ignore"):
            w = w - eta * _flat_grad(model, like, w, data.subset(idx))
        if not np.all(np.isfinite(w)):
            raise DivergenceError(f"non-finite weights at step {t}", step=t)
    dw = _val_grad(val_loss_fn, like, w)
    d_eta = 0.0
    for t in range(len(schedule) - 1, -1, -1):
        dw, d_eta = _adjoint_step(model, like, tape[t], data.subset(schedule[t]), eta, dw, d_eta)
    return Hypergrad(d_eta, ad.unravel(dw, like), len(tape) * w.size * 8)
