"""Experiment implementations behind ``gradlab run``.

Every experiment is a pure function of its :class:`ExperimentConfig` and
returns a :class:`Report`: fixed-header CSV rows, named pass/fail checks,
and a one-line summary. No timings or other run-dependent values go into
the rows, so identical configs give identical CSV bytes.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import autodiff as ad
from ..exceptions import ConfigError
from ..layers import ModelSpec, init_mlp_params
from ..ndcore import RngState, choice, normal_array, split, uniform_array
from ..revlearn import (
    ResidualTrace,
    hypergrad_full_tape,
    reconstruct,
    reverse_replay_hypergrad,
    train_forward_record,
)
from ..stonewton import (
    NeumannConfig,
    estimate_hinv_v,
    matrix_oracle,
    exact_hvp_oracle,
    scale_oracle,
    stochastic_hvp_oracle,
    stochastic_newton_step,
)
from ..trainkit import (
    Dataset,
    MLPModel,
    QuadraticModel,
    TrainConfig,
    batch_indices,
    batch_objective,
    grad_mean,
    grad_of_mean,
    loss_mean,
    seed_streams,
    sgd_step,
    train,
)
from .checks import check_gradient, kink_distance
from .config import DatasetSpec, ExperimentConfig
from .datasets import generate_dataset


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class Report:
    kind: str
    header: tuple
    rows: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def check(self, name, passed, detail=""):
        self.checks.append(Check(name, bool(passed), detail))

    @property
    def summary(self):
        status = "PASS" if self.passed else "FAIL"
        failing = [c.name for c in self.checks if not c.passed]
        tail = f" failing: {', '.join(failing)}" if failing else ""
        return f"{self.kind}: {status} ({sum(c.passed for c in self.checks)}/{len(self.checks)} checks){tail}"

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.header)
        for row in self.rows:
            writer.writerow([_fmt(v) for v in row])
        return buf.getvalue()

    def write_csv(self, path):
        Path(path).write_text(self.to_csv(), encoding="utf-8")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def _opt(cfg, key, default):
    return cfg.options.get(key, default)


def _model(cfg):
    dims = cfg.model.spec.layer_dims
    if cfg.dataset is not None:
        if dims[0] != cfg.dataset.dim:
            raise ConfigError("model.layer_dims", f"input width {dims[0]} != dataset.dim {cfg.dataset.dim}")
        if dims[-1] != 1:
            raise ConfigError("model.layer_dims", f"dataset generators emit one target column, got output width {dims[-1]}")
    try:
        return MLPModel(cfg.model.spec, cfg.model.loss)
    except ValueError as exc:
        raise ConfigError("model.loss", str(exc)) from None


def _init(model, seed):
    init_rng, _, _ = seed_streams(seed)
    params, _ = model.init_params(init_rng)
    return params


def _max_abs_diff(a, b):
    return max(float(np.max(np.abs(np.asarray(a[k]) - np.asarray(b[k])))) if np.size(a[k]) else 0.0 for k in a)


# -- gradcheck ------------------------------------------------------------

def gradcheck(cfg: ExperimentConfig):
    """Reverse mode vs central differences at random parameter points."""
    tol = _opt(cfg, "tolerance", 1e-6)
    h = _opt(cfg, "h", 1e-5)
    n_points = _opt(cfg, "points", 10)
    batch_n = _opt(cfg, "batch", 5)
    train_set, _ = generate_dataset(cfg.dataset, cfg.seed)
    batch = train_set.subset(range(min(batch_n, len(train_set))))
    model = _model(cfg)
    f = batch_objective(model, batch)
    report = Report("gradcheck", ("point", "param", "max_rel_err", "passed"))
    rng = RngState(cfg.seed, 1 << 48)
    worst, done, skipped = 0.0, 0, 0
    while done < n_points:
        if skipped > 50 * n_points:
            report.check("enough_kink_free_points", False, f"only {done} usable points")
            break
        params, rng = init_mlp_params(model.spec, rng)
        for name in params:
            noise, rng = normal_array(rng, params[name].size, std=0.5)
            params[name] = params[name] + noise.reshape(params[name].shape)
        if kink_distance(f, params) < 1e-3:
            skipped += 1
            continue
        errs = check_gradient(f, params, h=h)
        for name, e in errs.items():
            report.rows.append((done, name, e, e < tol))
            worst = max(worst, e)
        done += 1
    report.metrics.update(max_rel_err=worst, points=done, skipped=skipped)
    report.check("gradient_matches_fd", worst < tol, f"max rel err {worst:.3e} (tol {tol:g})")
    return report


# -- commute --------------------------------------------------------------

def commute(cfg: ExperimentConfig):
    """Gradient of the batch mean vs mean of per-example gradients; block unbiasedness."""
    sizes = _opt(cfg, "batch_sizes", [1, 7, 64])
    block = _opt(cfg, "block_size", 7)
    tol, tol_blocks = _opt(cfg, "tolerance", 1e-12), _opt(cfg, "block_tolerance", 1e-10)
    train_set, _ = generate_dataset(cfg.dataset, cfg.seed)
    model = _model(cfg)
    params = _init(model, cfg.seed)
    report = Report("commute", ("case", "size", "max_abs_diff"))
    for b in sizes:
        if b > len(train_set):
            raise ConfigError("options.batch_sizes", f"batch size {b} exceeds n_train={len(train_set)}")
        batch = train_set.subset(range(b))
        diff = _max_abs_diff(grad_of_mean(model, params, batch), grad_mean(model, params, batch))
        report.rows.append(("grad_of_mean_vs_mean_of_grads", b, diff))
        report.check(f"commute_b{b}", diff < tol, f"{diff:.3e}")
    full = grad_of_mean(model, params, train_set)
    idx, _ = batch_indices(len(train_set), block, RngState(cfg.seed, 1 << 50))
    acc = None
    for blk in idx:
        g = grad_mean(model, params, train_set.subset(blk))
        term = {k: len(blk) * v for k, v in g.items()}
        acc = term if acc is None else {k: acc[k] + term[k] for k in acc}
    weighted = {k: v / len(train_set) for k, v in acc.items()}
    diff = _max_abs_diff(weighted, full)
    report.rows.append(("block_weighted_vs_full", block, diff))
    report.check("block_unbiasedness", diff < tol_blocks, f"{diff:.3e}")
    return report


# -- neumann_mc -----------------------------------------------------------

def random_spd(dim, rng, lo=0.1, hi=0.9):
    """Random symmetric matrix with eigenvalues drawn uniformly in ``(lo, hi)``."""
    g, rng = normal_array(rng, dim * dim)
    q, r = np.linalg.qr(g.reshape(dim, dim))
    q = q * np.sign(np.diag(r))
    eig, rng = uniform_array(rng, lo, hi, dim)
    H = (q * eig) @ q.T
    return 0.5 * (H + H.T), rng


def _mc_mean(oracle, v, cfg, samples, rng):
    single = replace(cfg, repeats=1)
    total = np.zeros_like(v)
    total_sq = np.zeros_like(v)
    for _ in range(samples):
        est, rng = estimate_hinv_v(oracle, v, single, rng)
        total += est
        total_sq += est * est
    mean = total / samples
    var = np.maximum(total_sq / samples - mean * mean, 0.0) * samples / (samples - 1)
    return mean, np.sqrt(var / samples), rng


def _record_mc(report, case, mean, se, truth):
    z = np.where(se > 0, np.abs(mean - truth) / np.where(se > 0, se, 1.0), np.where(mean == truth, 0.0, np.inf))
    for j in range(len(truth)):
        report.rows.append((case, j, mean[j], truth[j], se[j], z[j]))
    report.check(f"unbiased_{case}", bool(np.all(z <= 3.0)), f"max |z| = {float(np.max(z)):.3f}")
    return float(np.max(z))


def logistic_problem(seed, n=200, dim=3):
    """Logistic regression data and a fixed parameter point for Hessian experiments."""
    rng_x, rng_w = split(RngState(seed, 1 << 52), 2)
    x, _ = normal_array(rng_x, n * dim)
    X = x.reshape(n, dim)
    w, _ = normal_array(rng_w, dim + 1, std=0.5)
    labels = ((X @ w[:dim] + w[dim]) > 0).astype(np.float64)
    # flip a few labels so the problem is not separable
    labels[::7] = 1.0 - labels[::7]
    model = MLPModel(ModelSpec((dim, 1), output_kind="sigmoid"), "bce")
    params = {"W0": 0.5 * w[:dim].reshape(1, dim), "b0": np.array([0.5 * w[dim]])}
    return model, params, Dataset(X, labels)


def neumann_mc(cfg: ExperimentConfig):
    """Monte-Carlo unbiasedness of the randomly truncated Neumann estimator."""
    samples = _opt(cfg, "samples", 100_000)
    dims = _opt(cfg, "dims", [2, 2, 5, 5, 10])
    report = Report("neumann_mc", ("case", "component", "mc_mean", "truth", "std_err", "abs_z"))
    rng = RngState(cfg.seed, 1 << 54)
    worst = 0.0
    H = np.diag([0.5, 0.5])
    v = np.array([1.0, 0.0])
    mean, se, rng = _mc_mean(matrix_oracle(H), v, cfg.neumann, samples, rng)
    worst = max(worst, _record_mc(report, "diag_half", mean, se, np.array([2.0, 0.0])))
    for k, dim in enumerate(dims):
        H, rng = random_spd(dim, rng)
        v, rng = normal_array(rng, dim)
        truth = np.linalg.solve(H, v)
        mean, se, rng = _mc_mean(matrix_oracle(H), v, cfg.neumann, samples, rng)
        worst = max(worst, _record_mc(report, f"spd{k}_d{dim}", mean, se, truth))
    if _opt(cfg, "stochastic", True):
        model, params, data = logistic_problem(cfg.seed, _opt(cfg, "logistic_n", 200), _opt(cfg, "logistic_dim", 3))
        oracle = stochastic_hvp_oracle(model, params, data, _opt(cfg, "hvp_batch_size", 20))
        scaled, c = scale_oracle(oracle, cfg.neumann)
        exact = exact_hvp_oracle(model, params, data)
        Hfull = np.column_stack([exact(e)[0] for e in np.eye(exact.dim)])
        Hs = c * (0.5 * (Hfull + Hfull.T) + cfg.neumann.damping * np.eye(exact.dim))
        v, rng = normal_array(rng, exact.dim)
        truth = np.linalg.solve(Hs, v)
        mean, se, rng = _mc_mean(scaled, v, cfg.neumann, _opt(cfg, "stochastic_samples", samples), rng)
        worst = max(worst, _record_mc(report, "logistic_stochastic", mean, se, truth))
    report.metrics["max_abs_z"] = worst
    return report


# -- revlearn_equiv -------------------------------------------------------

def _one_step_quadratic():
    model = QuadraticModel([[1.0]], w0=[1.0])
    data = Dataset(np.zeros((1, 1)), np.zeros((1, 1)))
    cfg = TrainConfig(eta=0.1, batch_size=1, max_epochs=1, seed=0)
    return model, data, cfg, {"w": np.array([1.0])}, lambda env: model.objective(env["w"])


def _verify_reconstruction(model, w0, wT, trace, data):
    """Walk the reconstruction; checksums are verified inside :func:`reconstruct`."""
    steps = 0
    last = None
    for _, _, w in reconstruct(model, wT, trace, data):
        steps += 1
        last = w
    first_ok = trace.steps == 0 or np.array_equal(last, ad.ravel(w0))
    return steps == trace.steps and first_ok


def revlearn_case(report, case, model, w0, data, tcfg, val_fn, fd_h=None, trace_path=None):
    wT, trace = train_forward_record(model, w0, data, tcfg)
    if trace_path is not None:
        trace.save(trace_path)
        trace = ResidualTrace.load(trace_path)
    replay = reverse_replay_hypergrad(model, wT, trace, val_fn, data)
    full = hypergrad_full_tape(model, w0, data, tcfg, val_fn)
    d_eta_diff = abs(replay.d_eta - full.d_eta)
    d_w0_diff = _max_abs_diff(replay.d_w0, full.d_w0)
    exact = _verify_reconstruction(model, w0, wT, trace, data)
    rows = [
        ("steps", trace.steps),
        ("d_eta_replay", replay.d_eta),
        ("d_eta_full_tape", full.d_eta),
        ("d_eta_abs_diff", d_eta_diff),
        ("d_w0_max_abs_diff", d_w0_diff),
        ("stored_bytes", trace.stored_bytes),
        ("raw_trajectory_bytes", trace.raw_trajectory_bytes),
        ("compression_ratio", trace.compression_ratio),
        ("reconstruction_exact", exact),
    ]
    report.check(f"{case}_d_eta_equiv", d_eta_diff <= 1e-12, f"{d_eta_diff:.3e}")
    report.check(f"{case}_d_w0_equiv", d_w0_diff <= 1e-12, f"{d_w0_diff:.3e}")
    report.check(f"{case}_bit_exact", exact)
    report.check(f"{case}_storage", trace.stored_bytes < trace.raw_trajectory_bytes,
                 f"{trace.stored_bytes} < {trace.raw_trajectory_bytes}")
    if fd_h is not None:
        def val_at(eta):
            w, _ = train_forward_record(model, w0, data, replace(tcfg, eta=eta))
            value, _ = ad.eval_with_tape(val_fn, w)
            return float(value)

        fd = (val_at(tcfg.eta + fd_h) - val_at(tcfg.eta - fd_h)) / (2 * fd_h)
        rel = abs(replay.d_eta - fd) / max(abs(fd), 1e-300)
        rows += [("d_eta_finite_diff", fd), ("d_eta_fd_rel_err", rel)]
        report.check(f"{case}_d_eta_fd", rel < 1e-4, f"rel err {rel:.3e}")
    for metric, value in rows:
        report.rows.append((case, metric, value))
    return replay, full, trace


def revlearn_equiv(cfg: ExperimentConfig):
    """Replay hypergradients vs the full-tape reference."""
    report = Report("revlearn_equiv", ("case", "metric", "value"))
    model, data, tcfg, w0, val_fn = _one_step_quadratic()
    replay, _, _ = revlearn_case(report, "quadratic_1step", model, w0, data, tcfg, val_fn)
    report.check("quadratic_analytic_d_eta", abs(replay.d_eta - (-0.9)) < 1e-12, f"{replay.d_eta!r}")
    report.check("quadratic_analytic_d_w0", abs(float(replay.d_w0["w"][0]) - 0.81) < 1e-12,
                 f"{float(replay.d_w0['w'][0])!r}")
    train_set, val_set = generate_dataset(cfg.dataset, cfg.seed)
    model = _model(cfg)
    w0 = _init(model, cfg.train.seed)
    tcfg = replace(cfg.train, early_stop=None)
    _, _, trace = revlearn_case(
        report, "mlp", model, w0, train_set, tcfg, batch_objective(model, val_set),
        fd_h=_opt(cfg, "fd_h", 1e-5), trace_path=_opt(cfg, "trace_path", None),
    )
    report.metrics.update(compression_ratio=trace.compression_ratio, steps=trace.steps)
    return report


# -- hyperopt -------------------------------------------------------------

def hyperopt_demo(cfg: ExperimentConfig):
    """Gradient descent on the learning rate using replay hypergradients.

    Inner problem: ``0.5 (w - 1)^2`` from ``w0 = 0`` for ``T`` full-batch
    steps; validation loss ``0.5 (w_T - target)^2``. Then
    ``w_T = 1 - (1 - eta)^T`` and the optimum is
    ``eta* = 1 - (1 - target)^(1/T)``.
    """
    outer = _opt(cfg, "outer_steps", 10)
    beta = _opt(cfg, "beta", 0.005)
    target = _opt(cfg, "target", 0.5)
    floor = _opt(cfg, "eta_floor", 1e-6)
    monotone_steps = _opt(cfg, "monotone_steps", 5)
    T = cfg.train.max_epochs
    model = QuadraticModel([[1.0]], center=[1.0], w0=[0.0])
    data = Dataset(np.zeros((1, 1)), np.zeros((1, 1)))
    w0 = {"w": np.array([0.0])}

    def val_fn(env):
        d = ad.sub(env["w"], target)
        return ad.mul(0.5, ad.reduce_sum(ad.mul(d, d)))

    eta_star = 1.0 - (1.0 - target) ** (1.0 / T)
    report = Report("hyperopt", ("outer_step", "eta", "val_loss", "d_eta_replay", "d_eta_full_tape", "abs_diff"))
    eta = cfg.train.eta
    dists, max_diff = [], 0.0
    for k in range(outer + 1):
        tcfg = TrainConfig(eta=eta, batch_size=1, max_epochs=T, seed=cfg.seed)
        wT, trace = train_forward_record(model, w0, data, tcfg)
        val, _ = ad.eval_with_tape(val_fn, wT)
        replay = reverse_replay_hypergrad(model, wT, trace, val_fn, data)
        full = hypergrad_full_tape(model, w0, data, tcfg, val_fn)
        diff = abs(replay.d_eta - full.d_eta)
        max_diff = max(max_diff, diff)
        report.rows.append((k, eta, float(val), replay.d_eta, full.d_eta, diff))
        dists.append(abs(eta - eta_star))
        if k < outer:
            eta = max(eta - beta * replay.d_eta, floor)
    early = dists[: monotone_steps + 1]
    report.metrics.update(eta_star=eta_star, final_eta=eta)
    report.check("replay_equals_full_tape", max_diff <= 1e-12, f"{max_diff:.3e}")
    if beta == 0:
        report.check("eta_constant", all(r[1] == cfg.train.eta for r in report.rows))
    else:
        report.check("moves_toward_optimum", all(b <= a for a, b in zip(early, early[1:])) and early[-1] < early[0],
                     f"|eta - eta*| {early[0]:.4g} -> {early[-1]:.4g}, eta* = {eta_star:.6g}")
    return report


# -- depth diagnostic -----------------------------------------------------

def depth_gain_diagnostic(depth, seed, *, width=16, n_seeds=20, batch=16):
    """Per-layer weight-gradient norms at initialization for sigmoid vs ReLU stacks.

    ``ratio = ||dE/dW_first|| / ||dE/dW_last||``; values far below one mean
    the gradient washed out on its way back to the first layer.
    """
    report = Report("depth_diag", ("activation", "seed", "layer", "grad_norm"))
    ratios = {}
    for act in ("sigmoid", "relu"):
        spec = ModelSpec((width,) * depth + (width,), act)
        model = MLPModel(spec)
        ratios[act] = []
        for s in range(n_seeds):
            rng = RngState(seed, (s + 1) << 40)
            params, rng = init_mlp_params(spec, rng)
            x, rng = normal_array(rng, batch * width)
            y, rng = normal_array(rng, batch * width)
            data = Dataset(x.reshape(batch, width), y.reshape(batch, width))
            g = grad_of_mean(model, params, data)
            norms = [float(np.linalg.norm(g[f"W{layer}"])) for layer in range(depth)]
            for layer, nrm in enumerate(norms):
                report.rows.append((act, s, layer + 1, nrm))
            ratios[act].append(norms[0] / norms[-1] if norms[-1] > 0 else math.inf)
    med = {act: float(np.median(r)) for act, r in ratios.items()}
    report.metrics.update(median_ratio_sigmoid=med["sigmoid"], median_ratio_relu=med["relu"],
                          median_decay_sigmoid=1 / med["sigmoid"], median_decay_relu=1 / med["relu"])
    if depth > 1:
        report.check("sigmoid_washes_out_more", med["sigmoid"] < med["relu"],
                     f"median first/last ratio sigmoid {med['sigmoid']:.3e} vs relu {med['relu']:.3e}")
    else:
        report.check("single_layer_ratio_one", all(abs(r - 1.0) < 1e-12 for v in ratios.values() for r in v))
    return report


def depth_diag(cfg: ExperimentConfig):
    return depth_gain_diagnostic(
        _opt(cfg, "depth", 20), cfg.seed,
        width=_opt(cfg, "width", 16), n_seeds=_opt(cfg, "n_seeds", 20), batch=_opt(cfg, "batch", 16),
    )


# -- early stopping -------------------------------------------------------

def earlystop_demo(cfg: ExperimentConfig):
    """Overfit a small noisy sample with a large network; early stopping should halt the run."""
    if cfg.train.early_stop is None:
        raise ConfigError("train.early_stop", "required for earlystop_demo")
    train_set, val_set = generate_dataset(cfg.dataset, cfg.seed)
    model = _model(cfg)
    result = train(model, train_set, val_set, cfg.train)
    report = Report("earlystop_demo", ("epoch", "train_loss", "val_loss"))
    for rec in result.history:
        report.rows.append((rec.epoch, rec.train_loss, rec.val_loss))
    best = min(r.val_loss for r in result.history)
    final = result.history[-1].val_loss
    report.metrics.update(epochs_run=len(result.history), best_epoch=result.best_epoch, best_val=best, final_val=final)
    report.check("halted_before_max_epochs", result.halted_early and len(result.history) < cfg.train.max_epochs,
                 f"{len(result.history)} of {cfg.train.max_epochs} epochs")
    report.check("best_val_le_final_val", best <= final, f"{best:.6g} <= {final:.6g}")
    returned = loss_mean(model, result.params, val_set)
    report.check("returns_best_snapshot", returned == best, f"{returned!r}")
    return report


# -- newton vs sgd --------------------------------------------------------

def _full_grad_norm(model, params, data):
    return float(np.linalg.norm(ad.ravel(grad_of_mean(model, params, data))))


def newton_vs_sgd(cfg: ExperimentConfig):
    """Iterations to reach a small full gradient: stochastic Newton vs tuned SGD."""
    tol = _opt(cfg, "tol", 1e-3)
    etas = _opt(cfg, "etas", [0.01, 0.1, 1.0])
    max_sgd = _opt(cfg, "max_sgd_iters", 5000)
    max_newton = _opt(cfg, "max_newton_iters", 100)
    alpha = _opt(cfg, "alpha", 1.0)
    b = cfg.train.batch_size
    hvp_b = _opt(cfg, "hvp_batch_size", b)
    train_set, _ = generate_dataset(cfg.dataset, cfg.seed)
    dim = train_set.inputs.shape[1]
    model = MLPModel(ModelSpec((dim, 1), output_kind="sigmoid"), "bce")
    p0 = {"W0": np.zeros((1, dim)), "b0": np.zeros(1)}
    report = Report("newton_vs_sgd", ("method", "step_size", "iterations", "final_grad_norm", "reached"))

    def run(step, max_iters):
        params, rng = p0, RngState(cfg.seed, 1 << 56)
        for it in range(1, max_iters + 1):
            params, rng = step(params, rng)
            gn = _full_grad_norm(model, params, train_set)
            if gn < tol:
                return it, gn, True
        return max_iters, gn, False

    best_sgd = math.inf
    for eta in etas:
        def sgd(params, rng, eta=eta):
            idx, rng = choice(rng, len(train_set), b)
            return sgd_step(params, grad_of_mean(model, params, train_set.subset(idx)), eta), rng

        it, gn, ok = run(sgd, max_sgd)
        report.rows.append(("sgd", eta, it, gn, ok))
        if ok:
            best_sgd = min(best_sgd, it)

    def newton(params, rng):
        return stochastic_newton_step(model, params, train_set, cfg.neumann, alpha, rng,
                                      batch_size=b, hvp_batch_size=hvp_b)

    it, gn, ok = run(newton, max_newton)
    report.rows.append(("stochastic_newton", alpha, it, gn, ok))
    report.metrics.update(newton_iters=it, best_sgd_iters=best_sgd)
    report.check("newton_reaches_tol", ok, f"{gn:.3e} after {it} iterations")
    report.check("newton_fewer_iterations", ok and it < best_sgd, f"newton {it} vs best sgd {best_sgd}")
    return report


EXPERIMENTS = {
    "gradcheck": gradcheck,
    "commute": commute,
    "neumann_mc": neumann_mc,
    "revlearn_equiv": revlearn_equiv,
    "hyperopt": hyperopt_demo,
    "depth_diag": depth_diag,
    "earlystop_demo": earlystop_demo,
    "newton_vs_sgd": newton_vs_sgd,
}


def run_experiment(cfg: ExperimentConfig, kind=None):
    """Dispatch to the named experiment and write its CSV if an output path is set."""
    kind = kind or cfg.kind
    if kind not in EXPERIMENTS:
        raise ConfigError("kind", f"unknown experiment kind {kind!r}")
    report = EXPERIMENTS[kind](cfg)
    if cfg.output:
        report.write_csv(cfg.output)
    return report
