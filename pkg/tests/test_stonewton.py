import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradlab.exceptions import DimensionError, DivergenceError, DomainError, NotPositiveDefiniteError
from gradlab.lab.experiments import logistic_problem, random_spd
from gradlab.ndcore import RngState
from gradlab.stonewton import (
    HvpOracle,
    NeumannConfig,
    choose_q,
    estimate_hinv_v,
    exact_hvp_oracle,
    matrix_oracle,
    resolve_q,
    sample_truncation,
    scale_oracle,
    stochastic_hvp_oracle,
    stochastic_newton_step,
    truncated_series,
)
from gradlab.trainkit import QuadraticModel

ONE = NeumannConfig(repeats=1)


def test_truncation_small_q_gives_zero():
    rng = RngState(0)
    draws = []
    for _ in range(1000):
        i, p, rng = sample_truncation(1e-9, rng)
        draws.append(i)
    assert draws == [0] * 1000


@pytest.mark.parametrize("q", [0.3, 0.5, 0.9])
def test_truncation_mean_and_prob(q):
    rng = RngState(1)
    draws = []
    for _ in range(100_000):
        i, p, rng = sample_truncation(q, rng)
        assert p == (1 - q) * q**i
        draws.append(i)
    draws = np.array(draws)
    se = draws.std(ddof=1) / np.sqrt(len(draws))
    assert abs(draws.mean() - q / (1 - q)) <= 3 * se


def test_truncation_domain():
    with pytest.raises(DomainError):
        sample_truncation(1.0, RngState(0))


def test_identity_oracle_two_valued():
    q = 0.5
    oracle = matrix_oracle(np.eye(2))
    v = np.array([1.0, -3.0])
    rng = RngState(2)
    total = np.zeros(2)
    n = 20_000
    for _ in range(n):
        est, rng = estimate_hinv_v(oracle, v, NeumannConfig(q=q, repeats=1), rng)
        assert np.array_equal(est, v / (1 - q)) or np.array_equal(est, np.zeros(2))
        total += est
    # each estimate is a scaled Bernoulli(1-q): mean v, std |v| per component
    assert np.all(np.abs(total / n - v) <= 3 * np.abs(v) / np.sqrt(n))


def _mc(oracle, v, n, seed):
    rng = RngState(seed)
    draws = np.empty((n, len(v)))
    for k in range(n):
        draws[k], rng = estimate_hinv_v(oracle, v, ONE, rng)
    return draws.mean(axis=0), draws.std(axis=0, ddof=1) / np.sqrt(n)


def test_diag_half_unbiased():
    mean, se = _mc(matrix_oracle(np.diag([0.5, 0.5])), np.array([1.0, 0.0]), 100_000, 3)
    assert np.all(np.abs(mean - [2.0, 0.0]) <= np.maximum(3 * se, 1e-12))


def test_random_spd_10_unbiased():
    H, rng = random_spd(10, RngState(5))
    assert np.all((np.linalg.eigvalsh(H) > 0.1) & (np.linalg.eigvalsh(H) < 0.9))
    v = np.linspace(-1, 1, 10)
    mean, se = _mc(matrix_oracle(H), v, 100_000, 4)
    assert np.all(np.abs(mean - np.linalg.solve(H, v)) <= 3 * se)


def test_homogeneous_in_v():
    H, _ = random_spd(4, RngState(6))
    v = np.array([0.3, -1.2, 2.0, 0.7])
    cfg = NeumannConfig(repeats=3)
    a, _ = estimate_hinv_v(matrix_oracle(H), 2 * v, cfg, RngState(9))
    b, _ = estimate_hinv_v(matrix_oracle(H), v, cfg, RngState(9))
    np.testing.assert_array_equal(a, 2 * b)


def test_scale_oracle_examples():
    scaled, c = scale_oracle(matrix_oracle(np.diag([2.0, 4.0])), NeumannConfig(scale_margin=0.25))
    assert c == pytest.approx(0.2, rel=1e-9)
    spectrum = [scaled(e)[0] @ e for e in np.eye(2)]
    np.testing.assert_allclose(spectrum, [0.4, 0.8], rtol=1e-9)
    _, c = scale_oracle(matrix_oracle(np.eye(3)), NeumannConfig(scale_margin=0.25))
    assert c == pytest.approx(1 / 1.25, rel=1e-12)
    with pytest.raises(NotPositiveDefiniteError):
        scale_oracle(matrix_oracle(np.diag([1.0, -0.5])), NeumannConfig())
    with pytest.raises(NotPositiveDefiniteError):
        scale_oracle(matrix_oracle(np.diag([-3.0, 1.0])), NeumannConfig())
    scaled, _ = scale_oracle(matrix_oracle(np.diag([1.0, -0.5])), NeumannConfig(damping=1.0))
    assert 0 < scaled.rho < 1


def test_variance_guard():
    assert choose_q(0.5) == 0.5 and choose_q(0.9) == pytest.approx(0.91)
    for rho in np.linspace(0, 0.999, 50):
        assert rho**2 < choose_q(rho) < 1
    oracle = matrix_oracle(np.diag([0.2, 0.5]))  # rho = 0.8
    with pytest.raises(DomainError, match="variance"):
        resolve_q(oracle, NeumannConfig(q=0.5))
    assert resolve_q(oracle, NeumannConfig(q=0.7)) == 0.7


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
def test_divergence_error():
    oracle = HvpOracle(lambda v, r: (1e200 * v, r), "exact", 1)
    rng = RngState(0)
    with pytest.raises(DivergenceError, match="rescale"):
        for _ in range(100):
            _, rng = estimate_hinv_v(oracle, np.ones(1), NeumannConfig(q=0.9, repeats=5), rng)


def test_estimate_shape_checked():
    with pytest.raises(DomainError):
        estimate_hinv_v(matrix_oracle(np.eye(2)), np.ones(3), ONE, RngState(0))


@pytest.fixture(scope="module")
def logistic():
    return logistic_problem(11, n=60, dim=3)


def test_full_batch_oracle_is_exact(logistic):
    model, params, data = logistic
    full = stochastic_hvp_oracle(model, params, data, len(data))
    exact = exact_hvp_oracle(model, params, data)
    assert full.kind == "exact"
    v = np.array([1.0, -0.5, 0.25, 2.0])
    np.testing.assert_array_equal(full(v, RngState(0))[0], exact(v)[0])


def test_stochastic_oracle_unbiased_and_linear(logistic):
    model, params, data = logistic
    oracle = stochastic_hvp_oracle(model, params, data, 10)
    assert oracle.kind == "stochastic"
    v = np.array([1.0, -0.5, 0.25, 2.0])
    u = np.array([0.0, 1.0, -1.0, 0.5])
    target = exact_hvp_oracle(model, params, data)(v)[0]
    rng = RngState(3)
    draws = []
    for _ in range(10_000):
        before = rng
        hv, rng = oracle(v, rng)
        draws.append(hv)
        if len(draws) <= 20:
            hu, _ = oracle(u, before)
            hc, _ = oracle(2 * v - 3 * u, before)
            np.testing.assert_allclose(hc, 2 * hv - 3 * hu, atol=1e-12, rtol=0)
    draws = np.array(draws)
    se = draws.std(axis=0, ddof=1) / np.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - target) <= 3 * se)


def test_truncated_series_bound():
    H = np.diag([0.3, 0.6, 0.9])
    v = np.array([1.0, -2.0, 0.5])
    rho = 0.7
    exact = v / np.diag(H)
    for k in range(0, 40, 5):
        err = np.linalg.norm(truncated_series(H, v, k) - exact)
        closed = np.linalg.norm((1 - np.diag(H)) ** (k + 1) / np.diag(H) * v)
        assert err == pytest.approx(closed, rel=1e-9, abs=1e-15)
        assert err <= rho ** (k + 1) / (1 - rho) * np.linalg.norm(v) + 1e-15


def test_newton_zero_gradient_is_fixed_point():
    model = QuadraticModel(np.diag([1.0, 100.0]), center=[0.5, -0.5])
    from gradlab.trainkit import Dataset

    data = Dataset(np.zeros((1, 1)), np.zeros((1, 1)))
    params = {"w": np.array([0.5, -0.5])}
    new, rng = stochastic_newton_step(model, params, data, NeumannConfig(), 1.0, RngState(0))
    np.testing.assert_array_equal(new["w"], params["w"])
    assert rng == RngState(0)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 0.999))
def test_choose_q_valid(rho):
    q = choose_q(rho)
    assert 0 < q < 1 and q > rho**2


def test_config_validation():
    for kwargs in ({"q": 0.0}, {"q": 1.0}, {"repeats": 0}, {"damping": -1.0}, {"scale_margin": 0.0}):
        with pytest.raises(DomainError):
            NeumannConfig(**kwargs)
    with pytest.raises(DimensionError):
        matrix_oracle(np.ones((2, 3)))
