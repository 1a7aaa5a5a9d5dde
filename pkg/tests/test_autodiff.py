import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gradlab import autodiff as ad
from gradlab.exceptions import CompositionError, ContractError, DimensionError
from gradlab.lab.checks import fd_grad, fd_hvp, kink_distance, rel_err


def sq(env):
    return env["w"] * env["w"]


def test_square_value_and_tape():
    value, tape = ad.eval_with_tape(sq, {"w": np.array(3.0)})
    assert value == 9.0
    assert tape.primitives() == ["mul"]


def test_identity_single_node_tape():
    value, tape = ad.eval_with_tape(lambda e: e["w"], {"w": np.array(5.0)})
    assert value == 5.0
    assert len(tape) == 1


def test_unbound_name():
    with pytest.raises(CompositionError, match="'b'"):
        ad.eval_with_tape(lambda e: e["w"] * e["b"], {"w": np.array(1.0)})


def test_nonscalar_output():
    with pytest.raises(ContractError):
        ad.eval_with_tape(lambda e: e["w"] * 2.0, {"w": np.ones(3)})


def test_backward_examples():
    _, tape = ad.eval_with_tape(sq, {"w": np.array(3.0)})
    assert ad.backward(tape, 1.0)["w"] == 6.0
    g = ad.grad(lambda e: e["u"] * e["v"], {"u": np.array(2.0), "v": np.array(7.0)})
    assert (g["u"], g["v"]) == (7.0, 2.0)
    assert ad.backward(tape, 0.0)["w"] == 0.0


@settings(max_examples=30, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(-3, 3))
def test_backward_linear_in_seed(alpha, w):
    f = lambda e: ad.tanh(e["w"]) * ad.exp(e["w"]) + e["w"] * e["w"]  # noqa: E731
    _, tape = ad.eval_with_tape(f, {"w": np.array(w)})
    assert ad.backward(tape, alpha)["w"] == alpha * ad.backward(tape, 1.0)["w"]


def test_grad_examples():
    g = ad.grad(lambda e: 0.5 * ad.reduce_sum(e["w"] * e["w"]), {"w": np.array([1.0, 2.0])})
    np.testing.assert_array_equal(g["w"], [1.0, 2.0])
    assert ad.grad(lambda e: ad.sigmoid(e["w"]), {"w": np.array(0.0)})["w"] == 0.25


def test_tape_topological_and_replay():
    W = np.array([[1.0, -2.0], [0.5, 3.0]])
    f = lambda e: ad.reduce_mean(ad.sigmoid(ad.matmul(e["W"], e["x"])))  # noqa: E731
    value, tape = ad.eval_with_tape(f, {"W": W}, {"x": np.array([0.3, -0.7])})
    for node in tape.nodes:
        assert all(p.index < node.index for p in node.parents)
    assert tape.replay() == value


# every primitive, wrapped into a scalar function of one or two params
PRIMS = {
    "add": lambda e: ad.reduce_sum(ad.add(e["a"], e["b"]) * e["a"]),
    "sub": lambda e: ad.reduce_sum(ad.sub(e["a"], e["b"]) * e["b"]),
    "mul": lambda e: ad.reduce_sum(ad.mul(e["a"], e["b"])),
    "div": lambda e: ad.reduce_sum(ad.div(e["a"], ad.add(ad.mul(e["b"], e["b"]), 1.0))),
    "neg": lambda e: ad.reduce_sum(ad.mul(ad.neg(e["a"]), e["b"])),
    "matmul": lambda e: ad.reduce_sum(ad.matmul(ad.reshape(e["a"], (2, 3)), ad.reshape(e["b"], (3, 2)))),
    "transpose": lambda e: ad.reduce_sum(ad.matmul(ad.transpose(ad.reshape(e["a"], (2, 3))), ad.reshape(e["b"], (2, 3)))),
    "reduce_mean": lambda e: ad.mul(ad.reduce_mean(e["a"]), ad.reduce_mean(e["b"])),
    "exp": lambda e: ad.reduce_sum(ad.exp(e["a"])),
    "log": lambda e: ad.reduce_sum(ad.log(ad.add(ad.mul(e["a"], e["a"]), 1.0))),
    "relu": lambda e: ad.reduce_sum(ad.mul(ad.relu(e["a"]), e["b"])),
    "maximum": lambda e: ad.reduce_sum(ad.mul(ad.maximum(e["a"], 0.2), e["b"])),
    "minimum": lambda e: ad.reduce_sum(ad.mul(ad.minimum(e["a"], -0.1), e["b"])),
    "sigmoid": lambda e: ad.reduce_sum(ad.sigmoid(ad.mul(e["a"], e["b"]))),
    "tanh": lambda e: ad.reduce_sum(ad.tanh(ad.mul(e["a"], e["b"]))),
}


@pytest.mark.parametrize("name", sorted(PRIMS))
def test_primitive_matches_finite_differences(name):
    f = PRIMS[name]
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    done = 0
    while done < 10:
        params = {"a": rng.normal(size=6), "b": rng.normal(size=6)}
        if kink_distance(f, params) < 1e-3:
            continue
        g = ad.grad(f, params)
        num = fd_grad(f, params, h=1e-5)
        for k in params:
            assert rel_err(g[k], num[k]).max() < 1e-6, (name, k)
        done += 1


def quad(A):
    return lambda e: 0.5 * ad.reduce_sum(e["w"] * ad.matmul(A, e["w"]))


def test_hvp_quadratic():
    A = np.diag([2.0, 4.0])
    np.testing.assert_array_equal(ad.hvp(quad(A), {"w": np.zeros(2)}, None, np.ones(2)), [2.0, 4.0])


def test_hvp_linear_is_zero():
    f = lambda e: ad.reduce_sum(e["w"] * np.array([1.0, -2.0, 3.0]))  # noqa: E731
    np.testing.assert_array_equal(ad.hvp(f, {"w": np.ones(3)}, None, np.ones(3)), np.zeros(3))


def test_hvp_shape_mismatch():
    with pytest.raises(DimensionError):
        ad.hvp(quad(np.eye(2)), {"w": np.zeros(2)}, None, np.ones(3))


def small_mlp(e):
    h = ad.tanh(ad.matmul(e["W1"], e["x"]))
    return ad.reduce_sum(ad.sigmoid(ad.matmul(e["W2"], h)))


def _mlp_params(rng):
    return {"W1": rng.normal(size=(4, 3)), "W2": rng.normal(size=(2, 4))}


def test_hvp_matches_fd_of_grad():
    rng = np.random.default_rng(0)
    for _ in range(5):
        params = _mlp_params(rng)
        inputs = {"x": rng.normal(size=3)}
        v = rng.normal(size=20)
        exact = ad.hvp(small_mlp, params, inputs, v)
        assert rel_err(exact, fd_hvp(small_mlp, params, inputs, v)).max() < 1e-5


@settings(max_examples=20, deadline=None)
@given(
    arrays(np.float64, 20, elements=st.floats(-2, 2)),
    arrays(np.float64, 20, elements=st.floats(-2, 2)),
    st.floats(-3, 3),
    st.floats(-3, 3),
)
def test_hvp_linear_and_symmetric(u, v, alpha, beta):
    params = _mlp_params(np.random.default_rng(1))
    inputs = {"x": np.array([0.5, -1.0, 0.25])}
    Hu = ad.hvp(small_mlp, params, inputs, u)
    Hv = ad.hvp(small_mlp, params, inputs, v)
    Hc = ad.hvp(small_mlp, params, inputs, alpha * u + beta * v)
    np.testing.assert_allclose(Hc, alpha * Hu + beta * Hv, atol=1e-10, rtol=0)
    assert abs(v @ Hu - u @ Hv) < 1e-10


def test_hvp_mapping_direction():
    params = {"a": np.array([1.0, 2.0]), "b": np.array(3.0)}
    f = lambda e: ad.reduce_sum(e["a"] * e["a"]) * e["b"]  # noqa: E731
    out = ad.hvp(f, params, None, {"a": np.array([1.0, 0.0]), "b": np.array(1.0)})
    np.testing.assert_array_equal(out["a"], [2 * 3.0 + 2 * 1.0, 2 * 2.0])
    assert out["b"] == 2.0


def test_scalar_broadcast_only():
    with pytest.raises(DimensionError):
        ad.eval_with_tape(lambda e: ad.reduce_sum(ad.add(e["a"], np.ones(3))), {"a": np.ones(2)})


def test_ravel_unravel_round_trip():
    like = {"W": np.zeros((2, 3)), "b": np.zeros(2), "s": np.array(0.0)}
    vec = np.arange(9.0)
    back = ad.unravel(vec, like)
    np.testing.assert_array_equal(ad.ravel(back), vec)
    with pytest.raises(DimensionError):
        ad.unravel(np.arange(8.0), like)
