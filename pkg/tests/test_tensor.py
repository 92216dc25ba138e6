import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from clim import tensor as tn
from clim.exceptions import ContractError, DataError, DimensionError
from clim.tensor import Tensor

from oracles import check_gradients, numeric_grad, rel_error


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(tn.matmul(Tensor(np.eye(2)), a).values, a.values)


def test_matmul_hand_case():
    out = tn.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0], [6.0]]))
    np.testing.assert_array_equal(out.values, [[17.0], [39.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        tn.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_gradient_matches_finite_differences(rng):
    A = tn.parameter(rng.normal(size=(3, 3)))
    B = tn.parameter(rng.normal(size=(3, 3)))
    errs = check_gradients(lambda: tn.sum_(tn.matmul(A, B)), {"A": A, "B": B})
    assert max(errs.values()) < 1e-6


def test_batched_matmul_gradient(rng):
    A = tn.parameter(rng.normal(size=(2, 3, 4)))
    B = tn.parameter(rng.normal(size=(2, 4, 2)))
    W = tn.parameter(rng.normal(size=(2, 3)))
    errs = check_gradients(lambda: tn.sum_(tn.tanh(tn.matmul(tn.matmul(A, B), W))), {"A": A, "B": B, "W": W})
    assert max(errs.values()) < 1e-6


def test_tanh_sigmoid_fixed_points():
    z = Tensor(np.zeros((2, 3)))
    np.testing.assert_array_equal(tn.tanh(z).values, 0.0)
    np.testing.assert_array_equal(tn.sigmoid(z).values, 0.5)


@pytest.mark.parametrize("op", ["tanh", "sigmoid", "relu"])
def test_unary_gradients(rng, op):
    x = tn.parameter(rng.uniform(-2, 2, size=(4, 3)) + 0.05)
    errs = check_gradients(lambda: tn.sum_(tn.elementwise(op, x) * tn.elementwise(op, x)), {"x": x})
    assert errs["x"] < 1e-6


def test_binary_elementwise_gradients(rng):
    a = tn.parameter(rng.normal(size=(3, 2)))
    b = tn.parameter(rng.normal(size=(3, 2)))
    s = tn.parameter(np.array(0.7))
    errs = check_gradients(lambda: tn.sum_(tn.elementwise("mul", tn.elementwise("add", a, b), a) * s - b),
                           {"a": a, "b": b, "s": s})
    assert max(errs.values()) < 1e-6


def test_no_general_broadcasting():
    with pytest.raises(DimensionError):
        tn.add(Tensor(np.ones((2, 3))), Tensor(np.ones(3)))
    with pytest.raises(DimensionError):
        tn.mul(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))


def test_softmax_values():
    np.testing.assert_allclose(tn.softmax(Tensor([1.0, 2.0, 3.0])).values,
                               [0.09003057, 0.24472847, 0.66524096], atol=1e-8)
    np.testing.assert_allclose(tn.softmax(Tensor(np.full(5, 3.3))).values, 0.2, atol=1e-15)


def test_softmax_shift_invariance(rng):
    x = rng.normal(size=(4, 6))
    np.testing.assert_allclose(tn.softmax(Tensor(x + 17.5), axis=1).values,
                               tn.softmax(Tensor(x), axis=1).values, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 7)),
              elements=st.floats(-50, 50)))
def test_softmax_sums_to_one(x):
    s = tn.softmax(Tensor(x), axis=-1).values
    assert np.all(s >= 0)
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-9)


def test_masked_softmax_gradient(rng):
    x = tn.parameter(rng.normal(size=(2, 3, 4)))
    mask = np.array([[1, 1, 0, 1]], dtype=bool)
    target = rng.normal(size=(2, 3, 4))
    out = tn.softmax(x, -1, mask)
    assert np.all(out.values[..., 2] == 0)
    errs = check_gradients(lambda: tn.sum_(tn.mul_const(tn.softmax(x, -1, mask), target)), {"x": x})
    assert errs["x"] < 1e-6


def test_softmax_bad_axis():
    with pytest.raises(DimensionError):
        tn.softmax(Tensor(np.ones((2, 2))), axis=3)


def test_concat_single_and_shape():
    a = Tensor(np.ones((2, 3)))
    assert tn.concat([a], -1) is a
    assert tn.concat([a, Tensor(np.zeros((2, 2)))], -1).shape == (2, 5)
    with pytest.raises(DimensionError):
        tn.concat([a, Tensor(np.zeros((3, 2)))], -1)


def test_concat_split_round_trip(rng):
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(2, 2))
    joined = tn.concat([Tensor(a), Tensor(b)], -1)
    left, right = tn.split(joined, [3, 2], -1)
    assert np.array_equal(left.values, a) and np.array_equal(right.values, b)


def test_concat_gradient(rng):
    a = tn.parameter(rng.normal(size=(2, 3)))
    b = tn.parameter(rng.normal(size=(2, 2)))
    w = rng.normal(size=(2, 5))
    errs = check_gradients(lambda: tn.sum_(tn.tanh(tn.mul_const(tn.concat([a, b], -1), w))), {"a": a, "b": b})
    assert max(errs.values()) < 1e-6


def test_shape_ops_gradients(rng):
    x = tn.parameter(rng.normal(size=(2, 3, 4)))
    v = tn.parameter(rng.normal(size=(2, 4)))
    bias = tn.parameter(rng.normal(size=4))

    def loss():
        y = tn.transpose(tn.reshape(x, (2, 4, 3)), (0, 2, 1))
        y = tn.add_bias(y, bias)
        z = tn.stack([y[:, 0, :], y[:, 2, :]], axis=1)
        z = tn.pad_axis(z, 1, 1, 1) + tn.expand(v, 1, 4)
        pw = tn.pairwise_add(y, z)
        return tn.sum_(tn.tanh(pw)) + tn.mean(tn.sum_(z, axis=1))

    errs = check_gradients(loss, {"x": x, "v": v, "bias": bias})
    assert max(errs.values()) < 1e-6


def test_layer_norm_and_cross_entropy_gradients(rng):
    x = tn.parameter(rng.normal(size=(2, 3, 5)))
    g = tn.parameter(rng.normal(size=5))
    b = tn.parameter(rng.normal(size=5))
    targets = rng.integers(0, 5, size=(2, 3))
    weights = np.array([[1, 1, 0], [1, 0, 0]])
    errs = check_gradients(lambda: tn.cross_entropy(tn.layer_norm(x, g, b), targets, weights),
                           {"x": x, "g": g, "b": b})
    assert max(errs.values()) < 1e-6


def test_cross_entropy_uniform_and_masked():
    loss = tn.cross_entropy(Tensor(np.zeros((3, 7))), [0, 3, 6])
    assert loss.item() == pytest.approx(np.log(7), abs=1e-12)
    with pytest.raises(ContractError):
        tn.cross_entropy(Tensor(np.zeros((2, 3))), [0, 1], [0, 0])


def test_backward_linear_case():
    w = tn.parameter(np.arange(6.0).reshape(2, 3))
    tn.backward(tn.sum_(w))
    np.testing.assert_array_equal(w.grad, np.ones((2, 3)))


def test_backward_accumulates_reuse(rng):
    w = tn.parameter(rng.normal(size=3))
    a, b = rng.normal(size=3), rng.normal(size=3)
    tn.backward(tn.sum_(tn.mul_const(w, a)) + tn.sum_(tn.mul_const(w, b)))
    np.testing.assert_allclose(w.grad, a + b, atol=1e-15)


def test_gradients_accumulate_across_calls():
    w = tn.parameter(np.ones(2))
    tn.backward(tn.sum_(w))
    tn.backward(tn.sum_(w))
    np.testing.assert_array_equal(w.grad, [2.0, 2.0])


def test_backward_contract_errors():
    w = tn.parameter(np.ones(2))
    with pytest.raises(ContractError):
        tn.backward(w * 2.0)
    with pytest.raises(ContractError):
        tn.backward(tn.sum_(Tensor(np.ones(2))))


def test_backward_is_deterministic(rng):
    W = tn.parameter(rng.normal(size=(4, 4)))
    x = rng.normal(size=(3, 4))

    def run():
        W.grad = None
        h = Tensor(x)
        for _ in range(5):
            h = tn.tanh(tn.matmul(h, W))
        tn.backward(tn.sum_(h))
        return W.grad.copy()

    assert np.array_equal(run(), run())


def test_no_grad_records_nothing():
    w = tn.parameter(np.ones(2))
    with tn.no_grad():
        y = tn.sum_(w * 3.0)
    assert not y.requires_grad


def test_deep_graph_does_not_recurse(rng):
    w = tn.parameter(np.array(0.5))
    h = Tensor(np.ones(2))
    for _ in range(3000):
        h = h * w
    tn.backward(tn.sum_(h))
    assert np.isfinite(w.grad)


def test_embedding_scatter_matches_one_hot_matmul(rng):
    table = tn.parameter(rng.normal(size=(5, 3)))
    ids = np.array([[0, 3, 3], [4, 0, 1]])
    up = rng.normal(size=(2, 3, 3))
    assert np.array_equal(tn.embedding(table, [[0]]).values[0, 0], table.values[0])
    tn.backward(tn.sum_(tn.mul_const(tn.embedding(table, ids), up)))
    onehot = np.eye(5)[ids.reshape(-1)]
    np.testing.assert_allclose(table.grad, onehot.T @ up.reshape(-1, 3), atol=1e-14)


def test_embedding_out_of_range_names_position():
    with pytest.raises(DataError, match=r"id 9 at position \(0, 1\)"):
        tn.embedding(Tensor(np.zeros((4, 2))), [[1, 9]])


# adam -----------------------------------------------------------------------

def test_adam_zero_gradient_is_noop():
    p = tn.parameter(np.array([1.0, -2.0]))
    state = tn.AdamState(learning_rate=0.1)
    tn.adam_step({"p": p}, {"p": np.zeros(2)}, state)
    np.testing.assert_array_equal(p.values, [1.0, -2.0])
    assert state.step_count == 1


def test_adam_first_step_size():
    # t=1: m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
    p = tn.parameter(np.array([0.0]))
    tn.adam_step({"p": p}, {"p": np.array([1.0])}, tn.AdamState(learning_rate=0.1))
    assert p.values[0] == pytest.approx(-0.1 / (1 + 1e-8), abs=1e-12)


def test_adam_converges_on_quadratic():
    w = tn.parameter(np.array([0.0]))
    opt = tn.Adam({"w": w}, lr=0.1)
    for _ in range(200):
        opt.zero_grad()
        d = w - 3.0
        tn.backward(tn.sum_(d * d))
        opt.step()
    assert abs(w.values[0] - 3.0) < 1e-2


def test_adam_missing_gradient_is_contract_error():
    p = tn.parameter(np.ones(1))
    with pytest.raises(ContractError, match="'p'"):
        tn.adam_step({"p": p}, {"p": None}, tn.AdamState())


def test_adam_state_shapes_and_count(rng):
    p = {"a": tn.parameter(rng.normal(size=(2, 3))), "b": tn.parameter(rng.normal(size=4))}
    state = tn.AdamState()
    for _ in range(3):
        tn.adam_step(p, {k: np.ones(v.shape) for k, v in p.items()}, state)
    assert state.step_count == 3
    assert all(state.first_moment[k].shape == p[k].shape for k in p)


# checkpoint container -------------------------------------------------------

def test_checkpoint_round_trip_bit_exact(tmp_path, rng):
    arrays = {"a.b": rng.normal(size=(3, 2)), "c": np.array([np.pi, -0.0, 1e-300])}
    path = tmp_path / "m.ckpt"
    tn.save_checkpoint(path, arrays, {"note": "x"})
    back, meta = tn.load_checkpoint(path)
    assert meta == {"note": "x"}
    for k in arrays:
        assert back[k].tobytes() == arrays[k].tobytes()
    tn.save_checkpoint(tmp_path / "again.ckpt", arrays, {"note": "x"})
    assert path.read_bytes() == (tmp_path / "again.ckpt").read_bytes()


def test_checkpoint_rejects_foreign_file(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_text("hello")
    with pytest.raises(DataError):
        tn.load_checkpoint(bad)


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 3)), elements=st.floats(-3, 3)))
def test_gradient_check_property_random_inputs(x):
    # tanh(x W) with random W; float64, central differences, h=1e-5
    W = tn.parameter(np.linspace(-1, 1, x.shape[1] * 2).reshape(x.shape[1], 2))
    X = tn.parameter(x.copy())
    errs = check_gradients(lambda: tn.sum_(tn.sigmoid(tn.matmul(X, W))), {"W": W, "X": X})
    assert max(errs.values()) < 1e-4


def test_numeric_grad_oracle_itself():
    arr = np.array([1.0, 2.0])
    g = numeric_grad(lambda: float(np.sum(arr ** 3)), arr)
    assert rel_error(g, 3 * np.array([1.0, 4.0])) < 1e-9
