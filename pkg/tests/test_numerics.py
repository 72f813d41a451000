import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from preferdiff import numerics as nx
from preferdiff.numerics import Tape, Tensor, backward, finite_difference_gradient, relative_error


def grad_check(fn, arrays, tol=1e-4):
    """Analytic gradients of fn(*tensors) against central differences, input by input."""
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape():
        out = fn(*leaves)
    grads = backward(out, wrt=leaves)
    for k, leaf in enumerate(leaves):
        def partial(x, k=k):
            args = [Tensor(a) for a in arrays]
            args[k] = x
            return fn(*args)

        numeric = finite_difference_gradient(partial, arrays[k], h=1e-5)
        err = relative_error(grads[leaf], numeric)
        assert err < tol, f"input {k}: relative error {err:.2e}"


# every primitive, reduced to a scalar through fixed random weights
def _cases(rng):
    A = rng.standard_normal((3, 4))
    B = rng.standard_normal((3, 4))
    M = rng.standard_normal((4, 2))
    R = rng.standard_normal((3, 4))
    R3 = rng.standard_normal(3)
    pos = rng.uniform(0.5, 2.0, (3, 4))
    w = lambda t: nx.tsum(t * Tensor(R))  # noqa: E731
    w3 = lambda t: nx.tsum(t * Tensor(R3))  # noqa: E731
    return {
        "add": (lambda a, b: w(nx.add(a, b)), [A, B]),
        "sub": (lambda a, b: w(nx.sub(a, b)), [A, B]),
        "mul": (lambda a, b: w(nx.mul(a, b)), [A, B]),
        "div": (lambda a, b: w(nx.div(a, b)), [A, pos]),
        "scale": (lambda a: w(nx.scale(a, -1.7)), [A]),
        "matmul": (lambda a, m: nx.tsum(nx.matmul(a, m) * Tensor(R[:, :2])), [A, M]),
        "concat": (lambda a, b: nx.tsum(nx.concat([a, b], axis=1) * Tensor(np.hstack([R, R]))), [A, B]),
        "mean": (lambda a: w3(nx.mean(nx.square(a), axis=1)), [A]),
        "sum": (lambda a: w3(nx.tsum(nx.square(a), axis=1)), [A]),
        "sigmoid": (lambda a: w(nx.sigmoid(a)), [A]),
        "softplus": (lambda a: w(nx.softplus(a)), [A]),
        "tanh": (lambda a: w(nx.tanh(a)), [A]),
        "square": (lambda a: w(nx.square(a)), [A]),
        "sqrt": (lambda a: w(nx.sqrt(a)), [pos]),
        "abs": (lambda a: w(nx.tabs(a)), [A]),
        "huber": (lambda a: w(nx.huber(nx.scale(a, 2.0))), [A]),
        "exp": (lambda a: w(nx.exp(a)), [A]),
        "l2norm": (lambda a: w3(nx.l2norm(a)), [A]),
        "dot": (lambda a, b: w3(nx.dot(a, b)), [A, B]),
        "cosine": (lambda a, b: w3(nx.cosine(a, b)), [A, B]),
        "softmax": (lambda a: w(nx.softmax(a)), [A]),
        "transpose": (lambda a: nx.tsum(nx.transpose(a) * Tensor(R.T)), [A]),
        "reshape": (lambda a: nx.tsum(nx.reshape(a, (4, 3)) * Tensor(R.reshape(4, 3))), [A]),
        "select": (lambda a: w3(nx.select(nx.square(a), 1, axis=1)), [A]),
        "take": (lambda a: nx.tsum(nx.take(a, [2, 0, 2]) * Tensor(R[:, :4])), [A]),
        "broadcast_add": (lambda a, b: w(nx.add(a, b)), [A, B[0]]),
    }


@pytest.mark.parametrize("kind", sorted(_cases(np.random.default_rng(0))))
def test_primitive_gradients_match_finite_differences(kind):
    for seed in range(100):
        fn, arrays = _cases(np.random.default_rng(seed))[kind]
        grad_check(fn, arrays)


def test_every_primitive_is_covered():
    covered = {k for k in _cases(np.random.default_rng(0))}
    assert set(nx.PRIMITIVES) <= covered | {"broadcast_add"}


def test_matmul_identity():
    out = nx.matmul([[1.0, 2.0], [3.0, 4.0]], [[1.0, 0.0], [0.0, 1.0]])
    assert out.data.tolist() == [[1.0, 2.0], [3.0, 4.0]]


def test_sigmoid_at_zero():
    assert nx.sigmoid(0.0).item() == 0.5


def test_cosine_self_similarity():
    u = Tensor([0.3, -2.0, 5.0])
    assert nx.cosine(u, u).item() == pytest.approx(1.0, abs=1e-15)


def test_backward_power_rule():
    x = Tensor(3.0, requires_grad=True)
    with Tape():
        y = nx.square(x)
    assert backward(y)[x].item() == 6.0


def test_backward_sigmoid_slope():
    x = Tensor(0.0, requires_grad=True)
    with Tape():
        y = nx.sigmoid(x)
    assert backward(y)[x].item() == 0.25


def test_mean_of_matrix_vector_product_against_oracle():
    rng = np.random.default_rng(7)
    W, v = rng.standard_normal((4, 4)), rng.standard_normal(4)
    grad_check(lambda W_: nx.mean(nx.matmul(W_, Tensor(v))), [W])


def test_finite_difference_quadratic():
    g = finite_difference_gradient(lambda x: nx.square(x), Tensor(3.0), h=1e-5)
    assert abs(g.item() - 6.0) < 1e-8


def test_finite_difference_of_sum_is_ones():
    x = np.random.default_rng(1).standard_normal((2, 3))
    g = finite_difference_gradient(lambda t: nx.tsum(t), x)
    np.testing.assert_allclose(g.data, np.ones((2, 3)), atol=1e-9)


def test_finite_difference_rejects_bad_step_and_nonfinite():
    with pytest.raises(ValueError):
        finite_difference_gradient(lambda t: nx.tsum(t), np.ones(2), h=0.0)
    with pytest.raises(FloatingPointError), np.errstate(invalid="ignore"):
        finite_difference_gradient(lambda t: nx.tsum(nx.sqrt(t)), np.array([-1.0, 1.0]))


def test_shape_errors_name_op_and_shapes():
    with pytest.raises(nx.ShapeError, match=r"matmul: shapes \(2, 3\) and \(2, 3\)"):
        nx.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(nx.ShapeError, match=r"add: shapes \(2, 3\) and \(4,\)"):
        nx.add(np.ones((2, 3)), np.ones(4))


def test_zero_norm_operands_rejected():
    with pytest.raises(ValueError, match="zero-norm operand"):
        nx.l2norm(np.zeros(3))
    with pytest.raises(ValueError, match="zero-norm operand"):
        nx.cosine(np.zeros(3), np.ones(3))


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape():
        y = nx.square(x)
    with pytest.raises(nx.TapeError, match="scalar"):
        backward(y)


def test_backward_twice_needs_reset():
    x = Tensor(2.0, requires_grad=True)
    with Tape() as tape:
        y = nx.square(x)
    backward(y)
    with pytest.raises(nx.TapeError, match="already"):
        backward(y)
    tape.reset()
    assert tape.records == []
    with tape:
        y = nx.mul(x, x)
    assert backward(y)[x].item() == 4.0


def test_unreachable_leaf_gets_zero_gradient():
    x = Tensor(2.0, requires_grad=True)
    unused = Tensor(np.ones(3), requires_grad=True)
    with Tape():
        y = nx.square(x)
    g = backward(y, wrt=[x, unused])
    assert g[x].item() == 4.0
    assert np.all(g[unused].data == 0.0)


def test_no_recording_outside_a_tape():
    x = Tensor(2.0, requires_grad=True)
    y = nx.square(x)
    assert y.is_leaf
    with pytest.raises(nx.TapeError):
        backward(y)


def test_tape_order_is_topological():
    x = Tensor(np.ones(2), requires_grad=True)
    with Tape() as tape:
        a = nx.square(x)
        b = nx.add(a, x)
        nx.tsum(nx.mul(a, b))
    seen = {id(x)}
    for out, inputs, _, _ in tape.records:
        assert all(id(i) in seen for i in inputs if i.requires_grad)
        seen.add(id(out))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_apply_is_deterministic(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((5, 3)), rng.standard_normal((3, 4))
    first = nx.tanh(nx.matmul(a, b)).data
    second = nx.tanh(nx.matmul(a, b)).data
    assert first.tobytes() == second.tobytes()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_gradient_is_linear_over_sums(seed):
    rng = np.random.default_rng(seed)
    W = Tensor(rng.standard_normal((3, 3)), requires_grad=True)
    v = Tensor(rng.standard_normal(3))

    def f1(W):
        return nx.tsum(nx.tanh(nx.matmul(W, v)))

    def f2(W):
        return nx.mean(nx.square(nx.matmul(W, W)))

    with Tape():
        total = nx.add(f1(W), f2(W))
    g_total = backward(total)[W].data
    parts = []
    for f in (f1, f2):
        with Tape():
            out = f(W)
        parts.append(backward(out)[W].data)
    np.testing.assert_allclose(g_total, parts[0] + parts[1], rtol=1e-12, atol=1e-14)


def test_shared_subexpression_accumulates():
    x = Tensor(2.0, requires_grad=True)
    with Tape():
        y = nx.mul(x, x) + x  # x^2 + x
    assert backward(y)[x].item() == 5.0


def test_tensor_invariants():
    t = Tensor(np.arange(6.0).reshape(2, 3))
    assert int(np.prod(t.shape)) == len(t.values)
    with pytest.raises(nx.ShapeError):
        Tensor(np.zeros((0, 3)))
