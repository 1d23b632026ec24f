import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from dcenet import autodiff as ad
from dcenet.autodiff import Tensor, ShapeError

from conftest import central_diff


def test_matmul_identity_and_selection():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(ad.matmul(np.eye(2), m).data, m)
    assert np.array_equal(ad.matmul([[1.0, 0.0]], [[5.0], [7.0]]).data, [[5.0]])


def test_matmul_gradient_against_finite_differences():
    b = np.array([[3.0], [4.0]])
    expected = central_diff(lambda a: float(np.sum(a @ b)), np.array([[1.0, 2.0]]))
    a = Tensor([[1.0, 2.0]], requires_grad=True)
    ad.backward(ad.tsum(a @ b))
    np.testing.assert_allclose(a.grad, expected, atol=1e-8)
    np.testing.assert_allclose(a.grad, [[3.0, 4.0]], atol=1e-8)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_softmax_cases():
    np.testing.assert_allclose(ad.softmax([0.0, 0.0, 0.0]).data, [1 / 3] * 3)
    out = ad.softmax([1000.0, 0.0]).data
    assert np.all(np.isfinite(out))
    assert out[0] == 1.0 and out[1] < 1e-300


def test_softmax_gradient_relative():
    w = np.array([0.3, -1.2, 2.0])

    def f(x):
        e = np.exp(x - x.max())
        return float(np.dot(e / e.sum(), w))

    x0 = np.array([1.0, 2.0, 3.0])
    expected = central_diff(f, x0)
    x = Tensor(x0, requires_grad=True)
    ad.backward(ad.tsum(ad.softmax(x) * w))
    assert np.max(np.abs(x.grad - expected) / np.maximum(1e-12, np.abs(expected))) < 1e-6


@settings(max_examples=200, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=6),
                  elements=st.floats(-700, 700)))
def test_softmax_slices_sum_to_one(x):
    s = ad.softmax(x).data.sum(axis=-1)
    assert np.all(np.abs(s - 1.0) <= 1e-9)


def test_backward_simple_cases():
    w = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    ad.backward(ad.tsum(w))
    assert np.array_equal(w.grad, [1.0, 1.0, 1.0])
    w.zero_grad()
    root = ad.tsum(w * w)
    ad.backward(root)
    assert np.array_equal(w.grad, [2.0, 4.0, 6.0])
    assert root.grad is not None and root.grad.item() == 1.0


def test_backward_rejects_non_scalar():
    w = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError):
        ad.backward(w * 2.0)


def test_gradients_accumulate_until_zeroed():
    w = Tensor([1.0, -1.0], requires_grad=True)
    ad.backward(ad.tsum(w * 3.0))
    ad.backward(ad.tsum(w * 3.0))
    assert np.array_equal(w.grad, [6.0, 6.0])


def test_backward_is_bitwise_deterministic(rng):
    a = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    b = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    root = ad.tsum(ad.tanh(a @ b) * ad.softmax(a @ b))
    ad.backward(root)
    g1 = (a.grad.copy(), b.grad.copy())
    a.zero_grad(), b.zero_grad()
    ad.backward(root)
    assert np.array_equal(a.grad, g1[0]) and np.array_equal(b.grad, g1[1])


def test_tape_is_topological(rng):
    a = Tensor(rng.normal(size=3), requires_grad=True)
    b = ad.exp(a)
    c = b * a + b
    root = ad.tsum(c)
    tape = ad.Tape(root)
    position = {id(t): i for i, t in enumerate(tape)}
    for t in tape:
        if t.op_trace is not None:
            for parent in t.op_trace.inputs:
                if parent.requires_grad:
                    assert position[id(parent)] < position[id(t)]


def test_grad_check_of_sum_is_exact(rng):
    x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    assert ad.grad_check(lambda: ad.tsum(x), [x]) < 1e-9


def test_grad_check_softmax_cross_entropy(rng):
    x = Tensor(rng.normal(size=5), requires_grad=True)
    target = np.eye(5)[2]
    err = ad.grad_check(lambda: -ad.tsum(ad.log(ad.softmax(x)) * target), [x])
    assert err < 1e-5


def test_grad_check_rejects_nonfinite_and_bad_step():
    x = Tensor([-1.0], requires_grad=True)
    with pytest.raises(FloatingPointError):
        with np.errstate(invalid="ignore"):
            ad.grad_check(lambda: ad.tsum(ad.log(x)), [x])
    with pytest.raises(ValueError):
        ad.grad_check(lambda: ad.tsum(x), [x], h=1e-2)


@pytest.mark.parametrize(
    "op",
    [
        lambda x: ad.tsum(ad.tanh(x) * ad.sigmoid(x)),
        lambda x: ad.tsum(ad.exp(x * 0.5) / (1.0 + ad.square(x))),
        lambda x: ad.tsum(ad.cumsum(x, axis=1) * x),
        lambda x: ad.tsum(ad.concat([x[:, :2], ad.square(x)], axis=1)),
        lambda x: ad.tsum(ad.stack([x, x * 2.0], axis=1) * ad.pad_axis(x, 0, 1, 0)[:3, None, :]),
        lambda x: ad.tsum(ad.reshape(ad.transpose(x), (2, 6)) @ ad.reshape(x, (6, 2))),
        lambda x: ad.tsum(ad.relu(x - 0.1) * x) + ad.mean(x, axis=0).sum(),
        lambda x: ad.tsum(ad.log(ad.softmax(x, axis=0)) * np.arange(12).reshape(3, 4)),
    ],
)
def test_registered_ops_pass_grad_check(op, rng):
    x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    assert ad.grad_check(lambda: op(x), [x], h=1e-6) < 1e-4


def test_batched_matmul_gradients(rng):
    a = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    c = Tensor(rng.normal(size=(2, 5, 3)), requires_grad=True)
    assert ad.grad_check(lambda: ad.tsum(ad.tanh((a @ b) @ c)), [a, b, c]) < 1e-4


def test_no_grad_records_nothing():
    w = Tensor([1.0], requires_grad=True)
    with ad.no_grad():
        out = w * 2.0
    assert out.op_trace is None and not out.requires_grad
