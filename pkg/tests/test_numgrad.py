import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from pipcfr import numgrad as ng
from pipcfr.numgrad import Tensor

from conftest import central_diff, rel_err

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


def _check(fn, *shapes, rng, positive=False, tol=1e-6):
    arrs = [rng.uniform(0.5, 2.0, s) if positive else rng.normal(size=s) for s in shapes]
    ts = [Tensor(a, requires_grad=True) for a in arrs]
    out = fn(*ts)
    ng.backward(out)
    num = central_diff(lambda: fn(*[Tensor(a) for a in arrs]).item(), arrs)
    for t, g in zip(ts, num):
        assert rel_err(t.grad, g) < tol


@pytest.mark.parametrize("fn,shapes,positive", [
    (lambda a, b: (a + b).sum(), [(3, 4), (4,)], False),
    (lambda a, b: (a - b).mean(), [(3, 1), (1, 4)], False),
    (lambda a, b: (a * b).sum(), [(3, 4), (3, 4)], False),
    (lambda a, b: (a / b).sum(), [(3, 4), (3, 4)], True),
    (lambda a, b: ((a @ b) ** 2).sum(), [(3, 4), (4, 2)], False),
    (lambda a: ng.sigmoid(a).sum(), [(5,)], False),
    (lambda a: ng.softplus(a).sum(), [(5,)], False),
    (lambda a: ng.elu(a).sum(), [(5,)], False),
    (lambda a: ng.exp(a).mean(), [(2, 3)], False),
    (lambda a: ng.log(a).sum(), [(2, 3)], True),
    (lambda a: ng.sqrt(a).sum(), [(2, 3)], True),
    (lambda a: ng.concat([a, a * 2.0], axis=1).sum(), [(2, 3)], False),
    (lambda a: ng.take_rows(a, [0, 0, 2]).sum(), [(3, 2)], False),
    (lambda a: a.T.reshape(-1).mean(), [(2, 3)], False),
    (lambda a: ng.sum_(a, axis=0).mean(), [(2, 3)], False),
])
def test_op_gradients(fn, shapes, positive, rng):
    _check(fn, *shapes, rng=rng, positive=positive)


def test_relu_subgradient_at_zero_is_zero():
    x = Tensor(np.array([-1.0, 0.0, 2.0]), requires_grad=True)
    ng.backward(ng.relu(x).sum())
    np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])


def test_clamp_blocks_gradient_outside():
    x = Tensor(np.array([-5.0, 0.3, 5.0]), requires_grad=True)
    y = ng.clamp(x, 0.0, 1.0)
    ng.backward(y.sum())
    np.testing.assert_array_equal(y.data, [0.0, 0.3, 1.0])
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])


def test_sigmoid_is_stable_for_large_inputs():
    y = ng.sigmoid(Tensor(np.array([-800.0, 800.0])))
    assert np.all(np.isfinite(y.data))
    np.testing.assert_allclose(y.data, [0.0, 1.0])


def test_domain_and_shape_errors():
    with pytest.raises(ng.DomainError):
        ng.log(Tensor([0.0, 1.0]))
    with pytest.raises(ng.ShapeError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))
    with pytest.raises(ng.ShapeError):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((4,)))
    with pytest.raises(ng.ShapeError):
        ng.backward(Tensor(np.ones(3), requires_grad=True) * 2.0)


def test_gradients_accumulate_across_backward_calls():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    ng.backward((x * 3.0).sum())
    ng.backward((x * 3.0).sum())
    np.testing.assert_array_equal(x.grad, [6.0, 6.0])


def test_shared_subexpression():
    x = Tensor(np.array(2.0), requires_grad=True)
    y = x * x
    ng.backward(y * y)  # x^4
    assert x.grad == pytest.approx(32.0)


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    with ng.no_grad():
        y = (x * 2.0).sum()
    assert not y.requires_grad
    assert ng.is_grad_enabled()


@given(arrays(np.float64, (4, 3), elements=finite), arrays(np.float64, (3,), elements=finite))
@settings(max_examples=30, deadline=None)
def test_broadcast_add_grad_sums_over_batch(a, b):
    ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
    ng.backward((ta + tb).sum())
    np.testing.assert_array_equal(ta.grad, np.ones_like(a))
    np.testing.assert_array_equal(tb.grad, np.full(3, 4.0))


@given(arrays(np.float64, (6,), elements=finite))
@settings(max_examples=30, deadline=None)
def test_mean_of_square_matches_numpy(a):
    t = Tensor(a, requires_grad=True)
    out = ng.square(t).mean()
    ng.backward(out)
    assert out.item() == pytest.approx(float(np.mean(a * a)))
    np.testing.assert_allclose(t.grad, 2 * a / a.size)


# -- Adam ------------------------------------------------------------------
def test_adam_first_step_moves_by_lr_times_sign():
    p = [np.array([1.0, -1.0, 0.5])]
    g = [np.array([0.2, -3.0, 1e-3])]
    st_ = ng.AdamState(learning_rate=0.01)
    ng.adam_step(p, g, st_)
    # bias-corrected first step: m_hat / sqrt(v_hat) = sign(g)
    np.testing.assert_allclose(p[0], [0.99, -0.99, 0.49], atol=1e-6)


def test_adam_matches_reference_recursion(rng):
    p = rng.normal(size=4)
    ref = p.copy()
    st_ = ng.AdamState(learning_rate=0.05, decay_rate=0.9)
    m = np.zeros(4)
    v = np.zeros(4)
    for k in range(1, 6):
        st_.epoch = k // 2
        g = rng.normal(size=4)
        ng.adam_step([p], [g], st_)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        lr = 0.05 * 0.9 ** (k // 2)
        ref -= lr * (m / (1 - 0.9 ** k)) / (np.sqrt(v / (1 - 0.999 ** k)) + 1e-8)
        np.testing.assert_allclose(p, ref, rtol=1e-12)


def test_adam_minimizes_quadratic():
    x = Tensor(np.array([3.0, -2.0]), requires_grad=True)
    opt = ng.Adam([x], lr=0.1)
    for _ in range(500):
        opt.zero_grad()
        ng.backward(ng.square(x - 1.0).sum())
        opt.step()
    np.testing.assert_allclose(x.data, [1.0, 1.0], atol=1e-3)


def test_adam_validation():
    with pytest.raises(ValueError):
        ng.AdamState(learning_rate=0.0)
    with pytest.raises(ValueError):
        ng.AdamState(decay_rate=1.5)
    with pytest.raises(ng.ShapeError):
        ng.adam_step([np.zeros(2)], [np.zeros(3)], ng.AdamState())


def test_effective_lr_schedule():
    s = ng.AdamState(learning_rate=1e-3, decay_rate=0.95, epoch=10)
    assert s.effective_lr == 1e-3 * 0.95 ** 10
