import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentplan import diffmath as dm
from fd import numeric_grad, rel_error

RNG = np.random.default_rng(1234)


def analytic(fn, *arrays):
    leaves = [dm.Tensor(a, requires_grad=True) for a in arrays]
    dm.backward(fn(*leaves))
    return [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value) for leaf in leaves]


def check_op(fn, *arrays, tol=1e-4):
    grads = analytic(fn, *arrays)
    for i, a in enumerate(arrays):
        def f(x, i=i):
            args = [dm.Tensor(b) for b in arrays]
            args[i] = dm.Tensor(x)
            return fn(*args).item()
        assert rel_error(grads[i], numeric_grad(f, a)) < tol


def weighted(t, w):
    return dm.sum(t * w)


# -- forward values -----------------------------------------------------------

def test_tanh_zero():
    assert dm.tanh(dm.Tensor(0.0)).item() == 0.0


def test_affine_identity():
    out = dm.affine(dm.Tensor([[1.0, 2.0]]), dm.Tensor(np.eye(2)), dm.Tensor([0.0, 0.0]))
    np.testing.assert_array_equal(out.value, [[1.0, 2.0]])


def test_softplus_zero():
    assert dm.softplus(dm.Tensor(0.0)).item() == pytest.approx(math.log(2.0), abs=1e-12)
    assert dm.softplus(dm.Tensor(0.0)).item() == pytest.approx(0.693147, abs=1e-6)


def test_elu_matches_definition():
    x = np.linspace(-3, 3, 13)
    expected = np.where(x > 0, x, np.exp(x) - 1)
    np.testing.assert_allclose(dm.elu(dm.Tensor(x)).value, expected, atol=1e-15)


@pytest.mark.parametrize("op,args", [
    (dm.add, [(3, 2), (3, 2)]),
    (dm.mul, [(3, 2), (2,)]),
    (dm.affine, [(2, 3), (3, 4), (4,)]),
])
def test_shape_mismatch_reports_both_shapes(op, args):
    bad = [dm.Tensor(np.zeros(s)) for s in args]
    bad[-1] = dm.Tensor(np.zeros(args[-1][:-1] + (args[-1][-1] + 1,)))
    with pytest.raises(ValueError, match=r"\(.*\).*\(.*\)"):
        op(*bad)


# -- distributions --------------------------------------------------------------

def test_gaussian_log_prob_values():
    assert dm.gaussian_log_prob([0.0], [0.0], [1.0]).item() == pytest.approx(-0.918939, abs=1e-6)
    assert dm.gaussian_log_prob([1.0], [0.0], [1.0]).item() == pytest.approx(-1.418939, abs=1e-6)
    sigma = 2.7
    val = dm.gaussian_log_prob([0.3], [0.3], [sigma]).item()
    assert val == pytest.approx(-math.log(sigma) - 0.5 * math.log(2 * math.pi), abs=1e-12)


def test_gaussian_log_prob_rejects_nonpositive_std():
    with pytest.raises(ValueError):
        dm.gaussian_log_prob([0.0], [0.0], [0.0])


def test_kl_values():
    assert dm.diag_gaussian_kl([0.2], [1.3], [0.2], [1.3]).item() == 0.0
    assert dm.diag_gaussian_kl([1.0], [1.0], [0.0], [1.0]).item() == pytest.approx(0.5, abs=1e-12)
    assert dm.diag_gaussian_kl([0.0], [2.0], [0.0], [1.0]).item() == pytest.approx(
        math.log(0.5) + 2.0 - 0.5, abs=1e-12)
    assert dm.diag_gaussian_kl([0.0], [2.0], [0.0], [1.0]).item() == pytest.approx(0.806853, abs=1e-6)
    with pytest.raises(ValueError):
        dm.diag_gaussian_kl([0.0], [-1.0], [0.0], [1.0])


finite = st.floats(-3, 3, allow_nan=False)
positive = st.floats(0.05, 3, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(finite, positive, finite, positive), min_size=1, max_size=4))
def test_kl_nonnegative(rows):
    mp, sp, mq, sq = (np.array(c) for c in zip(*rows))
    kl = dm.diag_gaussian_kl(mp, sp, mq, sq).item()
    assert kl >= -1e-12
    if np.allclose(mp, mq, rtol=0, atol=0) and np.allclose(sp, sq, rtol=0, atol=0):
        assert kl == pytest.approx(0.0, abs=1e-12)


def test_kl_positive_when_distributions_differ():
    assert dm.diag_gaussian_kl([0.0], [1.0], [1e-3], [1.0]).item() > 0


def test_reparam_sample():
    mean, std = np.array([0.5, -1.0]), np.array([2.0, 0.1])
    np.testing.assert_array_equal(dm.reparam_sample(mean, std, np.zeros(2)).value, mean)
    eps = RNG.standard_normal(2)
    np.testing.assert_array_equal(dm.reparam_sample(np.zeros(2), np.ones(2), eps).value, eps)
    grads = analytic(lambda m, s: dm.sum(dm.reparam_sample(m, s, eps)), mean, std)
    np.testing.assert_allclose(grads[0], np.ones(2))
    num = numeric_grad(lambda s: dm.sum(dm.reparam_sample(mean, s, eps)).item(), std)
    np.testing.assert_allclose(grads[1], num, rtol=1e-6)
    np.testing.assert_allclose(grads[1], eps, rtol=1e-12)


# -- gradients against finite differences --------------------------------------

UNARY = {
    "tanh": dm.tanh, "sigmoid": dm.sigmoid, "elu": dm.elu, "softplus": dm.softplus,
    "exp": dm.exp, "sin": dm.sin, "cos": dm.cos, "square": dm.square, "neg": dm.neg,
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name):
    x = RNG.standard_normal((3, 4))
    w = RNG.standard_normal((3, 4))
    check_op(lambda a: weighted(UNARY[name](a), w), x)


def test_log_gradient():
    x = RNG.uniform(0.5, 2.0, (3, 4))
    w = RNG.standard_normal((3, 4))
    check_op(lambda a: weighted(dm.log(a), w), x)


@pytest.mark.parametrize("op", [dm.add, dm.sub, dm.mul, dm.div])
@pytest.mark.parametrize("shape_b", [(3, 4), (4,), (1, 4), (3, 1)])
def test_binary_gradients_with_broadcast(op, shape_b):
    a = RNG.uniform(0.5, 2.0, (3, 4))
    b = RNG.uniform(0.5, 2.0, shape_b)
    w = RNG.standard_normal((3, 4))
    check_op(lambda x, y: weighted(op(x, y), w), a, b)


def test_affine_and_matmul_gradients():
    x, W, b = RNG.standard_normal((5, 3)), RNG.standard_normal((3, 4)), RNG.standard_normal(4)
    w = RNG.standard_normal((5, 4))
    check_op(lambda x_, W_, b_: weighted(dm.affine(x_, W_, b_), w), x, W, b)
    check_op(lambda x_, W_: weighted(dm.matmul(x_, W_), w), x, W)


def test_reductions_and_shape_ops():
    x = RNG.standard_normal((3, 4))
    check_op(lambda a: weighted(dm.sum(a, axis=0), np.arange(4.0)), x)
    check_op(lambda a: weighted(dm.mean(a, axis=1), np.arange(3.0)), x)
    check_op(lambda a: dm.mean(dm.square(a)), x)
    w26, w34 = RNG.standard_normal((2, 6)), RNG.standard_normal((3, 4))
    check_op(lambda a: weighted(dm.reshape(a, (2, 6)), w26), x)
    check_op(lambda a: weighted(a[:, 1:3], np.ones((3, 2)) * 2.0), x)
    check_op(lambda a: weighted(dm.clip(a, -0.5, 0.5), w34), x)


def test_concat_and_stack_gradients():
    a, b = RNG.standard_normal((2, 3)), RNG.standard_normal((2, 5))
    w = RNG.standard_normal((2, 8))
    check_op(lambda x, y: weighted(dm.concat([x, y], axis=-1), w), a, b)
    c, w223 = RNG.standard_normal((2, 3)), RNG.standard_normal((2, 2, 3))
    check_op(lambda x, y: weighted(dm.stack([x, y]), w223), a, c)


def test_distribution_gradients():
    x, m, s = RNG.standard_normal((2, 3)), RNG.standard_normal((2, 3)), RNG.uniform(0.5, 2, (2, 3))
    check_op(lambda x_, m_, s_: dm.sum(dm.gaussian_log_prob(x_, m_, s_)), x, m, s)
    m2, s2 = RNG.standard_normal((2, 3)), RNG.uniform(0.5, 2, (2, 3))
    check_op(lambda a, b, c, d: dm.sum(dm.diag_gaussian_kl(a, b, c, d)), m, s, m2, s2)


def test_stop_gradient_blocks():
    x = RNG.standard_normal(3)
    grads = analytic(lambda a: dm.sum(dm.stop_gradient(a) * a), x)
    np.testing.assert_allclose(grads[0], x)


# -- backward semantics ---------------------------------------------------------

def test_backward_sum_Wx_matches_outer_product():
    x = RNG.standard_normal((1, 3))
    W = RNG.standard_normal((3, 2))
    Wt = dm.Tensor(W, requires_grad=True)
    dm.backward(dm.sum(dm.matmul(dm.Tensor(x), Wt)))
    np.testing.assert_allclose(Wt.grad, np.outer(x[0], np.ones(2)))
    num = numeric_grad(lambda w: float(np.sum(x @ w)), W)
    assert rel_error(Wt.grad, num) < 1e-4


def test_backward_trivial_cases():
    p = dm.Tensor(2.5, requires_grad=True)
    q = dm.Tensor(1.0, requires_grad=True)
    dm.backward(p * 1.0)
    assert p.grad == pytest.approx(1.0)
    assert q.grad is None
    ps = dm.ParameterSet()
    ps.add("unused", [1.0, 2.0])
    dm.backward(dm.sum(dm.Tensor([1.0]) * p))
    np.testing.assert_array_equal(ps.grads()["unused"], [0.0, 0.0])


def test_backward_rejects_non_scalar():
    with pytest.raises(ValueError):
        dm.backward(dm.Tensor(np.ones(3), requires_grad=True) * 2.0)


def test_reused_node_accumulates_like_duplicated_subgraph():
    x = RNG.standard_normal(4)
    w = RNG.standard_normal(4)

    def shared(a):
        h = dm.tanh(a * 1.7)
        return dm.sum(h * h * w) + dm.sum(h)

    def duplicated(a):
        h1, h2, h3 = dm.tanh(a * 1.7), dm.tanh(a * 1.7), dm.tanh(a * 1.7)
        return dm.sum(h1 * h2 * w) + dm.sum(h3)

    g_shared = analytic(shared, x)[0]
    g_dup = analytic(duplicated, x)[0]
    np.testing.assert_allclose(g_shared, g_dup, rtol=1e-12)


def test_no_grad_records_nothing():
    a = dm.Tensor([1.0], requires_grad=True)
    with dm.no_grad():
        out = dm.tanh(a) * 3.0
    assert not out.requires_grad and out.parents == ()


def test_frozen_parameter_set_receives_no_gradient():
    ps = dm.ParameterSet()
    w = ps.add("w", [1.0, 2.0])
    x = dm.Tensor([3.0, 4.0], requires_grad=True)
    with ps.frozen():
        dm.backward(dm.sum(w * x))
    assert w.grad is None and w.requires_grad
    np.testing.assert_array_equal(x.grad, [1.0, 2.0])


# -- adam ------------------------------------------------------------------------

def test_adam_zero_gradient_leaves_parameters():
    ps = dm.ParameterSet()
    ps.add("w", [1.0, -2.0])
    dm.adam_step(ps, {"w": np.zeros(2)}, lr=0.1)
    np.testing.assert_array_equal(ps["w"].value, [1.0, -2.0])
    assert ps.step == 1


def test_adam_first_step_is_sign_times_lr():
    ps = dm.ParameterSet()
    ps.add("w", [1.0, -2.0, 0.5])
    g = np.array([3.0, -0.01, 250.0])
    dm.adam_step(ps, {"w": g}, lr=1e-3)
    np.testing.assert_allclose(ps["w"].value - [1.0, -2.0, 0.5], -np.sign(g) * 1e-3, rtol=1e-5)


def test_adam_second_moment_positive_and_counter():
    ps = dm.ParameterSet()
    ps.add("w", [1.0])
    for _ in range(2):
        dm.adam_step(ps, {"w": np.array([0.5])}, lr=1e-3)
    assert ps.v["w"][0] > 0
    assert ps.step == 2


def test_adam_skips_non_finite(caplog):
    ps = dm.ParameterSet()
    ps.add("w", [1.0])
    assert not dm.adam_step(ps, {"w": np.array([np.nan])}, lr=1e-3)
    assert ps["w"].value[0] == 1.0 and ps.step == 0
    assert "non-finite" in caplog.text


def test_frozen_parameter_gets_no_gradient_after_unfreezing():
    ps = dm.ParameterSet()
    w = ps.add("w", np.ones(3))
    x = dm.Tensor(np.arange(3.0), requires_grad=True)
    with ps.frozen():
        y = dm.sum(w * x)
    dm.backward(y)
    assert w.grad is None
    np.testing.assert_array_equal(x.grad, np.ones(3))
