"""Gradient and value checks for the reverse-mode tape.

Every differentiable op is compared against central finite differences
through a randomly weighted scalar readout, so the full Jacobian is
exercised, not just the diagonal.
"""

import numpy as np
import numpy.testing as npt

import trolldet.autodiff as ad

FD_EPS = 1e-6
FD_TOL = 1e-6
RNG = np.random.default_rng(42)


def fd_grad(f, x, eps=FD_EPS):
    """Central finite differences of scalar f at array x."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_g = g.reshape(-1)
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + eps
        hi = f(x)
        flat_x[i] = orig - eps
        lo = f(x)
        flat_x[i] = orig
        flat_g[i] = (hi - lo) / (2.0 * eps)
    return g


def check_unary(op, x, tol=FD_TOL):
    x = np.array(x, dtype=np.float64)
    w = RNG.normal(size=np.asarray(op(x)).shape)
    v = ad.Var(x)
    out = op(v)
    ad.sum(ad.mul(out, w)).backward()
    num = fd_grad(lambda arr: float(np.sum(np.asarray(op(arr)) * w)), x)
    npt.assert_allclose(v.grad, num, rtol=tol, atol=tol)


def check_binary(op, a, b, tol=FD_TOL):
    a = np.array(a, dtype=np.float64)
    b = np.array(b, dtype=np.float64)
    w = RNG.normal(size=np.asarray(op(a, b)).shape)
    va, vb = ad.Var(a), ad.Var(b)
    ad.sum(ad.mul(op(va, vb), w)).backward()
    num_a = fd_grad(lambda arr: float(np.sum(np.asarray(op(arr, b)) * w)), a)
    num_b = fd_grad(lambda arr: float(np.sum(np.asarray(op(a, arr)) * w)), b)
    npt.assert_allclose(va.grad, num_a, rtol=tol, atol=tol)
    npt.assert_allclose(vb.grad, num_b, rtol=tol, atol=tol)


# ---------------------------------------------------------------- values


def test_plain_arrays_stay_plain():
    a = np.ones((2, 3))
    for out in (ad.add(a, a), ad.mul(a, 2.0), ad.relu(a), ad.softmax(a)):
        assert isinstance(out, np.ndarray)


def test_var_inputs_produce_vars():
    a = ad.Var(np.ones((2, 3)))
    for out in (ad.add(a, np.ones(3)), ad.mul(a, 2.0), ad.relu(a)):
        assert isinstance(out, ad.Var)


def test_value_unwraps():
    arr = np.arange(3.0)
    npt.assert_array_equal(ad.value(ad.Var(arr)), arr)
    npt.assert_array_equal(ad.value([1.0, 2.0]), np.array([1.0, 2.0]))


def test_var_shape_and_ndim():
    v = ad.Var(np.zeros((4, 2)))
    assert v.shape == (4, 2)
    assert v.ndim == 2


def test_softmax_rows_sum_to_one():
    x = RNG.normal(size=(5, 7))
    s = ad.softmax(x)
    npt.assert_allclose(s.sum(axis=-1), np.ones(5), atol=1e-12)


def test_softmax_shift_invariance():
    x = RNG.normal(size=(3, 4))
    npt.assert_allclose(ad.softmax(x), ad.softmax(x + 123.0), atol=1e-12)


def test_masked_softmax_zeroes_invalid_columns():
    scores = RNG.normal(size=(4, 6))
    mask = np.array([1, 1, 1, 0, 0, 0], dtype=np.float64)
    out = ad.masked_softmax(scores, mask)
    npt.assert_array_equal(out[:, 3:], np.zeros((4, 3)))
    npt.assert_allclose(out[:, :3].sum(axis=-1), np.ones(4), atol=1e-12)


def test_logsumexp_matches_naive_on_safe_values():
    x = RNG.normal(size=(3, 5))
    npt.assert_allclose(ad.logsumexp(x), np.log(np.exp(x).sum(axis=-1)), atol=1e-12)


def test_logsumexp_stable_at_large_magnitudes():
    x = np.array([1000.0, 1000.0])
    npt.assert_allclose(ad.value(ad.logsumexp(x)), 1000.0 + np.log(2.0), atol=1e-9)


# ------------------------------------------------------------- gradients


def test_add_sub_mul_div_gradients():
    a = RNG.normal(size=(3, 4))
    b = RNG.normal(size=(3, 4))
    check_binary(ad.add, a, b)
    check_binary(ad.sub, a, b)
    check_binary(ad.mul, a, b)
    check_binary(ad.div, a, np.abs(b) + 1.0)


def test_broadcast_gradients_unbroadcast_to_leaf_shape():
    a = RNG.normal(size=(3, 1))
    b = RNG.normal(size=(4,))
    va, vb = ad.Var(a), ad.Var(b)
    out = ad.mul(va, vb)
    ad.sum(out).backward()
    assert va.grad.shape == (3, 1)
    assert vb.grad.shape == (4,)
    npt.assert_allclose(va.grad, np.broadcast_to(b, (3, 4)).sum(axis=1, keepdims=True), atol=1e-12)
    npt.assert_allclose(vb.grad, np.broadcast_to(a, (3, 4)).sum(axis=0), atol=1e-12)


def test_matmul_gradients_all_rank_combinations():
    m = RNG.normal(size=(3, 4))
    n = RNG.normal(size=(4, 2))
    v = RNG.normal(size=(4,))
    u = RNG.normal(size=(3,))
    check_binary(ad.matmul, m, n)
    check_binary(ad.matmul, v, n)
    check_binary(ad.matmul, m, v)
    check_binary(lambda a, b: ad.matmul(a, b), u, m)


def test_elementwise_nonlinearity_gradients():
    x = RNG.normal(size=(2, 5))
    check_unary(ad.tanh, x)
    check_unary(ad.sigmoid, x)
    check_unary(ad.exp, x)
    check_unary(ad.log, np.abs(x) + 0.5)
    check_unary(lambda a: ad.power(a, 3.0), np.abs(x) + 0.5)
    # keep FD probes away from the ReLU kink
    safe = np.where(np.abs(x) < 0.01, 0.5, x)
    check_unary(ad.relu, safe)


def test_relu_gradient_zero_on_negative_side():
    v = ad.Var(np.array([-2.0, 3.0]))
    ad.sum(ad.relu(v)).backward()
    npt.assert_array_equal(v.grad, np.array([0.0, 1.0]))


def test_clamp_gradient_passes_only_inside_bounds():
    v = ad.Var(np.array([-5.0, 0.3, 5.0]))
    ad.sum(ad.clamp(v, 0.0, 1.0)).backward()
    npt.assert_array_equal(v.grad, np.array([0.0, 1.0, 0.0]))


def test_reduction_gradients():
    x = RNG.normal(size=(3, 4))
    check_unary(lambda a: ad.sum(a), x)
    check_unary(lambda a: ad.sum(a, axis=0), x)
    check_unary(lambda a: ad.sum(a, axis=1, keepdims=True), x)
    check_unary(lambda a: ad.mean(a), x)
    check_unary(lambda a: ad.mean(a, axis=1), x)


def test_amax_gradient_flows_to_argmax_only():
    # distinct entries keep the max differentiable
    x = np.array([[1.0, 5.0, 2.0], [7.0, 0.0, 3.0]])
    check_unary(lambda a: ad.amax(a, axis=1), x)
    v = ad.Var(x)
    ad.sum(ad.amax(v, axis=1)).backward()
    npt.assert_array_equal(v.grad, np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]))


def test_shape_op_gradients():
    x = RNG.normal(size=(2, 6))
    check_unary(lambda a: ad.reshape(a, (3, 4)), x)
    check_unary(lambda a: ad.transpose(a), x)
    check_unary(lambda a: ad.getitem(a, (slice(0, 1), slice(2, 5))), x)


def test_take_rows_gradient_scatters_counts():
    table = ad.Var(RNG.normal(size=(5, 3)))
    ids = np.array([1, 1, 4])
    ad.sum(ad.take_rows(table, ids)).backward()
    expect = np.zeros((5, 3))
    expect[1] = 2.0
    expect[4] = 1.0
    npt.assert_array_equal(table.grad, expect)


def test_concat_and_stack_gradients():
    a = RNG.normal(size=(2, 3))
    b = RNG.normal(size=(2, 3))
    check_binary(lambda x, y: ad.concat([x, y], axis=0), a, b)
    check_binary(lambda x, y: ad.concat([x, y], axis=1), a, b)
    check_binary(lambda x, y: ad.stack([x, y], axis=0), a, b)


def test_softmax_family_gradients():
    x = RNG.normal(size=(3, 5))
    check_unary(lambda a: ad.softmax(a), x)
    check_unary(lambda a: ad.logsumexp(a), x)
    mask = np.array([1.0, 1.0, 1.0, 0.0, 0.0])
    check_unary(lambda a: ad.masked_softmax(a, mask), x)


def test_gradient_accumulates_across_paths():
    # diamond graph: both paths into the loss must sum at the leaf
    x = ad.Var(np.array([2.0, -1.0]))
    y = ad.add(ad.mul(x, x), ad.mul(3.0, x))
    ad.sum(y).backward()
    npt.assert_allclose(x.grad, 2.0 * x.data + 3.0, atol=1e-12)


def test_backward_seed_scales_gradients():
    x = ad.Var(np.array([1.0, 2.0, 3.0]))
    out = ad.mul(x, 2.0)
    out.backward(seed=np.array([1.0, 0.0, -1.0]))
    npt.assert_array_equal(x.grad, np.array([2.0, 0.0, -2.0]))


def test_deep_chain_survives_without_recursion_error():
    v = ad.Var(np.array([0.1]))
    out = v
    for _ in range(3000):
        out = ad.add(out, 0.001)
    ad.sum(out).backward()
    npt.assert_allclose(v.grad, np.array([1.0]), atol=1e-12)
