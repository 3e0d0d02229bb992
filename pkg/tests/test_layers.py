import math

import numpy as np
import pytest

from beamwatch.errors import ConfigurationError, ShapeError, ValidationError
from beamwatch.numerics import (BatchNormState, GruCellParams, Tensor,
                                batchnorm2d, conv2d_forward, dense_forward,
                                dropout, grad_check, gru_cell,
                                gru_cell_precomputed, maxpool2d, softmax,
                                softmax_cross_entropy, tsum, tmean)
from beamwatch.numerics import kernels


def t64(arr, grad=True):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad)


# -- dense -----------------------------------------------------------------


def test_dense_identity_weights():
    y = dense_forward(t64([[1.0, 2.0]]), t64(np.eye(2)), t64([0.0, 0.0]))
    assert np.allclose(y.data, [[1.0, 2.0]])


def test_dense_hand_arithmetic():
    y = dense_forward(t64([[1.0, 1.0]]), t64([[2.0, 3.0]]), t64([1.0]))
    assert np.allclose(y.data, [[6.0]])


def test_dense_gradient_check():
    rng = np.random.default_rng(0)
    x = t64(rng.standard_normal((4, 8)))
    W = t64(rng.standard_normal((5, 8)))
    b = t64(rng.standard_normal(5))
    err = grad_check(lambda *ts: tsum(dense_forward(*ts)), [x, W, b])
    assert err < 1e-4


def test_dense_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(1, 3\).*\(5, 8\)"):
        dense_forward(t64(np.ones((1, 3))), t64(np.ones((5, 8))), t64(np.ones(5)))


# -- conv2d ------------------------------------------------------------


def test_conv_identity_kernel():
    x = t64(np.ones((1, 1, 3, 3)))
    k = t64(np.ones((1, 1, 1, 1)))
    y = conv2d_forward(x, k, stride=1, padding=0)
    assert np.allclose(y.data, np.ones((1, 1, 3, 3)))


def test_conv_sum_kernel():
    x = t64([[[[1.0, 2.0], [3.0, 4.0]]]])
    k = t64(np.ones((1, 1, 2, 2)))
    y = conv2d_forward(x, k, stride=1, padding=0)
    assert np.allclose(y.data, [[[[10.0]]]])


def test_conv_gradient_check():
    rng = np.random.default_rng(1)
    x = t64(rng.standard_normal((2, 3, 9, 9)) * 0.5)
    k = t64(rng.standard_normal((4, 3, 5, 5)) * 0.3)
    err = grad_check(lambda a, b: tsum(conv2d_forward(a, b, 1, 0)), [x, k], h=1e-6)
    assert err < 1e-4


def test_conv_zero_input_zero_output():
    rng = np.random.default_rng(2)
    x = t64(np.zeros((2, 3, 6, 6)), grad=False)
    k = t64(rng.standard_normal((4, 3, 5, 5)), grad=False)
    y = conv2d_forward(x, k, stride=1, padding=2)
    assert np.all(y.data == 0.0)


def test_conv_non_integral_output_rejected():
    x = t64(np.ones((1, 1, 5, 5)))
    k = t64(np.ones((1, 1, 2, 2)))
    with pytest.raises(ConfigurationError):
        conv2d_forward(x, k, stride=2, padding=0)


def test_conv_backends_agree():
    # numba fast path vs plain-numpy im2col on the same random instance
    rng = np.random.default_rng(3)
    for dtype in (np.float32, np.float64):
        xp = rng.standard_normal((3, 4, 12, 10)).astype(dtype)
        K = rng.standard_normal((5, 4, 5, 5)).astype(dtype)
        y_a = kernels.conv_forward_np(xp, K, 1)
        y_b = kernels.conv_forward_nb(xp, K, 1)
        dy = rng.standard_normal(y_a.shape).astype(dtype)
        dKa, dxa = kernels.conv_backward_np(dy, xp, K, 1)
        dKb, dxb = kernels.conv_backward_nb(dy, xp, K, 1)
        tol = 1e-3 if dtype == np.float32 else 1e-9
        assert np.allclose(y_a, y_b, atol=tol)
        assert np.allclose(dKa, dKb, atol=tol * max(1.0, np.abs(dKa).max()))
        assert np.allclose(dxa, dxb, atol=tol)


# -- maxpool ------------------------------------------------------------


def test_maxpool_2x2():
    y = maxpool2d(t64([[[[1.0, 2.0], [3.0, 4.0]]]]), k=2, stride=1)
    assert np.allclose(y.data, [[[[4.0]]]])


def test_maxpool_tie_routes_to_first_position():
    x = t64(np.ones((1, 1, 2, 2)) * 7.0)
    y = maxpool2d(x, k=2, stride=1)
    assert np.allclose(y.data, 7.0)
    y.backward(np.ones_like(y.data))
    expect = np.zeros((1, 1, 2, 2))
    expect[0, 0, 0, 0] = 1.0  # first row-major position takes the whole gradient
    assert np.allclose(x.grad, expect)


def test_maxpool_matches_bruteforce_windows():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((1, 1, 5, 5))
    y = maxpool2d(t64(x, grad=False), k=2, stride=1)
    brute = np.empty((4, 4))
    for i in range(4):
        for j in range(4):
            brute[i, j] = x[0, 0, i:i + 2, j:j + 2].max()
    assert np.allclose(y.data[0, 0], brute)


def test_maxpool_window_too_large():
    with pytest.raises(ConfigurationError):
        maxpool2d(t64(np.ones((1, 1, 2, 2))), k=3, stride=1)


def test_maxpool_gradient_check():
    rng = np.random.default_rng(5)
    # distinct values so the max is locally smooth for finite differences
    x = t64(rng.permutation(36).reshape(1, 1, 6, 6).astype(np.float64))
    err = grad_check(lambda t: tsum(maxpool2d(t, 2, 1)), [x], h=1e-4)
    assert err < 1e-6


# -- batchnorm ------------------------------------------------------------


def test_batchnorm_normalizes_per_channel():
    rng = np.random.default_rng(6)
    x = t64(rng.standard_normal((4, 3, 5, 5)) * 3.0 + 1.5, grad=False)
    state = BatchNormState()
    y = batchnorm2d(x, t64(np.ones(3), grad=False), t64(np.zeros(3), grad=False),
                    "train", state)
    mean = y.data.mean(axis=(0, 2, 3))
    var = y.data.var(axis=(0, 2, 3))
    assert np.all(np.abs(mean) < 1e-5)
    assert np.all(np.abs(var - 1.0) < 1e-4)


def test_batchnorm_affine_output():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((8, 2, 4, 4))
    x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
    state = BatchNormState()
    y = batchnorm2d(t64(x, grad=False), t64(np.full(2, 2.0), grad=False),
                    t64(np.full(2, 3.0), grad=False), "train", state)
    assert np.allclose(y.data.mean(axis=(0, 2, 3)), 3.0, atol=1e-6)
    assert np.allclose(y.data.std(axis=(0, 2, 3)), 2.0, atol=1e-4)


def test_batchnorm_gradient_check():
    rng = np.random.default_rng(8)
    x = t64(rng.standard_normal((4, 2, 3, 3)))
    gamma = t64(rng.uniform(0.5, 1.5, 2))
    beta = t64(rng.standard_normal(2))

    def f(a, g, b):
        state = BatchNormState()
        return tsum(tanh_like(batchnorm2d(a, g, b, "train", state)))

    def tanh_like(t):
        from beamwatch.numerics import tanh
        return tanh(t)

    err = grad_check(f, [x, gamma, beta], h=1e-5)
    assert err < 1e-3


def test_batchnorm_eval_before_train_rejected():
    state = BatchNormState()
    with pytest.raises(ValidationError):
        batchnorm2d(t64(np.ones((2, 1, 2, 2))), t64(np.ones(1)), t64(np.zeros(1)),
                    "eval", state)


def test_batchnorm_eval_uses_running_stats():
    rng = np.random.default_rng(9)
    state = BatchNormState()
    gamma, beta = t64(np.ones(2), grad=False), t64(np.zeros(2), grad=False)
    for _ in range(20):
        x = t64(rng.standard_normal((16, 2, 4, 4)) * 2.0 + 5.0, grad=False)
        batchnorm2d(x, gamma, beta, "train", state)
    probe = t64(np.full((1, 2, 2, 2), 5.0), grad=False)
    y = batchnorm2d(probe, gamma, beta, "eval", state)
    # the input sits at the running mean, so the normalized output is ~0
    assert np.all(np.abs(y.data) < 0.2)


# -- dropout ------------------------------------------------------------


def test_dropout_eval_is_identity():
    x = t64(np.arange(12.0).reshape(3, 4), grad=False)
    y = dropout(x, 0.4, "eval")
    assert np.array_equal(y.data, x.data)


def test_dropout_zero_rate_is_identity():
    x = t64(np.arange(12.0).reshape(3, 4), grad=False)
    rng = np.random.default_rng(0)
    assert np.array_equal(dropout(x, 0.0, "train", rng).data, x.data)
    assert np.array_equal(dropout(x, 0.0, "eval").data, x.data)


def test_dropout_survivor_statistics():
    rng = np.random.default_rng(10)
    x = t64(np.ones(100_000), grad=False)
    y = dropout(x, 0.5, "train", rng).data
    survivors = np.count_nonzero(y) / y.size
    assert abs(survivors - 0.5) < 0.01
    assert abs(y.mean() - 1.0) < 0.02


def test_dropout_bad_rate_rejected():
    with pytest.raises(ConfigurationError):
        dropout(t64(np.ones(3)), 1.0, "train", np.random.default_rng(0))


def test_dropout_scales_gradient_by_mask():
    rng = np.random.default_rng(11)
    x = t64(np.ones((50, 50)))
    y = dropout(x, 0.25, "train", rng)
    tsum(y).backward()
    assert np.array_equal(x.grad != 0.0, y.data != 0.0)
    np.testing.assert_allclose(x.grad[x.grad != 0.0], 1.0 / 0.75)


# -- gru ------------------------------------------------------------


def zero_gru(input_dim, hidden_dim):
    def z(shape):
        return Tensor(np.zeros(shape, dtype=np.float64), requires_grad=True)
    return GruCellParams(
        W_z=z((hidden_dim, input_dim)), W_r=z((hidden_dim, input_dim)),
        W_n=z((hidden_dim, input_dim)), U_z=z((hidden_dim, hidden_dim)),
        U_r=z((hidden_dim, hidden_dim)), U_n=z((hidden_dim, hidden_dim)),
        b_z=z(hidden_dim), b_r=z(hidden_dim), b_n=z(hidden_dim))


def scalar_loop_gru(x, h, p):
    """Independent scalar-loop evaluation of the gate equations."""
    B, H = x.shape[0], p.b_z.data.shape[0]
    out = np.zeros((B, H))
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    for b in range(B):
        for i in range(H):
            az = sum(p.W_z.data[i, j] * x[b, j] for j in range(x.shape[1]))
            ar = sum(p.W_r.data[i, j] * x[b, j] for j in range(x.shape[1]))
            an = sum(p.W_n.data[i, j] * x[b, j] for j in range(x.shape[1]))
            uz = sum(p.U_z.data[i, j] * h[b, j] for j in range(H))
            ur = sum(p.U_r.data[i, j] * h[b, j] for j in range(H))
            un = sum(p.U_n.data[i, j] * h[b, j] for j in range(H))
            z = sig(az + uz + p.b_z.data[i])
            r = sig(ar + ur + p.b_r.data[i])
            n = math.tanh(an + r * un + p.b_n.data[i])
            out[b, i] = (1.0 - z) * n + z * h[b, i]
    return out


def test_gru_zero_parameters_fixed_point():
    p = zero_gru(4, 3)
    x = t64(np.random.default_rng(0).standard_normal((2, 4)), grad=False)
    h = t64(np.zeros((2, 3)), grad=False)
    out = gru_cell(x, h, p)
    assert np.allclose(out.data, 0.0)


def test_gru_saturated_update_gate_copies_hidden():
    p = zero_gru(4, 3)
    p.b_z.data[:] = 50.0  # z ~ 1 -> h' ~ h_prev
    rng = np.random.default_rng(1)
    x = t64(rng.standard_normal((2, 4)), grad=False)
    h = t64(rng.standard_normal((2, 3)), grad=False)
    out = gru_cell(x, h, p)
    assert np.allclose(out.data, h.data, atol=1e-8)


def test_gru_matches_scalar_loop_oracle():
    rng = np.random.default_rng(2)
    p = GruCellParams.init(4, 3, rng, dtype=np.float64)
    x = rng.standard_normal((2, 4))
    h = rng.standard_normal((2, 3))
    out = gru_cell(t64(x, grad=False), t64(h, grad=False), p)
    assert np.abs(out.data - scalar_loop_gru(x, h, p)).max() < 1e-6


def test_gru_gradient_check():
    rng = np.random.default_rng(3)
    p = GruCellParams.init(4, 3, rng, dtype=np.float64)
    x = t64(rng.standard_normal((2, 4)))
    h = t64(rng.standard_normal((2, 3)))

    def f(xx, hh, *ws):
        return tsum(gru_cell(xx, hh, p))

    err = grad_check(f, [x, h] + p.tensors())
    assert err < 1e-6


def test_gru_precomputed_path_matches_cell():
    from beamwatch.numerics import dense_forward
    rng = np.random.default_rng(4)
    p = GruCellParams.init(5, 3, rng, dtype=np.float64)
    x = t64(rng.standard_normal((4, 5)), grad=False)
    h = t64(rng.standard_normal((4, 3)), grad=False)
    az = dense_forward(x, p.W_z, p.b_z)
    ar = dense_forward(x, p.W_r, p.b_r)
    an = dense_forward(x, p.W_n, p.b_n)
    a = gru_cell(x, h, p)
    b = gru_cell_precomputed(az, ar, an, h, p)
    assert np.abs(a.data - b.data).max() < 1e-12


def test_gru_dimension_error_names_gate():
    p = zero_gru(4, 3)
    with pytest.raises(ShapeError, match="update"):
        gru_cell(t64(np.ones((2, 5))), t64(np.zeros((2, 3))), p)


# -- softmax cross-entropy ---------------------------------------------


def test_ce_uniform_logits_is_ln2():
    for label in (0, 1):
        loss = softmax_cross_entropy(t64([[0.0, 0.0]], grad=False), [label])
        assert abs(loss.item() - math.log(2.0)) < 1e-12


def test_ce_saturated_correct_is_zero():
    loss = softmax_cross_entropy(t64([[40.0, -40.0]], grad=False), [0])
    assert loss.item() < 1e-10


def test_ce_nonnegative_random():
    rng = np.random.default_rng(5)
    for _ in range(50):
        logits = t64(rng.standard_normal((4, 2)) * 5, grad=False)
        labels = rng.integers(0, 2, 4)
        assert softmax_cross_entropy(logits, labels).item() >= 0.0


def test_ce_gradient_check():
    rng = np.random.default_rng(6)
    logits = t64(rng.standard_normal((8, 2)))
    labels = rng.integers(0, 2, 8)
    err = grad_check(lambda t: softmax_cross_entropy(t, labels), [logits])
    assert err < 1e-5


def test_ce_label_out_of_range_names_index():
    with pytest.raises(ValidationError, match="index 1"):
        softmax_cross_entropy(t64(np.zeros((3, 2))), [0, 2, 1])


def test_softmax_rows_sum_to_one_and_shift_invariant():
    rng = np.random.default_rng(7)
    logits = rng.standard_normal((5, 2))
    p1 = softmax(t64(logits, grad=False)).data
    p2 = softmax(t64(logits + 123.0, grad=False)).data
    assert np.allclose(p1.sum(axis=1), 1.0, atol=1e-6)
    assert np.allclose(p1, p2, atol=1e-9)
