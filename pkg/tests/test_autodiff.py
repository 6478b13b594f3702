"""Unit tests for the tape engine: forward oracles and gradient checks.

Gradient checks run in float64 so central differences are meaningful;
forward oracles compare against the loop implementations in oracles.py.
"""
import numpy as np
import pytest

from tsci import autodiff as ad
from tsci.errors import ContractViolation, DimensionError

from oracles import (adam_step_naive, conv2d_naive, conv2d_transpose_naive,
                     fd_gradient, gru_cell_naive, rel_error)

RTOL = 1e-6  # float64 forward oracles agree to roundoff


def _t64(rng, *shape, grad=True):
    return ad.tensor(rng.standard_normal(shape), requires_grad=grad, dtype=np.float64)


def _check_grad(build, tensors, rel=1e-6):
    """FD-check d(sum of outputs)/d(each tensor) in float64."""
    with ad.Tape() as tape:
        out = build()
        loss = ad.reduce_sum(out) if out.size > 1 else out
    ad.backward(tape, loss)
    for t in tensors:
        def f(x, _t=t):
            keep = _t.data
            _t.data = x
            val = build()
            _t.data = keep
            return float(val.data.sum())

        num = fd_gradient(f, t.data.copy())
        assert t.grad is not None
        err = rel_error(t.grad.astype(np.float64), num)
        assert err < rel, f"gradient mismatch {err:.3e}"


# ---------------------------------------------------------------------------
# elementwise and reduction ops


def test_add_mul_broadcast_grads():
    rng = np.random.default_rng(11)
    a = _t64(rng, 4, 5)
    b = _t64(rng, 5)
    _check_grad(lambda: ad.mul(ad.add(a, b), a), [a, b])


def test_unary_op_grads():
    rng = np.random.default_rng(12)
    for op in (ad.relu, ad.sigmoid, ad.tanh, ad.exp, ad.absolute):
        a = ad.tensor(rng.standard_normal((3, 4)) + 0.3, requires_grad=True, dtype=np.float64)
        _check_grad(lambda op=op, a=a: op(a), [a])


def test_log_sqrt_grads_positive_domain():
    rng = np.random.default_rng(13)
    a = ad.tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True, dtype=np.float64)
    _check_grad(lambda: ad.log(a), [a])
    b = ad.tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True, dtype=np.float64)
    _check_grad(lambda: ad.sqrt(b), [b])


def test_clamp_and_minimum_grads():
    rng = np.random.default_rng(14)
    a = _t64(rng, 6)
    _check_grad(lambda: ad.clamp(a, -0.5, 0.5), [a])
    b = _t64(rng, 6)
    c = _t64(rng, 6)
    _check_grad(lambda: ad.minimum(b, c), [b, c])


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(15)
    a = ad.tensor(rng.standard_normal((7, 5)) * 30.0)  # large logits: stability
    y = ad.softmax(a).data
    assert np.all(np.isfinite(y))
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, rtol=1e-6)


def test_softmax_log_softmax_grads():
    rng = np.random.default_rng(16)
    a = _t64(rng, 4, 6)
    w = rng.standard_normal((4, 6))  # weighting so the grad is not trivially 0
    _check_grad(lambda: ad.mul(ad.softmax(a), ad.tensor(w, dtype=np.float64)), [a])
    b = _t64(rng, 4, 6)
    _check_grad(lambda: ad.mul(ad.log_softmax(b), ad.tensor(w, dtype=np.float64)), [b])


def test_log_softmax_matches_log_of_softmax():
    rng = np.random.default_rng(17)
    a = ad.tensor(rng.standard_normal((5, 9)), dtype=np.float64)
    np.testing.assert_allclose(ad.log_softmax(a).data, np.log(ad.softmax(a).data), atol=1e-12)


def test_reduce_ops_grads():
    rng = np.random.default_rng(18)
    a = _t64(rng, 3, 4, 5)
    _check_grad(lambda: ad.reduce_sum(a, axis=1), [a])
    b = _t64(rng, 3, 4, 5)
    _check_grad(lambda: ad.reduce_mean(b, axis=(0, 2)), [b])
    c = _t64(rng, 3, 4)
    _check_grad(lambda: ad.reduce_mean(c), [c])


def test_shape_ops_grads():
    rng = np.random.default_rng(19)
    a = _t64(rng, 2, 3, 4)
    _check_grad(lambda: ad.reshape(a, (6, 4)), [a])
    b = _t64(rng, 2, 5)
    c = _t64(rng, 3, 5)
    _check_grad(lambda: ad.concat([b, c], axis=0), [b, c])
    d = _t64(rng, 4, 5)
    e = _t64(rng, 4, 5)
    _check_grad(lambda: ad.stack([d, e], axis=0), [d, e])
    f = _t64(rng, 3, 4, 5)
    _check_grad(lambda: ad.take(f, 2, axis=1), [f])


def test_gather_rows_grad_and_values():
    rng = np.random.default_rng(20)
    a = _t64(rng, 6, 4)
    idx = rng.integers(0, 4, size=6)
    out = ad.gather_rows(a, idx)
    np.testing.assert_array_equal(out.data, a.data[np.arange(6), idx])
    _check_grad(lambda: ad.gather_rows(a, idx), [a])


def test_matmul_grads_and_shape_errors():
    rng = np.random.default_rng(21)
    a = _t64(rng, 3, 4)
    b = _t64(rng, 4, 2)
    _check_grad(lambda: ad.matmul(a, b), [a, b])
    with pytest.raises(DimensionError):
        ad.matmul(ad.tensor(np.zeros((3, 4))), ad.tensor(np.zeros((3, 4))))


# ---------------------------------------------------------------------------
# convolution


def test_conv2d_forward_matches_naive():
    rng = np.random.default_rng(22)
    for stride, pad, kh in [(1, 0, 3), (2, 1, 3), (2, 0, 3), (1, 2, 5), (3, 1, 4)]:
        x = rng.standard_normal((2, 3, 9, 8))
        w = rng.standard_normal((4, 3, kh, kh))
        b = rng.standard_normal(4)
        got = ad.conv2d(ad.tensor(x, dtype=np.float64), ad.tensor(w, dtype=np.float64),
                        ad.tensor(b, dtype=np.float64), stride=stride, padding=pad).data
        want = conv2d_naive(x, w, b, stride, pad)
        assert rel_error(got, want) < RTOL


def test_conv2d_output_shape_formula():
    # floor((H + 2p - k)/s) + 1, matching the 32->15->7->3 encoder path
    x = ad.tensor(np.zeros((1, 4, 32, 32)))
    w1 = ad.tensor(np.zeros((16, 4, 3, 3)))
    y1 = ad.conv2d(x, w1, stride=2, padding=0)
    assert y1.shape == (1, 16, 15, 15)
    y2 = ad.conv2d(y1, ad.tensor(np.zeros((32, 16, 3, 3))), stride=2, padding=0)
    assert y2.shape == (1, 32, 7, 7)
    y3 = ad.conv2d(y2, ad.tensor(np.zeros((32, 32, 3, 3))), stride=2, padding=0)
    assert y3.shape == (1, 32, 3, 3)


def test_conv2d_grads_including_truncated_stride():
    rng = np.random.default_rng(23)
    # 8x8 with k3 s2 leaves the last row/col unused; dx must still be 8x8
    for stride, pad, h in [(1, 1, 6), (2, 0, 8), (2, 1, 7)]:
        x = ad.tensor(rng.standard_normal((2, 2, h, h)), requires_grad=True, dtype=np.float64)
        w = ad.tensor(rng.standard_normal((3, 2, 3, 3)), requires_grad=True, dtype=np.float64)
        b = ad.tensor(rng.standard_normal(3), requires_grad=True, dtype=np.float64)
        _check_grad(lambda x=x, w=w, b=b, s=stride, p=pad: ad.conv2d(x, w, b, stride=s, padding=p),
                    [x, w, b])


def test_conv2d_unbatched_input():
    rng = np.random.default_rng(24)
    x = rng.standard_normal((3, 8, 8))
    w = rng.standard_normal((5, 3, 3, 3))
    got = ad.conv2d(ad.tensor(x, dtype=np.float64), ad.tensor(w, dtype=np.float64), stride=2).data
    want = conv2d_naive(x[None], w, None, 2, 0)[0]
    assert got.shape == want.shape
    assert rel_error(got, want) < RTOL


def test_conv2d_channel_mismatch_raises():
    x = ad.tensor(np.zeros((1, 3, 8, 8)))
    w = ad.tensor(np.zeros((4, 2, 3, 3)))
    with pytest.raises(DimensionError):
        ad.conv2d(x, w)


def test_conv2d_transpose_forward_matches_naive():
    rng = np.random.default_rng(25)
    for stride, pad, kh in [(1, 0, 3), (2, 0, 3), (2, 1, 4), (2, 0, 4), (3, 2, 5)]:
        x = rng.standard_normal((2, 3, 5, 6))
        w = rng.standard_normal((3, 4, kh, kh))
        b = rng.standard_normal(4)
        got = ad.conv2d_transpose(ad.tensor(x, dtype=np.float64), ad.tensor(w, dtype=np.float64),
                                  ad.tensor(b, dtype=np.float64), stride=stride, padding=pad).data
        want = conv2d_transpose_naive(x, w, b, stride, pad)
        assert got.shape == want.shape
        assert rel_error(got, want) < RTOL


def test_conv2d_transpose_output_shape_decoder_path():
    # (H-1)*s - 2p + k, matching the 3->7->15->32 decoder path
    y = ad.conv2d_transpose(ad.tensor(np.zeros((1, 32, 3, 3))), ad.tensor(np.zeros((32, 32, 3, 3))), stride=2)
    assert y.shape == (1, 32, 7, 7)
    y = ad.conv2d_transpose(y, ad.tensor(np.zeros((32, 16, 3, 3))), stride=2)
    assert y.shape == (1, 16, 15, 15)
    y = ad.conv2d_transpose(y, ad.tensor(np.zeros((16, 16, 4, 4))), stride=2)
    assert y.shape == (1, 16, 32, 32)


def test_conv2d_transpose_grads():
    rng = np.random.default_rng(26)
    for stride, pad in [(1, 0), (2, 0), (2, 1)]:
        x = ad.tensor(rng.standard_normal((2, 3, 4, 4)), requires_grad=True, dtype=np.float64)
        w = ad.tensor(rng.standard_normal((3, 2, 3, 3)), requires_grad=True, dtype=np.float64)
        b = ad.tensor(rng.standard_normal(2), requires_grad=True, dtype=np.float64)
        _check_grad(lambda x=x, w=w, b=b, s=stride, p=pad:
                    ad.conv2d_transpose(x, w, b, stride=s, padding=p), [x, w, b])


# ---------------------------------------------------------------------------
# GRU


def _gru_params(rng, d_in, d_h, dtype=np.float64):
    names = ("wz", "uz", "bz", "wr", "ur", "br", "wn", "un", "bn")
    vals = {}
    for k in names:
        if k.startswith("w"):
            shape = (d_in, d_h)
        elif k.startswith("u"):
            shape = (d_h, d_h)
        else:
            shape = (d_h,)
        vals[k] = rng.standard_normal(shape) * 0.4
    p = ad.GruParams(**{k: ad.tensor(v, requires_grad=True, dtype=dtype) for k, v in vals.items()})
    return p, vals


def test_gru_forward_matches_naive():
    rng = np.random.default_rng(27)
    p, vals = _gru_params(rng, 5, 7)
    x = rng.standard_normal(5)
    h = rng.standard_normal(7)
    got = ad.gru_cell(ad.tensor(x, dtype=np.float64), ad.tensor(h, dtype=np.float64), p).data
    want = gru_cell_naive(x, h, vals)
    assert rel_error(got, want) < RTOL


def test_gru_batched_matches_per_sample():
    rng = np.random.default_rng(28)
    p, vals = _gru_params(rng, 4, 6)
    xb = rng.standard_normal((3, 4))
    hb = rng.standard_normal((3, 6))
    got = ad.gru_cell(ad.tensor(xb, dtype=np.float64), ad.tensor(hb, dtype=np.float64), p).data
    for i in range(3):
        want = gru_cell_naive(xb[i], hb[i], vals)
        assert rel_error(got[i], want) < RTOL


def test_gru_grads_all_inputs():
    rng = np.random.default_rng(29)
    p, _ = _gru_params(rng, 4, 5)
    x = ad.tensor(rng.standard_normal((3, 4)), requires_grad=True, dtype=np.float64)
    h = ad.tensor(rng.standard_normal((3, 5)), requires_grad=True, dtype=np.float64)
    tensors = [x, h] + list(p.tensors().values())
    _check_grad(lambda: ad.gru_cell(x, h, p), tensors)


def test_gru_two_step_chain_grads():
    # recurrence through two cells: checks grad flow through the hidden path
    rng = np.random.default_rng(30)
    p, _ = _gru_params(rng, 3, 4)
    x1 = ad.tensor(rng.standard_normal((2, 3)), requires_grad=True, dtype=np.float64)
    x2 = ad.tensor(rng.standard_normal((2, 3)), requires_grad=True, dtype=np.float64)
    h0 = ad.tensor(np.zeros((2, 4)), dtype=np.float64)

    def run():
        h1 = ad.gru_cell(x1, h0, p)
        return ad.gru_cell(x2, h1, p)

    _check_grad(run, [x1, x2] + list(p.tensors().values()))


# ---------------------------------------------------------------------------
# tape mechanics, ParamStore, Adam


def test_no_tape_means_no_recording():
    a = ad.tensor([1.0, 2.0], requires_grad=True)
    out = ad.mul(a, a)
    assert out.requires_grad is False  # nothing tracked without an active tape
    assert a.grad is None


def test_backward_requires_scalar_and_single_use():
    a = ad.tensor([1.0, 2.0], requires_grad=True)
    with ad.Tape() as tape:
        out = ad.mul(a, a)
    with pytest.raises(ContractViolation):
        ad.backward(tape, out)
    with ad.Tape() as tape:
        loss = ad.reduce_sum(ad.mul(a, a))
    ad.backward(tape, loss)
    np.testing.assert_allclose(a.grad, [2.0, 4.0], rtol=1e-6)
    with pytest.raises(ContractViolation):
        ad.backward(tape, loss)


def test_grad_accumulates_across_reuse():
    a = ad.tensor([3.0], requires_grad=True)
    with ad.Tape() as tape:
        loss = ad.reduce_sum(ad.add(ad.mul(a, a), a))  # x^2 + x -> 2x + 1
    ad.backward(tape, loss)
    np.testing.assert_allclose(a.grad, [7.0], rtol=1e-6)


def test_param_store_freeze_and_duplicate():
    ps = ad.ParamStore()
    t = ps.add("w", ad.tensor(np.ones(3)))
    assert t.requires_grad
    ps.set_trainable("w", False)
    assert not ps["w"].requires_grad
    with pytest.raises(ContractViolation):
        ps.add("w", ad.tensor(np.zeros(2)))


def test_adam_first_step_moves_by_lr():
    # with g=1 everywhere, step 1 moves by ~lr: m̂=1, v̂=1 -> lr/(1+eps)
    ps = ad.ParamStore()
    ps.add("w", ad.tensor(np.zeros(4)))
    state = ad.AdamState(lr=0.1)
    ad.adam_step(ps, {"w": np.ones(4, dtype=np.float32)}, state)
    np.testing.assert_allclose(ps["w"].data, -0.1, rtol=1e-5)


def test_adam_matches_naive_over_steps():
    rng = np.random.default_rng(31)
    p0 = rng.standard_normal(6)
    ps = ad.ParamStore()
    ps.add("w", ad.tensor(p0.copy(), dtype=np.float64))
    state = ad.AdamState(lr=0.01)
    ref_p = p0.copy()
    ref_m = np.zeros(6)
    ref_v = np.zeros(6)
    for t in range(1, 8):
        g = rng.standard_normal(6)
        ad.adam_step(ps, {"w": g}, state)
        ref_p, ref_m, ref_v = adam_step_naive(ref_p, g, ref_m, ref_v, t, 0.01)
        assert rel_error(ps["w"].data, ref_p) < 1e-9


def test_adam_skips_frozen_params():
    ps = ad.ParamStore()
    ps.add("w", ad.tensor(np.zeros(3)))
    ps.add("frozen", ad.tensor(np.ones(3)), trainable=False)
    state = ad.AdamState(lr=0.5)
    ad.adam_step(ps, {"w": np.ones(3, dtype=np.float32)}, state)
    np.testing.assert_array_equal(ps["frozen"].data, np.ones(3))
    assert "frozen" not in state.m


def test_float32_default_dtype():
    t = ad.tensor([1, 2, 3])
    assert t.dtype == np.float32
