import numpy as np
import pytest

from gaitcontour import autograd as ag
from gaitcontour import layers as L
from gaitcontour.autograd import Tensor
from gaitcontour.errors import ShapeMismatch
from gaitcontour.gradcheck import grad_check


def rnd(shape, seed=0, grad=False):
    return Tensor(np.random.default_rng(seed).normal(size=shape), requires_grad=grad)


def conv_oracle(x, w, b):
    T, J, _ = x.shape
    k, c_in, c_out = w.shape
    pad = (k - 1) // 2
    out = np.zeros((T, J, c_out))
    for t in range(T):
        for j in range(J):
            for o in range(c_out):
                acc = b[o]
                for i in range(k):
                    s = t + i - pad
                    if 0 <= s < T:
                        for c in range(c_in):
                            acc += x[s, j, c] * w[i, c, o]
                out[t, j, o] = acc
    return out


def test_temporal_conv_vs_loops():
    x, w, b = rnd((5, 3, 4), 1), rnd((3, 4, 2), 2), rnd((2,), 3)
    out = L.temporal_conv(x, w, b).data
    assert np.allclose(out, conv_oracle(x.data, w.data, b.data), rtol=0, atol=1e-12)


def test_temporal_conv_identity_kernel():
    x = rnd((6, 4, 3), 4)
    w = np.zeros((3, 3, 3))
    w[1] = np.eye(3)
    assert np.array_equal(L.temporal_conv(x, Tensor(w)).data, x.data)


def test_temporal_conv_k1_is_linear():
    x, w = rnd((4, 5, 3), 5), rnd((1, 3, 6), 6)
    assert np.allclose(L.temporal_conv(x, w).data, x.data @ w.data[0])


def test_temporal_conv_errors():
    with pytest.raises(ShapeMismatch):
        L.temporal_conv(rnd((4, 5, 3)), rnd((2, 3, 3)))
    with pytest.raises(ShapeMismatch):
        L.temporal_conv(rnd((4, 5, 3)), rnd((3, 4, 3)))


def test_temporal_conv_gradient():
    x, w, b = rnd((2, 4, 3, 5), 7, True), rnd((3, 5, 4), 8, True), rnd((4,), 9, True)
    coef = rnd((2, 4, 3, 4), 10)
    report = grad_check(lambda: ag.sum_(ag.mul(L.temporal_conv(x, w, b), coef)), [x, w, b])
    assert report.max_rel_err < 1e-7


def test_batch_norm_train_stats():
    x = Tensor(np.random.default_rng(0).normal(3.0, 2.0, size=(4, 7, 5)))
    state = L.BatchNormState.fresh(5)
    y = L.batch_norm(x, Tensor(np.ones(5)), Tensor(np.zeros(5)), state, train=True).data.reshape(-1, 5)
    assert np.abs(y.mean(axis=0)).max() < 1e-10
    assert np.abs(y.var(axis=0) - 1).max() < 1e-4  # eps = 1e-5 shrinks the variance slightly
    assert not np.allclose(state.running_mean, 0)


def test_batch_norm_eval_identity():
    x = rnd((3, 4, 2), 1)
    state = L.BatchNormState(np.zeros(2), np.ones(2) - 1e-5)
    y = L.batch_norm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)), state, train=False)
    assert np.allclose(y.data, x.data, atol=1e-12)


@pytest.mark.parametrize("train", [True, False])
def test_batch_norm_gradient(train):
    x, g, b = rnd((3, 4, 5), 2, True), rnd((5,), 3, True), rnd((5,), 4, True)
    coef = rnd((3, 4, 5), 5)
    state = L.BatchNormState(np.full(5, 0.1), np.full(5, 1.3))

    def f():
        s = L.BatchNormState(state.running_mean.copy(), state.running_var.copy())
        return ag.sum_(ag.mul(L.batch_norm(x, g, b, s, train), coef))

    assert grad_check(f, [x, g, b]).max_rel_err < 1e-5


def test_avg_pool():
    x = rnd((2, 33, 4))
    out = L.avg_pool_points(x, 11)
    assert out.shape == (2, 3, 4)
    assert np.allclose(out.data[1, 2], x.data[1, 22:33].mean(axis=0))
    const = L.avg_pool_points(Tensor(np.full((2, 15, 3), 7.0)), 15)
    assert const.shape == (2, 1, 3) and np.allclose(const.data, 7.0)
    with pytest.raises(ShapeMismatch):
        L.avg_pool_points(x, 10)


def mha_params(c, seed):
    rng = np.random.default_rng(seed)
    return [Tensor(rng.normal(size=(c, c)) / np.sqrt(c), requires_grad=True) for _ in range(4)] + \
           [Tensor(rng.normal(size=c) * 0.1, requires_grad=True) for _ in range(4)]


def test_mha_single_token():
    x = rnd((3, 1, 4), 1)
    p = mha_params(4, 2)
    out = L.multi_head_attention(x, *p, heads=2).data
    wq, wk, wv, wo, bq, bk, bv, bo = (t.data for t in p)
    assert np.allclose(out, (x.data @ wv + bv) @ wo + bo)


def test_mha_permutation_equivariant():
    x = rnd((2, 6, 8), 3)
    p = mha_params(8, 4)
    perm = np.random.default_rng(5).permutation(6)
    a = L.multi_head_attention(x, *p, heads=4).data
    b = L.multi_head_attention(Tensor(x.data[:, perm]), *p, heads=4).data
    assert np.allclose(a[:, perm], b, atol=1e-12)


def test_mha_hand_computed():
    # one head, C = 1, two tokens
    x = Tensor(np.array([[[1.0], [2.0]]]))
    one = lambda v: Tensor(np.array([[v]]))
    zero = Tensor(np.zeros(1))
    out = L.multi_head_attention(x, one(1.0), one(1.0), one(3.0), one(0.5), zero, zero, zero, zero, heads=1).data
    s = np.array([[1.0, 2.0], [2.0, 4.0]])
    a = np.exp(s) / np.exp(s).sum(axis=1, keepdims=True)
    expected = 0.5 * (a @ np.array([3.0, 6.0]))
    assert np.allclose(out[0, :, 0], expected, rtol=0, atol=1e-15)


def test_mha_gradient():
    x = rnd((2, 5, 4), 6, True)
    p = mha_params(4, 7)
    coef = rnd((2, 5, 4), 8)
    report = grad_check(lambda: ag.sum_(ag.mul(L.multi_head_attention(x, *p, heads=2), coef)), [x] + p)
    assert report.max_rel_err < 1e-4
    # a key bias shifts every score of a query equally, so softmax ignores it
    assert np.abs(p[5].grad).max() < 1e-12


def test_mha_heads_must_divide():
    with pytest.raises(ShapeMismatch):
        L.multi_head_attention(rnd((1, 3, 6)), *mha_params(6, 0), heads=4)
