"""Dense-network engine: exact gradients, Adam, embeddings, checkpoints."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from srdp_lab import nn
from srdp_lab.errors import ConfigError, NumericError, UsageError

from oracles import (adam_reference, finite_diff_grad, grads_close,
                     mlp_forward, time_embedding_reference)


def flat_params(net):
    return np.concatenate([p.ravel() for p in net.params()])


def set_flat_params(net, flat):
    pos = 0
    for p in net.params():
        p[...] = flat[pos:pos + p.size].reshape(p.shape)
        pos += p.size


# -- forward ---------------------------------------------------------------

def test_forward_matches_plain_composition():
    rng = np.random.default_rng(0)
    net = nn.init_network([3, 5, 4, 2], rng)
    x = rng.standard_normal((7, 3))
    out, _ = net.forward(x)
    params = [(l.W, l.b) for l in net.layers]
    acts = [l.activation for l in net.layers]
    ref = mlp_forward(params, x, acts)
    np.testing.assert_allclose(out, ref, rtol=1e-12)


def test_forward_1d_equals_batch_row():
    rng = np.random.default_rng(1)
    net = nn.init_network([4, 6, 3], rng)
    x = rng.standard_normal(4)
    out1, _ = net.forward(x)
    out2, _ = net.forward(x[None, :])
    assert out1.shape == (3,)
    np.testing.assert_array_equal(out1, out2[0])


def test_forward_rejects_bad_input():
    net = nn.init_network([3, 2], np.random.default_rng(2))
    with pytest.raises(UsageError):
        net.forward(np.zeros((5, 4)))
    with pytest.raises(NumericError):
        net.forward(np.array([1.0, np.nan, 0.0]))


def test_silu_values():
    # silu(0) = 0, silu(x) -> x for large x, silu(-x) small
    assert nn.silu(np.array(0.0)) == 0.0
    assert abs(nn.silu(np.array(20.0)) - 20.0) < 1e-7
    assert abs(nn.silu(np.array(-20.0))) < 1e-7


def test_silu_grad_matches_fd():
    xs = np.linspace(-4, 4, 41)
    fd = finite_diff_grad(lambda v: float(np.sum(nn.silu(v))), xs)
    np.testing.assert_allclose(nn.silu_grad(xs), fd, atol=1e-8)


# -- backward: FD oracle ---------------------------------------------------

@pytest.mark.parametrize("sizes,out_act", [
    ([3, 5, 2], "identity"),
    ([2, 4, 4, 1], "identity"),
    ([3, 6, 3], "silu"),
])
def test_param_grads_match_finite_differences(sizes, out_act):
    rng = np.random.default_rng(42)
    net = nn.init_network(sizes, rng, output_activation=out_act)
    x = rng.standard_normal((5, sizes[0]))
    target = rng.standard_normal((5, sizes[-1]))

    def loss_at(flat):
        set_flat_params(net, flat)
        out, _ = net.forward(x)
        return float(np.sum((out - target) ** 2))

    theta = flat_params(net)
    fd = finite_diff_grad(loss_at, theta)
    set_flat_params(net, theta)
    out, cache = net.forward(x)
    pgrads, _ = net.backward(cache, 2.0 * (out - target))
    an = np.concatenate([np.concatenate([dW.ravel(), db.ravel()])
                         for dW, db in pgrads])
    assert grads_close(fd, an, tol=1e-6)


def test_input_grad_matches_finite_differences():
    rng = np.random.default_rng(7)
    net = nn.init_network([4, 5, 3], rng)
    x0 = rng.standard_normal(4)

    def loss_at(x):
        out, _ = net.forward(x)
        return float(np.sum(out ** 2))

    fd = finite_diff_grad(loss_at, x0)
    out, cache = net.forward(x0)
    _, gin = net.backward(cache, 2.0 * out)
    assert grads_close(fd, gin, tol=1e-6)


def test_backward_sums_over_batch():
    rng = np.random.default_rng(8)
    net = nn.init_network([3, 4, 2], rng)
    x = rng.standard_normal((6, 3))
    g = rng.standard_normal((6, 2))
    out, cache = net.forward(x)
    pg_all, _ = net.backward(cache, g)
    # oracle: sum of per-row backward calls
    acc = nn.zero_grads_like(net)
    for i in range(6):
        _, c = net.forward(x[i])
        pg, _ = net.backward(c, g[i])
        nn.accumulate_grads(acc, pg)
    for (aW, ab), (dW, db) in zip(acc, pg_all):
        np.testing.assert_allclose(aW, dW, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(ab, db, rtol=1e-10, atol=1e-12)


def test_backward_rejects_foreign_cache():
    rng = np.random.default_rng(9)
    a = nn.init_network([2, 2], rng)
    b = nn.init_network([2, 2], rng)
    _, cache = a.forward(np.zeros(2))
    with pytest.raises(UsageError):
        b.backward(cache, np.zeros(2))


# -- init ------------------------------------------------------------------

def test_init_network_bounds_and_shapes():
    rng = np.random.default_rng(10)
    net = nn.init_network([9, 16, 4], rng)
    assert [l.W.shape for l in net.layers] == [(16, 9), (4, 16)]
    for layer in net.layers:
        bound = 1.0 / np.sqrt(layer.in_dim)
        assert np.all(np.abs(layer.W) <= bound)
        assert np.all(np.abs(layer.b) <= bound)
    assert net.layers[0].activation == "silu"
    assert net.layers[-1].activation == "identity"


def test_init_network_rejects_bad_sizes():
    rng = np.random.default_rng(11)
    with pytest.raises(ConfigError):
        nn.init_network([4], rng)
    with pytest.raises(ConfigError):
        nn.init_network([4, 0, 2], rng)


def test_copy_is_deep():
    net = nn.init_network([2, 3], np.random.default_rng(12))
    dup = net.copy()
    dup.layers[0].W += 1.0
    assert not np.allclose(net.layers[0].W, dup.layers[0].W)


# -- Adam ------------------------------------------------------------------

def test_adam_matches_reference_trajectory():
    rng = np.random.default_rng(13)
    p0 = rng.standard_normal((4, 3))
    grads_seq = [rng.standard_normal((4, 3)) for _ in range(25)]
    ref = adam_reference(p0, grads_seq, lr=0.01)
    p = p0.copy()
    opt = nn.Adam([p], lr=0.01)
    for g in grads_seq:
        opt.step([p], [g])
    np.testing.assert_allclose(p, ref, rtol=1e-12)


def test_adam_first_step_is_lr_sized():
    # with bias correction the first update has magnitude ~lr regardless of g
    for scale in (1e-6, 1.0, 1e6):
        p = np.zeros(1)
        opt = nn.Adam([p], lr=0.05)
        opt.step([p], [np.array([scale])])
        # exact value is lr * g / (|g| + eps), so within eps/|g| of lr
        assert 0.98 * 0.05 <= abs(p[0]) <= 0.05 + 1e-12


def test_adam_shape_mismatch_raises():
    p = np.zeros((2, 2))
    opt = nn.Adam([p], lr=0.1)
    with pytest.raises(UsageError):
        opt.step([p], [np.zeros(3)])


# -- time embedding --------------------------------------------------------

def test_time_embedding_matches_reference():
    emb = nn.TimeEmbedding(dim=8)
    for t in (0, 1, 7, 50):
        np.testing.assert_allclose(emb(t), time_embedding_reference(t, 8),
                                   rtol=1e-12, atol=1e-15)


def test_time_embedding_batch_and_validation():
    emb = nn.TimeEmbedding(dim=4)
    batch = emb(np.array([1, 2, 3]))
    assert batch.shape == (3, 4)
    np.testing.assert_array_equal(batch[1], emb(2))
    with pytest.raises(ConfigError):
        nn.TimeEmbedding(dim=3)
    with pytest.raises(UsageError):
        emb(np.array([-1]))


@given(t=st.integers(min_value=0, max_value=10**6))
@settings(max_examples=50, deadline=None)
def test_time_embedding_rows_have_bounded_entries(t):
    emb = nn.TimeEmbedding(dim=6)
    v = emb(t)
    assert np.all(np.abs(v) <= 1.0 + 1e-12)
    # each (sin, cos) pair lies on the unit circle
    for k in range(3):
        assert abs(v[2 * k] ** 2 + v[2 * k + 1] ** 2 - 1.0) < 1e-12


# -- checkpoints -----------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(14)
    nets = {"enc": nn.init_network([3, 4, 2], rng),
            "head": nn.init_network([2, 2], rng, output_activation="silu")}
    opt = nn.Adam([p for n in nets.values() for p in n.params()], lr=0.002)
    x = rng.standard_normal((4, 3))
    out, cache = nets["enc"].forward(x)
    pg, _ = nets["enc"].backward(cache, out)
    grads = [g for pair in pg for g in pair]
    grads += [np.zeros_like(p) for p in nets["head"].params()]
    opt.step([p for n in nets.values() for p in n.params()], grads)

    path = tmp_path / "ckpt.npz"
    nn.save_checkpoint(path, nets, adam=opt, meta={"iteration": 3})
    nets2, opt2, meta = nn.load_checkpoint(path)

    assert meta == {"iteration": 3}
    assert set(nets2) == {"enc", "head"}
    for name in nets:
        for p, q in zip(nets[name].params(), nets2[name].params()):
            np.testing.assert_array_equal(p, q)
        assert [l.activation for l in nets[name].layers] == \
               [l.activation for l in nets2[name].layers]
    assert opt2.step_count == 1
    assert opt2.lr == 0.002
    for m, m2 in zip(opt.m, opt2.m):
        np.testing.assert_array_equal(m, m2)


def test_checkpoint_without_adam(tmp_path):
    nets = {"n": nn.init_network([2, 2], np.random.default_rng(15))}
    path = tmp_path / "c.npz"
    nn.save_checkpoint(path, nets)
    nets2, adam, meta = nn.load_checkpoint(path)
    assert adam is None
    assert meta == {}
    np.testing.assert_array_equal(nets["n"].layers[0].W,
                                  nets2["n"].layers[0].W)
