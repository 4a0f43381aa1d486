"""Double critics: Bellman regression, Polyak targets, Q-guidance."""

import numpy as np
import pytest

from srdp_lab import nn
from srdp_lab.critic import CriticEnsemble
from srdp_lab.diffusion import build_schedule
from srdp_lab.errors import ConfigError, NumericError, UsageError
from srdp_lab.policy import make_policy

from oracles import finite_diff_grad, grads_close


def tiny_setup(seed=0, hidden=(6,), eta=1.0, gamma=0.9):
    sched = build_schedule("linear", 3, 0.1, 0.7)
    rng = np.random.default_rng(seed)
    policy = make_policy("srdp", 2, 2, sched, rng, lam=0.5,
                         shared_hidden=(4,), head_hidden=3, time_dim=2)
    critic = CriticEnsemble.create(2, 2, policy, rng, hidden=hidden,
                                   gamma=gamma, polyak_rho=0.01, eta=eta)
    return policy, critic


def make_batch(seed=1, n=8):
    rng = np.random.default_rng(seed)
    return {
        "s": rng.uniform(-1, 1, (n, 2)),
        "a": rng.uniform(-1, 1, (n, 2)),
        "r": rng.uniform(-1, 0, n),
        "s2": rng.uniform(-1, 1, (n, 2)),
        "done": (rng.random(n) < 0.5).astype(float),
    }


def critic_flat(critic):
    return np.concatenate([p.ravel() for p in critic.critic_params()])


def set_critic_flat(critic, flat):
    pos = 0
    for p in critic.critic_params():
        p[...] = flat[pos:pos + p.size].reshape(p.shape)
        pos += p.size


# -- construction ----------------------------------------------------------

def test_create_validations():
    policy, critic = tiny_setup()
    assert critic.q1.input_dim == 4
    assert critic.q1.output_dim == 1
    with pytest.raises(ConfigError):
        CriticEnsemble(critic.q1, critic.q2, policy, gamma=0.0)
    with pytest.raises(ConfigError):
        CriticEnsemble(critic.q1, critic.q2, policy, polyak_rho=1.0)
    with pytest.raises(ConfigError):
        CriticEnsemble(critic.q1, critic.q2, policy, eta=-1.0)
    bad = nn.init_network([4, 2], np.random.default_rng(0))
    with pytest.raises(ConfigError):
        CriticEnsemble(bad, critic.q2, policy)


def test_targets_start_equal_to_online():
    _, critic = tiny_setup()
    for pt, po in zip(critic.q1_target.params(), critic.q1.params()):
        np.testing.assert_array_equal(pt, po)


# -- bellman ---------------------------------------------------------------

def test_bellman_target_formula():
    policy, critic = tiny_setup()
    batch = make_batch()
    rng_a = np.random.default_rng(2)
    loss, _ = critic.bellman_loss_and_grads(batch, np.random.default_rng(2))
    # oracle: recompute by hand with the same rng stream
    a2 = critic.policy_target.sample_actions(batch["s2"], rng_a)
    sa2 = np.concatenate([batch["s2"], a2], axis=1)
    qt1, _ = critic.q1_target.forward(sa2)
    qt2, _ = critic.q2_target.forward(sa2)
    y = batch["r"] + critic.gamma * (1 - batch["done"]) * np.minimum(
        qt1, qt2)[:, 0]
    ref = 0.0
    for q in (critic.q1, critic.q2):
        qv, _ = q.forward(np.concatenate([batch["s"], batch["a"]], axis=1))
        ref += np.mean((qv[:, 0] - y) ** 2)
    assert loss == pytest.approx(ref / 2.0)


def test_min_over_targets_inequality():
    _, critic = tiny_setup(seed=3)
    rng = np.random.default_rng(4)
    s2 = rng.uniform(-1, 1, (64, 2))
    a2 = rng.uniform(-1, 1, (64, 2))
    qmin, qt1, qt2 = critic.target_values(s2, a2)
    assert np.all(qmin <= qt1)
    assert np.all(qmin <= qt2)
    assert np.all((qmin == qt1) | (qmin == qt2))


def test_bellman_grads_match_finite_differences():
    policy, critic = tiny_setup(hidden=(5,))
    batch = make_batch(5, n=6)

    def loss_at(flat):
        set_critic_flat(critic, flat)
        loss, _ = critic.bellman_loss_and_grads(batch, np.random.default_rng(6))
        return loss

    theta = critic_flat(critic)
    fd = finite_diff_grad(loss_at, theta)
    set_critic_flat(critic, theta)
    _, grads = critic.bellman_loss_and_grads(batch, np.random.default_rng(6))
    an = np.concatenate([g.ravel() for g in grads])
    assert grads_close(fd, an, tol=1e-4)


def test_bellman_validation():
    _, critic = tiny_setup()
    bad = make_batch()
    bad["a"] = bad["a"][:3]
    with pytest.raises(UsageError):
        critic.bellman_loss_and_grads(bad, np.random.default_rng(0))


# -- polyak ----------------------------------------------------------------

def test_polyak_update_convex_combination():
    policy, critic = tiny_setup(seed=7)
    before = [p.copy() for p in critic.q1_target.params()]
    # perturb online so the update is visible
    for p in critic.q1.params():
        p += 1.0
    critic.polyak_update(policy)
    rho = critic.polyak_rho
    for bt, po, pt in zip(before, critic.q1.params(),
                          critic.q1_target.params()):
        np.testing.assert_allclose(pt, (1 - rho) * bt + rho * po, rtol=1e-12)


def test_polyak_tracks_policy_too():
    policy, critic = tiny_setup(seed=8)
    for p in policy.parameters():
        p += 0.5
    before = [p.copy() for p in critic.policy_target.parameters()]
    critic.polyak_update(policy)
    rho = critic.polyak_rho
    for bt, po, pt in zip(before, policy.parameters(),
                          critic.policy_target.parameters()):
        np.testing.assert_allclose(pt, (1 - rho) * bt + rho * po, rtol=1e-12)


def test_repeated_polyak_converges_to_online():
    policy, critic = tiny_setup(seed=9)
    for p in critic.q2.params():
        p[...] = 1.234
    for _ in range(2000):
        critic.polyak_update(policy)
    for pt in critic.q2_target.params():
        np.testing.assert_allclose(pt, 1.234, atol=1e-3)


# -- guidance --------------------------------------------------------------

def test_guidance_value_formula():
    policy, critic = tiny_setup(seed=10, eta=2.0)
    rng = np.random.default_rng(11)
    states = rng.uniform(-1, 1, (6, 2))
    ds = rng.uniform(-1, 1, (20, 2))
    da = rng.uniform(-1, 1, (20, 2))
    value = critic.q_guidance(policy, states, ds, da, np.random.default_rng(12))
    q_data, _ = critic.q1.forward(np.concatenate([ds, da], axis=1))
    a0 = policy.sample_actions(states, np.random.default_rng(12))
    q_pi, _ = critic.q1.forward(np.concatenate([states, a0], axis=1))
    expected = 2.0 * float(np.mean(q_pi)) / float(np.mean(np.abs(q_data)))
    assert value == pytest.approx(expected)


def test_guidance_policy_grads_match_finite_differences():
    policy, critic = tiny_setup(seed=13, hidden=(5,))
    rng = np.random.default_rng(14)
    states = rng.uniform(-1, 1, (4, 2))
    ds = rng.uniform(-1, 1, (10, 2))
    da = rng.uniform(-1, 1, (10, 2))

    def flat_params(pol):
        return np.concatenate([p.ravel() for p in pol.parameters()])

    def set_flat(pol, flat):
        pos = 0
        for p in pol.parameters():
            p[...] = flat[pos:pos + p.size].reshape(p.shape)
            pos += p.size

    def value_at(flat):
        set_flat(policy, flat)
        return critic.q_guidance(policy, states, ds, da,
                                 np.random.default_rng(15))

    theta = flat_params(policy)
    fd = finite_diff_grad(value_at, theta)
    set_flat(policy, theta)
    _, grads = critic.q_guidance_and_grads(policy, states, ds, da,
                                           np.random.default_rng(15))
    an = np.concatenate([g.ravel() for g in policy.flatten_grads(grads)])
    assert grads_close(fd, an, tol=1e-4)


def test_guidance_denominator_guard():
    policy, critic = tiny_setup(seed=16)
    for layer in critic.q1.layers:
        layer.W[...] = 0.0
        layer.b[...] = 0.0
    rng = np.random.default_rng(17)
    s = rng.uniform(-1, 1, (4, 2))
    with pytest.raises(NumericError):
        critic.q_guidance(policy, s, s, s, np.random.default_rng(18))


def test_total_loss_is_bc_minus_guidance_with_matching_grads():
    policy, critic = tiny_setup(seed=19)
    batch = make_batch(20, n=5)
    total, l_bc, guidance, grads = critic.srdp_total_loss_and_grads(
        policy, batch, np.random.default_rng(21))
    assert total == pytest.approx(l_bc - guidance)

    def flat_params(pol):
        return np.concatenate([p.ravel() for p in pol.parameters()])

    def set_flat(pol, flat):
        pos = 0
        for p in pol.parameters():
            p[...] = flat[pos:pos + p.size].reshape(p.shape)
            pos += p.size

    def total_at(flat):
        set_flat(policy, flat)
        return critic.srdp_total_loss(policy, batch, np.random.default_rng(21))

    theta = flat_params(policy)
    fd = finite_diff_grad(total_at, theta)
    set_flat(policy, theta)
    an = np.concatenate([g.ravel() for g in policy.flatten_grads(grads)])
    assert grads_close(fd, an, tol=1e-4)
