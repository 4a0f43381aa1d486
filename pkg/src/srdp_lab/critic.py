"""Double-critic Q-learning with target networks and scaled Q-guidance.

Two online critics are regressed toward r + gamma * (1 - done) * min of the
two target critics evaluated at an action sampled from the target policy.
The guidance term is eta * E[Q1(s, a0)] / E[|Q1(s, a)|] with a0 sampled
through the full differentiable reverse chain; the denominator is a
stop-gradient batch statistic over dataset actions. Subtracting the
guidance from the cloning loss gives the full policy objective.
"""

from __future__ import annotations

import numpy as np

from . import nn
from .errors import ConfigError, NumericError, UsageError

DENOM_GUARD = 1e-8


def _check_batch(*arrays):
    n = None
    for a in arrays:
        a = np.asarray(a)
        if a.shape[0] == 0:
            raise UsageError("empty batch")
        if n is None:
            n = a.shape[0]
        elif a.shape[0] != n:
            raise UsageError("batch arrays have mismatched lengths")
    return n


class CriticEnsemble:
    def __init__(self, q1, q2, policy, gamma=0.99, polyak_rho=0.005, eta=1.0):
        if not (0.0 < gamma <= 1.0):
            raise ConfigError(f"gamma must be in (0, 1], got {gamma}")
        if not (0.0 < polyak_rho < 1.0):
            raise ConfigError(f"polyak_rho must be in (0, 1), got {polyak_rho}")
        if eta < 0.0:
            raise ConfigError(f"eta must be >= 0, got {eta}")
        if q1.output_dim != 1 or q2.output_dim != 1:
            raise ConfigError("critics must be scalar-valued")
        if q1.input_dim != q2.input_dim:
            raise ConfigError("critics must share an input dim")
        self.q1 = q1
        self.q2 = q2
        self.q1_target = q1.copy()
        self.q2_target = q2.copy()
        self.policy_target = policy.clone()
        self.gamma = float(gamma)
        self.polyak_rho = float(polyak_rho)
        self.eta = float(eta)

    @classmethod
    def create(cls, state_dim, action_dim, policy, rng, hidden=(256, 256, 256),
               gamma=0.99, polyak_rho=0.005, eta=1.0):
        sizes = [state_dim + action_dim, *hidden, 1]
        q1 = nn.init_network(sizes, rng)
        q2 = nn.init_network(sizes, rng)
        return cls(q1, q2, policy, gamma=gamma, polyak_rho=polyak_rho, eta=eta)

    def critic_params(self):
        return self.q1.params() + self.q2.params()

    def target_values(self, s2, a2):
        """(min over targets, q1_target, q2_target) at (s', a')."""
        sa2 = np.concatenate([s2, a2], axis=1)
        qt1, _ = self.q1_target.forward(sa2)
        qt2, _ = self.q2_target.forward(sa2)
        return np.minimum(qt1, qt2), qt1, qt2

    def bellman_loss_and_grads(self, batch, rng):
        """(loss, critic grads) for the double-Q regression.

        batch is a dict with keys s, a, r, s2, done. The regression target is
        a constant: no gradient flows through the target nets or the sampled
        next action. Loss averages over the batch and both critics.
        """
        s = np.asarray(batch["s"], dtype=np.float64)
        a = np.asarray(batch["a"], dtype=np.float64)
        r = np.asarray(batch["r"], dtype=np.float64).reshape(-1)
        s2 = np.asarray(batch["s2"], dtype=np.float64)
        done = np.asarray(batch["done"], dtype=np.float64).reshape(-1)
        n = _check_batch(s, a, r, s2, done)
        a2 = self.policy_target.sample_actions(s2, rng)
        qmin, _, _ = self.target_values(s2, a2)
        y = r + self.gamma * (1.0 - done) * qmin[:, 0]
        sa = np.concatenate([s, a], axis=1)
        loss = 0.0
        grads = []
        for q in (self.q1, self.q2):
            qv, cache = q.forward(sa)
            err = qv[:, 0] - y
            loss += float(np.mean(err**2))
            g = (err / n)[:, None]  # d(loss)/dq with the 1/2 critic average
            qg, _ = q.backward(cache, g)
            grads.extend(qg)
        flat = []
        for dW, db in grads:
            flat.append(dW)
            flat.append(db)
        return loss / 2.0, flat

    def bellman_loss(self, batch, rng):
        loss, _ = self.bellman_loss_and_grads(batch, rng)
        return loss

    def polyak_update(self, policy):
        """target <- (1 - rho) * target + rho * online for critics and policy."""
        rho = self.polyak_rho
        pairs = [
            (self.q1_target.params(), self.q1.params()),
            (self.q2_target.params(), self.q2.params()),
            (self.policy_target.parameters(), policy.parameters()),
        ]
        for targets, onlines in pairs:
            if len(targets) != len(onlines):
                raise UsageError("target/online parameter lists differ in length")
            for pt, po in zip(targets, onlines):
                pt *= 1.0 - rho
                pt += rho * po

    def q_guidance_and_grads(self, policy, states, data_states, data_actions, rng):
        """Scaled expected Q of policy actions, with policy gradients.

        Returns (value, grads dict). value = eta * mean Q1(s, a0) / denom with
        denom = mean |Q1(s, a)| over dataset pairs (stop-gradient, guarded).
        """
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        data_states = np.atleast_2d(np.asarray(data_states, dtype=np.float64))
        data_actions = np.atleast_2d(np.asarray(data_actions, dtype=np.float64))
        n = _check_batch(states)
        _check_batch(data_states, data_actions)
        q_data, _ = self.q1.forward(np.concatenate([data_states, data_actions], axis=1))
        denom = float(np.mean(np.abs(q_data)))
        if denom < DENOM_GUARD:
            raise NumericError(f"guidance denominator {denom} below {DENOM_GUARD}")
        a0, chain = policy.sample_actions(states, rng, with_cache=True)
        q_pi, cache = self.q1.forward(np.concatenate([states, a0], axis=1))
        value = self.eta * float(np.mean(q_pi)) / denom
        g_out = np.full((n, 1), self.eta / (denom * n))
        _, g_sa = self.q1.backward(cache, g_out)  # critic params not updated here
        grads = policy.chain_backward(chain, g_sa[:, states.shape[1]:])
        return value, grads

    def q_guidance(self, policy, states, data_states, data_actions, rng):
        value, _ = self.q_guidance_and_grads(policy, states, data_states,
                                             data_actions, rng)
        return value

    def srdp_total_loss_and_grads(self, policy, batch, rng):
        """Cloning loss minus guidance, with policy gradients only.

        Returns (total, l_bc, guidance, grads dict).
        """
        s = np.asarray(batch["s"], dtype=np.float64)
        a = np.asarray(batch["a"], dtype=np.float64)
        l_bc, _, _, grads = policy.bc_loss_and_grads(s, a, rng)
        guidance, g_grads = self.q_guidance_and_grads(policy, s, s, a, rng)
        for name in grads:
            for (dW, db), (gW, gb) in zip(grads[name], g_grads[name]):
                dW -= gW
                db -= gb
        return l_bc - guidance, l_bc, guidance, grads

    def srdp_total_loss(self, policy, batch, rng):
        total, _, _, _ = self.srdp_total_loss_and_grads(policy, batch, rng)
        return total
