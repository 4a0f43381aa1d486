"""Dual-head denoising policy: shared encoder, noise head, state head.

The "srdp" variant couples a diffusion head (noise prediction) and a state
head (input-state reconstruction) on one shared encoder; the combined
cloning loss is L_bc = L_dp + lambda * L_r with both terms sharing the
same (t, eps) draws. The reconstruction error is measured relative to
`state_scale` (typically the per-dimension standard deviation of the
training states) so that L_r is dimensionless and lambda keeps the same
meaning whether states span the unit box or a few centimetres; without
this, narrow training distributions would make the reconstruction term
vanish next to the noise-prediction term. The "bc_diffusion" variant is a
plain stacked net with a single affine noise head and no state head.

Action sampling runs the reverse chain from Gaussian noise with injected
noise for t >= 2 and none at t = 1, optionally clipping the final action
to the environment's action box. The chain supports an exact backward pass
so critic guidance can push gradients through every denoising step.
"""

from __future__ import annotations

import numpy as np

from . import nn
from .diffusion import forward_noise, reverse_coefficients
from .errors import ConfigError, NumericError, UsageError

VARIANTS = ("srdp", "bc_diffusion")


class ChainCache:
    """Per-step traces of one differentiable sampling pass."""

    __slots__ = ("steps", "n")

    def __init__(self, steps, _unused, n):
        # steps: list of (t, c_tp, c_enc, c_dh, clip_mask) in order t = T..1
        self.steps = steps
        self.n = n


class SrdpPolicy:
    def __init__(self, encoder, diffusion_head, time_proj, time_embedding,
                 schedule, action_dim, state_dim, lam=0.0, state_head=None,
                 variant="srdp", action_box=None, clip_actions=True,
                 clip_each_step=False, state_scale=1.0):
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}")
        if lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {lam}")
        if variant == "bc_diffusion" and state_head is not None:
            raise ConfigError("bc_diffusion variant has no state head")
        expect_in = action_dim + state_dim + time_proj.output_dim
        if encoder.input_dim != expect_in:
            raise ConfigError(
                f"encoder input dim {encoder.input_dim} != "
                f"action+state+time = {expect_in}"
            )
        if diffusion_head.input_dim != encoder.output_dim:
            raise ConfigError("diffusion head must consume the encoder output")
        if diffusion_head.output_dim != action_dim:
            raise ConfigError("diffusion head output dim must equal action_dim")
        if state_head is not None:
            if state_head.input_dim != encoder.output_dim:
                raise ConfigError("state head must consume the encoder output")
            if state_head.output_dim != state_dim:
                raise ConfigError("state head output dim must equal state_dim")
        if time_embedding.dim != time_proj.input_dim:
            raise ConfigError("time projection must consume the raw embedding")
        self.encoder = encoder
        self.diffusion_head = diffusion_head
        self.state_head = state_head
        self.time_proj = time_proj
        self.time_embedding = time_embedding
        self.schedule = schedule
        self.action_dim = int(action_dim)
        self.state_dim = int(state_dim)
        self.lam = float(lam)
        self.variant = variant
        self.action_box = action_box
        self.clip_actions = bool(clip_actions)
        self.clip_each_step = bool(clip_each_step)
        scale = np.broadcast_to(np.asarray(state_scale, dtype=np.float64),
                                (self.state_dim,)).copy()
        if np.any(scale <= 0) or not np.all(np.isfinite(scale)):
            raise ConfigError("state_scale entries must be positive and finite")
        self.state_scale = scale
        self.state_head_calls = 0

    # -- plumbing ---------------------------------------------------------

    def _nets(self):
        nets = {"encoder": self.encoder, "diffusion_head": self.diffusion_head,
                "time_proj": self.time_proj}
        if self.state_head is not None:
            nets["state_head"] = self.state_head
        return nets

    def parameters(self):
        out = []
        for name in sorted(self._nets()):
            out.extend(self._nets()[name].params())
        return out

    def zero_grads(self):
        return {name: nn.zero_grads_like(net) for name, net in self._nets().items()}

    def flatten_grads(self, gdict):
        out = []
        for name in sorted(self._nets()):
            for dW, db in gdict[name]:
                out.append(dW)
                out.append(db)
        return out

    def clone(self):
        return SrdpPolicy(
            self.encoder.copy(), self.diffusion_head.copy(), self.time_proj.copy(),
            self.time_embedding, self.schedule, self.action_dim, self.state_dim,
            lam=self.lam,
            state_head=None if self.state_head is None else self.state_head.copy(),
            variant=self.variant, action_box=self.action_box,
            clip_actions=self.clip_actions, clip_each_step=self.clip_each_step,
            state_scale=self.state_scale,
        )

    def manifest(self):
        return {
            "variant": self.variant,
            "lambda": self.lam,
            "action_dim": self.action_dim,
            "state_dim": self.state_dim,
            "time_dim": self.time_embedding.dim,
            "time_base": self.time_embedding.base,
            "clip_actions": self.clip_actions,
            "clip_each_step": self.clip_each_step,
            "state_scale": [float(v) for v in self.state_scale],
            "schedule": {
                "kind": self.schedule.kind,
                "T": self.schedule.T,
                "beta_min": self.schedule.beta_min,
                "beta_max": self.schedule.beta_max,
            },
        }

    # -- forward paths ----------------------------------------------------

    def _encode_cached(self, a_noisy, states, t):
        temb = self.time_embedding(t)
        tproj, c_tp = self.time_proj.forward(temb)
        x = np.concatenate(
            [np.atleast_2d(a_noisy), np.atleast_2d(states), np.atleast_2d(tproj)],
            axis=1,
        )
        z, c_enc = self.encoder.forward(x)
        return z, c_tp, c_enc

    def encode(self, noisy_action, state, t):
        """Shared representation z for one (noisy action, state, t) or a batch."""
        noisy_action = np.asarray(noisy_action, dtype=np.float64)
        was_1d = noisy_action.ndim == 1
        self.schedule.check_t(t)
        z, _, _ = self._encode_cached(noisy_action, state, t)
        return z[0] if was_1d else z

    def _draw(self, n, rng):
        t = rng.integers(1, self.schedule.T + 1, size=n)
        eps = rng.standard_normal((n, self.action_dim))
        return t, eps

    def _loss_forward(self, states, actions, t, eps, want_recon):
        a_noisy = forward_noise(actions, t, eps, self.schedule)
        z, c_tp, c_enc = self._encode_cached(a_noisy, states, t)
        eps_pred, c_dh = self.diffusion_head.forward(z)
        n = states.shape[0]
        l_dp = float(np.sum((eps - eps_pred) ** 2) / n)
        recon = None
        if want_recon:
            self.state_head_calls += 1
            s_pred, c_sh = self.state_head.forward(z)
            l_r = float(np.sum(((states - s_pred) / self.state_scale) ** 2) / n)
            recon = (s_pred, c_sh, l_r)
        return eps_pred, c_tp, c_enc, c_dh, l_dp, recon

    @staticmethod
    def _check_batch(states, actions):
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        if states.shape[0] == 0:
            raise UsageError("empty batch")
        if states.shape[0] != actions.shape[0]:
            raise UsageError("states/actions batch sizes differ")
        return states, actions

    def diffusion_loss(self, states, actions, rng):
        """Mean squared noise-prediction error over the batch."""
        states, actions = self._check_batch(states, actions)
        t, eps = self._draw(states.shape[0], rng)
        *_, l_dp, _ = self._loss_forward(states, actions, t, eps, want_recon=False)
        return l_dp

    def recon_loss(self, states, actions, rng):
        """Scale-normalized mean squared state-reconstruction error."""
        if self.state_head is None:
            raise UsageError("variant has no state head")
        states, actions = self._check_batch(states, actions)
        t, eps = self._draw(states.shape[0], rng)
        *_, recon = self._loss_forward(states, actions, t, eps, want_recon=True)
        return recon[2]

    def bc_loss(self, states, actions, rng):
        l_bc, _, _, _ = self.bc_loss_and_grads(states, actions, rng)
        return l_bc

    def bc_loss_and_grads(self, states, actions, rng):
        """(l_bc, l_dp, l_r, grads). Both loss terms share one (t, eps) draw.

        Gradients are exact derivatives of l_bc = l_dp + lambda * l_r with
        respect to every parameter (state-head gradients are exactly zero
        when lambda is 0).
        """
        states, actions = self._check_batch(states, actions)
        n = states.shape[0]
        t, eps = self._draw(n, rng)
        want_recon = self.state_head is not None
        eps_pred, c_tp, c_enc, c_dh, l_dp, recon = self._loss_forward(
            states, actions, t, eps, want_recon
        )
        grads = self.zero_grads()
        g_pred = 2.0 * (eps_pred - eps) / n
        dh_grads, gz = self.diffusion_head.backward(c_dh, g_pred)
        nn.accumulate_grads(grads["diffusion_head"], dh_grads)
        l_r = None
        if want_recon:
            s_pred, c_sh, l_r = recon
            g_spred = self.lam * 2.0 * (s_pred - states) / self.state_scale**2 / n
            sh_grads, gz_r = self.state_head.backward(c_sh, g_spred)
            nn.accumulate_grads(grads["state_head"], sh_grads)
            gz = gz + gz_r
        enc_grads, gx = self.encoder.backward(c_enc, gz)
        nn.accumulate_grads(grads["encoder"], enc_grads)
        tp_grads, _ = self.time_proj.backward(
            c_tp, gx[:, self.action_dim + self.state_dim:]
        )
        nn.accumulate_grads(grads["time_proj"], tp_grads)
        l_bc = l_dp + (self.lam * l_r if l_r is not None else 0.0)
        return l_bc, l_dp, l_r, grads

    # -- sampling ---------------------------------------------------------

    def sample_actions(self, states, rng, with_cache=False):
        """Reverse-chain sampling for a batch of states.

        Starts from a_T ~ N(0, I), injects fresh Gaussian noise for
        t >= 2 and none at t = 1, then clips to the action box if enabled.
        The state head is never evaluated.
        """
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        if states.shape[1] != self.state_dim:
            raise UsageError(
                f"state dim {states.shape[1]} != policy state_dim {self.state_dim}"
            )
        n = states.shape[0]
        a = rng.standard_normal((n, self.action_dim))
        can_clip = self.clip_actions and self.action_box is not None
        steps = []
        for t in range(self.schedule.T, 0, -1):
            z, c_tp, c_enc = self._encode_cached(a, states, np.full(n, t))
            eps_pred, c_dh = self.diffusion_head.forward(z)
            c1, c2, sigma = reverse_coefficients(t, self.schedule)
            noise = rng.standard_normal((n, self.action_dim)) if t >= 2 else 0.0
            a = c1 * (a - c2 * eps_pred) + sigma * noise
            if not np.all(np.isfinite(a)):
                raise NumericError(f"non-finite action during reverse chain at t={t}")
            # per-step clamp keeps the chain bounded on far-off-data states
            step_mask = 1.0
            if can_clip and (self.clip_each_step or t == 1):
                clipped = self.action_box.clip(a)
                step_mask = (clipped == a).astype(np.float64)
                a = clipped
            if with_cache:
                steps.append((t, c_tp, c_enc, c_dh, step_mask))
        if with_cache:
            return a, ChainCache(steps, None, n)
        return a

    def sample_action(self, state, rng):
        return self.sample_actions(np.asarray(state)[None, :], rng)[0]

    def chain_backward(self, cache, grad_a0, grads=None):
        """Backpropagate d(loss)/d(a_0) through the whole reverse chain.

        Accumulates parameter gradients into `grads` (a zero_grads dict) and
        returns it. Clipped coordinates pass zero gradient.
        """
        if not isinstance(cache, ChainCache):
            raise UsageError("cache must come from sample_actions(with_cache=True)")
        if grads is None:
            grads = self.zero_grads()
        g = np.asarray(grad_a0, dtype=np.float64)
        for t, c_tp, c_enc, c_dh, step_mask in reversed(cache.steps):
            g = g * step_mask
            c1, c2, _ = reverse_coefficients(t, self.schedule)
            dh_grads, gz = self.diffusion_head.backward(c_dh, -c1 * c2 * g)
            nn.accumulate_grads(grads["diffusion_head"], dh_grads)
            enc_grads, gx = self.encoder.backward(c_enc, gz)
            nn.accumulate_grads(grads["encoder"], enc_grads)
            tp_grads, _ = self.time_proj.backward(
                c_tp, gx[:, self.action_dim + self.state_dim:]
            )
            nn.accumulate_grads(grads["time_proj"], tp_grads)
            g = c1 * g + gx[:, : self.action_dim]
        return grads

    # -- serialization ----------------------------------------------------

    def save(self, path, adam=None, extra_meta=None):
        meta = {"policy": self.manifest()}
        if extra_meta:
            meta.update(extra_meta)
        nn.save_checkpoint(path, self._nets(), adam=adam, meta=meta)


def load_policy(path, action_box=None):
    """Rebuild a policy (and optional Adam state) from a checkpoint."""
    from .diffusion import build_schedule

    nets, adam, meta = nn.load_checkpoint(path)
    man = meta["policy"]
    sched = build_schedule(
        man["schedule"]["kind"], man["schedule"]["T"],
        man["schedule"]["beta_min"], man["schedule"]["beta_max"],
    )
    policy = SrdpPolicy(
        nets["encoder"], nets["diffusion_head"], nets["time_proj"],
        nn.TimeEmbedding(man["time_dim"], man["time_base"]), sched,
        man["action_dim"], man["state_dim"], lam=man["lambda"],
        state_head=nets.get("state_head"), variant=man["variant"],
        action_box=action_box, clip_actions=man["clip_actions"],
        clip_each_step=man.get("clip_each_step", False),
        state_scale=man.get("state_scale", 1.0),
    )
    return policy, adam, meta


def make_policy(variant, action_dim, state_dim, schedule, rng, lam=0.75,
                shared_hidden=(16, 16), head_hidden=16, time_dim=4,
                action_box=None, clip_actions=True, clip_each_step=False,
                state_scale=1.0):
    """Architecture presets.

    srdp: shared encoder with `shared_hidden` self-gated layers producing z,
    plus one hidden layer of width `head_hidden` per head. bc_diffusion:
    three stacked hidden layers (shared_hidden + head width) with a single
    affine noise head and no state head.
    """
    temb = nn.TimeEmbedding(time_dim)
    time_proj = nn.init_network([time_dim, time_dim], rng,
                                output_activation="silu")
    in_dim = action_dim + state_dim + time_dim
    if variant == "srdp":
        encoder = nn.init_network([in_dim, *shared_hidden], rng,
                                  output_activation="silu")
        z_dim = shared_hidden[-1]
        diffusion_head = nn.init_network([z_dim, head_hidden, action_dim], rng)
        state_head = nn.init_network([z_dim, head_hidden, state_dim], rng)
    elif variant == "bc_diffusion":
        encoder = nn.init_network([in_dim, *shared_hidden, head_hidden], rng,
                                  output_activation="silu")
        diffusion_head = nn.init_network([head_hidden, action_dim], rng)
        state_head = None
        lam = 0.0
    else:
        raise ConfigError(f"unknown variant {variant!r}")
    return SrdpPolicy(
        encoder, diffusion_head, time_proj, temb, schedule, action_dim,
        state_dim, lam=lam, state_head=state_head, variant=variant,
        action_box=action_box, clip_actions=clip_actions,
        clip_each_step=clip_each_step, state_scale=state_scale,
    )
