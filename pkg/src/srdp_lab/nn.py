"""Minimal dense-network engine with exact reverse-mode gradients.

Everything runs in float64 so finite-difference checks stay tight. Networks
are plain stacks of affine layers with either a smooth self-gated ("silu")
or identity activation. Forward passes return a cache that the matching
backward pass consumes; there is no general-purpose autodiff graph.
"""

from __future__ import annotations

import json

import numpy as np
from scipy.special import expit

from .errors import ConfigError, NumericError, UsageError

ACTIVATIONS = ("silu", "identity")

CHECKPOINT_VERSION = "srdp-lab-ckpt-1"


def silu(x):
    s = expit(x)
    return x * s


def silu_grad(x):
    s = expit(x)
    return s * (1.0 + x * (1.0 - s))


class Layer:
    """One affine map plus activation. W is (out, in), b is (out,)."""

    __slots__ = ("W", "b", "activation")

    def __init__(self, W, b, activation="silu"):
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}")
        W = np.asarray(W, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if W.ndim != 2 or b.ndim != 1 or W.shape[0] != b.shape[0]:
            raise ConfigError(f"bad layer shapes W{W.shape} b{b.shape}")
        self.W = W
        self.b = b
        self.activation = activation

    @property
    def in_dim(self):
        return self.W.shape[1]

    @property
    def out_dim(self):
        return self.W.shape[0]


class ForwardCache:
    """Activation trace for one forward call; consumed by backward."""

    __slots__ = ("net", "inputs", "pres", "was_1d")

    def __init__(self, net, inputs, pres, was_1d):
        self.net = net
        self.inputs = inputs
        self.pres = pres
        self.was_1d = was_1d


class DenseNet:
    def __init__(self, layers):
        if not layers:
            raise ConfigError("network needs at least one layer")
        for a, b in zip(layers[:-1], layers[1:]):
            if a.out_dim != b.in_dim:
                raise ConfigError(
                    f"layer dims do not chain: {a.out_dim} -> {b.in_dim}"
                )
        self.layers = list(layers)

    @property
    def input_dim(self):
        return self.layers[0].in_dim

    @property
    def output_dim(self):
        return self.layers[-1].out_dim

    def forward(self, x):
        """Run the net on a vector or a (batch, in_dim) matrix.

        Returns (output, cache); the cache suffices for an exact backward
        pass through this exact call.
        """
        x = np.asarray(x, dtype=np.float64)
        was_1d = x.ndim == 1
        if was_1d:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise UsageError(
                f"input has shape {x.shape}, expected (*, {self.input_dim})"
            )
        if not np.all(np.isfinite(x)):
            raise NumericError("non-finite network input")
        inputs, pres = [], []
        for layer in self.layers:
            inputs.append(x)
            pre = x @ layer.W.T + layer.b
            pres.append(pre)
            x = silu(pre) if layer.activation == "silu" else pre
        if not np.all(np.isfinite(x)):
            raise NumericError("non-finite activation in forward pass")
        out = x[0] if was_1d else x
        return out, ForwardCache(self, inputs, pres, was_1d)

    def backward(self, cache, output_grad):
        """Exact gradients for the forward call that produced `cache`.

        Returns (param_grads, input_grad) where param_grads is a list of
        (dW, db) per layer, summed over the batch.
        """
        if not isinstance(cache, ForwardCache) or cache.net is not self:
            raise UsageError("cache does not belong to this network")
        g = np.asarray(output_grad, dtype=np.float64)
        if cache.was_1d:
            if g.ndim != 1:
                raise UsageError("output_grad rank does not match forward call")
            g = g[None, :]
        if g.shape != (cache.inputs[0].shape[0], self.output_dim):
            raise UsageError(
                f"output_grad shape {g.shape} mismatches cached forward"
            )
        param_grads = [None] * len(self.layers)
        for k in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[k]
            if layer.activation == "silu":
                g = g * silu_grad(cache.pres[k])
            dW = g.T @ cache.inputs[k]
            db = g.sum(axis=0)
            param_grads[k] = (dW, db)
            g = g @ layer.W
        input_grad = g[0] if cache.was_1d else g
        return param_grads, input_grad

    def params(self):
        """Flat list of parameter arrays, in-place mutable."""
        out = []
        for layer in self.layers:
            out.append(layer.W)
            out.append(layer.b)
        return out

    def check_finite(self):
        for p in self.params():
            if not np.all(np.isfinite(p)):
                raise NumericError("non-finite network parameter")

    def copy(self):
        return DenseNet(
            [Layer(l.W.copy(), l.b.copy(), l.activation) for l in self.layers]
        )


def zero_grads_like(net):
    return [(np.zeros_like(l.W), np.zeros_like(l.b)) for l in net.layers]


def accumulate_grads(acc, grads):
    for (aW, ab), (gW, gb) in zip(acc, grads):
        aW += gW
        ab += gb


def init_network(sizes, rng, hidden_activation="silu", output_activation="identity"):
    """Uniform fan-in initialization: W, b ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2:
        raise ConfigError("need at least input and output sizes")
    if any(s <= 0 for s in sizes):
        raise ConfigError(f"zero or negative layer size in {sizes}")
    layers = []
    for k, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / np.sqrt(n_in)
        W = rng.uniform(-bound, bound, size=(n_out, n_in))
        b = rng.uniform(-bound, bound, size=n_out)
        act = output_activation if k == len(sizes) - 2 else hidden_activation
        layers.append(Layer(W, b, act))
    return DenseNet(layers)


class Adam:
    """Standard bias-corrected Adam over a flat parameter list."""

    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        if len(params) != len(self.m) or len(grads) != len(self.m):
            raise UsageError("parameter/gradient count mismatch")
        self.step_count += 1
        t = self.step_count
        for i, (p, g) in enumerate(zip(params, grads)):
            if p.shape != g.shape or p.shape != self.m[i].shape:
                raise UsageError(
                    f"shape mismatch at param {i}: {p.shape} vs {g.shape}"
                )
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / (1.0 - self.beta1**t)
            v_hat = self.v[i] / (1.0 - self.beta2**t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            if not np.all(np.isfinite(p)):
                raise NumericError(f"non-finite parameter after Adam step {t}")


class TimeEmbedding:
    """Sinusoidal timestep embedding: interleaved (sin, cos) pairs."""

    def __init__(self, dim=16, base=10000.0):
        if dim <= 0 or dim % 2 != 0:
            raise ConfigError(f"embedding dim must be even and positive, got {dim}")
        if base <= 1.0:
            raise ConfigError(f"frequency base must exceed 1, got {base}")
        self.dim = int(dim)
        self.base = float(base)
        self._inv_freq = self.base ** (-2.0 * np.arange(dim // 2) / dim)

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        was_scalar = t.ndim == 0
        if was_scalar:
            t = t[None]
        if np.any(t < 0):
            raise UsageError("timesteps must be non-negative")
        ang = t[:, None] * self._inv_freq[None, :]
        out = np.empty((t.shape[0], self.dim))
        out[:, 0::2] = np.sin(ang)
        out[:, 1::2] = np.cos(ang)
        return out[0] if was_scalar else out


def save_checkpoint(path, nets, adam=None, meta=None):
    """Serialize named networks (+ optional Adam state and JSON-able meta)."""
    arrays = {"version": np.array(CHECKPOINT_VERSION)}
    arrays["net_names"] = np.array(sorted(nets.keys()))
    for name, net in nets.items():
        arrays[f"net.{name}.n_layers"] = np.array(len(net.layers))
        for i, layer in enumerate(net.layers):
            arrays[f"net.{name}.{i}.W"] = layer.W
            arrays[f"net.{name}.{i}.b"] = layer.b
            arrays[f"net.{name}.{i}.act"] = np.array(layer.activation)
    if adam is not None:
        arrays["adam.hyper"] = np.array(
            [adam.lr, adam.beta1, adam.beta2, adam.eps, float(adam.step_count)]
        )
        for i, (m, v) in enumerate(zip(adam.m, adam.v)):
            arrays[f"adam.m.{i}"] = m
            arrays[f"adam.v.{i}"] = v
    arrays["meta"] = np.array(json.dumps(meta if meta is not None else {}))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Inverse of save_checkpoint -> (nets, adam_or_None, meta)."""
    data = np.load(path, allow_pickle=False)
    if str(data["version"]) != CHECKPOINT_VERSION:
        raise UsageError(f"unsupported checkpoint version {data['version']}")
    nets = {}
    for name in [str(n) for n in data["net_names"]]:
        n_layers = int(data[f"net.{name}.n_layers"])
        layers = [
            Layer(
                data[f"net.{name}.{i}.W"],
                data[f"net.{name}.{i}.b"],
                str(data[f"net.{name}.{i}.act"]),
            )
            for i in range(n_layers)
        ]
        nets[name] = DenseNet(layers)
    adam = None
    if "adam.hyper" in data:
        lr, b1, b2, eps, t = data["adam.hyper"]
        ms, vs = [], []
        i = 0
        while f"adam.m.{i}" in data:
            ms.append(data[f"adam.m.{i}"])
            vs.append(data[f"adam.v.{i}"])
            i += 1
        adam = Adam(ms, lr=lr, beta1=b1, beta2=b2, eps=eps)
        adam.m = ms
        adam.v = vs
        adam.step_count = int(t)
    meta = json.loads(str(data["meta"]))
    return nets, adam, meta
