"""Independent reference implementations used as test oracles.

Everything here is written directly from the defining formulas, without
importing any logic from the package under test (only its data containers
where unavoidable). Tests compare package outputs against these.
"""

import numpy as np


def finite_diff_grad(f, x, h=1e-6):
    """Central finite-difference gradient of scalar f at flat array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        g.flat[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def grads_close(fd, an, tol=1e-5, floor=1e-8):
    """Elementwise |fd-an| <= tol*max(|fd|,|an|) or <= floor.

    The absolute floor absorbs finite-difference noise on near-zero entries
    (central differences carry ~1e-10 absolute error, which is a huge
    *relative* error on a 1e-7 gradient).
    """
    fd = np.asarray(fd, dtype=np.float64).ravel()
    an = np.asarray(an, dtype=np.float64).ravel()
    diff = np.abs(fd - an)
    scale = np.maximum(np.abs(fd), np.abs(an))
    return bool(np.all((diff <= tol * scale) | (diff <= floor)))


def max_rel_err(fd, an, floor=1e-8):
    fd = np.asarray(fd, dtype=np.float64).ravel()
    an = np.asarray(an, dtype=np.float64).ravel()
    diff = np.abs(fd - an)
    scale = np.maximum(np.maximum(np.abs(fd), np.abs(an)), floor)
    return float(np.max(diff / scale))


def mlp_forward(params, x, acts):
    """Plain forward pass: params = [(W0, b0), ...], acts per layer."""
    h = np.atleast_2d(np.asarray(x, dtype=np.float64))
    for (W, b), act in zip(params, acts):
        h = h @ W.T + b
        if act == "silu":
            h = h / (1.0 + np.exp(-h))
    return h


def adam_reference(p0, grads_seq, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Textbook bias-corrected Adam applied to one array over a gradient list."""
    p = np.asarray(p0, dtype=np.float64).copy()
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for t, g in enumerate(grads_seq, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        p = p - lr * (m / (1 - beta1**t)) / (np.sqrt(v / (1 - beta2**t)) + eps)
    return p


def chamfer_brute(A, B):
    """Symmetric sum of the two directed mean nearest-neighbor distances."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    d = np.sqrt(((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=2))
    return float(d.min(axis=1).mean() + d.min(axis=0).mean())


def linear_alpha_bar(T, beta_min, beta_max):
    """Cumulative signal retention for a linearly spaced beta schedule."""
    betas = np.linspace(beta_min, beta_max, T)
    return betas, np.cumprod(1.0 - betas)


def vp_alpha_bar(T, beta_min, beta_max):
    """Variance-preserving discretization: alpha_bar_t = exp(-integral)."""
    t = np.arange(1, T + 1)
    betas = 1.0 - np.exp(-beta_min / T - 0.5 * (beta_max - beta_min)
                         * (2 * t - 1) / T**2)
    return betas, np.cumprod(1.0 - betas)


def gmm_mean_pair(state):
    """Expert mode-mean pair for a 2D state, by quadrant of the state.

    Axes use closed inequalities checked in the order: left-top, right-bottom,
    left-bottom, right-top (first match wins).
    """
    x, y = float(state[0]), float(state[1])
    if x <= 0 and y >= 0:
        return ((-0.8, -0.8), (0.8, 0.8))
    if x >= 0 and y <= 0:
        return ((-0.8, -0.8), (0.8, 0.8))
    if x <= 0 and y <= 0:
        return ((-0.8, 0.8), (0.8, -0.8))
    return ((-0.8, 0.8), (0.8, -0.8))


def time_embedding_reference(t, dim, base=10000.0):
    """Interleaved sin/cos positional features for scalar timestep t."""
    out = np.zeros(dim)
    for k in range(dim // 2):
        ang = t * base ** (-2.0 * k / dim)
        out[2 * k] = np.sin(ang)
        out[2 * k + 1] = np.cos(ang)
    return out
