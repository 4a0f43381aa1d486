"""Figure rendering: evaluation scatters (SVG) and chamfer training curves.

SVG output is made byte-deterministic by pinning the hash salt and
stripping the date metadata, so identical (policy, seed) pairs produce
identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .bandit import quadrant

QUADRANT_COLORS = {1: "magenta", 2: "green", 3: "#C08552", 4: "blue"}


def _deterministic_save(fig, path, seed):
    with plt.rc_context({"svg.hashsalt": str(seed)}):
        if str(path).endswith(".svg"):
            fig.savefig(path, format="svg", metadata={"Date": None})
        else:
            fig.savefig(path, dpi=150)
    plt.close(fig)


def emit_scatter_svg(policy, spec, n, seed, path):
    """Scatter of evaluation states colored by the quadrant of their action.

    Generated actions are drawn as black dots. n=0 still produces a valid
    figure with axes.
    """
    rng = np.random.default_rng([int(seed)])
    fig, ax = plt.subplots(figsize=(4, 4))
    if n > 0:
        states = spec.test_box.sample(n, rng)
        actions = policy.sample_actions(states, rng)
        action_quads = quadrant(actions, spec.center)
        for q in (1, 2, 3, 4):
            mask = action_quads == q
            ax.scatter(states[mask, 0], states[mask, 1], s=6,
                       color=QUADRANT_COLORS[q], linewidths=0)
        ax.scatter(actions[:, 0], actions[:, 1], s=4, color="black",
                   linewidths=0)
    lo, hi = spec.test_box.lo, spec.test_box.hi
    pad = 0.05 * (hi - lo)
    ax.set_xlim(lo[0] - pad[0], hi[0] + pad[0])
    ax.set_ylim(lo[1] - pad[1], hi[1] + pad[1])
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title(f"states by action quadrant (n={n})")
    _deterministic_save(fig, path, seed)
    return path


def scatter_color_fractions(policy, spec, n, seed):
    """Per state-quadrant histogram of assigned colors (action quadrants).

    Structural check used by tests: a policy that conditions on state makes
    each state quadrant near-unanimous in color.
    """
    rng = np.random.default_rng([int(seed)])
    states = spec.test_box.sample(n, rng)
    actions = policy.sample_actions(states, rng)
    sq = quadrant(states, spec.center)
    aq = quadrant(actions, spec.center)
    out = {}
    for q in (1, 2, 3, 4):
        counts = np.bincount(aq[sq == q], minlength=5)[1:]
        out[q] = counts / max(1, counts.sum())
    return out


def plot_chamfer_curves(summaries, path, seed=0):
    """Mean +/- std chamfer total vs iteration, one curve per labeled run."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, rows in summaries.items():
        iters = [r["iter"] for r in rows]
        mean = np.array([r["chamfer_mean"] for r in rows])
        std = np.array([r["chamfer_std"] for r in rows])
        ax.plot(iters, mean, marker="o", label=label)
        ax.fill_between(iters, mean - std, mean + std, alpha=0.2)
    ax.set_xlabel("training iteration")
    ax.set_ylabel("total chamfer distance")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _deterministic_save(fig, path, seed)
    return path
