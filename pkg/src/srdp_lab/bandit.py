"""2D multimodal contextual bandit: expert GMMs per state quadrant.

Each state quadrant (relative to a center) maps to a two-component Gaussian
mixture over actions; opposite quadrants share a mixture. Datasets are
(state, action) tuples with horizon 1 and no rewards (the critic testbed
with rewards lives in the harness).
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np

from .errors import ConfigError, UsageError

DATASET_HEADER = "sx,sy,ax,ay"


class Box:
    """Axis-aligned rectangle [lo_x, hi_x] x [lo_y, hi_y]."""

    __slots__ = ("lo", "hi")

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)
        if self.lo.shape != (2,) or self.hi.shape != (2,):
            raise ConfigError("box corners must be 2-vectors")
        if np.any(self.hi <= self.lo):
            raise ConfigError(f"degenerate box {self.lo} .. {self.hi}")

    def sample(self, n, rng):
        return rng.uniform(self.lo, self.hi, size=(n, 2))

    def contains(self, points):
        p = np.atleast_2d(points)
        return np.all((p >= self.lo) & (p <= self.hi), axis=1)

    def clip(self, points):
        return np.clip(points, self.lo, self.hi)

    def as_list(self):
        return [self.lo.tolist(), self.hi.tolist()]


class BanditSpec:
    """Quadrant-to-mixture mapping plus the sampling boxes.

    mode_table maps quadrant index (1..4, standard orientation relative to
    `center`) to its (mu1, mu2) mean pair. sigma is the per-axis std dev of
    the shared diagonal covariance; mixture_weight is the probability of
    the first mode.
    """

    def __init__(self, center, mode_table, sigma, train_box, test_box,
                 action_box, mixture_weight=0.5, name="custom"):
        self.center = np.asarray(center, dtype=np.float64)
        if self.center.shape != (2,):
            raise ConfigError("center must be a 2-vector")
        if set(mode_table) != {1, 2, 3, 4}:
            raise ConfigError("mode_table must cover quadrants 1..4")
        self.mode_table = {
            q: (np.asarray(m1, dtype=np.float64), np.asarray(m2, dtype=np.float64))
            for q, (m1, m2) in mode_table.items()
        }
        self.sigma = np.broadcast_to(
            np.asarray(sigma, dtype=np.float64), (2,)
        ).copy()
        if np.any(self.sigma <= 0):
            raise ConfigError("sigma must be positive per axis")
        if not (0.0 < mixture_weight < 1.0):
            raise ConfigError(f"mixture_weight must be in (0,1), got {mixture_weight}")
        self.mixture_weight = float(mixture_weight)
        self.train_box = train_box
        self.test_box = test_box
        self.action_box = action_box
        self.name = name

    def to_dict(self):
        return {
            "name": self.name,
            "center": self.center.tolist(),
            "mode_table": {
                str(q): [m1.tolist(), m2.tolist()]
                for q, (m1, m2) in sorted(self.mode_table.items())
            },
            "sigma": self.sigma.tolist(),
            "mixture_weight": self.mixture_weight,
            "train_box": self.train_box.as_list(),
            "test_box": self.test_box.as_list(),
            "action_box": self.action_box.as_list(),
        }

    def spec_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def all_mode_means(self):
        """The distinct mode means (4 corner points for the built-in presets)."""
        seen = {}
        for m1, m2 in self.mode_table.values():
            seen[tuple(m1)] = m1
            seen[tuple(m2)] = m2
        return np.array(list(seen.values()))


def quadrant(states, center):
    """Standard quadrant index 1..4 of each state relative to center.

    Boundary rule: x >= 0 counts as right, y >= 0 counts as top, so axes
    resolve deterministically (e.g. the center itself lands in quadrant 1).
    """
    rel = np.atleast_2d(np.asarray(states, dtype=np.float64)) - center
    right = rel[:, 0] >= 0.0
    top = rel[:, 1] >= 0.0
    q = np.where(right & top, 1, np.where(~right & top, 2, np.where(~right & ~top, 3, 4)))
    return q if np.asarray(states).ndim == 2 else int(q[0])


# Case order of the piecewise mean definition: left-top, right-bottom,
# left-bottom, right-top; first matching closed region wins, which fixes
# the tie-break on the axes.
_CASE_ORDER = (2, 4, 3, 1)


def _case_quadrant(rel):
    x, y = rel
    for q in _CASE_ORDER:
        if q == 2 and x <= 0.0 and y >= 0.0:
            return q
        if q == 4 and x >= 0.0 and y <= 0.0:
            return q
        if q == 3 and x <= 0.0 and y <= 0.0:
            return q
        if q == 1 and x >= 0.0 and y >= 0.0:
            return q
    raise AssertionError("unreachable")


def gmm_means(state, spec):
    """(mu1, mu2) pair for one state, with the first-match boundary rule."""
    state = np.asarray(state, dtype=np.float64)
    if not np.all(np.isfinite(state)):
        raise UsageError("state must be finite")
    q = _case_quadrant(state - spec.center)
    return spec.mode_table[q]


def _means_batch(states, spec):
    """Vectorized (n,2,2) array of mean pairs; matches gmm_means per row."""
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    rel = states - spec.center
    out = np.empty((states.shape[0], 2, 2))
    # Axis points resolve to the left-top then right-bottom cases first,
    # exactly like the scalar path: assign in reverse priority order.
    x, y = rel[:, 0], rel[:, 1]
    masks = {
        1: (x >= 0) & (y >= 0),
        3: (x <= 0) & (y <= 0),
        4: (x >= 0) & (y <= 0),
        2: (x <= 0) & (y >= 0),
    }
    for q in (1, 3, 4, 2):
        m1, m2 = spec.mode_table[q]
        out[masks[q], 0] = m1
        out[masks[q], 1] = m2
    return out


def sample_actions(states, spec, rng):
    """Draw one GMM action per state (vectorized)."""
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    means = _means_batch(states, spec)
    pick = (rng.random(states.shape[0]) >= spec.mixture_weight).astype(int)
    mu = means[np.arange(states.shape[0]), pick]
    return mu + rng.standard_normal(states.shape) * spec.sigma


def sample_action(state, spec, rng):
    return sample_actions(np.asarray(state)[None, :], spec, rng)[0]


class BanditDataset:
    """Immutable (state, action) records plus provenance metadata."""

    def __init__(self, states, actions, metadata):
        self.states = np.asarray(states, dtype=np.float64)
        self.actions = np.asarray(actions, dtype=np.float64)
        if self.states.shape != self.actions.shape or self.states.ndim != 2:
            raise UsageError("states/actions must be matching (n, 2) arrays")
        self.metadata = dict(metadata)
        self.metadata["n"] = len(self.states)

    def __len__(self):
        return len(self.states)


def generate_dataset(spec, n, box, rng, seed=None):
    """States uniform over the chosen box, actions from the per-state GMM."""
    if n < 1:
        raise UsageError(f"n must be >= 1, got {n}")
    if box not in ("train", "test"):
        raise ConfigError(f"box must be 'train' or 'test', got {box!r}")
    b = spec.train_box if box == "train" else spec.test_box
    states = b.sample(n, rng)
    actions = sample_actions(states, spec, rng)
    meta = {"spec_hash": spec.spec_hash(), "spec_name": spec.name,
            "box": box, "seed": seed}
    return BanditDataset(states, actions, meta)


def save_dataset(ds, path):
    """CSV with 17-significant-digit floats plus a JSON metadata sidecar."""
    with open(path, "w") as fh:
        fh.write(DATASET_HEADER + "\n")
        for (sx, sy), (ax, ay) in zip(ds.states, ds.actions):
            fh.write(f"{sx:.17g},{sy:.17g},{ax:.17g},{ay:.17g}\n")
    with open(path + ".meta.json", "w") as fh:
        json.dump(ds.metadata, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 4:
        raise UsageError(f"expected 4 columns in {path}")
    meta_path = path + ".meta.json"
    meta = {}
    if os.path.exists(meta_path):
        with open(meta_path) as fh:
            meta = json.load(fh)
    return BanditDataset(data[:, :2], data[:, 2:], meta)


def ground_truth_set(spec, states, m_per_state, rng):
    """m true-GMM action samples per state, bucketed by state quadrant."""
    if m_per_state < 1:
        raise UsageError(f"m_per_state must be >= 1, got {m_per_state}")
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    rep = np.repeat(states, m_per_state, axis=0)
    acts = sample_actions(rep, spec, rng)
    quads = np.repeat(quadrant(states, spec.center), m_per_state)
    return {q: acts[quads == q] for q in (1, 2, 3, 4)}


def unit_preset(train_halfwidth=0.08, name=None):
    """Unit-square bandit: antipodal mode pairs at +/-0.8, sigma 0.05."""
    pair_main = ((-0.8, -0.8), (0.8, 0.8))   # left-top / right-bottom states
    pair_anti = ((-0.8, 0.8), (0.8, -0.8))   # left-bottom / right-top states
    h = float(train_halfwidth)
    if not (0.0 < h <= 1.0):
        raise ConfigError(f"train_halfwidth must be in (0, 1], got {h}")
    return BanditSpec(
        center=(0.0, 0.0),
        mode_table={1: pair_anti, 2: pair_main, 3: pair_anti, 4: pair_main},
        sigma=(0.05, 0.05),
        train_box=Box((-h, -h), (h, h)),
        test_box=Box((-1.0, -1.0), (1.0, 1.0)),
        action_box=Box((-1.0, -1.0), (1.0, 1.0)),
        name=name or f"unit{h:g}",
    )


def ur10_preset():
    """Workspace-shifted preset: center (-0.95, 0.1), corner modes, sigma 0.015."""
    ur = (-0.8, 0.35)    # right-upper mode
    ul = (-1.1, 0.35)    # left-upper mode
    ll = (-1.1, -0.15)   # left-bottom mode
    lr = (-0.8, -0.15)   # right-bottom mode
    return BanditSpec(
        center=(-0.95, 0.1),
        mode_table={1: (ul, lr), 2: (ll, ur), 3: (ul, lr), 4: (ll, ur)},
        sigma=(0.015, 0.015),
        train_box=Box((-1.0, 0.03), (-0.9, 0.17)),
        test_box=Box((-1.2, -0.25), (-0.7, 0.45)),
        action_box=Box((-1.2, -0.25), (-0.7, 0.45)),
        name="ur10",
    )


PRESETS = {
    "unit005": lambda: unit_preset(0.05, name="unit005"),
    "unit008": lambda: unit_preset(0.08, name="unit008"),
    "unit_full": lambda: unit_preset(1.0, name="unit_full"),
    "ur10": ur10_preset,
}


def get_preset(name):
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choices: {sorted(PRESETS)}")
