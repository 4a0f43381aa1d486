"""Chamfer distance and grouped evaluation against the true action GMMs.

Chamfer convention: symmetric sum of mean nearest-neighbor Euclidean
distances (non-squared). Grouped evaluation samples states uniformly over
the test box, groups them by state quadrant, and compares one generated
action per state against a reference set drawn from the ground-truth GMMs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .bandit import ground_truth_set, quadrant, sample_actions
from .errors import UsageError


def chamfer(A, B):
    """Mean nearest-neighbor distance A->B plus B->A."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise UsageError("chamfer needs non-empty point sets")
    d_ab, _ = cKDTree(B).query(A)
    d_ba, _ = cKDTree(A).query(B)
    return float(np.mean(d_ab) + np.mean(d_ba))


@dataclass
class ChamferReport:
    per_group: dict = field(default_factory=dict)  # quadrant -> distance
    total: float = 0.0
    n_eval_states: int = 0
    m_reference: int = 0
    seed: int | None = None


class OracleGmmPolicy:
    """Emits one true-GMM sample per state; the reference-quality baseline."""

    def __init__(self, spec):
        self.spec = spec

    def sample_actions(self, states, rng):
        return sample_actions(states, self.spec, rng)


class SingleModeOraclePolicy:
    """Deterministically emits the first mode mean of each state's pair."""

    def __init__(self, spec):
        self.spec = spec

    def sample_actions(self, states, rng):
        from .bandit import _means_batch

        return _means_batch(states, self.spec)[:, 0, :].copy()


def grouped_chamfer(policy, spec, n_eval=1000, m_ref=10, rng=None, seed=None):
    """Per-quadrant Chamfer between generated and ground-truth action sets.

    `policy` is anything exposing sample_actions(states, rng). States are
    drawn uniformly over the test box and grouped by their own quadrant.
    """
    if n_eval < 4:
        raise UsageError(f"n_eval must be >= 4, got {n_eval}")
    if rng is None:
        rng = np.random.default_rng(seed)
    states = spec.test_box.sample(n_eval, rng)
    generated = policy.sample_actions(states, rng)
    reference = ground_truth_set(spec, states, m_ref, rng)
    quads = quadrant(states, spec.center)
    report = ChamferReport(n_eval_states=n_eval, m_reference=m_ref, seed=seed)
    for q in (1, 2, 3, 4):
        gen_q = generated[quads == q]
        if gen_q.shape[0] == 0:
            raise UsageError(f"no evaluation states in quadrant {q}; raise n_eval")
        report.per_group[q] = chamfer(gen_q, reference[q])
    report.total = float(sum(report.per_group.values()))
    return report


def chamfer_noise_floor(spec, n_eval=1000, m_ref=10, rng=None, seed=None):
    """Grouped self-distance of the true GMM: oracle samples vs reference."""
    return grouped_chamfer(OracleGmmPolicy(spec), spec, n_eval=n_eval,
                           m_ref=m_ref, rng=rng, seed=seed)


def quadrant_accuracy(policy, spec, n=1000, rng=None, seed=None):
    """Fraction of states whose action lands within 3 sigma of a true mode."""
    if n < 1:
        raise UsageError(f"n must be >= 1, got {n}")
    if rng is None:
        rng = np.random.default_rng(seed)
    states = spec.test_box.sample(n, rng)
    actions = policy.sample_actions(states, rng)
    from .bandit import _means_batch

    means = _means_batch(states, spec)
    radius = 3.0 * float(np.max(spec.sigma))
    d1 = np.linalg.norm(actions - means[:, 0, :], axis=1)
    d2 = np.linalg.norm(actions - means[:, 1, :], axis=1)
    return float(np.mean(np.minimum(d1, d2) <= radius))
