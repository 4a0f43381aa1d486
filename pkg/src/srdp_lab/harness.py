"""Experiment orchestration: seeded runs, periodic evaluation, CSV output.

Random-number discipline: every draw comes from a generator keyed by
(seed, stream, step), so resuming from a checkpoint at iteration k replays
exactly the draws an uninterrupted run would have made, and toggling
evaluation never perturbs the training stream.
"""

from __future__ import annotations

import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import bandit
from .config import ExperimentConfig
from .critic import CriticEnsemble
from .diffusion import build_schedule
from .errors import NumericError, UsageError
from .metrics import grouped_chamfer, quadrant_accuracy
from .nn import Adam
from .policy import load_policy, make_policy

STREAM_DATA = 101
STREAM_INIT = 202
STREAM_TRAIN = 303
STREAM_EVAL = 404

TIMELINE_COLUMNS = ("iter", "seed", "variant", "lambda", "l_dp", "l_r", "l_bc",
                    "chamfer_total", "quadrant_acc", "wallclock")
RESULT_COLUMNS = ("iter", "seed", "lambda", "variant", "group", "chamfer")


def rng_for(seed, stream, step=0):
    return np.random.default_rng([int(seed), int(stream), int(step)])


def make_synthetic_mdp(spec, n_states, seed):
    """Horizon-1 MDP over the bandit space for exercising the critics.

    Reward is the negative squared distance of the action to the nearest of
    the four true mode means; every transition is terminal.
    """
    if n_states < 1:
        raise UsageError(f"n_states must be >= 1, got {n_states}")
    rng = rng_for(seed, STREAM_DATA)
    s = spec.test_box.sample(n_states, rng)
    a = spec.action_box.sample(n_states, rng)
    means = spec.all_mode_means()
    d2 = ((a[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    r = -d2.min(axis=1)
    s2 = spec.test_box.sample(n_states, rng)
    done = np.ones(n_states)
    return {"s": s, "a": a, "r": r, "s2": s2, "done": done}


class SeedDiverged(RuntimeError):
    pass


class SeedRun:
    """One seed's training state; supports checkpoint resume."""

    def __init__(self, config, seed):
        self.config = config
        self.seed = int(seed)
        self.spec = bandit.get_preset(config.preset)
        self.schedule = build_schedule(config.schedule_kind, config.schedule_T,
                                       config.beta_min, config.beta_max)
        if config.dataset_path:
            ds = bandit.load_dataset(config.dataset_path)
            self.data_s, self.data_a = ds.states, ds.actions
            self.mdp = None
        elif config.critic:
            self.mdp = make_synthetic_mdp(self.spec, config.dataset_n, self.seed)
            self.data_s, self.data_a = self.mdp["s"], self.mdp["a"]
        else:
            ds = bandit.generate_dataset(self.spec, config.dataset_n,
                                         config.dataset_box,
                                         rng_for(self.seed, STREAM_DATA),
                                         seed=self.seed)
            self.data_s, self.data_a = ds.states, ds.actions
            self.mdp = None
        scale = self.data_s.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        init_rng = rng_for(self.seed, STREAM_INIT)
        self.policy = make_policy(
            config.variant, action_dim=2, state_dim=2, schedule=self.schedule,
            rng=init_rng, lam=config.lam, shared_hidden=tuple(config.shared_hidden),
            head_hidden=config.head_hidden, time_dim=config.time_dim,
            action_box=self.spec.action_box, clip_actions=config.clip_actions,
            clip_each_step=config.clip_each_step, state_scale=scale,
        )
        self.adam = Adam(self.policy.parameters(), lr=config.lr,
                         beta1=config.adam_beta1, beta2=config.adam_beta2,
                         eps=config.adam_eps)
        self.critic = None
        if config.critic:
            self.critic = CriticEnsemble.create(
                2, 2, self.policy, init_rng, hidden=tuple(config.critic_hidden),
                gamma=config.gamma, polyak_rho=config.rho, eta=config.eta,
            )
            self.critic_adam = Adam(self.critic.critic_params(), lr=config.lr,
                                    beta1=config.adam_beta1,
                                    beta2=config.adam_beta2, eps=config.adam_eps)
        self.iteration = 0

    def restore(self, ckpt_path):
        policy, adam, meta = load_policy(ckpt_path,
                                         action_box=self.spec.action_box)
        self.policy = policy
        self.adam = adam
        self.iteration = int(meta["iteration"])
        if self.critic is not None:
            self.critic.policy_target = policy.clone()
        return self

    def _minibatch(self, rng):
        idx = rng.integers(0, len(self.data_s), size=self.config.batch_size)
        return idx

    def current_lr(self):
        """Step-schedule learning rate, a pure function of the iteration
        counter so that checkpoint resume reproduces the schedule exactly."""
        cfg = self.config
        if cfg.lr_decay_at and self.iteration > cfg.lr_decay_at:
            return cfg.lr_decay_to
        return cfg.lr

    def train_step(self):
        self.iteration += 1
        self.adam.lr = self.current_lr()
        rng = rng_for(self.seed, STREAM_TRAIN, self.iteration)
        idx = self._minibatch(rng)
        if self.critic is not None:
            batch = {k: v[idx] for k, v in self.mdp.items()}
            _, cgrads = self.critic.bellman_loss_and_grads(batch, rng)
            self.critic_adam.step(self.critic.critic_params(), cgrads)
            total, l_bc, _, grads = self.critic.srdp_total_loss_and_grads(
                self.policy, batch, rng)
            losses = (total, l_bc)
        else:
            l_bc, l_dp, l_r, grads = self.policy.bc_loss_and_grads(
                self.data_s[idx], self.data_a[idx], rng)
            losses = (l_bc,)
        if not all(np.isfinite(v) for v in losses):
            raise SeedDiverged(
                f"seed {self.seed}: non-finite loss at iteration {self.iteration}"
            )
        self.adam.step(self.policy.parameters(), self.policy.flatten_grads(grads))
        if self.critic is not None:
            self.critic.polyak_update(self.policy)

    def evaluate(self):
        """Timeline + per-group rows at the current iteration (train untouched)."""
        cfg = self.config
        rng = rng_for(self.seed, STREAM_EVAL, self.iteration)
        report = grouped_chamfer(self.policy, self.spec, n_eval=cfg.n_eval,
                                 m_ref=cfg.m_ref, rng=rng)
        acc = quadrant_accuracy(self.policy, self.spec, n=cfg.n_eval, rng=rng)
        idx = rng.integers(0, len(self.data_s), size=min(cfg.batch_size,
                                                         len(self.data_s)))
        l_bc, l_dp, l_r, _ = self.policy.bc_loss_and_grads(
            self.data_s[idx], self.data_a[idx], rng)
        timeline = {
            "iter": self.iteration, "seed": self.seed, "variant": cfg.variant,
            "lambda": self.policy.lam, "l_dp": l_dp,
            "l_r": l_r if l_r is not None else 0.0, "l_bc": l_bc,
            "chamfer_total": report.total, "quadrant_acc": acc,
        }
        results = [
            {"iter": self.iteration, "seed": self.seed, "lambda": self.policy.lam,
             "variant": cfg.variant, "group": q, "chamfer": report.per_group[q]}
            for q in (1, 2, 3, 4)
        ]
        return timeline, results

    def checkpoint_path(self, out_dir, final=False):
        tag = "final" if final else f"iter{self.iteration}"
        return os.path.join(out_dir, f"ckpt_seed{self.seed}_{tag}.npz")

    def save_checkpoint(self, path):
        self.policy.save(path, adam=self.adam,
                         extra_meta={"iteration": self.iteration,
                                     "seed": self.seed,
                                     "preset": self.config.preset})

    def run(self, out_dir=None):
        """Train to completion, evaluating at iteration 0 and every interval."""
        cfg = self.config
        timeline_rows, result_rows = [], []
        start = time.perf_counter()

        def record():
            t_row, r_rows = self.evaluate()
            t_row["wallclock"] = time.perf_counter() - start
            timeline_rows.append(t_row)
            result_rows.extend(r_rows)
            if out_dir is not None:
                self.save_checkpoint(self.checkpoint_path(out_dir))

        if self.iteration == 0:
            record()
        while self.iteration < cfg.iterations:
            self.train_step()
            if self.iteration % cfg.eval_interval == 0:
                record()
        if out_dir is not None:
            self.save_checkpoint(self.checkpoint_path(out_dir, final=True))
        return timeline_rows, result_rows


def _seed_worker(args):
    config, seed, out_dir = args
    try:
        run = SeedRun(config, seed)
        timeline, results = run.run(out_dir)
        return seed, timeline, results, None
    except (SeedDiverged, NumericError) as exc:
        return seed, [], [], f"{type(exc).__name__}: {exc}"
    except Exception as exc:  # surface unexpected failures with context
        return seed, [], [], f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def write_csv(path, columns, rows, provenance=None):
    with open(path, "w") as fh:
        if provenance:
            fh.write(f"# {provenance}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[c]) for c in columns) + "\n")


def read_csv(path):
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if not ln.startswith("#")]
    columns = lines[0].split(",")
    rows = []
    for ln in lines[1:]:
        if not ln:
            continue
        row = {}
        for c, v in zip(columns, ln.split(",")):
            try:
                row[c] = int(v)
            except ValueError:
                try:
                    row[c] = float(v)
                except ValueError:
                    row[c] = v
        rows.append(row)
    return columns, rows


def summarize(result_rows):
    """Mean/std of per-seed chamfer totals at each evaluation iteration."""
    totals = {}
    for row in result_rows:
        totals.setdefault((row["iter"], row["seed"]), 0.0)
        totals[(row["iter"], row["seed"])] += row["chamfer"]
    by_iter = {}
    for (it, seed), tot in totals.items():
        by_iter.setdefault(it, []).append(tot)
    out = []
    for it in sorted(by_iter):
        vals = np.array(by_iter[it])
        out.append({"iter": it, "n_seeds": len(vals),
                    "chamfer_mean": float(vals.mean()),
                    "chamfer_std": float(vals.std())})
    return out


def run_experiment(config: ExperimentConfig):
    """Train every seed, merge rows, write CSVs and checkpoints.

    Returns {"timeline": rows, "results": rows, "summary": rows,
    "failures": {seed: message}}. A diverging seed is reported and skipped;
    the remaining seeds still produce output.
    """
    config.validate()
    out_dir = config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    from .config import config_to_text

    with open(os.path.join(out_dir, "config.resolved.txt"), "w") as fh:
        fh.write(config_to_text(config))

    jobs = [(config, seed, out_dir) for seed in config.seeds]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            outcomes = list(pool.map(_seed_worker, jobs))
    else:
        outcomes = [_seed_worker(job) for job in jobs]

    outcomes.sort(key=lambda o: config.seeds.index(o[0]))
    timeline_rows, result_rows, failures = [], [], {}
    for seed, timeline, results, error in outcomes:
        if error is not None:
            failures[seed] = error
        timeline_rows.extend(timeline)
        result_rows.extend(results)

    provenance = (f"schedule={config.schedule_kind},T={config.schedule_T},"
                  f"beta_min={config.beta_min:g},beta_max={config.beta_max:g}")
    write_csv(os.path.join(out_dir, "results.csv"), RESULT_COLUMNS,
              result_rows, provenance=provenance)
    write_csv(os.path.join(out_dir, "timeline.csv"), TIMELINE_COLUMNS,
              timeline_rows)
    summary = summarize(result_rows)
    write_csv(os.path.join(out_dir, "summary.csv"),
              ("iter", "n_seeds", "chamfer_mean", "chamfer_std"), summary)
    return {"timeline": timeline_rows, "results": result_rows,
            "summary": summary, "failures": failures}
