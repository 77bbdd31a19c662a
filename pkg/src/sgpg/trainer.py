"""Episodic REINFORCE with discounted returns-to-go and a safety penalty.

Each batch collects whole episodes until the step budget is met. Actions are
sampled from the guide's safe distribution (or the base policy itself when
no guide is configured), clipped to the action box, and executed. The update
ascends

    (1/N) sum_j sum_t [ grad log pi(a_t|s_t) * G_t
                        - beta * grad d(safe_t, pi(.|s_t)) ]

where d is the squared l2 distance between distribution parameters (means
plus diagonal covariances) and the safe distribution is held constant: no
gradient flows through the guide's solver.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import envs as envs_mod
from .envs import CAUSE_HORIZON, VIOLATION_CAUSES, EnvSpec
from .guide import FAILED, GaussDist, GuideConfig, RELAXED, solve_guide
from .policy import MlpPolicy


class TrainerError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    gamma: float = 0.97
    beta: float = 1.5
    lr: float = 1e-3
    batch_steps: int = 5000
    n_batches: int = 40
    seed: int = 0
    # projected-SGD bounds on log_std: the clipped-action score otherwise
    # admits runaway deviation estimates on box-constrained tasks
    log_std_min: float = float(np.log(1e-4))
    log_std_max: float = float(np.log(4.0))
    # norm cap on the ascent direction; the score term is unbaselined and
    # occasionally spikes by orders of magnitude on long high-return episodes
    grad_clip: float = 500.0

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise TrainerError("gamma must lie in [0, 1)")
        if self.beta < 0.0:
            raise TrainerError("beta must be nonnegative")
        if self.lr <= 0.0 or self.batch_steps < 1 or self.n_batches < 1:
            raise TrainerError("lr, batch_steps, n_batches must be positive")
        if self.log_std_min >= self.log_std_max:
            raise TrainerError("log_std bounds are inverted")


@dataclass
class Trajectory:
    states: np.ndarray        # (T, n) states where actions were taken
    actions: np.ndarray       # (T, m) executed (clipped) actions
    rewards: np.ndarray       # (T,)
    base_means: np.ndarray    # (T, m)
    base_stds: np.ndarray     # (T, m)
    safe_means: np.ndarray    # (T, m)
    safe_stds: np.ndarray     # (T, m)
    kls: np.ndarray           # (T,)
    statuses: list
    cause: str

    def __post_init__(self):
        T = len(self.rewards)
        for arr in (self.states, self.actions, self.base_means, self.base_stds,
                    self.safe_means, self.safe_stds, self.kls):
            if len(arr) != T:
                raise TrainerError("per-step records have inconsistent lengths")
        if not np.all(np.isfinite(self.rewards)):
            raise TrainerError("non-finite reward in trajectory")

    def __len__(self):
        return len(self.rewards)


@dataclass
class BatchMetrics:
    env_steps: int = 0
    n_episodes: int = 0
    mean_ep_reward: float = 0.0
    mean_ep_len: float = 0.0
    violations: int = 0
    mean_kl: float = 0.0
    mean_d: float = 0.0
    slack_events: int = 0
    guide_failures: int = 0
    wall_time: float = 0.0


@dataclass
class UpdateMetrics:
    grad_norm: float = 0.0
    mean_return: float = 0.0
    mean_d: float = 0.0


def returns_to_go(rewards, gamma: float) -> np.ndarray:
    """Discounted suffix sums: G_t = r_t + gamma * G_{t+1}."""
    if not 0.0 <= gamma < 1.0:
        raise TrainerError("gamma must lie in [0, 1)")
    r = np.asarray(rewards, dtype=float)
    out = np.empty_like(r)
    acc = 0.0
    for t in range(r.size - 1, -1, -1):
        acc = r[t] + gamma * acc
        out[t] = acc
    return out


def safety_penalty(base: GaussDist, safe: GaussDist) -> float:
    """Squared l2 distance between parameters, covariances on the diagonal."""
    if base.dim != safe.dim:
        raise TrainerError("distribution dimension mismatch")
    dmu = safe.mean - base.mean
    dvar = safe.std ** 2 - base.std ** 2
    return float(dmu @ dmu + dvar @ dvar)


def rollout_episode(policy: MlpPolicy, guide_cfg, spec: EnvSpec, rng,
                    max_len: int) -> Trajectory:
    """One episode; the guide runs per step when a config is given."""
    s = envs_mod.reset(spec, rng)
    recs = {k: [] for k in ("s", "a", "r", "bm", "bs", "sm", "ss", "kl")}
    statuses = []
    cause = CAUSE_HORIZON
    for _t in range(max_len):
        base = policy.forward(s)
        if guide_cfg is not None:
            res = solve_guide(guide_cfg, spec.sys, s, base)
            dist = res.safe
            statuses.append(res.status)
            recs["kl"].append(res.kl)
        else:
            dist = base
            statuses.append("off")
            recs["kl"].append(0.0)
        a = dist.mean + dist.std * rng.standard_normal(policy.m)
        a = np.clip(a, spec.action_lo, spec.action_hi)
        nxt, r, done, why = envs_mod.step(spec, s, a)
        recs["s"].append(s)
        recs["a"].append(a)
        recs["r"].append(r)
        recs["bm"].append(base.mean)
        recs["bs"].append(base.std)
        recs["sm"].append(dist.mean)
        recs["ss"].append(dist.std)
        s = nxt
        if done:
            cause = why
            break
    return Trajectory(
        states=np.array(recs["s"]), actions=np.array(recs["a"]),
        rewards=np.array(recs["r"]), base_means=np.array(recs["bm"]),
        base_stds=np.array(recs["bs"]), safe_means=np.array(recs["sm"]),
        safe_stds=np.array(recs["ss"]), kls=np.array(recs["kl"]),
        statuses=statuses, cause=cause)


def collect_batch(policy: MlpPolicy, guide_cfg, spec: EnvSpec,
                  cfg: TrainConfig, rng):
    """Roll whole episodes until at least cfg.batch_steps steps are gathered."""
    t0 = time.perf_counter()
    trajs = []
    steps = 0
    while steps < cfg.batch_steps:
        tr = rollout_episode(policy, guide_cfg, spec, rng, spec.max_episode_len)
        trajs.append(tr)
        steps += len(tr)
    m = BatchMetrics()
    m.env_steps = steps
    m.n_episodes = len(trajs)
    m.mean_ep_reward = float(np.mean([tr.rewards.sum() for tr in trajs]))
    m.mean_ep_len = float(np.mean([len(tr) for tr in trajs]))
    m.violations = sum(tr.cause in VIOLATION_CAUSES for tr in trajs)
    m.mean_kl = float(np.mean(np.concatenate([tr.kls for tr in trajs])))
    dvals = []
    for tr in trajs:
        dmu = tr.safe_means - tr.base_means
        dvar = tr.safe_stds ** 2 - tr.base_stds ** 2
        dvals.append(np.sum(dmu * dmu, axis=1) + np.sum(dvar * dvar, axis=1))
    m.mean_d = float(np.mean(np.concatenate(dvals)))
    m.slack_events = sum(st == RELAXED for tr in trajs for st in tr.statuses)
    m.guide_failures = sum(st == FAILED for tr in trajs for st in tr.statuses)
    m.wall_time = time.perf_counter() - t0
    return trajs, m


def update(policy: MlpPolicy, batch, cfg: TrainConfig) -> UpdateMetrics:
    """One ascent step of the penalized Monte-Carlo policy gradient."""
    if not batch:
        raise TrainerError("empty batch")
    S = np.concatenate([tr.states for tr in batch])
    A = np.concatenate([tr.actions for tr in batch])
    G = np.concatenate([returns_to_go(tr.rewards, cfg.gamma) for tr in batch])
    SM = np.concatenate([tr.safe_means for tr in batch])
    SS = np.concatenate([tr.safe_stds for tr in batch])

    mean, std, cache = policy.forward_batch(S)
    var = std ** 2

    # score-function term, weighted by the returns-to-go
    zs = (A - mean) / var
    DM = zs * G[:, None]
    DL = ((A - mean) ** 2 / var - 1.0) * G[:, None]
    # safety-penalty term; the safe parameters are constants here
    dvar = var - SS ** 2
    DM -= cfg.beta * 2.0 * (mean - SM)
    DL -= cfg.beta * 4.0 * var * dvar

    n_traj = len(batch)
    grad = policy.backward_heads(cache, DM, DL) / n_traj
    if not np.all(np.isfinite(grad)):
        raise TrainerError(
            f"non-finite gradient on a batch of {n_traj} episodes")
    gnorm = float(np.linalg.norm(grad))
    if cfg.grad_clip > 0.0 and gnorm > cfg.grad_clip:
        grad = grad * (cfg.grad_clip / gnorm)
    policy.set_flat(policy.flatten() + cfg.lr * grad)
    policy.log_std[:] = np.clip(policy.log_std, cfg.log_std_min,
                                cfg.log_std_max)

    dmu = SM - mean
    dvals = np.sum(dmu * dmu, axis=1) + np.sum(dvar * dvar, axis=1)
    return UpdateMetrics(grad_norm=gnorm,
                         mean_return=float(np.mean(G)),
                         mean_d=float(np.mean(dvals)))
