"""Experiment runner: train, eval, safesets, summarize subcommands.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import glob as globmod
import os
import shutil
import sys as _sys

import numpy as np

from . import envs as envs_mod
from .config import ConfigError, RunConfig, build_run, load_toml
from .guide import solve_guide
from .policy import MlpPolicy
from .polytope import verify_invariance
from .trainer import collect_batch, safety_penalty, update

PROGRESS_FIELDS = ["batch", "env_steps", "mean_ep_reward", "mean_ep_len",
                   "violations", "mean_kl", "mean_d", "slack_events",
                   "guide_failures", "grad_norm", "wall_time"]
EVAL_FIELDS = ["episode", "reward", "length", "violated", "mean_d"]


def _load_run(args, **kw) -> RunConfig:
    raw = load_toml(args.config)
    return build_run(raw, args.config,
                     no_guide=getattr(args, "no_guide", False),
                     seed_override=getattr(args, "seed", None),
                     out_override=getattr(args, "out", None), **kw)


def cmd_train(args) -> int:
    run = _load_run(args)
    os.makedirs(run.out_dir, exist_ok=True)
    shutil.copyfile(run.source_path, os.path.join(run.out_dir, "config.toml"))
    run.guide.S.save(os.path.join(run.out_dir, "safe_set.poly"))
    run.guide.S_T.save(os.path.join(run.out_dir, "terminal_set.poly"))

    spec = run.env
    policy = MlpPolicy(spec.sys.n, spec.sys.m, seed=run.seed,
                       init_log_std=run.init_log_std)
    rng = np.random.default_rng(run.seed)
    guide_cfg = run.guide if run.guide_enabled else None

    progress_path = os.path.join(run.out_dir, "progress.csv")
    env_steps = 0
    with open(progress_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=PROGRESS_FIELDS)
        writer.writeheader()
        for b in range(run.train.n_batches):
            trajs, met = collect_batch(policy, guide_cfg, spec, run.train, rng)
            up = update(policy, trajs, run.train)
            env_steps += met.env_steps
            writer.writerow({
                "batch": b, "env_steps": env_steps,
                "mean_ep_reward": f"{met.mean_ep_reward:.6f}",
                "mean_ep_len": f"{met.mean_ep_len:.3f}",
                "violations": met.violations,
                "mean_kl": f"{met.mean_kl:.6f}",
                "mean_d": f"{met.mean_d:.8f}",
                "slack_events": met.slack_events,
                "guide_failures": met.guide_failures,
                "grad_norm": f"{up.grad_norm:.6f}",
                "wall_time": f"{met.wall_time:.3f}",
            })
            fh.flush()
            print(f"batch {b:3d}  steps {env_steps:7d}  "
                  f"reward {met.mean_ep_reward:10.3f}  len {met.mean_ep_len:6.1f}  "
                  f"viol {met.violations:3d}  kl {met.mean_kl:8.4f}  "
                  f"d {met.mean_d:10.6f}")
            if run.checkpoint_every > 0 and (b + 1) % run.checkpoint_every == 0:
                policy.save(os.path.join(run.out_dir, f"checkpoint_{b + 1:05d}.bin"))
    policy.save(os.path.join(run.out_dir, "checkpoint_final.bin"))
    return 0


def evaluate_policy(policy, spec, guide_cfg, episodes: int, seed: int):
    """Seeded stochastic evaluation; returns per-episode rows and a summary."""
    rng = np.random.default_rng(seed)
    rows = []
    for ep in range(episodes):
        s = envs_mod.reset(spec, rng)
        total, length, dsum = 0.0, 0, 0.0
        violated = 0
        for _t in range(spec.max_episode_len):
            base = policy.forward(s)
            if guide_cfg is not None:
                res = solve_guide(guide_cfg, spec.sys, s, base)
                dist = res.safe
                dsum += safety_penalty(base, dist)
            else:
                dist = base
            a = dist.mean + dist.std * rng.standard_normal(policy.m)
            a = np.clip(a, spec.action_lo, spec.action_hi)
            s, r, done, cause = envs_mod.step(spec, s, a)
            total += r
            length += 1
            if done:
                violated = int(cause in envs_mod.VIOLATION_CAUSES)
                break
        rows.append({"episode": ep, "reward": total, "length": length,
                     "violated": violated,
                     "mean_d": dsum / max(length, 1)})
    summary = {
        "episodes": episodes,
        "mean_reward": float(np.mean([r["reward"] for r in rows])),
        "mean_length": float(np.mean([r["length"] for r in rows])),
        "violation_rate": float(np.mean([r["violated"] for r in rows])),
        "mean_d": float(np.mean([r["mean_d"] for r in rows])),
    }
    return rows, summary


def cmd_eval(args) -> int:
    run = _load_run(args)
    policy = MlpPolicy.load(args.checkpoint)
    spec = run.env
    if policy.n != spec.sys.n or policy.m != spec.sys.m:
        print("checkpoint dimensions do not match the environment",
              file=_sys.stderr)
        return 1
    guide_cfg = run.guide if args.with_guide else None
    rows, summary = evaluate_policy(policy, spec, guide_cfg,
                                    args.episodes, args.eval_seed)
    out = args.out or "eval.csv"
    with open(out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=EVAL_FIELDS)
        writer.writeheader()
        for r in rows:
            writer.writerow({"episode": r["episode"],
                             "reward": f"{r['reward']:.6f}",
                             "length": r["length"],
                             "violated": r["violated"],
                             "mean_d": f"{r['mean_d']:.8f}"})
    print(f"episodes {summary['episodes']}  "
          f"mean_reward {summary['mean_reward']:.3f}  "
          f"mean_length {summary['mean_length']:.2f}  "
          f"violation_rate {summary['violation_rate']:.4f}  "
          f"mean_d {summary['mean_d']:.6f}")
    return 0


def cmd_safesets(args) -> int:
    run = _load_run(args)
    out_dir = args.out or run.out_dir
    os.makedirs(out_dir, exist_ok=True)
    spec = run.env
    S, S_T = run.guide.S, run.guide.S_T
    S.save(os.path.join(out_dir, "safe_set.poly"))
    S_T.save(os.path.join(out_dir, "terminal_set.poly"))
    ok = verify_invariance(spec.sys, S_T, spec.action_box)
    report = os.path.join(out_dir, "safesets_report.txt")
    with open(report, "w") as fh:
        fh.write(f"env: {spec.name}\n")
        fh.write(f"safe set rows: {S.nrows}\n")
        fh.write(f"terminal set rows: {S_T.nrows}\n")
        fh.write(f"terminal set invariant: {'PASS' if ok else 'FAIL'}\n")
    print(f"terminal set invariance: {'PASS' if ok else 'FAIL'} "
          f"({S_T.nrows} rows); report: {report}")
    return 0 if ok else 1


def _read_progress(run_dir):
    path = os.path.join(run_dir, "progress.csv")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def summarize_runs(pairs, metric: str, top: int):
    """Mean and std of a progress metric across runs, per condition.

    pairs: list of (label, [run_dir, ...]). With top > 0 only the best
    `top` runs per condition are kept, ranked by the metric's mean over the
    final tenth of the batches.
    """
    out_rows = []
    for label, run_dirs in pairs:
        series = []
        for rd in sorted(run_dirs):
            rows = _read_progress(rd)
            if not rows:
                continue
            vals = np.array([float(r[metric]) for r in rows])
            steps = np.array([int(r["env_steps"]) for r in rows])
            series.append((vals, steps))
        if not series:
            raise ValueError(f"no usable runs for condition '{label}'")
        n_batches = min(len(v) for v, _ in series)
        series = [(v[:n_batches], s[:n_batches]) for v, s in series]
        if top > 0 and len(series) > top:
            tail = max(1, n_batches // 10)
            scores = [float(np.mean(v[-tail:])) for v, _ in series]
            order = np.argsort(scores)[::-1][:top]
            series = [series[i] for i in sorted(order)]
        V = np.stack([v for v, _ in series])
        steps = series[0][1]
        for b in range(n_batches):
            out_rows.append({
                "condition": label, "batch": b, "env_steps": int(steps[b]),
                "mean": float(np.mean(V[:, b])),
                "std": float(np.std(V[:, b])),
            })
    return out_rows


def cmd_summarize(args) -> int:
    pairs = []
    for spec_str in args.conditions:
        if "=" not in spec_str:
            print(f"condition '{spec_str}' must look like LABEL=GLOB",
                  file=_sys.stderr)
            return 2
        label, pattern = spec_str.split("=", 1)
        dirs = [d for d in globmod.glob(pattern) if os.path.isdir(d)]
        if not dirs:
            print(f"no run directories match '{pattern}'", file=_sys.stderr)
            return 1
        pairs.append((label, dirs))
    rows = summarize_runs(pairs, args.metric, args.top)
    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["condition", "batch", "env_steps", "mean", "std"])
        writer.writeheader()
        for r in rows:
            writer.writerow(r)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sgpg",
                                description="safety-guided policy gradients")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a policy from a config file")
    t.add_argument("config")
    t.add_argument("--out", help="run directory (overrides [run].out_dir)")
    t.add_argument("--seed", type=int, help="override [run].seed")
    t.add_argument("--no-guide", action="store_true",
                   help="train the vanilla baseline without the safety guide")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("config")
    e.add_argument("checkpoint")
    e.add_argument("--episodes", type=int, default=50)
    e.add_argument("--eval-seed", type=int, default=0)
    g = e.add_mutually_exclusive_group()
    g.add_argument("--with-guide", dest="with_guide", action="store_true",
                   default=True)
    g.add_argument("--without-guide", dest="with_guide", action="store_false")
    e.add_argument("--out", help="per-episode CSV path (default eval.csv)")
    e.set_defaults(fn=cmd_eval)

    s = sub.add_parser("safesets",
                       help="build, shrink and verify the safety polytopes")
    s.add_argument("config")
    s.add_argument("--out", help="output directory")
    s.set_defaults(fn=cmd_safesets)

    m = sub.add_parser("summarize",
                       help="aggregate progress curves across seeds")
    m.add_argument("conditions", nargs="+", metavar="LABEL=GLOB")
    m.add_argument("--out", required=True)
    m.add_argument("--metric", default="mean_ep_reward")
    m.add_argument("--top", type=int, default=0,
                   help="keep only the best K seeds per condition")
    m.set_defaults(fn=cmd_summarize)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=_sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=_sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
