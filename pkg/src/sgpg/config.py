"""Experiment configuration: a single TOML file describing env, guide, train.

Sections:

  [run]    out_dir, seed
  [env]    name = builtin id, or name = "custom" plus matrices and rule ids
  [guide]  enabled, horizon, eps, delta, safe, terminal, solver knobs
  [train]  gamma, beta, lr, batch_steps, n_batches, checkpoint_every

Polytope-valued fields accept "builtin", "computed" (terminal only), a list
of row strings "u_1 ... u_n <= v", or a path to a polytope text file.
Validation failures raise ConfigError with a section.field path.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from . import envs as envs_mod
from .dynamics import LinearSystem
from .envs import BUILTIN_ENVS, EnvSpec
from .guide import GuideConfig, GuideError
from .polytope import Polytope, PolytopeError, compute_invariant_set
from .trainer import TrainConfig, TrainerError


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    env: EnvSpec
    guide: GuideConfig
    train: TrainConfig
    seed: int
    out_dir: str
    checkpoint_every: int
    source_path: str
    guide_enabled: bool
    init_log_std: float = float(np.log(0.5))


def _get(tbl, section, key, typ, default=None, required=False):
    if key not in tbl:
        if required:
            raise ConfigError(f"{section}.{key}: missing required field")
        return default
    val = tbl[key]
    if typ is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    if not isinstance(val, typ) or isinstance(val, bool) and typ is not bool:
        raise ConfigError(f"{section}.{key}: expected {typ.__name__}, "
                          f"got {type(val).__name__}")
    return val


def _matrix(tbl, section, key, required=True):
    raw = tbl.get(key)
    if raw is None:
        if required:
            raise ConfigError(f"{section}.{key}: missing required field")
        return None
    try:
        M = np.array(raw, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{section}.{key}: not a numeric matrix") from None
    if M.ndim not in (1, 2):
        raise ConfigError(f"{section}.{key}: expected a vector or matrix")
    return M


def _polytope(value, section, key, base_dir):
    if isinstance(value, list):
        try:
            return Polytope.from_text("\n".join(value))
        except PolytopeError as exc:
            raise ConfigError(f"{section}.{key}: {exc}") from None
    if isinstance(value, str):
        path = value if os.path.isabs(value) else os.path.join(base_dir, value)
        if not os.path.exists(path):
            raise ConfigError(f"{section}.{key}: file not found: {value}")
        try:
            return Polytope.load(path)
        except PolytopeError as exc:
            raise ConfigError(f"{section}.{key}: {exc}") from None
    raise ConfigError(f"{section}.{key}: expected row strings or a file path")


def load_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from None


def _build_env(raw, base_dir) -> EnvSpec:
    tbl = raw.get("env")
    if not isinstance(tbl, dict):
        raise ConfigError("env: missing section")
    name = _get(tbl, "env", "name", str, required=True)
    if name in BUILTIN_ENVS:
        spec = BUILTIN_ENVS[name]()
        max_len = _get(tbl, "env", "max_episode_len", int, spec.max_episode_len)
        if max_len < 1:
            raise ConfigError("env.max_episode_len: must be >= 1")
        spec.max_episode_len = max_len
        return spec
    if name != "custom":
        raise ConfigError(f"env.name: unknown environment '{name}'")
    A = _matrix(tbl, "env", "A")
    B = _matrix(tbl, "env", "B")
    dt = _get(tbl, "env", "dt", float, 0.02)
    try:
        sys = LinearSystem(A, B, dt)
    except Exception as exc:
        raise ConfigError(f"env.A/B: {exc}") from None
    reward = _get(tbl, "env", "reward", str, required=True)
    if reward not in envs_mod.REWARDS:
        raise ConfigError(f"env.reward: unknown reward id '{reward}'")
    termination = _get(tbl, "env", "termination", str, required=True)
    if termination not in envs_mod.TERMINATIONS:
        raise ConfigError(f"env.termination: unknown termination id "
                          f"'{termination}'")
    init = _get(tbl, "env", "init", str, required=True)
    if init not in envs_mod.INITS:
        raise ConfigError(f"env.init: unknown init id '{init}'")
    bounds = _polytope(tbl.get("bounds"), "env", "bounds", base_dir) \
        if "bounds" in tbl else None
    if bounds is None:
        raise ConfigError("env.bounds: missing required field")
    lo = _matrix(tbl, "env", "action_lo")
    hi = _matrix(tbl, "env", "action_hi")
    box = Polytope.box(lo, hi)
    max_len = _get(tbl, "env", "max_episode_len", int, 400)
    if bounds.dim != sys.n:
        raise ConfigError("env.bounds: dimension does not match the system")
    if box.dim != sys.m:
        raise ConfigError("env.action_lo/hi: dimension does not match B")
    return EnvSpec(name="custom", sys=sys, reward_id=reward,
                   termination_id=termination, init_id=init,
                   true_bounds=bounds, action_box=box,
                   max_episode_len=max_len)


def _resolve_safe_set(value, spec, delta, base_dir):
    if value == "builtin":
        return envs_mod.default_safe_set(spec.name, delta)
    return _polytope(value, "guide", "safe", base_dir)


def _resolve_terminal(value, spec, delta, S, tbl, base_dir):
    if value == "builtin":
        return envs_mod.default_terminal_set(spec.name, delta)
    if value == "computed":
        seed = S
        if "terminal_seed" in tbl:
            seed = S.intersect(
                _polytope(tbl["terminal_seed"], "guide", "terminal_seed",
                          base_dir))
        max_iter = _get(tbl, "guide", "terminal_max_iter", int, 100)
        try:
            return compute_invariant_set(spec.sys, seed, spec.action_box,
                                         max_iter=max_iter)
        except PolytopeError as exc:
            raise ConfigError(f"guide.terminal: {exc}") from None
    return _polytope(value, "guide", "terminal", base_dir)


def build_run(raw: dict, source_path: str, *, no_guide: bool = False,
              seed_override=None, out_override=None) -> RunConfig:
    base_dir = os.path.dirname(os.path.abspath(source_path))
    run_tbl = raw.get("run", {})
    if not isinstance(run_tbl, dict):
        raise ConfigError("run: expected a table")
    seed = _get(run_tbl, "run", "seed", int, 0)
    out_dir = _get(run_tbl, "run", "out_dir", str, "runs/run")
    if seed_override is not None:
        seed = int(seed_override)
    if out_override is not None:
        out_dir = out_override

    spec = _build_env(raw, base_dir)

    gtbl = raw.get("guide", {})
    if not isinstance(gtbl, dict):
        raise ConfigError("guide: expected a table")
    enabled = _get(gtbl, "guide", "enabled", bool, True) and not no_guide
    delta = _get(gtbl, "guide", "delta", float, 0.1)
    if not 0.0 <= delta < 1.0:
        raise ConfigError("guide.delta: must lie in [0, 1)")
    S = _resolve_safe_set(gtbl.get("safe", "builtin"), spec, delta, base_dir)
    S_T = _resolve_terminal(gtbl.get("terminal", "builtin"), spec, delta, S,
                            gtbl, base_dir)
    try:
        guide = GuideConfig(
            horizon=_get(gtbl, "guide", "horizon", int, 30),
            eps=_get(gtbl, "guide", "eps", float, 0.001),
            S=S, S_T=S_T, Abox=spec.action_box,
            slack_weight=_get(gtbl, "guide", "slack_weight", float, 1000.0),
            kkt_tol=_get(gtbl, "guide", "kkt_tol", float, 1e-8),
            max_newton_iter=_get(gtbl, "guide", "max_newton_iter", int, 400),
            sigma_floor=_get(gtbl, "guide", "sigma_floor", float, 1e-4),
        )
    except GuideError as exc:
        raise ConfigError(f"guide: {exc}") from None

    ttbl = raw.get("train", {})
    if not isinstance(ttbl, dict):
        raise ConfigError("train: expected a table")
    try:
        train = TrainConfig(
            gamma=_get(ttbl, "train", "gamma", float, 0.97),
            beta=_get(ttbl, "train", "beta", float, 1.5),
            lr=_get(ttbl, "train", "lr", float, 1e-3),
            batch_steps=_get(ttbl, "train", "batch_steps", int, 5000),
            n_batches=_get(ttbl, "train", "n_batches", int, 40),
            seed=seed,
        )
    except TrainerError as exc:
        raise ConfigError(f"train: {exc}") from None
    checkpoint_every = _get(ttbl, "train", "checkpoint_every", int, 10)
    init_log_std = _get(ttbl, "train", "init_log_std", float,
                        float(np.log(0.5)))

    return RunConfig(env=spec, guide=guide, train=train, seed=seed,
                     out_dir=out_dir, checkpoint_every=checkpoint_every,
                     source_path=source_path, guide_enabled=enabled,
                     init_log_std=init_log_std)
