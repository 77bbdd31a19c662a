"""Safety-guided policy gradients for linear systems.

A chance-constrained MPC guide minimally corrects a Gaussian base policy's
action distribution; a penalized REINFORCE trainer teaches the base policy
to be safe on its own.
"""

from .chance import (AffineMap, DiagStdFactor, SocConstraint,
                     empirical_violation, gaussian_cdf, gaussian_quantile,
                     reformulate, split_epsilon)
from .dynamics import LinearSystem, propagate_cov_factor, step_mean
from .envs import (EnvSpec, braking_wedge, default_safe_set,
                   default_terminal_set, double_integrator_env, quadrotor_env)
from .guide import (GaussDist, GuideConfig, GuideResult, kl_diag_gauss,
                    solve_guide)
from .policy import MlpPolicy
from .polytope import (Polytope, compute_invariant_set, contains_polytope,
                       pre_set, project_out, verify_invariance)
from .trainer import (TrainConfig, Trajectory, collect_batch, returns_to_go,
                      safety_penalty, update)

__all__ = [
    "AffineMap", "DiagStdFactor", "SocConstraint", "empirical_violation",
    "gaussian_cdf", "gaussian_quantile", "reformulate", "split_epsilon",
    "LinearSystem", "propagate_cov_factor", "step_mean",
    "EnvSpec", "braking_wedge", "default_safe_set", "default_terminal_set",
    "double_integrator_env", "quadrotor_env",
    "GaussDist", "GuideConfig", "GuideResult", "kl_diag_gauss", "solve_guide",
    "MlpPolicy",
    "Polytope", "compute_invariant_set", "contains_polytope", "pre_set",
    "project_out", "verify_invariance",
    "TrainConfig", "Trajectory", "collect_batch", "returns_to_go",
    "safety_penalty", "update",
]
