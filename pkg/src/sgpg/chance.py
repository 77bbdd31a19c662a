"""Deterministic second-order-cone reformulation of Gaussian chance constraints.

A polytopic constraint Pr[x not in P] <= eps with x ~ N(mu, Sbar Sbar^T) is
split across the r rows of P (union bound, eps/r each) and each row becomes

    u_i^T mu + Phi^{-1}(1 - eps/r) * ||Sbar^T u_i||_2 <= v_i.

Note the transpose: the variance of u^T x is ||Sbar^T u||^2, which matches
the symmetric-factor form used elsewhere and is the literally correct one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .polytope import Polytope

_SQRT2 = math.sqrt(2.0)
_SQRT_2PI = math.sqrt(2.0 * math.pi)

# Rational approximation coefficients (Acklam), polished by one Halley step.
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)


def gaussian_cdf(x: float) -> float:
    """Standard normal CDF via the complementary error function."""
    return 0.5 * math.erfc(-x / _SQRT2)


def gaussian_quantile(p: float) -> float:
    """Inverse standard normal CDF, absolute error below 1e-9.

    Acklam's rational approximation gives ~1e-9 relative accuracy; a single
    Halley correction against the erfc-based CDF pushes it to machine level.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must be in (0, 1), got {p}")
    p_low = 0.02425
    if p < p_low:
        q = math.sqrt(-2.0 * math.log(p))
        x = ((((( _C[0]*q + _C[1])*q + _C[2])*q + _C[3])*q + _C[4])*q + _C[5]) / \
            (((( _D[0]*q + _D[1])*q + _D[2])*q + _D[3])*q + 1.0)
    elif p <= 1.0 - p_low:
        q = p - 0.5
        r = q * q
        x = ((((( _A[0]*r + _A[1])*r + _A[2])*r + _A[3])*r + _A[4])*r + _A[5])*q / \
            ((((( _B[0]*r + _B[1])*r + _B[2])*r + _B[3])*r + _B[4])*r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -((((( _C[0]*q + _C[1])*q + _C[2])*q + _C[3])*q + _C[4])*q + _C[5]) / \
            (((( _D[0]*q + _D[1])*q + _D[2])*q + _D[3])*q + 1.0)
    # Halley polish: u = (Phi(x) - p) / phi(x), then second-order correction.
    err = gaussian_cdf(x) - p
    u = err * _SQRT_2PI * math.exp(0.5 * x * x)
    x -= u / (1.0 + 0.5 * x * u)
    return x


def split_epsilon(eps: float, r_rows: int) -> float:
    """Per-row violation budget under the union bound."""
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    if r_rows < 1:
        raise ValueError("r_rows must be >= 1")
    return eps / r_rows


@dataclass(frozen=True)
class AffineMap:
    """mu(z) = M z + b."""
    M: np.ndarray
    b: np.ndarray


@dataclass(frozen=True)
class DiagStdFactor:
    """Sbar(z) = kernel @ diag(z[sigma_index]).

    The per-dimension standard deviations live at ``sigma_index`` inside the
    decision vector; the kernel maps action uncertainty into state space.
    """
    kernel: np.ndarray
    sigma_index: np.ndarray


@dataclass(frozen=True)
class SocConstraint:
    """Encodes h - g^T z >= c * ||F z||_2 with c >= 0 (convex in z)."""
    g: np.ndarray
    h: float
    c: float
    F: np.ndarray

    def margin(self, z) -> float:
        z = np.asarray(z, dtype=float).ravel()
        return float(self.h - self.g @ z - self.c * np.linalg.norm(self.F @ z))

    def holds(self, z, tol: float = 1e-9) -> bool:
        return self.margin(z) >= -tol


def reformulate(P: Polytope, mean_map: AffineMap, cov_factor, eps: float):
    """One SocConstraint per row of P with the eps/r quantile coefficient.

    cov_factor may be a DiagStdFactor (uncertainty scale is part of the
    decision vector), a constant matrix Sbar (folded into the offset), or
    None for the deterministic case.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must be in (0, 1)")
    M, b = np.asarray(mean_map.M, dtype=float), np.asarray(mean_map.b, dtype=float)
    if M.shape[0] != P.dim or b.size != P.dim:
        raise ValueError("mean map does not match the polytope dimension")
    D = M.shape[1]
    r = P.nrows
    c_quant = gaussian_quantile(1.0 - split_epsilon(eps, r))
    out = []
    for u, v in zip(P.U, P.v):
        g = M.T @ u
        h = float(v - u @ b)
        if cov_factor is None:
            out.append(SocConstraint(g=g, h=h, c=0.0, F=np.zeros((1, D))))
            continue
        if isinstance(cov_factor, DiagStdFactor):
            w = cov_factor.kernel.T @ u  # cone weights over the std variables
            F = np.zeros((w.size, D))
            F[np.arange(w.size), np.asarray(cov_factor.sigma_index, dtype=int)] = w
            if np.all(np.abs(w) < 1e-14):
                out.append(SocConstraint(g=g, h=h, c=0.0, F=np.zeros((1, D))))
            else:
                out.append(SocConstraint(g=g, h=h, c=c_quant, F=F))
        else:
            Sbar = np.asarray(cov_factor, dtype=float)
            h -= c_quant * float(np.linalg.norm(Sbar.T @ u))
            out.append(SocConstraint(g=g, h=h, c=0.0, F=np.zeros((1, D))))
    return out


def empirical_violation(P: Polytope, mu, Sigma_bar, n_samples: int, rng) -> float:
    """Monte-Carlo fraction of N(mu, Sbar Sbar^T) samples outside P."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    mu = np.asarray(mu, dtype=float).ravel()
    Sbar = np.asarray(Sigma_bar, dtype=float)
    if Sbar.ndim == 0:
        Sbar = Sbar.reshape(1, 1)
    if Sbar.ndim == 1:
        Sbar = np.diag(Sbar)
    xi = rng.standard_normal((n_samples, Sbar.shape[1]))
    X = mu[None, :] + xi @ Sbar.T
    inside = P.contains_many(X)
    return float(1.0 - inside.mean())
