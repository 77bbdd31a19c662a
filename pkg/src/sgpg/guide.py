"""Safety guide: minimal KL correction of a Gaussian action distribution.

Given the current state and the base policy's diagonal Gaussian, the guide
solves a chance-constrained open-loop planning problem: pick the closest (in
KL) first-action distribution plus deterministic future actions so that the
planned state means satisfy the safe-set rows at every step (tightened by
Gaussian quantiles against the propagated first-action uncertainty) and land
in the invariant terminal set at the horizon. Infeasible instances are
relaxed with linearly penalized slacks on the state-safety cones.

The solver is a self-contained primal log-barrier Newton method; no external
conic solver is used anywhere. Barrier iterates are strictly feasible, so a
result with status "optimal" satisfies every constraint by construction.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import chance
from .chance import AffineMap, DiagStdFactor
from .dynamics import LinearSystem, step_mean
from .polytope import Polytope, contains_polytope

if os.environ.get("SGPG_NO_NUMBA"):
    _jit_newton = None
else:
    try:
        from ._barrier_jit import newton_barrier as _jit_newton
    except Exception:  # numba missing or failed to import
        _jit_newton = None

OPTIMAL = "optimal"
RELAXED = "relaxed"
FAILED = "failed"

_IDENTITY_TOL = 1e-9


class GuideError(ValueError):
    pass


@dataclass
class GaussDist:
    """Diagonal-covariance Gaussian over actions."""
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).ravel()
        self.std = np.asarray(self.std, dtype=float).ravel()
        if self.mean.shape != self.std.shape:
            raise GuideError("mean and std must have equal length")
        if np.any(self.std <= 0.0) or not np.all(np.isfinite(self.std)):
            raise GuideError("std must be strictly positive and finite")

    @property
    def dim(self) -> int:
        return self.mean.size


def kl_diag_gauss(q: GaussDist, p: GaussDist) -> float:
    """KL(q || p) for diagonal Gaussians, always >= 0."""
    if q.dim != p.dim:
        raise GuideError("KL dimension mismatch")
    ratio = p.std / q.std
    quad = (q.std ** 2 + (p.mean - q.mean) ** 2) / (2.0 * p.std ** 2)
    return float(np.sum(np.log(ratio) + quad - 0.5))


@dataclass
class GuideConfig:
    """Parameters of the guide optimization.

    S and S_T are the post-shrink safe and terminal sets; Abox the feasible
    action polytope (bounded). Solver knobs: the barrier parameter starts at
    1 and shrinks by a factor of 10 until the duality-gap surrogate drops
    below kkt_tol; sigma_floor keeps the KL objective finite.
    """
    horizon: int
    eps: float
    S: Polytope
    S_T: Polytope
    Abox: Polytope
    slack_weight: float = 1000.0
    kkt_tol: float = 1e-8
    max_newton_iter: int = 400
    sigma_floor: float = 1e-4
    barrier_decade: float = 10.0
    _compiled: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not 1 <= self.horizon <= 64:
            raise GuideError("horizon must be in 1..64")
        if not 0.0 < self.eps < 1.0:
            raise GuideError("eps must be in (0, 1)")
        if self.slack_weight <= 0.0:
            raise GuideError("slack_weight must be positive")
        if self.sigma_floor <= 0.0:
            raise GuideError("sigma_floor must be positive")
        if not self.Abox.is_bounded():
            raise GuideError("action set must be bounded")
        if not contains_polytope(self.S, self.S_T):
            raise GuideError("terminal set is not contained in the safe set")


@dataclass
class GuideResult:
    safe: GaussDist
    kl: float
    plan_actions: np.ndarray   # (H, m) action means, first row is the safe mean
    plan_states: np.ndarray    # (H+1, n) state means chained through the model
    slack_total: float
    status: str
    newton_iters: int


# -- compiled constraint system -------------------------------------------------


class GuideProblem:
    """Constraint matrices for a (config, system) pair, built once and reused.

    Decision vector z = [mu0 (m) | sigma0 (m) | abar_1 .. abar_{H-1} (m each)].
    Every constraint is a row   h_k - g_k^T z >= c_k * ||w_k o sigma0||
    where the cone weights w_k live over the sigma block only (c_k = 0 for
    purely linear rows). Offsets depend on the current state s through
    h = h0 - Hs @ s.
    """

    def __init__(self, cfg: GuideConfig, sys: LinearSystem):
        H, n, m = cfg.horizon, sys.n, sys.m
        if cfg.S.dim != n or cfg.S_T.dim != n or cfg.Abox.dim != m:
            raise GuideError("config polytopes do not match the system dimensions")
        self.cfg = cfg
        self.sys = sys
        self.H, self.n, self.m = H, n, m
        self.D = (H + 1) * m
        self.sig_cols = np.arange(m, 2 * m)

        AkB = [sys.power(k) @ sys.B for k in range(H)]  # A^k B, k = 0..H-1

        def mean_map_at(t):
            # x_t = A^t s + sum_k A^{t-1-k} B a_k, uncertainty factor A^{t-1} B
            M = np.zeros((n, self.D))
            M[:, 0:m] = AkB[t - 1]
            for k in range(1, t):
                M[:, (k + 1) * m:(k + 2) * m] = AkB[t - 1 - k]
            return M

        rows_G, rows_h0, rows_Hs, rows_c, rows_W, rows_slack = [], [], [], [], [], []

        def add_soc(con, Hs_row, slack):
            g = con.g.copy()
            c = con.c
            w = np.zeros(m)
            if c > 0.0:
                w = con.F[:, self.sig_cols].diagonal().copy()
                nz = np.flatnonzero(np.abs(w) > 1e-14)
                if nz.size <= 1:
                    # single-weight cone is linear in sigma: fold it exactly,
                    # avoiding a curvature cancellation in the barrier Hessian
                    if nz.size == 1:
                        g[m + nz[0]] += c * abs(w[nz[0]])
                    c = 0.0
                    w = np.zeros(m)
            rows_G.append(g)
            rows_h0.append(con.h)
            rows_Hs.append(Hs_row)
            rows_c.append(c)
            rows_W.append(w)
            rows_slack.append(slack)

        # state-safety cones: S at plan steps 1..H-1, S_T at step H
        for t in range(1, H + 1):
            P = cfg.S_T if t == H else cfg.S
            M = mean_map_at(t)
            factor = DiagStdFactor(kernel=AkB[t - 1], sigma_index=self.sig_cols)
            cons = chance.reformulate(P, AffineMap(M, np.zeros(n)), factor, cfg.eps)
            At = sys.power(t)
            for con, u in zip(cons, P.U):
                add_soc(con, u @ At, slack=True)

        # action box on the first-action mean; the sampled action is clipped
        # to the box at execution, which only moves tail mass inward, so the
        # state cones above remain valid for the executed distribution
        for u, b in zip(cfg.Abox.U, cfg.Abox.v):
            g = np.zeros(self.D)
            g[0:m] = u
            rows_G.append(g)
            rows_h0.append(float(b))
            rows_Hs.append(np.zeros(n))
            rows_c.append(0.0)
            rows_W.append(np.zeros(m))
            rows_slack.append(False)

        # plain action box on deterministic future actions
        for t in range(1, H):
            cols = slice((t + 1) * m, (t + 2) * m)
            for u, b in zip(cfg.Abox.U, cfg.Abox.v):
                g = np.zeros(self.D)
                g[cols] = u
                rows_G.append(g)
                rows_h0.append(float(b))
                rows_Hs.append(np.zeros(n))
                rows_c.append(0.0)
                rows_W.append(np.zeros(m))
                rows_slack.append(False)

        # sigma floor keeps the log terms of the objective finite
        for j in range(m):
            g = np.zeros(self.D)
            g[m + j] = -1.0
            rows_G.append(g)
            rows_h0.append(-cfg.sigma_floor)
            rows_Hs.append(np.zeros(n))
            rows_c.append(0.0)
            rows_W.append(np.zeros(m))
            rows_slack.append(False)

        self.G = np.array(rows_G)
        self.h0 = np.array(rows_h0)
        if not np.all(np.isfinite(self.G)) or not np.all(np.isfinite(self.h0)):
            raise GuideError("constraint rows must be finite")
        self.Hs = np.array(rows_Hs)
        self.c = np.array(rows_c)
        self.W2 = np.array(rows_W) ** 2
        self.slack_mask = np.array(rows_slack)
        self.K = self.G.shape[0]
        self.ab_cols = np.arange(2 * m, self.D)
        self.ab_rows = np.any(np.abs(self.G[:, self.ab_cols]) > 0.0, axis=1) \
            if self.ab_cols.size else np.zeros(self.K, dtype=bool)

        center, radius = cfg.Abox.chebyshev()
        if center is None or radius is None or radius <= 0.0:
            raise GuideError("action set has an empty interior")
        self.a_center = center
        self.a_lo, self.a_hi = cfg.Abox.axis_bounds()

    def offsets(self, s_now: np.ndarray) -> np.ndarray:
        return self.h0 - self.Hs @ s_now

    def margins(self, z: np.ndarray, h: np.ndarray) -> np.ndarray:
        sig = z[self.sig_cols]
        nrm = np.sqrt(self.W2 @ (sig * sig))
        return h - self.G @ z - self.c * nrm

    def stack_plan(self, mu0, sig, abar_flat) -> np.ndarray:
        return np.concatenate([mu0, sig, abar_flat])

    def plan_from_z(self, z, s_now):
        m, H = self.m, self.H
        actions = np.empty((H, m))
        actions[0] = z[0:m]
        if H > 1:
            actions[1:] = z[2 * m:].reshape(H - 1, m)
        states = np.empty((H + 1, self.n))
        states[0] = s_now
        for t in range(H):
            states[t + 1] = step_mean(self.sys, states[t], actions[t])
        return actions, states


def _compiled(cfg: GuideConfig, sys: LinearSystem) -> GuideProblem:
    cached = cfg._compiled
    if cached is not None and cached[0] is sys:
        return cached[1]
    prob = GuideProblem(cfg, sys)
    cfg._compiled = (sys, prob)
    return prob


# -- barrier solver ----------------------------------------------------------------


class _Cones:
    """Packed rows h - G z >= c * sqrt(W2 @ z[sig]^2) over an extended z."""

    __slots__ = ("G", "h", "c", "W2", "sig", "has_cone", "cone_rows")

    def __init__(self, G, h, c, W2, sig_cols):
        self.G = G
        self.h = h
        self.c = c
        self.W2 = W2
        self.sig = sig_cols
        self.cone_rows = c > 0.0
        self.has_cone = bool(np.any(self.cone_rows))

    def margins(self, z):
        lin = self.h - self.G @ z
        if not self.has_cone:
            return lin, None
        s = z[self.sig]
        nrm = np.sqrt(self.W2 @ (s * s))
        return lin - self.c * nrm, nrm


class _KLObjective:
    """tau-scaled objective: KL over (mu0, sigma) blocks plus a linear part."""

    __slots__ = ("mu_cols", "sig_cols", "mu_b", "var_b", "std_b", "lin")

    def __init__(self, mu_cols, sig_cols, base: GaussDist, lin=None):
        self.mu_cols = mu_cols
        self.sig_cols = sig_cols
        self.mu_b = base.mean
        self.std_b = base.std
        self.var_b = base.std ** 2
        self.lin = lin

    def value(self, z):
        mu = z[self.mu_cols]
        sig = z[self.sig_cols]
        val = float(np.sum(np.log(self.std_b / sig)
                           + (sig ** 2 + (self.mu_b - mu) ** 2) / (2.0 * self.var_b)
                           - 0.5))
        if self.lin is not None:
            val += float(self.lin @ z)
        return val

    def grad_hess_diag(self, z, grad_out, hdiag_out):
        mu = z[self.mu_cols]
        sig = z[self.sig_cols]
        grad_out[self.mu_cols] += (mu - self.mu_b) / self.var_b
        grad_out[self.sig_cols] += -1.0 / sig + sig / self.var_b
        hdiag_out[self.mu_cols] += 1.0 / self.var_b
        hdiag_out[self.sig_cols] += 1.0 / sig ** 2 + 1.0 / self.var_b
        if self.lin is not None:
            grad_out += self.lin


class _LinearObjective:
    __slots__ = ("cvec",)

    def __init__(self, cvec):
        self.cvec = cvec

    def value(self, z):
        return float(self.cvec @ z)

    def grad_hess_diag(self, z, grad_out, hdiag_out):
        grad_out += self.cvec


def _barrier_value(cones: _Cones, obj, z, tau):
    mg, _ = cones.margins(z)
    if np.any(mg <= 0.0):
        return math.inf, mg
    return tau * obj.value(z) - float(np.sum(np.log(mg))), mg


def _newton_barrier(cones: _Cones, obj, z0, *, kkt_tol, max_iter,
                    tau0=1.0, decade=10.0, exit_mode=0,
                    exit_gate=0.0, exit_eps=0.0):
    """Minimize tau*f(z) + barrier(z) along the central path tau <- tau*decade.

    Returns (z, iters, ok). The starting point must be strictly feasible.
    exit_mode 1 treats the last coordinate as a feasibility slack: stop once
    it drops below -exit_gate, or once a centered point proves the optimum
    cannot reach -exit_eps (f(z) - K/tau lower-bounds the optimum there).
    """
    z = z0.copy()
    D = z.size
    K = cones.h.size
    tau = tau0
    iters = 0
    mg, nrm = cones.margins(z)
    if np.any(mg <= 0.0) or not np.all(np.isfinite(mg)):
        return z, iters, False
    idx = np.arange(D)
    # active margins below this are float64 noise; no further centering is real
    margin_floor = 1e-13 * max(1.0, float(np.max(np.abs(cones.h))))

    while True:
        prev_lam2 = math.inf
        stall = 0
        for _ in range(60):  # Newton iterations at the current tau
            if iters >= max_iter:
                return z, iters, False
            iters += 1

            w1 = 1.0 / mg
            grad = cones.G.T @ w1
            if cones.has_cone:
                sig = z[cones.sig]
                safe_n = np.where(nrm > 0.0, nrm, 1.0)
                coef = np.where(cones.cone_rows, cones.c * w1 / safe_n, 0.0)
                grad[cones.sig] += (coef @ cones.W2) * sig
                Gt = cones.G.copy()
                Gt[:, cones.sig] += coef[:, None] * cones.W2 * sig[None, :]
                H = Gt.T @ (Gt * (w1 * w1)[:, None])
                cone_diag = coef @ cones.W2
                H[cones.sig, cones.sig] += cone_diag
                V = cones.W2 * sig[None, :]
                outer_scale = np.where(cones.cone_rows,
                                       cones.c * w1 / safe_n ** 3, 0.0)
                H[np.ix_(cones.sig, cones.sig)] -= (V * outer_scale[:, None]).T @ V
            else:
                H = cones.G.T @ (cones.G * (w1 * w1)[:, None])

            ograd = np.zeros(D)
            ohdiag = np.zeros(D)
            obj.grad_hess_diag(z, ograd, ohdiag)
            grad += tau * ograd
            H[idx, idx] += tau * ohdiag

            # Jacobi-scaled solve, with diagonal regularization on trouble.
            d = np.sqrt(np.maximum(np.abs(H[idx, idx]), 1e-12))
            Hs = H / d[:, None] / d[None, :]
            rhs = -grad / d
            reg = 0.0
            for _attempt in range(6):
                try:
                    dz = np.linalg.solve(Hs + reg * np.eye(D), rhs)
                except np.linalg.LinAlgError:
                    dz = None
                if dz is not None and np.all(np.isfinite(dz)):
                    lam2 = float(rhs @ dz)  # Newton decrement squared
                    if lam2 > 0.0:
                        break
                reg = 1e-10 if reg == 0.0 else reg * 100.0
            else:
                return z, iters, False
            step = dz / d

            if lam2 / 2.0 <= 1e-10:
                break  # centered for this tau
            # a stalled decrement only counts as centered once it is small:
            # large-lambda plateaus mean slow progress, not the numeric floor
            if lam2 < 1e-3 and lam2 >= 0.7 * prev_lam2:
                stall += 1
                if stall >= 3:
                    break
            elif lam2 < prev_lam2:
                stall = 0
            prev_lam2 = min(prev_lam2, lam2)

            # backtracking line search keeping margins strictly positive
            phi0 = tau * obj.value(z) - float(np.sum(np.log(mg)))
            alpha = 1.0
            ok_step = False
            gdot = float(grad @ step)
            for _bt in range(60):
                cand = z + alpha * step
                phi1, mg_c = _barrier_value(cones, obj, cand, tau)
                if phi1 <= phi0 + 0.25 * alpha * gdot and math.isfinite(phi1):
                    z = cand
                    mg = mg_c
                    if cones.has_cone:
                        s = z[cones.sig]
                        nrm = np.sqrt(cones.W2 @ (s * s))
                    ok_step = True
                    break
                alpha *= 0.5
            if not ok_step:
                return z, iters, False
            if exit_mode == 1 and z[-1] < -exit_gate:
                return z, iters, True

        if exit_mode == 1:
            if z[-1] < -exit_gate:
                return z, iters, True
            if z[-1] - K / tau > -exit_eps:
                return z, iters, True
        if K / tau <= kkt_tol:
            return z, iters, True
        if float(np.min(mg)) <= margin_floor:
            return z, iters, True  # at float64 resolution of the active set
        tau *= decade


def _minimize(cones: _Cones, obj, z0, *, kkt_tol, max_iter, tau0=1.0,
              decade=10.0, exit_mode=0, exit_gate=0.0, exit_eps=0.0):
    """Dispatch to the JIT kernel when present, else the numpy reference."""
    if _jit_newton is not None:
        if isinstance(obj, _LinearObjective):
            obj_mode = 0
            cvec = obj.cvec
            mu_b = var_b = log_std_b = np.zeros(1)
        else:
            obj_mode = 2 if obj.lin is not None else 1
            cvec = obj.lin if obj.lin is not None else np.zeros(z0.size)
            mu_b = obj.mu_b
            var_b = obj.var_b
            log_std_b = np.log(obj.std_b)
        if cones.has_cone or obj_mode != 0:
            sig_lo = int(cones.sig[0])
            sig_hi = int(cones.sig[-1]) + 1
            W2 = np.ascontiguousarray(cones.W2)
        else:
            sig_lo = sig_hi = 0
            W2 = np.zeros((cones.h.size, 1))
        try:
            return _jit_newton(
                np.ascontiguousarray(cones.G), cones.h, cones.c, W2,
                sig_lo, sig_hi, cones.has_cone,
                obj_mode, cvec, 0, mu_b, var_b, log_std_b,
                z0, kkt_tol, max_iter, tau0, decade,
                exit_mode, exit_gate, exit_eps)
        except Exception:
            pass  # singular-system edge cases fall back to the reference
    return _newton_barrier(cones, obj, z0, kkt_tol=kkt_tol, max_iter=max_iter,
                           tau0=tau0, decade=decade, exit_mode=exit_mode,
                           exit_gate=exit_gate, exit_eps=exit_eps)


# -- solve orchestration -----------------------------------------------------------


def _extend_with_column(cones_G, col_coef):
    return np.hstack([cones_G, col_coef[:, None]])


def _identity_result(prob: GuideProblem, s_now, base: GaussDist, abar_flat,
                     iters: int) -> GuideResult:
    z = prob.stack_plan(base.mean, base.std, abar_flat)
    actions, states = prob.plan_from_z(z, s_now)
    safe = GaussDist(base.mean.copy(), base.std.copy())
    return GuideResult(safe=safe, kl=0.0, plan_actions=actions,
                       plan_states=states, slack_total=0.0,
                       status=OPTIMAL, newton_iters=iters)


def _failed_result(prob: GuideProblem, s_now, base: GaussDist,
                   iters: int) -> GuideResult:
    cfg = prob.cfg
    mean = np.clip(base.mean, prob.a_lo, prob.a_hi)
    safe = GaussDist(mean, np.full(prob.m, cfg.sigma_floor))
    z = prob.stack_plan(mean, safe.std,
                        np.tile(prob.a_center, max(prob.H - 1, 0)))
    actions, states = prob.plan_from_z(z, s_now)
    return GuideResult(safe=safe, kl=kl_diag_gauss(safe, base),
                       plan_actions=actions, plan_states=states,
                       slack_total=0.0, status=FAILED, newton_iters=iters)


def _base_feasible_plan(prob: GuideProblem, h, base: GaussDist, budget: int):
    """Search for future actions making the unmodified base distribution safe.

    Returns (abar_flat, iters) when the base plan is strictly feasible, else
    (None, iters). With (mu0, sigma) pinned at the base parameters the cone
    terms are constants, so this is a pure linear feasibility phase over the
    future actions.
    """
    m, H = prob.m, prob.H
    fixed = np.concatenate([base.mean, base.std])
    # margins with abar contribution removed
    sig = base.std
    cone_const = prob.c * np.sqrt(prob.W2 @ (sig * sig))
    h_eff = h - prob.G[:, :2 * m] @ fixed - cone_const

    candidate = np.tile(prob.a_center, H - 1) if H > 1 else np.zeros(0)
    ab_rows = prob.ab_rows
    if H > 1:
        resid = h_eff - prob.G[:, prob.ab_cols] @ candidate
    else:
        resid = h_eff
    if np.all(resid > _IDENTITY_TOL):
        return candidate, 0
    # rows never touched by abar must already hold at the base parameters
    if np.any(h_eff[~ab_rows] <= _IDENTITY_TOL):
        return None, 0
    if H == 1:
        return None, 0

    G_ab = prob.G[ab_rows][:, prob.ab_cols]
    h_ab = h_eff[ab_rows]
    Kr = G_ab.shape[0]
    G_ext = _extend_with_column(G_ab, -np.ones(Kr))
    cones = _Cones(G_ext, h_ab, np.zeros(Kr), np.zeros((Kr, prob.m)),
                   prob.sig_cols)  # sig columns unused: all-linear rows
    cvec = np.zeros(G_ext.shape[1])
    cvec[-1] = 1.0
    s0 = max(0.0, float(-np.min(h_ab - G_ab @ candidate))) + 1.0
    z0 = np.concatenate([candidate, [s0]])
    exit_tol = 1e-7

    z, iters, ok = _minimize(cones, _LinearObjective(cvec), z0,
                             kkt_tol=1e-9, max_iter=budget,
                             tau0=max(1.0, Kr / max(s0, 0.1)), decade=30.0,
                             exit_mode=1, exit_gate=exit_tol, exit_eps=exit_tol)
    if ok and z[-1] < -exit_tol:
        return z[:-1].copy(), iters
    return None, iters


def solve_guide(cfg: GuideConfig, sys: LinearSystem, s_now,
                base: GaussDist) -> GuideResult:
    """Run the guide at one state; pure function of its arguments.

    The base distribution is returned untouched (status optimal, zero KL)
    whenever some deterministic future-action plan certifies it safe. Else a
    feasibility phase finds a strict interior point and the KL objective is
    minimized over the hard constraint set; when no interior exists the
    state-safety cones are relaxed with linearly penalized slacks and the
    result is flagged relaxed. Solver breakdown yields the clipped base mean
    at the floor deviation, flagged failed.
    """
    prob = _compiled(cfg, sys)
    s_now = np.asarray(s_now, dtype=float).ravel()
    if s_now.size != prob.n:
        raise GuideError("state dimension mismatch")
    if base.dim != prob.m:
        raise GuideError("base distribution dimension mismatch")
    h = prob.offsets(s_now)
    iters_total = 0

    # 1. minimal intervention: keep the base distribution when provably safe
    if np.all(base.std >= cfg.sigma_floor - 1e-15):
        abar, it0 = _base_feasible_plan(prob, h, base, cfg.max_newton_iter)
        iters_total += it0
        if abar is not None:
            return _identity_result(prob, s_now, base, abar, iters_total)

    m, H, D = prob.m, prob.H, prob.D

    # 2. feasibility phase over the full decision vector
    sig0 = np.full(m, max(2.0 * cfg.sigma_floor, 1e-3 * min(np.min(
        prob.a_hi - prob.a_lo), 1.0)))
    z_init = prob.stack_plan(prob.a_center, sig0,
                             np.tile(prob.a_center, max(H - 1, 0)))
    mg0 = prob.margins(z_init, h)
    if np.min(mg0) > 1e-9:
        # the canonical plan is already strictly feasible: no phase needed
        z1 = np.concatenate([z_init, [-np.min(mg0)]])
        ok1 = True
    else:
        s0 = float(-np.min(mg0)) + 1.0
        G_ext = _extend_with_column(prob.G, -np.ones(prob.K))
        cones_p1 = _Cones(G_ext, h, prob.c, prob.W2, prob.sig_cols)
        cvec = np.zeros(D + 1)
        cvec[-1] = 1.0
        z0 = np.concatenate([z_init, [s0]])

        z1, it1, ok1 = _minimize(
            cones_p1, _LinearObjective(cvec), z0,
            kkt_tol=1e-10, max_iter=cfg.max_newton_iter,
            tau0=max(1.0, prob.K / max(s0, 0.1)), decade=30.0,
            exit_mode=1, exit_gate=1e-4, exit_eps=1e-9)
        iters_total += it1
    if not ok1:
        return _failed_result(prob, s_now, base, iters_total)

    if z1[-1] < -1e-9:
        # 3a. strictly feasible: minimize the KL objective over the hard set
        cones = _Cones(prob.G, h, prob.c, prob.W2, prob.sig_cols)
        obj = _KLObjective(np.arange(m), prob.sig_cols, base)
        z_start = z1[:-1].copy()
        # KL >= 0 bounds the suboptimality by the starting value, which lets
        # the path begin past the decades that cannot be informative
        tau_start = min(max(1.0, prob.K / max(obj.value(z_start), 1e-9)), 1e12)
        z2, it2, ok2 = _minimize(
            cones, obj, z_start,
            kkt_tol=cfg.kkt_tol, max_iter=cfg.max_newton_iter,
            tau0=tau_start, decade=cfg.barrier_decade)
        iters_total += it2
        if not ok2:
            return _failed_result(prob, s_now, base, iters_total)
        safe = GaussDist(z2[0:m].copy(), z2[m:2 * m].copy())
        actions, states = prob.plan_from_z(z2, s_now)
        return GuideResult(safe=safe, kl=kl_diag_gauss(safe, base),
                           plan_actions=actions, plan_states=states,
                           slack_total=0.0, status=OPTIMAL,
                           newton_iters=iters_total)

    # 3b. no interior: relax the state-safety cones with penalized slacks
    slack_rows = np.flatnonzero(prob.slack_mask)
    Ks = slack_rows.size
    G_sl = np.hstack([prob.G, np.zeros((prob.K, Ks))])
    for j, r in enumerate(slack_rows):
        G_sl[r, D + j] = -1.0  # margin_r + xi_j >= 0
    # xi >= 0 rows
    G_xi = np.zeros((Ks, D + Ks))
    G_xi[np.arange(Ks), D + np.arange(Ks)] = -1.0
    G_full = np.vstack([G_sl, G_xi])
    h_full = np.concatenate([h, np.zeros(Ks)])
    c_full = np.concatenate([prob.c, np.zeros(Ks)])
    W2_full = np.vstack([prob.W2, np.zeros((Ks, m))])
    cones_sl = _Cones(G_full, h_full, c_full, W2_full, prob.sig_cols)

    lin = np.zeros(D + Ks)
    lin[D:] = cfg.slack_weight
    obj = _KLObjective(np.arange(m), prob.sig_cols, base, lin=lin)

    # warm start from the feasibility phase when its point keeps the
    # non-relaxable rows strictly satisfied, else from the canonical plan
    z_warm = z1[:D].copy()
    mg_warm = prob.margins(z_warm, h)
    if np.min(mg_warm[~prob.slack_mask]) <= 1e-12:
        z_warm = z_init
        mg_warm = mg0
    xi0 = np.maximum(0.0, -mg_warm[slack_rows]) + 1e-3
    z0 = np.concatenate([z_warm, xi0])
    tau_start = min(max(1.0, (prob.K + Ks) / max(obj.value(z0), 1e-9)), 1e12)
    z3, it3, ok3 = _minimize(
        cones_sl, obj, z0,
        kkt_tol=cfg.kkt_tol, max_iter=cfg.max_newton_iter,
        tau0=tau_start, decade=cfg.barrier_decade)
    iters_total += it3
    if not ok3:
        return _failed_result(prob, s_now, base, iters_total)
    safe = GaussDist(z3[0:m].copy(), z3[m:2 * m].copy())
    actions, states = prob.plan_from_z(z3[:D], s_now)
    return GuideResult(safe=safe, kl=kl_diag_gauss(safe, base),
                       plan_actions=actions, plan_states=states,
                       slack_total=float(np.sum(z3[D:])), status=RELAXED,
                       newton_iters=iters_total)
