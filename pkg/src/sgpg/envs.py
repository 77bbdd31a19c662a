"""The two benchmark environments as exact LTI simulations.

Double integrator: point mass on a line, state (position, velocity), reward
is squared velocity, episode ends when the position leaves [-1, 1].

Planar quadrotor: linearized about hover, state ordered
(x, y, phi, xdot, ydot, phidot) with mass = inertia = gravity = 1. The
episode ends on ground contact or when the tilt exceeds 0.5 rad, with
impact/spin penalties; otherwise the reward favors hovering low and
centered. Both use dt = 0.02.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import LinearSystem, step_mean
from .polytope import Polytope

DT = 0.02

CAUSE_BOUNDS = "bounds"
CAUSE_GROUND = "ground"
CAUSE_TILT = "tilt"
CAUSE_HORIZON = "horizon"
VIOLATION_CAUSES = (CAUSE_BOUNDS, CAUSE_GROUND, CAUSE_TILT)


class EnvError(ValueError):
    pass


@dataclass
class EnvSpec:
    name: str
    sys: LinearSystem
    reward_id: str
    termination_id: str
    init_id: str
    true_bounds: Polytope
    action_box: Polytope
    max_episode_len: int
    action_lo: np.ndarray = None
    action_hi: np.ndarray = None

    def __post_init__(self):
        if self.action_lo is None or self.action_hi is None:
            self.action_lo, self.action_hi = self.action_box.axis_bounds()


# -- rewards and termination rules ---------------------------------------------


def _reward_velocity_squared(spec, state, cause):
    return float(state[1] ** 2)


def _reward_quadrotor_hover(spec, state, cause):
    if cause == CAUSE_GROUND:
        return float(-1.0 - 2.0 * abs(state[4]))   # impact speed |ydot|
    if cause == CAUSE_TILT:
        return float(-1.0 - 5.0 * abs(state[5]))   # spin rate |phidot|
    return float(-0.01 * state[1] - 0.01 * abs(state[0]))


def _terminate_position_bounds(spec, state):
    if abs(state[0]) > 1.0:
        return True, CAUSE_BOUNDS
    return False, None


def _terminate_quadrotor(spec, state):
    if state[1] <= 0.0:
        return True, CAUSE_GROUND
    if abs(state[2]) > 0.5:
        return True, CAUSE_TILT
    return False, None


def _init_double_integrator(spec, rng):
    return np.array([rng.uniform(-0.5, 0.5), 0.0])


def _init_quadrotor(spec, rng):
    s = np.zeros(6)
    s[1] = rng.uniform(0.5, 1.5)
    return s


REWARDS = {
    "velocity_squared": _reward_velocity_squared,
    "quadrotor_hover": _reward_quadrotor_hover,
}
TERMINATIONS = {
    "position_bounds": _terminate_position_bounds,
    "quadrotor_bounds": _terminate_quadrotor,
}
INITS = {
    "double_integrator": _init_double_integrator,
    "planar_quadrotor": _init_quadrotor,
}


# -- environment interface ---------------------------------------------------------


def reset(spec: EnvSpec, rng) -> np.ndarray:
    return INITS[spec.init_id](spec, rng)


def step(spec: EnvSpec, state, action):
    """Deterministic transition; reward and termination read the next state."""
    nxt = step_mean(spec.sys, state, action)
    if not np.all(np.isfinite(nxt)):
        raise EnvError("non-finite state reached")
    terminated, cause = TERMINATIONS[spec.termination_id](spec, nxt)
    reward = REWARDS[spec.reward_id](spec, nxt, cause)
    return nxt, reward, terminated, cause


# -- built-in environments -----------------------------------------------------------


def double_integrator_env(max_episode_len: int = 400) -> EnvSpec:
    """Point mass, |position| <= 1 alive region, force box [-1, 1].

    A unit force changes the velocity by force * dt per step (standard Euler
    discretization, B = [0, dt]^T), i.e. the acceleration authority is
    1 m/s^2. That scale makes the crash-through return plateau near 50 and
    bounds the sustainable speed near 1.9, matching the reported learning
    curves and the published terminal-set geometry.
    """
    sys = LinearSystem([[1.0, DT], [0.0, 1.0]], [[0.0], [DT]], DT)
    bounds = Polytope([[1.0, 0.0], [-1.0, 0.0]], [1.0, 1.0])
    box = Polytope.box([-1.0], [1.0])
    return EnvSpec(name="double_integrator", sys=sys,
                   reward_id="velocity_squared",
                   termination_id="position_bounds",
                   init_id="double_integrator",
                   true_bounds=bounds, action_box=box,
                   max_episode_len=max_episode_len)


def quadrotor_env(max_episode_len: int = 250) -> EnvSpec:
    """Linearized planar quadrotor, thrust/torque box [-2, 2]^2.

    State order (x, y, phi, xdot, ydot, phidot); the tilt couples into the
    horizontal acceleration through -g*phi.
    """
    g, m_mass, inertia = 1.0, 1.0, 1.0
    A = np.eye(6)
    A[0, 3] = DT
    A[1, 4] = DT
    A[2, 5] = DT
    A[3, 2] = -g * DT
    B = np.zeros((6, 2))
    B[4, 0] = DT / m_mass
    B[5, 1] = DT / inertia
    sys = LinearSystem(A, B, DT)
    # alive region: above ground, tilt within half a radian
    U = np.zeros((3, 6))
    U[0, 1] = -1.0
    U[1, 2] = 1.0
    U[2, 2] = -1.0
    bounds = Polytope(U, [0.0, 0.5, 0.5])
    box = Polytope.box([-2.0, -2.0], [2.0, 2.0])
    return EnvSpec(name="planar_quadrotor", sys=sys,
                   reward_id="quadrotor_hover",
                   termination_id="quadrotor_bounds",
                   init_id="planar_quadrotor",
                   true_bounds=bounds, action_box=box,
                   max_episode_len=max_episode_len)


BUILTIN_ENVS = {
    "double_integrator": double_integrator_env,
    "planar_quadrotor": quadrotor_env,
}


# -- default guide geometry ------------------------------------------------------------


def braking_wedge(lo: float, hi: float, accel: float, knots) -> Polytope:
    """Control-invariant polytope for one double-integrator channel (q, qdot).

    Inner-approximates the square-root braking envelope with one facet per
    velocity knot. Facet j covers velocities [u_j, u_{j+1}] and gets slope
    u_{j+1}/accel, the smallest slope one full braking step cannot cross;
    the facet chain starts at (hi, 0) so the position corner closes at zero
    velocity. Velocity cap rows at the last knot bound the set.
    """
    knots = list(knots)
    if not knots or any(k <= 0 for k in knots) or sorted(knots) != knots:
        raise EnvError("knots must be increasing and positive")
    rows = [[1.0, 0.0], [-1.0, 0.0]]
    offs = [hi, -lo]
    mid = 0.5 * (lo + hi)
    p, u_prev = hi, 0.0
    for u in knots:
        c = u / accel
        b = p + c * u_prev
        rows.append([1.0, c])
        offs.append(b)
        rows.append([-1.0, -c])        # point-symmetric partner about mid
        offs.append(b - 2.0 * mid)
        p, u_prev = b - c * u, u
    vmax = knots[-1]
    rows.append([0.0, 1.0])
    offs.append(vmax)
    rows.append([0.0, -1.0])
    offs.append(vmax)
    return Polytope(np.array(rows), np.array(offs))


def _embed_channel(P2: Polytope, n: int, q_idx: int, qd_idx: int) -> Polytope:
    U = np.zeros((P2.nrows, n))
    U[:, q_idx] = P2.U[:, 0]
    U[:, qd_idx] = P2.U[:, 1]
    return Polytope(U, P2.v.copy())


def default_safe_set(name: str, delta: float) -> Polytope:
    """The guide's state safe set S, already tightened by the 1-delta buffer."""
    if name == "double_integrator":
        return double_integrator_env().true_bounds.shrink(delta)
    if name == "planar_quadrotor":
        # ground buffer is additive (a multiplicative shrink cannot move a
        # boundary through the origin); the tilt rows shrink multiplicatively
        phi = 0.5 * (1.0 - delta)
        U = np.zeros((3, 6))
        U[0, 1] = -1.0
        U[1, 2] = 1.0
        U[2, 2] = -1.0
        return Polytope(U, [-0.05, phi, phi])
    raise EnvError(f"no builtin safe set for env '{name}'")


def default_terminal_set(name: str, delta: float) -> Polytope:
    """Built-in invariant terminal set, inside default_safe_set(name, delta)."""
    if name == "double_integrator":
        hi = 1.0 - delta
        return braking_wedge(-hi, hi, 1.0, [0.3, 0.6, 0.9, 1.2, 1.5, 1.8])
    if name == "planar_quadrotor":
        phi = 0.5 * (1.0 - delta)
        wy = braking_wedge(0.05, 2.05, 2.0, [0.5, 1.0, 1.5, 2.0])
        wp = braking_wedge(-phi, phi, 2.0, [0.4, 0.8, 1.2, 1.6])
        return _embed_channel(wy, 6, 1, 4).intersect(_embed_channel(wp, 6, 2, 5))
    raise EnvError(f"no builtin terminal set for env '{name}'")
