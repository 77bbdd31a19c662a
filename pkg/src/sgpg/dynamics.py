"""Known discrete-time LTI model and open-loop covariance-factor propagation."""

from __future__ import annotations

import numpy as np


class DynamicsError(ValueError):
    pass


class LinearSystem:
    """x_{t+1} = A x_t + B a_t with a fixed sampling period dt (metadata).

    Immutable after construction; matrix powers are memoized internally so
    repeated horizon sweeps reuse them.
    """

    __slots__ = ("A", "B", "dt", "_powers")

    def __init__(self, A, B, dt: float):
        A = np.asarray(A, dtype=float)
        B = np.asarray(B, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DynamicsError("A must be square")
        if B.ndim == 1:
            B = B[:, None]
        if B.shape[0] != A.shape[0]:
            raise DynamicsError("B row count must match the state dimension")
        if A.shape[0] < 1 or B.shape[1] < 1:
            raise DynamicsError("state and action dimensions must be >= 1")
        self.A = A
        self.B = B
        self.dt = float(dt)
        self._powers = {0: np.eye(A.shape[0])}

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def power(self, t: int) -> np.ndarray:
        """A**t by repeated multiplication (no eigendecomposition)."""
        if t < 0:
            raise DynamicsError("negative power")
        if t not in self._powers:
            k = max(self._powers)
            P = self._powers[k]
            while k < t:
                P = self.A @ P
                k += 1
                self._powers[k] = P
        return self._powers[t]

    def __repr__(self):
        return f"LinearSystem(n={self.n}, m={self.m}, dt={self.dt})"


def step_mean(sys: LinearSystem, x, a) -> np.ndarray:
    """A x + B a for a single state/action pair."""
    x = np.asarray(x, dtype=float).ravel()
    a = np.asarray(a, dtype=float).ravel()
    if x.size != sys.n:
        raise DynamicsError(f"state has dim {x.size}, expected {sys.n}")
    if a.size != sys.m:
        raise DynamicsError(f"action has dim {a.size}, expected {sys.m}")
    return sys.A @ x + sys.B @ a


def propagate_cov_factor(sys: LinearSystem, Sigma0_bar, t: int) -> np.ndarray:
    """A**t B Sigma0_bar, evaluated as t repeated left-multiplications by A.

    Convention: the state reached at plan step t+1 carries this factor for
    the stochastic first action; the current state itself is exact and
    carries zero covariance. Iterating A @ (previous factor) keeps the
    recurrence F_{t+1} = A F_t bitwise exact.
    """
    if t < 0:
        raise DynamicsError("t must be >= 0")
    S = np.asarray(Sigma0_bar, dtype=float)
    if S.ndim == 0:
        S = S.reshape(1, 1)
    if S.ndim == 1:
        S = np.diag(S)
    if S.shape[0] != sys.m:
        raise DynamicsError("Sigma0_bar row count must match the action dimension")
    F = sys.B @ S
    for _ in range(t):
        F = sys.A @ F
    return F
