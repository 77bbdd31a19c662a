"""Gaussian MLP policy with hand-rolled forward and reverse passes.

Two tanh hidden layers of width 64, a linear mean head, and a
state-independent log-std vector. No autograd framework: the backward pass
is written against this fixed architecture, taking gradients of scalar
losses that are built from the policy head outputs (log-density terms and
quadratic distances to a target distribution).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .guide import GaussDist

LOG_2PI = float(np.log(2.0 * np.pi))
CHECKPOINT_MAGIC = b"SGPG1"


class PolicyError(ValueError):
    pass


def _orthogonal(rng, rows, cols, gain):
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


class MlpPolicy:
    """pi(.|s) = N(mean(s), diag(exp(log_std))^2)."""

    HIDDEN = 64

    def __init__(self, n_state: int, n_action: int, seed: int = 0,
                 init_log_std: float = float(np.log(0.5))):
        if n_state < 1 or n_action < 1:
            raise PolicyError("dimensions must be positive")
        self.n = n_state
        self.m = n_action
        rng = np.random.default_rng(seed)
        h = self.HIDDEN
        g = float(np.sqrt(2.0))
        self.W1 = _orthogonal(rng, h, n_state, g)
        self.b1 = np.zeros(h)
        self.W2 = _orthogonal(rng, h, h, g)
        self.b2 = np.zeros(h)
        # small head keeps early actions near zero, inside the safe interior
        self.Wh = _orthogonal(rng, n_action, h, 0.01)
        self.bh = np.zeros(n_action)
        self.log_std = np.full(n_action, init_log_std)

    # -- forward -----------------------------------------------------------

    def _hidden(self, S):
        H1 = np.tanh(S @ self.W1.T + self.b1)
        H2 = np.tanh(H1 @ self.W2.T + self.b2)
        return H1, H2

    def forward(self, s) -> GaussDist:
        s = np.asarray(s, dtype=float).ravel()
        if s.size != self.n:
            raise PolicyError(f"state has dim {s.size}, expected {self.n}")
        if not np.all(np.isfinite(s)):
            raise PolicyError("non-finite state")
        _, h2 = self._hidden(s[None, :])
        mean = h2[0] @ self.Wh.T + self.bh
        return GaussDist(mean, np.exp(self.log_std))

    def forward_batch(self, S):
        """Means for a (T, n) state batch; std is state-independent."""
        S = np.atleast_2d(np.asarray(S, dtype=float))
        H1, H2 = self._hidden(S)
        return H2 @ self.Wh.T + self.bh, np.exp(self.log_std), (S, H1, H2)

    def log_prob(self, s, a) -> float:
        d = self.forward(s)
        a = np.asarray(a, dtype=float).ravel()
        if a.size != self.m:
            raise PolicyError("action dimension mismatch")
        z = (a - d.mean) / d.std
        return float(np.sum(-np.log(d.std) - 0.5 * LOG_2PI - 0.5 * z * z))

    # -- backward ----------------------------------------------------------

    def backward_heads(self, cache, DM, DL):
        """Map per-sample head gradients to a flat parameter gradient.

        cache comes from forward_batch; DM (T, m) holds dL/dmean per sample
        and DL (T, m) dL/dlog_std. Contributions are summed over samples.
        """
        S, H1, H2 = cache
        gWh = DM.T @ H2
        gbh = DM.sum(axis=0)
        dH2 = DM @ self.Wh
        dP2 = dH2 * (1.0 - H2 * H2)
        gW2 = dP2.T @ H1
        gb2 = dP2.sum(axis=0)
        dH1 = dP2 @ self.W2
        dP1 = dH1 * (1.0 - H1 * H1)
        gW1 = dP1.T @ S
        gb1 = dP1.sum(axis=0)
        glog = DL.sum(axis=0)
        return np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2,
                               gWh.ravel(), gbh, glog])

    def backward(self, s, loss) -> np.ndarray:
        """Exact gradient of a scalar loss of the policy heads at one state."""
        s = np.asarray(s, dtype=float).ravel()
        mean, std, cache = self.forward_batch(s[None, :])
        dm, dl = loss.head_grads(mean[0], std)
        return self.backward_heads(cache, dm[None, :], dl[None, :])

    def loss_value(self, s, loss) -> float:
        d = self.forward(s)
        return loss.value(d.mean, d.std)

    # -- parameter vector ----------------------------------------------------

    def _fields(self):
        return ("W1", "b1", "W2", "b2", "Wh", "bh", "log_std")

    def flatten(self) -> np.ndarray:
        return np.concatenate([getattr(self, f).ravel() for f in self._fields()])

    @property
    def n_params(self) -> int:
        return sum(getattr(self, f).size for f in self._fields())

    def set_flat(self, theta):
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != self.n_params:
            raise PolicyError("parameter vector has the wrong length")
        k = 0
        for f in self._fields():
            arr = getattr(self, f)
            setattr(self, f, theta[k:k + arr.size].reshape(arr.shape).copy())
            k += arr.size

    # -- checkpoints ------------------------------------------------------------

    def save(self, path):
        theta = self.flatten()
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<III", self.n, self.m, self.HIDDEN))
            fh.write(struct.pack("<Q", theta.size))
            fh.write(theta.astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "MlpPolicy":
        with open(path, "rb") as fh:
            magic = fh.read(len(CHECKPOINT_MAGIC))
            if magic != CHECKPOINT_MAGIC:
                raise PolicyError("not a policy checkpoint (bad magic)")
            n, m, hidden = struct.unpack("<III", fh.read(12))
            if hidden != cls.HIDDEN:
                raise PolicyError("unsupported hidden width in checkpoint")
            (count,) = struct.unpack("<Q", fh.read(8))
            theta = np.frombuffer(fh.read(count * 8), dtype="<f8").astype(float)
        pi = cls(n, m, seed=0)
        pi.set_flat(theta)
        return pi


# -- scalar losses over the policy heads ---------------------------------------


@dataclass
class LogProbLoss:
    """scale * log pi(a|s)."""
    action: np.ndarray
    scale: float = 1.0

    def value(self, mean, std):
        z = (np.asarray(self.action, dtype=float) - mean) / std
        return self.scale * float(np.sum(-np.log(std) - 0.5 * LOG_2PI
                                         - 0.5 * z * z))

    def head_grads(self, mean, std):
        a = np.asarray(self.action, dtype=float)
        dmean = self.scale * (a - mean) / std ** 2
        dlog = self.scale * ((a - mean) ** 2 / std ** 2 - 1.0)
        return dmean, dlog


@dataclass
class DistancePenaltyLoss:
    """scale * (||mu_ref - mean||^2 + ||var_ref - var||^2), variances diagonal."""
    ref: GaussDist
    scale: float = 1.0

    def value(self, mean, std):
        dv = self.ref.std ** 2 - std ** 2
        return self.scale * float(np.sum((self.ref.mean - mean) ** 2)
                                  + np.sum(dv * dv))

    def head_grads(self, mean, std):
        var = std ** 2
        dmean = self.scale * 2.0 * (mean - self.ref.mean)
        dlog = self.scale * 4.0 * var * (var - self.ref.std ** 2)
        return dmean, dlog


@dataclass
class SumLoss:
    parts: tuple

    def value(self, mean, std):
        return sum(p.value(mean, std) for p in self.parts)

    def head_grads(self, mean, std):
        dm = np.zeros_like(mean)
        dl = np.zeros_like(mean)
        for p in self.parts:
            a, b = p.head_grads(mean, std)
            dm = dm + a
            dl = dl + b
        return dm, dl
