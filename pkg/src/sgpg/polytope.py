"""H-representation polytope algebra and control-invariant set construction.

A polytope is stored as {x : U x <= v}. All operations treat instances as
immutable values; methods return new objects. Linear programs are delegated
to scipy's HiGHS backend, vertex enumeration (dim <= 6) to Qhull via
scipy.spatial, with a combinatorial fallback for degenerate sets.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import HalfspaceIntersection

ROW_TOL = 1e-9
INCLUSION_TOL = 1e-7
# Combinatorial vertex enumeration gives up beyond this many row subsets.
VERTEX_COMBO_BUDGET = 200_000


class PolytopeError(ValueError):
    pass


class Polytope:
    """Convex polyhedron {x : U x <= v} in H-representation.

    Rows with a zero normal are stripped when vacuous (v >= 0). A zero row
    with v < 0 is kept as the canonical encoding of the empty set.
    """

    __slots__ = ("U", "v")

    def __init__(self, U, v):
        U = np.atleast_2d(np.asarray(U, dtype=float))
        v = np.atleast_1d(np.asarray(v, dtype=float)).ravel()
        if U.shape[0] != v.shape[0]:
            raise PolytopeError(
                f"row count mismatch: U has {U.shape[0]} rows, v has {v.shape[0]}"
            )
        norms = np.linalg.norm(U, axis=1)
        zero = norms < ROW_TOL
        if np.any(zero):
            if np.any(v[zero] < 0):
                # Empty set: keep a single infeasible marker row.
                n = U.shape[1]
                U = np.zeros((1, n))
                v = np.array([-1.0])
            else:
                U, v = U[~zero], v[~zero]
                if U.shape[0] == 0:
                    raise PolytopeError("polytope needs at least one effective row")
        self.U = U
        self.v = v

    # -- basic structure ----------------------------------------------------

    @property
    def dim(self) -> int:
        return self.U.shape[1]

    @property
    def nrows(self) -> int:
        return self.U.shape[0]

    def is_empty_marker(self) -> bool:
        return self.nrows == 1 and np.linalg.norm(self.U[0]) < ROW_TOL and self.v[0] < 0

    def __repr__(self):
        return f"Polytope(rows={self.nrows}, dim={self.dim})"

    @classmethod
    def box(cls, lo, hi) -> "Polytope":
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if lo.shape != hi.shape or np.any(lo > hi):
            raise PolytopeError("box bounds malformed")
        n = lo.size
        eye = np.eye(n)
        return cls(np.vstack([eye, -eye]), np.concatenate([hi, -lo]))

    # -- membership and row algebra -----------------------------------------

    def contains(self, x, tol: float = ROW_TOL) -> bool:
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.dim:
            raise PolytopeError(f"point has dim {x.size}, polytope dim {self.dim}")
        return bool(np.all(self.U @ x <= self.v + tol))

    def contains_many(self, X, tol: float = ROW_TOL) -> np.ndarray:
        """Vectorized membership for an (N, dim) array of points."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise PolytopeError("point array dimension mismatch")
        return np.all(X @ self.U.T <= self.v + tol, axis=1)

    def normalize(self) -> "Polytope":
        norms = np.linalg.norm(self.U, axis=1)
        norms = np.where(norms < ROW_TOL, 1.0, norms)
        return Polytope(self.U / norms[:, None], self.v / norms)

    def shrink(self, delta: float) -> "Polytope":
        """{x : U x <= (1 - delta) v}; shrinkage about the origin."""
        if not 0.0 <= delta < 1.0:
            raise PolytopeError("delta must lie in [0, 1)")
        # Origin must be strictly inside: each offset strictly positive after
        # normalization, otherwise scaling about 0 is not a shrink.
        nrm = self.normalize()
        if np.any(nrm.v <= ROW_TOL):
            raise PolytopeError("shrink undefined: origin not in the interior")
        return Polytope(self.U.copy(), (1.0 - delta) * self.v)

    def intersect(self, other: "Polytope") -> "Polytope":
        if other.dim != self.dim:
            raise PolytopeError("intersection dimension mismatch")
        return Polytope(np.vstack([self.U, other.U]), np.concatenate([self.v, other.v]))

    # -- linear programming helpers ------------------------------------------

    def support(self, direction) -> float:
        """max direction @ x over the polytope; +inf when unbounded."""
        d = np.asarray(direction, dtype=float).ravel()
        res = linprog(-d, A_ub=self.U, b_ub=self.v,
                      bounds=[(None, None)] * self.dim, method="highs")
        if res.status == 3:
            return math.inf
        if res.status == 2:
            return -math.inf  # empty set
        if not res.success:
            raise PolytopeError(f"support LP failed: {res.message}")
        return float(-res.fun)

    def is_bounded(self) -> bool:
        for j in range(self.dim):
            e = np.zeros(self.dim)
            for sgn in (1.0, -1.0):
                e[j] = sgn
                if not math.isfinite(self.support(e)):
                    return False
            e[j] = 0.0
        return True

    def is_empty(self, tol: float = ROW_TOL) -> bool:
        if self.is_empty_marker():
            return True
        _, r = self.chebyshev()
        return r is None or r < -tol

    def chebyshev(self):
        """Center and radius of the largest inscribed ball ((None, None) if LP fails)."""
        nrm = self.normalize()
        n = self.dim
        c = np.zeros(n + 1)
        c[-1] = -1.0
        A = np.hstack([nrm.U, np.ones((nrm.nrows, 1))])
        res = linprog(c, A_ub=A, b_ub=nrm.v,
                      bounds=[(None, None)] * n + [(None, None)], method="highs")
        if res.status == 2:
            return None, None
        if res.status == 3:
            # Unbounded radius: pick any feasible interior point instead.
            res = linprog(c, A_ub=A, b_ub=nrm.v,
                          bounds=[(None, None)] * n + [(0.0, 1e6)], method="highs")
            if not res.success:
                return None, None
        if not res.success:
            return None, None
        return res.x[:n].copy(), float(res.x[-1])

    def axis_bounds(self):
        """Per-axis (lo, hi) bounding box via support LPs; inf where unbounded."""
        lo = np.empty(self.dim)
        hi = np.empty(self.dim)
        e = np.zeros(self.dim)
        for j in range(self.dim):
            e[j] = 1.0
            hi[j] = self.support(e)
            e[j] = -1.0
            lo[j] = -self.support(e)
            e[j] = 0.0
        return lo, hi

    # -- vertex enumeration ----------------------------------------------------

    def vertices(self) -> np.ndarray:
        """Vertex set for a bounded polytope, dim <= 6.

        Uses Qhull halfspace intersection about the Chebyshev center; falls
        back to row-subset enumeration for degenerate (flat) sets.
        """
        if self.dim > 6:
            raise PolytopeError("vertex enumeration supported up to dimension 6")
        if self.is_empty_marker():
            return np.empty((0, self.dim))
        center, radius = self.chebyshev()
        if center is None:
            return np.empty((0, self.dim))
        finite = np.isfinite(self.v)
        if radius is not None and radius > 1e-9 and self.dim >= 2:
            halfspaces = np.hstack([self.U[finite], -self.v[finite, None]])
            try:
                hs = HalfspaceIntersection(halfspaces, center)
                verts = np.asarray(hs.intersections)
            except Exception:
                verts = self._vertices_combinatorial()
        else:
            verts = self._vertices_combinatorial()
        if verts.size == 0:
            return verts.reshape(0, self.dim)
        verts = verts[np.all(np.isfinite(verts), axis=1)]
        if verts.size:
            verts = verts[self.contains_many(verts, tol=1e-6)]
        return _dedupe_rows(verts)

    def _vertices_combinatorial(self) -> np.ndarray:
        n, r = self.dim, self.nrows
        if n == 1:
            lo, hi = self.axis_bounds()
            pts = [p for p in (lo[0], hi[0]) if math.isfinite(p)]
            return np.array(pts).reshape(-1, 1)
        if math.comb(r, n) > VERTEX_COMBO_BUDGET:
            raise PolytopeError("vertex enumeration overflow: row budget exceeded")
        out = []
        for rows in itertools.combinations(range(r), n):
            A = self.U[list(rows)]
            b = self.v[list(rows)]
            if abs(np.linalg.det(A)) < 1e-12:
                continue
            x = np.linalg.solve(A, b)
            if self.contains(x, tol=1e-7):
                out.append(x)
        if not out:
            return np.empty((0, n))
        return np.array(out)

    # -- serialization -----------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for row, off in zip(self.U, self.v):
            coefs = " ".join(repr(float(c)) for c in row)
            lines.append(f"{coefs} <= {float(off)!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Polytope":
        rows, offs = [], []
        for ln, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "<=" not in line:
                raise PolytopeError(f"line {ln}: expected 'u_1 ... u_n <= v'")
            lhs, rhs = line.split("<=")
            try:
                coefs = [float(t) for t in lhs.split()]
                off = float(rhs)
            except ValueError as exc:
                raise PolytopeError(f"line {ln}: bad number ({exc})") from None
            if not coefs:
                raise PolytopeError(f"line {ln}: empty coefficient list")
            rows.append(coefs)
            offs.append(off)
        if not rows:
            raise PolytopeError("no rows in polytope text")
        if len({len(r) for r in rows}) != 1:
            raise PolytopeError("inconsistent row dimensions")
        return cls(np.array(rows), np.array(offs))

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "Polytope":
        with open(path) as fh:
            return cls.from_text(fh.read())


# -- row pruning --------------------------------------------------------------


def _dedupe_rows(X: np.ndarray, decimals: int = 9) -> np.ndarray:
    seen = {}
    for i, row in enumerate(np.round(X, decimals)):
        seen.setdefault(row.tobytes(), i)
    keep = sorted(seen.values())
    return X[keep]


def _prune_syntactic(U: np.ndarray, v: np.ndarray):
    """Normalize rows, drop duplicates and rows dominated by a single other row."""
    norms = np.linalg.norm(U, axis=1)
    keepers = norms >= ROW_TOL
    infeasible = np.any(v[~keepers] < -ROW_TOL)
    if infeasible:
        return None
    U, v, norms = U[keepers], v[keepers], norms[keepers]
    if U.shape[0] == 0:
        return np.empty((0, U.shape[1])), np.empty(0)
    U = U / norms[:, None]
    v = v / norms
    # Sort by direction (primary) then offset so the tightest row comes first.
    keyed = np.round(np.column_stack([U, v]), 10)
    order = np.lexsort(keyed.T[::-1])
    U, v = U[order], v[order]
    keep = []
    prev_dir = None
    for i in range(U.shape[0]):
        d = np.round(U[i], 9).tobytes()
        if d == prev_dir:
            continue  # sorted by offset, the first one dominates
        prev_dir = d
        keep.append(i)
    return U[keep], v[keep]


def _prune_lp(U: np.ndarray, v: np.ndarray):
    """Drop rows implied by the rest (support LP per row). Deterministic order."""
    keep = np.ones(U.shape[0], dtype=bool)
    for i in range(U.shape[0]):
        keep[i] = False
        others = keep.copy()
        if not np.any(others):
            keep[i] = True
            continue
        res = linprog(-U[i], A_ub=U[others], b_ub=v[others],
                      bounds=[(None, None)] * U.shape[1], method="highs")
        if res.status == 3 or (res.success and -res.fun > v[i] + 1e-9):
            keep[i] = True  # row cuts something off
        elif not res.success and res.status != 2:
            keep[i] = True  # conservative on solver trouble
    return U[keep], v[keep]


# -- projection (Fourier-Motzkin) ----------------------------------------------


def project_out(P: Polytope, drop_dims, lp_prune_threshold: int = 64) -> Polytope:
    """Exact orthogonal projection eliminating the given coordinates.

    One Fourier-Motzkin pass per eliminated variable; after each pass rows are
    deduplicated and single-row dominations removed, with a per-row LP
    redundancy sweep once the row count passes ``lp_prune_threshold``.
    An empty projection is encoded as the infeasible row 0 <= -1.
    """
    drop = sorted(set(int(d) for d in np.atleast_1d(drop_dims)))
    if any(d < 0 or d >= P.dim for d in drop):
        raise PolytopeError("drop_dims out of range")
    U, v = P.U.copy(), P.v.copy()
    for d in reversed(drop):
        col = U[:, d]
        pos = col > ROW_TOL
        neg = col < -ROW_TOL
        zer = ~(pos | neg)
        rows = [np.delete(U[zer], d, axis=1)]
        offs = [v[zer]]
        if np.any(pos) and np.any(neg):
            Up, vp, cp = U[pos], v[pos], col[pos]
            Un, vn, cn = U[neg], v[neg], col[neg]
            # scale to coefficient +-1 then add pairwise
            Up, vp = Up / cp[:, None], vp / cp
            Un, vn = Un / (-cn[:, None]), vn / (-cn)
            comb_U = Up[:, None, :] + Un[None, :, :]
            comb_v = vp[:, None] + vn[None, :]
            rows.append(np.delete(comb_U.reshape(-1, U.shape[1]), d, axis=1))
            offs.append(comb_v.ravel())
        U = np.vstack(rows)
        v = np.concatenate(offs)
        pruned = _prune_syntactic(U, v)
        if pruned is None:
            n_out = P.dim - len(drop)
            return Polytope(np.zeros((1, n_out)), [-1.0])
        U, v = pruned
        if U.shape[0] > lp_prune_threshold:
            U, v = _prune_lp(U, v)
        if U.shape[0] == 0:
            U, v = _whole_space_rows(U.shape[1])
    return Polytope(U, v)


def _whole_space_rows(n: int):
    # Single never-binding row; keeps the type closed under projection.
    if n == 0:
        raise PolytopeError("cannot project out every coordinate")
    U = np.zeros((1, n))
    U[0, 0] = 1.0
    return U, np.array([np.inf])


def contains_polytope(outer: Polytope, inner: Polytope, tol: float = INCLUSION_TOL) -> bool:
    """inner subset of outer, decided by one support LP per outer row."""
    if outer.dim != inner.dim:
        raise PolytopeError("inclusion dimension mismatch")
    if inner.is_empty_marker():
        return True
    for u, b in zip(outer.U, outer.v):
        s = inner.support(u)
        if s == -math.inf:
            return True  # inner empty
        if s > b + tol:
            return False
    return True


# -- control invariance ----------------------------------------------------------


def pre_set(sys, Omega: Polytope, Abox: Polytope) -> Polytope:
    """Pre(Omega) = {x : exists a in Abox with A x + B a in Omega}."""
    A, B = sys.A, sys.B
    n, m = sys.n, sys.m
    if Omega.dim != n or Abox.dim != m:
        raise PolytopeError("pre_set dimension mismatch")
    lifted_U = np.vstack([
        np.hstack([Omega.U @ A, Omega.U @ B]),
        np.hstack([np.zeros((Abox.nrows, n)), Abox.U]),
    ])
    lifted_v = np.concatenate([Omega.v, Abox.v])
    lifted = Polytope(lifted_U, lifted_v)
    return project_out(lifted, range(n, n + m))


def compute_invariant_set(sys, S: Polytope, Abox: Polytope,
                          max_iter: int = 100, row_budget: int = 2000) -> Polytope:
    """Maximal control-invariant subset of S via the standard recursion.

    Omega_0 = S, Omega_{k+1} = Omega_k intersect Pre(Omega_k), stopping at a
    fixpoint (mutual inclusion within 1e-7) or after max_iter iterations. A
    non-fixpoint iterate is returned only if it passes verify_invariance.
    """
    if max_iter < 1:
        raise PolytopeError("max_iter must be >= 1")
    if not Abox.is_bounded():
        raise PolytopeError("action set must be bounded")
    omega = S
    for _ in range(max_iter):
        pre = pre_set(sys, omega, Abox)
        cand = omega.intersect(pre)
        pruned = _prune_syntactic(cand.U, cand.v)
        if pruned is None:
            raise PolytopeError("no invariant subset found within iteration budget")
        U, v = pruned
        if U.shape[0] > 64:
            U, v = _prune_lp(U, v)
        if U.shape[0] > row_budget:
            raise PolytopeError("invariant-set recursion exceeded the row budget")
        nxt = Polytope(U, v)
        if nxt.is_empty():
            raise PolytopeError("no invariant subset found within iteration budget")
        if contains_polytope(nxt, omega):
            # omega subset of nxt holds too (nxt = omega intersect pre): fixpoint.
            return nxt
        omega = nxt
    if verify_invariance(sys, omega, Abox):
        return omega
    raise PolytopeError("no invariant subset found within iteration budget")


def verify_invariance(sys, Omega: Polytope, Abox: Polytope) -> bool:
    """Check the one-step property at every vertex of Omega.

    For each vertex x an LP decides whether some admissible a keeps
    A x + B a inside Omega; by convexity this certifies invariance of the
    whole set. Coordinates never referenced by Omega's rows are dropped
    first, which is exact when the dynamics do not couple them back into
    the constrained block; otherwise (and for unbounded sets) the check
    fails closed by returning False.
    """
    A, B = sys.A, sys.B
    if Omega.dim != sys.n or Abox.dim != sys.m:
        raise PolytopeError("verify_invariance dimension mismatch")
    if Omega.is_empty_marker():
        return False
    active = np.any(np.abs(Omega.U) > ROW_TOL, axis=0)
    idx = np.flatnonzero(active)
    if idx.size == 0:
        return True  # no constraints at all
    rest = np.flatnonzero(~active)
    if rest.size > 0:
        if np.any(np.abs(A[np.ix_(idx, rest)]) > ROW_TOL):
            return False  # free coordinates feed the constrained block
        A_sub = A[np.ix_(idx, idx)]
        B_sub = B[idx, :]
        omega_sub = Polytope(Omega.U[:, idx], Omega.v)
    else:
        A_sub, B_sub, omega_sub = A, B, Omega
    if not omega_sub.is_bounded():
        return False
    verts = omega_sub.vertices()
    if verts.shape[0] == 0:
        return False
    n_a = Abox.dim
    for x in verts:
        # feasibility LP over a: Abox rows and Omega rows at the next state
        A_ub = np.vstack([Abox.U, omega_sub.U @ B_sub])
        b_ub = np.concatenate([Abox.v, omega_sub.v - omega_sub.U @ (A_sub @ x)])
        res = linprog(np.zeros(n_a), A_ub=A_ub, b_ub=b_ub + 1e-9,
                      bounds=[(None, None)] * n_a, method="highs")
        if not res.success:
            return False
    return True
