import numpy as np
import pytest
from scipy.optimize import linprog

from sgpg.dynamics import LinearSystem
from sgpg.polytope import (Polytope, PolytopeError, compute_invariant_set,
                           contains_polytope, pre_set, project_out,
                           verify_invariance)

DI = LinearSystem([[1.0, 0.02], [0.0, 1.0]], [[0.0], [1.0]], 0.02)


def slab(width=0.9):
    return Polytope([[1.0, 0.0], [-1.0, 0.0]], [width, width])


# -- membership ----------------------------------------------------------------

def test_contains_box_center():
    P = Polytope.box([-1, -1], [1, 1])
    assert P.contains([0.0, 0.0])


def test_contains_outside_face():
    P = Polytope.box([-1, -1], [1, 1])
    assert not P.contains([1.5, 0.0])


def test_contains_position_slab_ignores_velocity():
    # velocity-unconstrained safe set admits any velocity at the boundary
    assert slab(0.9).contains([0.9, 5.0])


def test_contains_dim_mismatch():
    with pytest.raises(PolytopeError):
        Polytope.box([-1], [1]).contains([0.0, 0.0])


# -- shrink ---------------------------------------------------------------------

def test_shrink_identity():
    P = Polytope.box([-1.0], [1.0]).shrink(0.0)
    assert np.allclose(P.v, [1.0, 1.0])


def test_shrink_paper_buffer():
    P = Polytope.box([-1.0], [1.0]).shrink(0.1)
    assert np.allclose(sorted(P.v), [0.9, 0.9])
    assert P.contains([0.9]) and not P.contains([0.91])


def test_shrink_origin_on_boundary_rejected():
    with pytest.raises(PolytopeError):
        Polytope.box([0.0], [2.0]).shrink(0.1)


def test_shrink_subset_property():
    rng = np.random.default_rng(7)
    cube = Polytope.box([-5, -5, -5], [5, 5, 5])
    for _ in range(20):
        U = rng.standard_normal((8, 3))
        v = rng.uniform(0.5, 2.0, 8)  # origin strictly inside
        P = Polytope(U, v).intersect(cube)
        delta = rng.uniform(0.01, 0.99)
        Q = P.shrink(delta)
        verts = Q.vertices()
        assert verts.shape[0] >= 3
        for vert in verts:
            assert P.contains(vert, tol=1e-7)


# -- projection -------------------------------------------------------------------

def test_project_out_hand_case():
    # {x + a <= 1, -a <= 0, a <= 1} drop a  ->  {x <= 1}
    P = Polytope([[1, 1], [0, -1], [0, 1]], [1, 0, 1])
    Q = project_out(P, [1])
    assert Q.dim == 1
    assert Q.contains([1.0]) and Q.contains([-50.0]) and not Q.contains([1.01])


def test_project_out_absent_variable():
    P = Polytope([[1, 0]], [1.0])
    Q = project_out(P, [1])
    assert Q.contains([0.99]) and not Q.contains([1.01])


def test_project_out_diamond_grid_oracle():
    # |x| + |a| <= 1 projected onto x is [-1, 1]
    P = Polytope([[1, 1], [1, -1], [-1, 1], [-1, -1]], [1, 1, 1, 1])
    Q = project_out(P, [1])
    for x in np.linspace(-1.5, 1.5, 61):
        inside_grid = any(P.contains([x, a])
                          for a in np.linspace(-1.5, 1.5, 301))
        assert Q.contains([x], tol=1e-7) == inside_grid


def test_project_out_empty_set_marker():
    # a <= 0 and a >= 1 is empty; the elimination derives 0 <= -1
    P = Polytope([[0, 1], [0, -1]], [0.0, -1.0])
    Q = project_out(P, [1])
    assert Q.is_empty_marker()
    assert not Q.contains([0.0])


def test_project_out_exactness_lp_oracle():
    rng = np.random.default_rng(11)
    for _case in range(6):
        U = rng.standard_normal((10, 3))
        v = rng.uniform(0.5, 1.5, 10)
        P = Polytope(U, v)
        Q = project_out(P, [2])
        pts = rng.uniform(-2.0, 2.0, size=(1700, 2))
        for x in pts:
            res = linprog(np.zeros(1), A_ub=U[:, 2:3],
                          b_ub=v - U[:, :2] @ x,
                          bounds=[(None, None)], method="highs")
            assert Q.contains(x, tol=1e-7) == res.success


# -- invariant sets ----------------------------------------------------------------

def test_invariant_set_identity_dynamics():
    sys = LinearSystem(np.eye(2), np.eye(2), 1.0)
    S = Polytope.box([-1, -1], [1, 1])
    Abox = Polytope.box([-0.5, -0.5], [0.5, 0.5])
    omega = compute_invariant_set(sys, S, Abox, max_iter=5)
    assert contains_polytope(S, omega) and contains_polytope(omega, S)


def test_invariant_set_double_integrator():
    omega = compute_invariant_set(DI, slab(0.9), Polytope.box([-1], [1]),
                                  max_iter=40)
    assert verify_invariance(DI, omega, Polytope.box([-1], [1]))
    assert contains_polytope(slab(0.9), omega)
    # position-dependent velocity bound: rows must couple both coordinates
    both = np.any((np.abs(omega.U[:, 0]) > 1e-9)
                  & (np.abs(omega.U[:, 1]) > 1e-9))
    assert both
    # inner approximation of the braking envelope: interior points stay,
    # points beyond the curve fall outside
    assert omega.contains([0.0, 1.0])
    assert not omega.contains([0.89, 1.0])


def test_invariant_set_uncontrollable_doubling_map():
    sys = LinearSystem([[2.0]], [[0.0]], 1.0)
    S = Polytope.box([-1.0], [1.0])
    with pytest.raises(PolytopeError):
        compute_invariant_set(sys, S, Polytope.box([-1.0], [1.0]), max_iter=8)


def test_recursion_monotone():
    omega = slab(0.9)
    box = Polytope.box([-1], [1])
    prev = omega
    for _ in range(5):
        nxt = prev.intersect(pre_set(DI, prev, box))
        assert contains_polytope(prev, nxt)
        prev = nxt


def test_verify_invariance_computed_set():
    box = Polytope.box([-1], [1])
    omega = compute_invariant_set(DI, slab(0.9), box, max_iter=40)
    assert verify_invariance(DI, omega, box)


def test_verify_invariance_rejects_unbounded_slab():
    assert not verify_invariance(DI, slab(0.9), Polytope.box([-1], [1]))


def test_verify_invariance_singleton_origin():
    sys = LinearSystem([[0.5, 0.0], [0.0, 0.5]], [[1.0], [0.0]], 1.0)
    singleton = Polytope.box([0.0, 0.0], [0.0, 0.0])
    assert verify_invariance(sys, singleton, Polytope.box([-1], [1]))


def test_invariant_set_output_within_safe_set():
    box = Polytope.box([-1], [1])
    omega = compute_invariant_set(DI, slab(0.9), box, max_iter=40)
    for vert in omega.vertices():
        assert slab(0.9).contains(vert, tol=1e-6)


# -- serialization -----------------------------------------------------------------

def test_text_roundtrip(tmp_path):
    P = Polytope([[1.0, 0.5], [-1.0, 0.25]], [1.5, 2.0])
    path = tmp_path / "p.poly"
    P.save(path)
    Q = Polytope.load(path)
    assert np.array_equal(P.U, Q.U) and np.array_equal(P.v, Q.v)


def test_text_parse_rejects_garbage():
    with pytest.raises(PolytopeError):
        Polytope.from_text("1 0 <= abc")
    with pytest.raises(PolytopeError):
        Polytope.from_text("1 0 1.5")


def test_vertices_box():
    V = Polytope.box([-1, -2], [1, 2]).vertices()
    expect = {(-1, -2), (-1, 2), (1, -2), (1, 2)}
    got = {tuple(np.round(v, 9)) for v in V}
    assert got == expect
