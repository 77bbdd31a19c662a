import math

import numpy as np
import pytest

from sgpg.chance import (AffineMap, DiagStdFactor, empirical_violation,
                         gaussian_cdf, gaussian_quantile, reformulate,
                         split_epsilon)
from sgpg.polytope import Polytope

# frozen from a 50-digit bisection on the erfc-based normal CDF
PHI_INV_095 = 1.6448536269514727
PHI_INV_DI_TERMINAL = 3.4807564043462128   # 1 - 0.001/4
PHI_INV_0975 = 1.9599639845400542


def test_quantile_median_is_zero():
    assert abs(gaussian_quantile(0.5)) < 1e-12


def test_quantile_frozen_values():
    assert abs(gaussian_quantile(0.95) - PHI_INV_095) < 1e-9
    assert abs(gaussian_quantile(1 - 0.001 / 4) - PHI_INV_DI_TERMINAL) < 1e-9
    assert abs(gaussian_quantile(0.975) - PHI_INV_0975) < 1e-9


def test_quantile_roundtrip_accuracy():
    rng = np.random.default_rng(5)
    ps = rng.uniform(1e-7, 1 - 1e-7, 1000)
    for p in ps:
        assert abs(gaussian_cdf(gaussian_quantile(p)) - p) <= 1e-9


def test_quantile_domain():
    for bad in (0.0, 1.0, -0.1, 1.1):
        with pytest.raises(ValueError):
            gaussian_quantile(bad)


def test_split_epsilon():
    assert split_epsilon(0.01, 1) == 0.01
    assert split_epsilon(0.001, 4) == 0.00025
    assert split_epsilon(0.05, 5) == pytest.approx(0.01)
    with pytest.raises(ValueError):
        split_epsilon(-0.1, 2)
    with pytest.raises(ValueError):
        split_epsilon(0.1, 0)


def test_reformulate_single_row_constant_factor():
    # {x <= v} with mu the decision and a fixed scalar factor sigma:
    # margin boundary at mu = v - Phi^{-1}(0.95) * sigma
    v, sigma = 2.0, 0.3
    P = Polytope([[1.0]], [v])
    cons = reformulate(P, AffineMap(np.eye(1), np.zeros(1)),
                       np.array([[sigma]]), eps=0.05)
    assert len(cons) == 1
    mu_star = v - PHI_INV_095 * sigma
    assert cons[0].margin([mu_star]) == pytest.approx(0.0, abs=1e-12)
    assert cons[0].holds([mu_star - 1e-9])
    assert not cons[0].holds([mu_star + 1e-6])


def test_reformulate_zero_factor_degrades_to_rows():
    P = Polytope([[1.0], [-1.0]], [1.0, 1.0])
    cons = reformulate(P, AffineMap(np.eye(1), np.zeros(1)),
                       np.zeros((1, 1)), eps=0.05)
    for con, v in zip(cons, P.v):
        assert con.c == 0.0
        assert con.margin([0.0]) == pytest.approx(v)


def test_reformulate_sigma_decision_box_bound():
    # mu pinned at 0, sigma the only decision: the two-row box [-1, 1]
    # admits sigma up to 1 / Phi^{-1}(1 - eps/2)
    P = Polytope([[1.0], [-1.0]], [1.0, 1.0])
    mean_map = AffineMap(np.zeros((1, 1)), np.zeros(1))
    cov = DiagStdFactor(kernel=np.eye(1), sigma_index=np.array([0]))
    cons = reformulate(P, mean_map, cov, eps=0.05)
    sigma_max = 1.0 / PHI_INV_0975
    assert sigma_max == pytest.approx(0.5102134569246539, abs=1e-12)
    for con in cons:
        assert con.margin([sigma_max]) == pytest.approx(0.0, abs=1e-12)
        assert con.holds([sigma_max * 0.999])
        assert not con.holds([sigma_max * 1.001])


def test_empirical_violation_deep_interior():
    P = Polytope.box([-1, -1], [1, 1])
    rng = np.random.default_rng(0)
    out = empirical_violation(P, [0.0, 0.0], 1e-4 * np.eye(2), 10_000, rng)
    assert out == 0.0


def test_empirical_violation_on_face():
    P = Polytope.box([-1, -1], [1, 1])
    rng = np.random.default_rng(1)
    n = 100_000
    out = empirical_violation(P, [1.0, 0.0], 0.05 * np.eye(2), n, rng)
    assert abs(out - 0.5) < 3.0 * math.sqrt(0.25 / n)


def test_conservativeness_random_instances():
    # instances whose reformulated constraints hold must violate at most
    # eps plus binomial noise
    rng = np.random.default_rng(42)
    n_samples = 100_000
    for _ in range(15):
        dim = rng.integers(1, 4)
        r = int(rng.integers(2, 6))
        U = rng.standard_normal((r, dim))
        U /= np.linalg.norm(U, axis=1, keepdims=True)
        v = rng.uniform(0.5, 2.0, r)
        P = Polytope(U, v)
        eps = float(rng.uniform(0.005, 0.1))
        # keep the quantile tightening inside the smallest offset
        scale = rng.uniform(0.1, 0.9) * float(np.min(v)) / 4.0
        Sbar = scale * np.eye(dim)
        cons = reformulate(P, AffineMap(np.eye(dim), np.zeros(dim)), Sbar, eps)
        mu = np.zeros(dim)
        assert all(c.holds(mu) for c in cons)
        # push right to the tightest boundary for a non-trivial check
        margins = np.array([c.margin(mu) for c in cons])
        k = int(np.argmin(margins))
        mu = mu + (margins[k] - 1e-12) * U[k]
        if not all(c.holds(mu) for c in cons):
            mu = np.zeros(dim)
        viol = empirical_violation(P, mu, Sbar, n_samples, rng)
        assert viol <= eps + 3.0 * math.sqrt(eps / n_samples)


def test_tightness_single_row_one_dim():
    # active constraint <=> empirical violation matches eps within noise
    eps = 0.05
    sigma = 0.2
    P = Polytope([[1.0]], [1.0])
    mu = 1.0 - gaussian_quantile(1 - eps) * sigma
    rng = np.random.default_rng(3)
    n = 200_000
    viol = empirical_violation(P, [mu], np.array([[sigma]]), n, rng)
    assert abs(viol - eps) < 3.0 * math.sqrt(eps * (1 - eps) / n)
