import numpy as np
import pytest

from sgpg.dynamics import (DynamicsError, LinearSystem, propagate_cov_factor,
                           step_mean)
from sgpg.envs import double_integrator_env, quadrotor_env

DI = double_integrator_env().sys
QUAD = quadrotor_env().sys


def test_step_mean_literal_matrix_pair():
    # with B = [0, 1]^T the input feeds the velocity directly
    sys = LinearSystem([[1.0, 0.02], [0.0, 1.0]], [[0.0], [1.0]], 0.02)
    assert np.allclose(step_mean(sys, [0.0, 0.0], [1.0]), [0.0, 1.0])


def test_step_mean_double_integrator_force():
    # unit force for one step raises the velocity by dt
    assert np.allclose(step_mean(DI, [0.0, 0.0], [1.0]), [0.0, 0.02])


def test_step_mean_identity_dynamics():
    sys = LinearSystem(np.eye(3), np.zeros((3, 1)), 1.0)
    x = np.array([0.3, -0.2, 1.0])
    assert np.array_equal(step_mean(sys, x, [0.0]), x)


def test_step_mean_quadrotor_thrust_channel():
    nxt = step_mean(QUAD, np.zeros(6), [2.0, 0.0])
    expect = np.zeros(6)
    expect[4] = 0.04  # dt/m * f
    assert np.allclose(nxt, expect)


def test_step_mean_dim_checks():
    with pytest.raises(DynamicsError):
        step_mean(DI, [0.0], [0.0])
    with pytest.raises(DynamicsError):
        step_mean(DI, [0.0, 0.0], [0.0, 0.0])


def test_cov_factor_t0_is_B_sigma():
    F = propagate_cov_factor(DI, np.array([[0.3]]), 0)
    assert np.allclose(F, DI.B * 0.3)


def test_cov_factor_one_step_literal_matrix_pair():
    # A^1 B = (dt, 1)^T for the unit-input form, scaled by sigma
    sys = LinearSystem([[1.0, 0.02], [0.0, 1.0]], [[0.0], [1.0]], 0.02)
    sigma = 0.7
    F = propagate_cov_factor(sys, np.array([[sigma]]), 1)
    assert np.allclose(F.ravel(), [0.02 * sigma, sigma])


def test_cov_factor_double_integrator_one_step():
    sigma = 0.7
    F = propagate_cov_factor(DI, np.array([[sigma]]), 1)
    assert np.allclose(F.ravel(), [0.02 * 0.02 * sigma, 0.02 * sigma])


def test_cov_factor_nilpotent_vanishes():
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    sys = LinearSystem(A, [[1.0], [1.0]], 1.0)
    for t in range(2, 6):
        assert np.allclose(propagate_cov_factor(sys, np.eye(1), t), 0.0)


def test_cov_factor_recurrence_exact():
    # F_{t+1} must equal A @ F_t bitwise, by construction
    sigma = np.diag([0.2, 0.5])
    fs = [propagate_cov_factor(QUAD, sigma, t) for t in range(17)]
    for t in range(16):
        assert np.array_equal(fs[t + 1], QUAD.A @ fs[t])


def test_cov_factor_zero_sigma_degenerates():
    for t in range(8):
        F = propagate_cov_factor(DI, np.zeros((1, 1)), t)
        assert np.all(F == 0.0)


def test_power_cache_consistency():
    sys = LinearSystem([[1.0, 0.1], [0.0, 0.95]], [[0.0], [1.0]], 0.1)
    direct = np.linalg.matrix_power(sys.A, 7)
    assert np.allclose(sys.power(7), direct)
    assert sys.power(0) is sys._powers[0]


def test_linear_system_validation():
    with pytest.raises(DynamicsError):
        LinearSystem([[1.0, 0.0]], [[1.0]], 0.1)  # not square
    with pytest.raises(DynamicsError):
        LinearSystem(np.eye(2), np.ones((3, 1)), 0.1)  # B rows mismatch
