"""Shared fixtures: synthetic tracks, scenarios and test-side oracles."""

import numpy as np
import pytest
from scipy.integrate import cumulative_trapezoid
from scipy.stats import multivariate_normal

from trackest.imu_synthesis import HarmonicLaw, Scenario, synthesize
from trackest.track_geometry import TrackDesignGeometry


def make_track(length, spacing, psi_fn=None, theta_fn=None, phi_fn=None,
               refine=20):
    """Build a geometry table from angle laws.

    Positions integrate the linearized tangent ``[cos psi, sin psi, -theta]``
    on a grid ``refine`` times finer than the table, then subsample, so the
    tabulated positions are consistent with the tabulated angles.
    """
    fine = spacing / refine
    s_fine = np.arange(0.0, length + 0.5 * fine, fine)
    zero = np.zeros_like(s_fine)
    psi = psi_fn(s_fine) if psi_fn else zero
    theta = theta_fn(s_fine) if theta_fn else zero
    phi = phi_fn(s_fine) if phi_fn else zero
    tangent = np.stack([np.cos(psi), np.sin(psi), -theta], axis=-1)
    pos_fine = cumulative_trapezoid(tangent, s_fine, axis=0, initial=0.0)
    sl = slice(None, None, refine)
    return TrackDesignGeometry(s_fine[sl], pos_fine[sl], psi[sl], theta[sl], phi[sl])


def straight_track(length=40.0, spacing=0.5):
    s = np.arange(0.0, length + 0.5 * spacing, spacing)
    pos = np.column_stack([s, np.zeros_like(s), np.zeros_like(s)])
    zero = np.zeros_like(s)
    return TrackDesignGeometry(s, pos, zero, zero, zero)


def circle_track(radius=100.0, length=60.0, spacing=0.5):
    s = np.arange(0.0, length + 0.5 * spacing, spacing)
    pos = np.column_stack([radius * np.sin(s / radius),
                           radius * (1.0 - np.cos(s / radius)),
                           np.zeros_like(s)])
    zero = np.zeros_like(s)
    return TrackDesignGeometry(s, pos, s / radius, zero, zero)


def smoothstep(x):
    """Quintic smoothstep on [0, 1] (C2 at both ends)."""
    x = np.clip(x, 0.0, 1.0)
    return x * x * x * (x * (6.0 * x - 15.0) + 10.0)


def scale_track(length=92.0, spacing=0.1):
    """Desk-scale test track: straight lead-in, one canted arc, straight exit,
    with a gentle vertical undulation."""
    radius = 50.0
    rho_max = 1.0 / radius

    def rho_h(s):
        up = smoothstep((s - 25.0) / 5.0)
        down = smoothstep((s - 55.0) / 5.0)
        return rho_max * (up - down)

    fine = spacing / 20.0
    s_fine = np.arange(0.0, length + 0.5 * fine, fine)

    def psi_fn(s):
        return cumulative_trapezoid(rho_h(s), s, initial=0.0)

    def theta_fn(s):
        return 0.005 * np.sin(2.0 * np.pi * s / 46.0)

    def phi_fn(s):
        return 0.012 * rho_h(s) / rho_max

    return make_track(length, spacing, psi_fn, theta_fn, phi_fn)


def brute_force_loglik(model) -> float:
    """Joint Gaussian log-density of the stacked measurement vector.

    Assembled directly from the state-space matrices (no recursion), so it is
    an independent oracle for the filter's log-likelihood.
    """
    F, Q, H, z = model.F, model.Q, model.H, model.z
    R = np.diag(model.r_diag)
    T, m, _ = H.shape
    means = [model.x0]
    for _ in range(T - 1):
        means.append(F @ means[-1])
    cov = {}
    cov[(0, 0)] = model.P0
    for k in range(T - 1):
        cov[(k + 1, k + 1)] = F @ cov[(k, k)] @ F.T + Q
    for j in range(T):
        for k in range(j + 1, T):
            cov[(j, k)] = cov[(j, k - 1)] @ F.T
            cov[(k, j)] = cov[(j, k)].T
    mean_z = np.concatenate([H[k] @ means[k] for k in range(T)])
    cov_z = np.zeros((T * m, T * m))
    for j in range(T):
        for k in range(T):
            block = H[j] @ cov[(j, k)] @ H[k].T
            if j == k:
                block = block + R
            cov_z[j * m:(j + 1) * m, k * m:(k + 1) * m] = block
    return float(multivariate_normal.logpdf(z.reshape(-1), mean_z, cov_z))


DELTA = 0.05  # m, rest height of the IMU above the centerline in scenarios

SIGMA_GYRO = 2e-3   # rad/s
SIGMA_ACCEL = 2e-2  # m/s^2


def reference_orientation_params():
    """Stage-1 parameters for the reference sensor noise levels.

    Gyro rows carry the sensor variance. The corrected-accelerometer rows
    carry the residual body acceleration that survives the low-pass, which
    dominates the sensor noise by an order of magnitude.
    """
    from trackest.kalman import CovarianceParams

    return CovarianceParams.orientation(
        q_phi=0.5, q_theta=0.5, q_psi=0.1,
        R_omega=SIGMA_GYRO ** 2, R_ax=0.04, R_ay=0.04, R_psi=1e-4)


def reference_trajectory_params():
    from trackest.kalman import CovarianceParams

    return CovarianceParams.trajectory(
        q_y=100.0, q_z=100.0, R_y1=SIGMA_ACCEL ** 2, R_z1=SIGMA_ACCEL ** 2,
        R_y2=10.0 * SIGMA_ACCEL ** 2, R_z2=10.0 * SIGMA_ACCEL ** 2)


def reference_coupled_params():
    from trackest.kalman import CovarianceParams

    return CovarianceParams.coupled(
        q_phi=0.5, q_theta=0.5, q_psi=0.1, q_y=100.0, q_z=100.0,
        R_omega=SIGMA_GYRO ** 2, R_x=SIGMA_ACCEL ** 2,
        R_y1=SIGMA_ACCEL ** 2, R_z1=SIGMA_ACCEL ** 2,
        R_y2=10.0 * SIGMA_ACCEL ** 2, R_z2=10.0 * SIGMA_ACCEL ** 2)


def tuning_space(variant):
    """Search space with the standard floors, opened to 1e-8 for the gyro
    variance only (MEMS gyro noise sits below the generic floor; lowering the
    other floors re-enables the degenerate tight-anchor likelihood optima)."""
    from trackest.covariance_estimation import SearchSpace

    base = SearchSpace.for_variant(variant)
    lower = tuple(1e-8 if n == "R_omega" else lo
                  for n, lo in zip(base.names, base.lower))
    return SearchSpace(names=base.names, lower=lower, upper=base.upper,
                       constraints=base.constraints)


def mixed_irregularity_scenario(duration=12.0, speed=2.0, sigma_gyro=0.0,
                                sigma_accel=0.0, seed=0, dt=0.005, s0=0.5):
    """Sinusoidal irregularities with mixed wavelengths, small amplitudes."""
    return Scenario(
        duration=duration, speed=speed, dt=dt, s0=s0, seed=seed,
        sigma_gyro=sigma_gyro, sigma_accel=sigma_accel,
        ry=HarmonicLaw(terms=((0.005, 3.1, 0.0), (0.003, 0.9, 0.7), (0.002, 4.8, 2.1))),
        rz=HarmonicLaw(terms=((0.005, 2.3, 0.3), (0.002, 0.6, 1.1)), offset=DELTA),
        roll=HarmonicLaw(terms=((0.02, 3.7, 0.9), (0.01, 1.2, 0.2))),
        pitch=HarmonicLaw(terms=((0.008, 2.7, 1.4),)),
        yaw=HarmonicLaw(terms=((0.008, 3.3, 0.5),)),
    )


@pytest.fixture(scope="session")
def straight_geom():
    return straight_track(length=40.0)


@pytest.fixture(scope="session")
def long_straight_geom():
    return straight_track(length=120.0)


@pytest.fixture(scope="session")
def circle_geom():
    return circle_track(radius=100.0, length=60.0)


@pytest.fixture(scope="session")
def scale_geom():
    return scale_track()


@pytest.fixture(scope="session")
def quiet_ride(long_straight_geom):
    """Noise-free ride with mixed sinusoidal irregularities on straight track."""
    return synthesize(long_straight_geom, mixed_irregularity_scenario(duration=12.0))


@pytest.fixture(scope="session")
def noisy_ride(long_straight_geom):
    """Same scenario with realistic sensor noise."""
    scenario = mixed_irregularity_scenario(
        duration=12.0, sigma_gyro=2e-3, sigma_accel=2e-2, seed=11)
    return synthesize(long_straight_geom, scenario)
