"""Body coordinates, frame transforms and sensor-signal kinematics.

Everything here is a pure function of its inputs and vectorizes over leading
axes: the coordinate containers may hold scalars or equal-length arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .errors import BadRate, NearSingular
from .track_geometry import TrackDesignGeometry, track_rotation

_COS_THETA_MIN = 1e-3  # pitch singularity guard for the Euler-rate map


@dataclass(frozen=True)
class BodyCoordinates:
    """Track-relative coordinates of the moving body.

    ``s_b`` arc-length position, ``r_y``/``r_z`` lateral/vertical offsets of
    the body frame origin from the track frame, and roll/pitch/yaw of the
    body frame relative to the track frame.
    """

    s_b: float | np.ndarray
    r_y: float | np.ndarray
    r_z: float | np.ndarray
    phi_tb: float | np.ndarray
    theta_tb: float | np.ndarray
    psi_tb: float | np.ndarray


@dataclass(frozen=True)
class AbsoluteAngles:
    """Roll, pitch and yaw of the body with respect to the global frame."""

    phi_b: float | np.ndarray
    theta_b: float | np.ndarray
    psi_b: float | np.ndarray


@dataclass(frozen=True)
class ImuSample:
    """One IMU sample: time, gyro triplet (rad/s), accelerometer triplet (m/s^2)."""

    t: float
    omega: np.ndarray
    a: np.ndarray


@dataclass
class StateSeries:
    """Body state time histories: absolute angles plus track-relative offsets."""

    t: np.ndarray
    s: np.ndarray
    phi_b: np.ndarray
    theta_b: np.ndarray
    psi_b: np.ndarray
    ry: np.ndarray
    rz: np.ndarray


def relative_rotation(phi_tb, theta_tb, psi_tb):
    """Linearized body-to-track rotation matrix.

    ``M - I`` is antisymmetric by construction. Broadcasts over array inputs
    to shape ``(..., 3, 3)``.
    """
    phi = np.asarray(phi_tb, dtype=float)
    theta = np.asarray(theta_tb, dtype=float)
    psi = np.asarray(psi_tb, dtype=float)
    M = np.zeros(np.broadcast(phi, theta, psi).shape + (3, 3))
    M[..., 0, 0] = 1.0
    M[..., 1, 1] = 1.0
    M[..., 2, 2] = 1.0
    M[..., 0, 1] = -psi
    M[..., 1, 0] = psi
    M[..., 0, 2] = theta
    M[..., 2, 0] = -theta
    M[..., 1, 2] = -phi
    M[..., 2, 1] = phi
    return M


def absolute_pose(q: BodyCoordinates, geom: TrackDesignGeometry):
    """Absolute position and orientation of the body.

    Position composes the track-frame pose with the lateral/vertical offsets;
    orientation chains the track and relative rotations.
    """
    psi_t, theta_t, phi_t = geom.angles_at(q.s_b)
    A_t = track_rotation(psi_t, theta_t, phi_t)
    R_t = geom.position_at(q.s_b)
    r_y = np.asarray(q.r_y, dtype=float)
    r_z = np.asarray(q.r_z, dtype=float)
    offset = np.stack([np.zeros_like(r_y), r_y, r_z], axis=-1)
    R_b = R_t + np.einsum("...ij,...j->...i", A_t, offset)
    A_b = A_t @ relative_rotation(q.phi_tb, q.theta_tb, q.psi_tb)
    return R_b, A_b


def _check_pitch(theta):
    if np.any(np.cos(theta) < _COS_THETA_MIN):
        raise NearSingular("pitch too close to +/- pi/2 for the Euler-rate map")


def euler_rates_exact(angles: AbsoluteAngles, omega):
    """Euler-angle rates from body angular velocity (exact map)."""
    phi = np.asarray(angles.phi_b, dtype=float)
    theta = np.asarray(angles.theta_b, dtype=float)
    _check_pitch(theta)
    omega = np.asarray(omega, dtype=float)
    wx, wy, wz = omega[..., 0], omega[..., 1], omega[..., 2]
    sp, cp = np.sin(phi), np.cos(phi)
    ct, tt = np.cos(theta), np.tan(theta)
    return np.stack([
        wx + sp * tt * wy + cp * tt * wz,
        cp * wy - sp * wz,
        (sp * wy + cp * wz) / ct,
    ], axis=-1)


def euler_rates_linearized(angles: AbsoluteAngles, omega):
    """Small-roll/small-pitch approximation of :func:`euler_rates_exact`."""
    phi = np.asarray(angles.phi_b, dtype=float)
    theta = np.asarray(angles.theta_b, dtype=float)
    omega = np.asarray(omega, dtype=float)
    wx, wy, wz = omega[..., 0], omega[..., 1], omega[..., 2]
    return np.stack([
        wx + theta * wz,
        wy - phi * wz,
        phi * wy + wz,
    ], axis=-1)


def gyro_from_euler_rates(angles: AbsoluteAngles, rates):
    """Body angular velocity that produces the given Euler-angle rates.

    Exact inverse of :func:`euler_rates_exact`:
    round-tripping reproduces the input to machine precision.
    """
    phi = np.asarray(angles.phi_b, dtype=float)
    theta = np.asarray(angles.theta_b, dtype=float)
    _check_pitch(theta)
    rates = np.asarray(rates, dtype=float)
    dphi, dtheta, dpsi = rates[..., 0], rates[..., 1], rates[..., 2]
    sp, cp = np.sin(phi), np.cos(phi)
    st, ct = np.sin(theta), np.cos(theta)
    return np.stack([
        dphi - st * dpsi,
        cp * dtheta + ct * sp * dpsi,
        -sp * dtheta + ct * cp * dpsi,
    ], axis=-1)


def corrected_accel(a_filt, V, Vdot, rho_h, rho_v):
    """Remove the forward/centripetal terms from (filtered) accelerometer
    signals, leaving a gravity-dominated triplet."""
    a_filt = np.asarray(a_filt, dtype=float)
    Vdot, rho_h, rho_v, V2 = np.broadcast_arrays(
        Vdot, rho_h, rho_v, np.asarray(V, dtype=float) ** 2)
    correction = np.stack([Vdot, rho_h * V2, -rho_v * V2], axis=-1)
    return a_filt - correction


def _check_uniform(t):
    t = np.asarray(t, dtype=float)
    if len(t) < 2:
        raise BadRate("need at least two samples")
    steps = np.diff(t)
    dt = float(np.mean(steps))
    if dt <= 0 or np.max(np.abs(steps - dt)) > 1e-6:
        raise BadRate("timestamps are not uniform within 1e-6 s")
    return dt


def lowpass(t, values, cutoff_hz: float):
    """Zero-phase low-pass filter (fourth-order Butterworth magnitude).

    A second-order section run forward and backward, so the pass band is
    delay-free and the DC gain is exactly one. ``values`` may be ``(n,)`` or
    ``(n, k)``; columns are filtered independently.
    """
    dt = _check_uniform(t)
    nyquist = 0.5 / dt
    if not 0.0 < cutoff_hz < nyquist:
        raise BadRate(f"cutoff must lie in (0, {nyquist}) Hz")
    values = np.asarray(values, dtype=float)
    sos = signal.butter(2, cutoff_hz, fs=1.0 / dt, output="sos")
    padlen = min(3 * (2 * sos.shape[0] + 1), values.shape[0] - 1)
    return signal.sosfiltfilt(sos, values, axis=0, padlen=padlen)


def derive_vdot(t, V, cutoff_hz: float = 0.5):
    """Forward acceleration from the speed series: centered finite
    differences smoothed by the same zero-phase low-pass used elsewhere."""
    dt = _check_uniform(t)
    raw = np.gradient(np.asarray(V, dtype=float), dt, edge_order=2)
    return lowpass(t, raw, cutoff_hz)
