"""Linear-Gaussian filtering/smoothing and the track-relative model builders.

Three state-space models are provided:

* orientation: absolute roll/pitch/yaw and their rates (6 states), driven by
  gyro signals, gravity-corrected accelerometer components, and a virtual
  yaw anchor to the track heading;
* trajectory: lateral/vertical offsets with velocity and acceleration states
  (6 states), driven by accelerometer combinations and virtual rest anchors;
* coupled: both blocks in a single 12-state model.

Process noise uses the standard discretized white-noise-acceleration (CWNA)
blocks for angle rates and Wiener-process-acceleration (CWPA) blocks for the
offset accelerations. All measurement noises are independent (diagonal R).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _filter_kernels as _kern
from ._io import read_table, write_table
from .errors import LengthMismatch, NonPositiveDt, SingularInnovation
from .imu_synthesis import RideRecord
from .kinematics import AbsoluteAngles, StateSeries, corrected_accel, lowpass
from .track_geometry import TrackDesignGeometry

ORIENTATION_PARAMS = ("q_phi", "q_theta", "q_psi", "R_omega", "R_ax", "R_ay", "R_psi")
TRAJECTORY_PARAMS = ("q_y", "q_z", "R_y1", "R_z1", "R_y2", "R_z2")
COUPLED_PARAMS = ("q_phi", "q_theta", "q_psi", "q_y", "q_z",
                  "R_omega", "R_x", "R_y1", "R_z1", "R_y2", "R_z2")

_VARIANT_PARAMS = {
    "orientation": ORIENTATION_PARAMS,
    "trajectory": TRAJECTORY_PARAMS,
    "coupled": COUPLED_PARAMS,
}


@dataclass(frozen=True)
class CovarianceParams:
    """Named positive scalars defining Q and R for one model variant."""

    variant: str
    values: dict

    def __post_init__(self):
        names = _VARIANT_PARAMS.get(self.variant)
        if names is None:
            raise ValueError(f"unknown variant {self.variant!r}")
        missing = set(names) - set(self.values)
        extra = set(self.values) - set(names)
        if missing or extra:
            raise ValueError(f"variant {self.variant!r} expects exactly {names}")
        for name, v in self.values.items():
            if not np.isfinite(v) or v <= 0:
                raise ValueError(f"parameter {name} must be a positive finite scalar")

    def __getitem__(self, name: str) -> float:
        return float(self.values[name])

    @classmethod
    def orientation(cls, **kw) -> "CovarianceParams":
        return cls("orientation", kw)

    @classmethod
    def trajectory(cls, **kw) -> "CovarianceParams":
        return cls("trajectory", kw)

    @classmethod
    def coupled(cls, **kw) -> "CovarianceParams":
        return cls("coupled", kw)

    def scaled(self, factor: float) -> "CovarianceParams":
        return CovarianceParams(self.variant, {k: v * factor for k, v in self.values.items()})


@dataclass
class LinearGaussianModel:
    """One concrete state-space instance with per-step measurements.

    ``F`` and ``Q`` are constant; ``H`` has shape ``(T, m, n)`` and ``z``
    shape ``(T, m)``. ``R`` is diagonal and stored as the vector ``r_diag``.
    """

    F: np.ndarray
    Q: np.ndarray
    H: np.ndarray
    z: np.ndarray
    r_diag: np.ndarray
    x0: np.ndarray
    P0: np.ndarray

    def __post_init__(self):
        self.F = np.asarray(self.F, dtype=float)
        self.Q = np.asarray(self.Q, dtype=float)
        self.H = np.asarray(self.H, dtype=float)
        self.z = np.asarray(self.z, dtype=float)
        r = np.asarray(self.r_diag, dtype=float)
        if r.ndim == 2:
            if np.any(r != np.diag(np.diag(r))):
                raise ValueError("R must be diagonal")
            r = np.diag(r).copy()
        self.r_diag = r
        self.x0 = np.asarray(self.x0, dtype=float)
        self.P0 = np.asarray(self.P0, dtype=float)
        n = self.F.shape[0]
        T, m = self.z.shape
        if self.F.shape != (n, n) or self.Q.shape != (n, n):
            raise ValueError("F and Q must be square and consistent")
        if self.H.shape != (T, m, n):
            raise ValueError("H must have shape (T, m, n)")
        if self.r_diag.shape != (m,) or np.any(self.r_diag < 0):
            raise ValueError("R diagonal must be non-negative with length m")
        if self.x0.shape != (n,) or self.P0.shape != (n, n):
            raise ValueError("x0/P0 shapes inconsistent with the state dimension")
        for name, M in (("Q", self.Q), ("P0", self.P0)):
            if np.max(np.abs(M - M.T), initial=0.0) > 1e-12 * (1.0 + np.max(np.abs(M))):
                raise ValueError(f"{name} must be symmetric")

    @property
    def n(self) -> int:
        return self.F.shape[0]

    @property
    def m(self) -> int:
        return self.z.shape[1]

    @property
    def T(self) -> int:
        return self.z.shape[0]

    @property
    def R(self) -> np.ndarray:
        return np.diag(self.r_diag)


@dataclass
class FilterResult:
    """Per-step predicted/filtered moments and log-likelihood terms."""

    x_pred: np.ndarray
    P_pred: np.ndarray
    x_filt: np.ndarray
    P_filt: np.ndarray
    loglik_terms: np.ndarray

    @property
    def loglik(self) -> float:
        return float(np.sum(self.loglik_terms))


@dataclass
class SmootherResult:
    """Fixed-interval smoothed moments."""

    x_smooth: np.ndarray
    P_smooth: np.ndarray


def kf_filter(model: LinearGaussianModel) -> FilterResult:
    """Forward pass: predict/update with Joseph-form covariance updates.

    The innovation covariance is factorized by Cholesky; a relative jitter is
    applied once on failure before giving up with :class:`SingularInnovation`.
    The log-likelihood is accumulated per step in nats.
    """
    x_pred, P_pred, x_filt, P_filt, ll, status = _kern.filter_forward(
        model.F, model.Q, model.H, model.z, model.r_diag, model.x0, model.P0)
    if status >= 0:
        raise SingularInnovation(f"innovation covariance not PD at step {status}")
    return FilterResult(x_pred, P_pred, x_filt, P_filt, ll)


def rts_smooth(model: LinearGaussianModel, filt: FilterResult) -> SmootherResult:
    """Backward fixed-interval pass; the last smoothed state equals the last
    filtered state."""
    x_s, P_s, status = _kern.rts_backward(
        model.F, filt.x_pred, filt.P_pred, filt.x_filt, filt.P_filt)
    if status >= 0:
        raise SingularInnovation(f"predicted covariance not PD at step {status}")
    return SmootherResult(x_s, P_s)


# ---------------------------------------------------------------------------
# process-noise blocks
# ---------------------------------------------------------------------------

def cwna_block(dt: float) -> np.ndarray:
    """Discretized continuous white-noise-acceleration block (unit density)."""
    return np.array([[dt ** 3 / 3.0, dt ** 2 / 2.0],
                     [dt ** 2 / 2.0, dt]])


def cwpa_block(dt: float) -> np.ndarray:
    """Discretized continuous Wiener-process-acceleration block (unit density)."""
    return np.array([
        [dt ** 5 / 20.0, dt ** 4 / 8.0, dt ** 3 / 6.0],
        [dt ** 4 / 8.0, dt ** 3 / 3.0, dt ** 2 / 2.0],
        [dt ** 3 / 6.0, dt ** 2 / 2.0, dt],
    ])


def _f_cwna(dt: float) -> np.ndarray:
    return np.array([[1.0, dt], [0.0, 1.0]])


def _f_cwpa(dt: float) -> np.ndarray:
    return np.array([[1.0, dt, dt ** 2 / 2.0], [0.0, 1.0, dt], [0.0, 0.0, 1.0]])


def _blockdiag(blocks) -> np.ndarray:
    n = sum(b.shape[0] for b in blocks)
    out = np.zeros((n, n))
    i = 0
    for b in blocks:
        k = b.shape[0]
        out[i:i + k, i:i + k] = b
        i += k
    return out


def _noise_matrices(variant: str, params: CovarianceParams, dt: float):
    if params.variant != variant:
        raise ValueError(f"expected {variant!r} parameters, got {params.variant!r}")
    q1 = cwna_block(dt)
    q2 = cwpa_block(dt)
    p = params
    if variant == "orientation":
        Q = _blockdiag([p["q_phi"] * q1, p["q_theta"] * q1, p["q_psi"] * q1])
        r = np.array([p["R_omega"], p["R_omega"], p["R_omega"],
                      p["R_ax"], p["R_ay"], p["R_psi"]])
    elif variant == "trajectory":
        Q = _blockdiag([p["q_y"] * q2, p["q_z"] * q2])
        r = np.array([p["R_y1"], p["R_z1"], p["R_y2"], p["R_z2"]])
    else:
        Q = _blockdiag([p["q_phi"] * q1, p["q_theta"] * q1, p["q_psi"] * q1,
                        p["q_y"] * q2, p["q_z"] * q2])
        r = np.array([p["R_omega"], p["R_omega"], p["R_omega"], p["R_x"],
                      p["R_y1"], p["R_z1"], p["R_y2"], p["R_z2"]])
    return Q, r


# ---------------------------------------------------------------------------
# model templates (parameter-independent structure, reusable across tunings)
# ---------------------------------------------------------------------------

@dataclass
class ModelTemplate:
    """Structural part of a model; combine with parameters to get a model."""

    variant: str
    dt: float
    F: np.ndarray
    H: np.ndarray
    z: np.ndarray
    x0: np.ndarray
    P0: np.ndarray

    def instantiate(self, params: CovarianceParams) -> LinearGaussianModel:
        Q, r = _noise_matrices(self.variant, params, self.dt)
        return LinearGaussianModel(self.F, Q, self.H, self.z, r, self.x0, self.P0)


def _ride_dt(ride: RideRecord) -> float:
    dt = ride.dt
    if dt <= 0:
        raise NonPositiveDt("ride sample interval must be positive")
    return dt


def orientation_template(ride: RideRecord, geom: TrackDesignGeometry,
                         lowpass_cutoff_hz: float = 0.5, g: float = 9.81) -> ModelTemplate:
    """Structure of the orientation model.

    State ``[phi, dphi, theta, dtheta, psi, dpsi]``. Measurements: the three
    gyro components (rearranged small-angle rate relations), the x/y
    gravity-corrected accelerometer components, and the virtual yaw anchor
    to the track heading.
    """
    dt = _ride_dt(ride)
    T = len(ride.t)
    w = ride.omega
    rho_h, rho_v, _, _ = geom.curvature_values(ride.s)
    a_filt = lowpass(ride.t, ride.accel, lowpass_cutoff_hz)
    a_corr = corrected_accel(a_filt, ride.V, ride.Vdot, rho_h, rho_v)
    psi_t = geom.angles_at(ride.s)[0]

    H = np.zeros((T, 6, 6))
    H[:, 0, 1] = 1.0
    H[:, 0, 2] = -w[:, 2]
    H[:, 1, 0] = w[:, 2]
    H[:, 1, 3] = 1.0
    H[:, 2, 0] = -w[:, 1]
    H[:, 2, 5] = 1.0
    H[:, 3, 2] = -g
    H[:, 4, 0] = g
    H[:, 5, 4] = 1.0
    z = np.column_stack([w[:, 0], w[:, 1], w[:, 2], a_corr[:, 0], a_corr[:, 1], psi_t])

    F = _blockdiag([_f_cwna(dt)] * 3)
    x0 = np.zeros(6)
    x0[4] = psi_t[0]
    P0 = np.diag([1e-2, 1e-1, 1e-2, 1e-1, 1e-2, 1e-1])
    return ModelTemplate("orientation", dt, F, H, z, x0, P0)


def trajectory_template(ride: RideRecord, geom: TrackDesignGeometry,
                        angles: AbsoluteAngles, delta: float,
                        g: float = 9.81) -> ModelTemplate:
    """Structure of the trajectory model.

    State ``[ry, dry, ddry, rz, drz, ddrz]``. Measurements: the lateral and
    vertical accelerometer combinations (built with the track-relative angles
    derived from the supplied absolute angles) and the two virtual rest
    anchors ``ry = 0`` and ``rz = delta``.
    """
    dt = _ride_dt(ride)
    T = len(ride.t)
    phi_b = np.asarray(angles.phi_b, dtype=float)
    theta_b = np.asarray(angles.theta_b, dtype=float)
    psi_b = np.asarray(angles.psi_b, dtype=float)
    if not (len(phi_b) == len(theta_b) == len(psi_b) == T):
        raise LengthMismatch("angle series length disagrees with the ride")

    psi_t, theta_t, phi_t = geom.angles_at(ride.s)
    phi_tb = phi_b - phi_t
    theta_tb = theta_b - theta_t
    psi_tb = psi_b - psi_t

    rho_h, rho_v, rho_tw, _ = geom.curvature_values(ride.s)
    V, Vd = ride.V, ride.Vdot
    V2 = V * V
    ax, ay, az = ride.accel[:, 0], ride.accel[:, 1], ride.accel[:, 2]

    H = np.zeros((T, 4, 6))
    H[:, 0, 0] = -V2 * (rho_tw ** 2 + rho_h ** 2)
    H[:, 0, 2] = 1.0
    H[:, 0, 3] = rho_v * rho_h * V2 - rho_tw * Vd
    H[:, 0, 4] = -2.0 * rho_tw * V
    H[:, 1, 0] = rho_v * rho_h * V2 + rho_tw * Vd
    H[:, 1, 1] = 2.0 * rho_tw * V
    H[:, 1, 3] = -V2 * (rho_tw ** 2 + rho_h ** 2)
    H[:, 1, 5] = 1.0
    H[:, 2, 0] = 1.0
    H[:, 3, 3] = 1.0

    z = np.column_stack([
        ay + ax * psi_tb - az * phi_tb - g * phi_t - rho_h * V2,
        az - ax * theta_tb + ay * phi_tb - g + rho_v * V2,
        np.zeros(T),
        np.full(T, float(delta)),
    ])

    F = _blockdiag([_f_cwpa(dt)] * 2)
    x0 = np.zeros(6)
    x0[3] = float(delta)
    P0 = np.diag([1e-2, 1e-1, 1.0, 1e-2, 1e-1, 1.0])
    return ModelTemplate("trajectory", dt, F, H, z, x0, P0)


def coupled_template(ride: RideRecord, geom: TrackDesignGeometry, delta: float,
                     g: float = 9.81) -> ModelTemplate:
    """Structure of the coupled orientation-plus-trajectory model.

    State ``[phi, dphi, theta, dtheta, psi, dpsi, ry, dry, ddry, rz, drz,
    ddrz]``. The accelerometer rows are written against the track angles, so
    the body-angle states absorb the relative-angle terms.
    """
    dt = _ride_dt(ride)
    T = len(ride.t)
    w = ride.omega
    psi_t, theta_t, phi_t = geom.angles_at(ride.s)
    rho_h, rho_v, rho_tw, rho_hp = geom.curvature_values(ride.s)
    V, Vd = ride.V, ride.Vdot
    V2 = V * V
    ax, ay, az = ride.accel[:, 0], ride.accel[:, 1], ride.accel[:, 2]

    H = np.zeros((T, 8, 12))
    # angle-state block
    H[:, 0, 1] = 1.0
    H[:, 0, 2] = -w[:, 2]
    H[:, 1, 0] = w[:, 2]
    H[:, 1, 3] = 1.0
    H[:, 2, 0] = -w[:, 1]
    H[:, 2, 5] = 1.0
    H[:, 3, 2] = -az
    H[:, 3, 4] = ay
    H[:, 4, 0] = az
    H[:, 4, 4] = -ax
    H[:, 5, 0] = -ay
    H[:, 5, 2] = ax
    # lateral-offset block
    H[:, 3, 6] = V2 * (rho_tw * rho_v - rho_hp) - rho_h * Vd
    H[:, 3, 7] = -2.0 * rho_h * V
    H[:, 4, 6] = -V2 * (rho_tw ** 2 + rho_h ** 2)
    H[:, 4, 8] = 1.0
    H[:, 5, 6] = rho_v * rho_h * V2 + rho_tw * Vd
    H[:, 5, 7] = 2.0 * rho_tw * V
    H[:, 6, 6] = 1.0
    # vertical-offset block
    H[:, 3, 9] = rho_v * Vd + rho_tw * rho_h * V2
    H[:, 3, 10] = 2.0 * rho_v * V
    H[:, 4, 9] = rho_v * rho_h * V2 - rho_tw * Vd
    H[:, 4, 10] = -2.0 * rho_tw * V
    H[:, 5, 9] = -V2 * (rho_tw ** 2 + rho_h ** 2)
    H[:, 5, 11] = 1.0
    H[:, 7, 9] = 1.0

    z = np.column_stack([
        w[:, 0], w[:, 1], w[:, 2],
        ax + theta_t * (g - az) + ay * psi_t - Vd,
        ay + phi_t * (az - g) - ax * psi_t - rho_h * V2,
        az - g - ay * phi_t + ax * theta_t + rho_v * V2,
        np.zeros(T),
        np.full(T, float(delta)),
    ])

    F = _blockdiag([_f_cwna(dt)] * 3 + [_f_cwpa(dt)] * 2)
    x0 = np.zeros(12)
    x0[4] = psi_t[0]
    x0[9] = float(delta)
    P0 = np.diag([1e-2, 1e-1, 1e-2, 1e-1, 1e-2, 1e-1,
                  1e-2, 1e-1, 1.0, 1e-2, 1e-1, 1.0])
    return ModelTemplate("coupled", dt, F, H, z, x0, P0)


def build_orientation_model(ride, geom, params: CovarianceParams,
                            lowpass_cutoff_hz: float = 0.5, g: float = 9.81):
    return orientation_template(ride, geom, lowpass_cutoff_hz, g).instantiate(params)


def build_trajectory_model(ride, geom, angles: AbsoluteAngles,
                           params: CovarianceParams, delta: float, g: float = 9.81):
    return trajectory_template(ride, geom, angles, delta, g).instantiate(params)


def build_coupled_model(ride, geom, params: CovarianceParams, delta: float,
                        g: float = 9.81):
    return coupled_template(ride, geom, delta, g).instantiate(params)


def smoothed_orientation_angles(orient: SmootherResult) -> AbsoluteAngles:
    x = orient.x_smooth
    return AbsoluteAngles(phi_b=x[:, 0], theta_b=x[:, 2], psi_b=x[:, 4])


def run_two_stage(ride, geom, p_orient: CovarianceParams, p_traj: CovarianceParams,
                  delta: float, lowpass_cutoff_hz: float = 0.5, g: float = 9.81):
    """Orientation smoother first; its angles feed the trajectory model.

    Returns ``(orientation SmootherResult, trajectory SmootherResult)``.
    """
    orient_model = build_orientation_model(ride, geom, p_orient, lowpass_cutoff_hz, g)
    orient = rts_smooth(orient_model, kf_filter(orient_model))
    angles = smoothed_orientation_angles(orient)
    traj_model = build_trajectory_model(ride, geom, angles, p_traj, delta, g)
    traj = rts_smooth(traj_model, kf_filter(traj_model))
    return orient, traj


def states_from_coupled(ride: RideRecord, smooth: SmootherResult) -> StateSeries:
    x = smooth.x_smooth
    return StateSeries(t=ride.t, s=ride.s, phi_b=x[:, 0], theta_b=x[:, 2],
                       psi_b=x[:, 4], ry=x[:, 6], rz=x[:, 9])


def states_from_two_stage(ride: RideRecord, orient: SmootherResult,
                          traj: SmootherResult) -> StateSeries:
    xo, xt = orient.x_smooth, traj.x_smooth
    return StateSeries(t=ride.t, s=ride.s, phi_b=xo[:, 0], theta_b=xo[:, 2],
                       psi_b=xo[:, 4], ry=xt[:, 0], rz=xt[:, 3])


_STATE_COLUMNS = ("t", "s", "phi_b", "theta_b", "psi_b", "ry", "rz")


def save_states_csv(path, states: StateSeries) -> None:
    write_table(path, list(_STATE_COLUMNS),
                [getattr(states, name) for name in _STATE_COLUMNS])


def load_states_csv(path) -> StateSeries:
    _, names, cols = read_table(path)
    if names != list(_STATE_COLUMNS):
        raise ValueError(f"{path}: expected header {','.join(_STATE_COLUMNS)}")
    return StateSeries(**{name: cols[name] for name in _STATE_COLUMNS})
