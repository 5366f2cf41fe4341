"""Forward IMU simulator.

Given the design geometry, a body-motion scenario, a speed profile and sensor
noise levels, produce a ride record (gyro/accelerometer/odometry series) with
ground-truth states attached. The simulator composes absolute poses directly
and differentiates positions numerically, so it shares no linearized sensor
model with the estimators it is used to test.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._io import read_table, write_table
from .errors import (
    BadRate,
    LengthMismatch,
    MissingGroundTruth,
    NonPositiveDt,
    ScenarioOutOfDomain,
    TrackTooShort,
)
from .kinematics import (AbsoluteAngles, ImuSample, gyro_from_euler_rates,
                         relative_rotation)
from .track_geometry import TrackDesignGeometry, track_rotation

_MAX_OFFSET_DEVIATION = 0.05   # m, lateral/vertical motion amplitude
_MAX_ANGLE = 0.05              # rad, relative-angle amplitude incl. offset
_MAX_REST_OFFSET = 0.5         # m, allowed constant offset (IMU mounting height)


@dataclass(frozen=True)
class HarmonicLaw:
    """Sum of sinusoids over arc length plus a constant offset.

    ``terms`` is a sequence of ``(amplitude, wavelength_m, phase_rad)``.
    """

    terms: tuple = ()
    offset: float = 0.0

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        out = np.full_like(s, self.offset)
        for amp, wavelength, phase in self.terms:
            out = out + amp * np.sin(2.0 * np.pi * s / wavelength + phase)
        return out

    @property
    def deviation_bound(self) -> float:
        return float(sum(abs(a) for a, _, _ in self.terms))


@dataclass(frozen=True)
class SampledLaw:
    """Tabulated law, linearly interpolated (clamped outside the grid)."""

    grid: np.ndarray
    values: np.ndarray
    offset: float = 0.0

    def __call__(self, x):
        return self.offset + np.interp(np.asarray(x, dtype=float), self.grid, self.values)

    @property
    def deviation_bound(self) -> float:
        return float(np.max(np.abs(self.values))) if len(self.values) else 0.0


_ZERO = HarmonicLaw()


@dataclass(frozen=True)
class Scenario:
    """Body-motion prescription for the simulator.

    Offset/angle laws are functions of arc length; the speed profile is a
    constant or a :class:`SampledLaw` over time. Noise is i.i.d. zero-mean
    Gaussian per axis, drawn from a seeded generator.
    """

    duration: float
    speed: float | SampledLaw = 1.0
    ry: HarmonicLaw | SampledLaw = _ZERO
    rz: HarmonicLaw | SampledLaw = _ZERO
    roll: HarmonicLaw | SampledLaw = _ZERO
    pitch: HarmonicLaw | SampledLaw = _ZERO
    yaw: HarmonicLaw | SampledLaw = _ZERO
    dt: float = 0.005
    s0: float = 0.0
    sigma_gyro: float = 0.0
    sigma_accel: float = 0.0
    seed: int = 0
    g: float = 9.81

    def validate(self) -> None:
        if self.dt <= 0:
            raise NonPositiveDt("scenario dt must be positive")
        if self.duration <= 0:
            raise ScenarioOutOfDomain("duration must be positive")
        for name, law in (("ry", self.ry), ("rz", self.rz)):
            if law.deviation_bound >= _MAX_OFFSET_DEVIATION:
                raise ScenarioOutOfDomain(
                    f"{name} amplitude {law.deviation_bound:g} m outside the small-motion domain")
            if abs(law.offset) > _MAX_REST_OFFSET:
                raise ScenarioOutOfDomain(f"{name} rest offset too large")
        for name, law in (("roll", self.roll), ("pitch", self.pitch), ("yaw", self.yaw)):
            if law.deviation_bound + abs(law.offset) >= _MAX_ANGLE:
                raise ScenarioOutOfDomain(
                    f"{name} amplitude outside the small-angle domain (< {_MAX_ANGLE} rad)")
        if self.sigma_gyro < 0 or self.sigma_accel < 0:
            raise ScenarioOutOfDomain("noise levels must be non-negative")


@dataclass
class GroundTruth:
    """True track-relative body coordinates per sample."""

    r_y: np.ndarray
    r_z: np.ndarray
    phi_tb: np.ndarray
    theta_tb: np.ndarray
    psi_tb: np.ndarray


@dataclass
class RideRecord:
    """Uniformly sampled ride: odometry, speed and IMU signals.

    ``truth`` carries the generating body coordinates when the record comes
    from the simulator; records loaded from plain signal files have none.
    """

    t: np.ndarray
    s: np.ndarray
    V: np.ndarray
    Vdot: np.ndarray
    omega: np.ndarray
    accel: np.ndarray
    truth: GroundTruth | None = None

    def __post_init__(self):
        n = len(self.t)
        for name in ("s", "V", "Vdot"):
            if len(getattr(self, name)) != n:
                raise LengthMismatch(f"{name} length disagrees with t")
        if self.omega.shape != (n, 3) or self.accel.shape != (n, 3):
            raise LengthMismatch("omega and accel must have shape (n, 3)")
        if np.any(np.diff(self.s) < 0):
            raise ValueError("arc-length must be non-decreasing")
        if np.any(self.V < 0):
            raise ValueError("speed must be non-negative")
        ds = np.diff(self.s)
        trapz = 0.5 * (self.V[1:] + self.V[:-1]) * np.diff(self.t)
        if np.max(np.abs(ds - trapz), initial=0.0) > 1e-6:
            raise ValueError("arc-length increments disagree with the integrated speed")

    @property
    def dt(self) -> float:
        steps = np.diff(self.t)
        dt = float(np.mean(steps))
        if dt <= 0:
            raise NonPositiveDt("sample interval must be positive")
        if np.max(np.abs(steps - dt)) > 1e-6:
            raise BadRate("ride timestamps are not uniform within 1e-6 s")
        return dt

    def sample(self, k: int) -> ImuSample:
        return ImuSample(t=float(self.t[k]), omega=self.omega[k].copy(),
                         a=self.accel[k].copy())

    def truncated(self, n: int) -> "RideRecord":
        """First ``n`` samples (truth included when present)."""
        tr = self.truth
        if tr is not None:
            tr = GroundTruth(*(getattr(tr, f)[:n].copy() for f in
                               ("r_y", "r_z", "phi_tb", "theta_tb", "psi_tb")))
        return RideRecord(self.t[:n].copy(), self.s[:n].copy(), self.V[:n].copy(),
                          self.Vdot[:n].copy(), self.omega[:n].copy(),
                          self.accel[:n].copy(), tr)


def _fd1(y, dt):
    """First time derivative: 5-point centered stencil, 3-point near the ends."""
    y = np.asarray(y, dtype=float)
    n = len(y)
    if n < 3:
        return np.gradient(y, dt)
    out = np.empty_like(y)
    three = (y[2:] - y[:-2]) / (2.0 * dt)
    if n >= 5:
        out[2:-2] = (y[:-4] - 8.0 * y[1:-3] + 8.0 * y[3:-1] - y[4:]) / (12.0 * dt)
        out[1] = three[0]
        out[-2] = three[-1]
    else:
        out[1:-1] = three
    out[0] = (-3.0 * y[0] + 4.0 * y[1] - y[2]) / (2.0 * dt)
    out[-1] = (3.0 * y[-1] - 4.0 * y[-2] + y[-3]) / (2.0 * dt)
    return out


def _fd2(y, dt):
    """Second time derivative: 5-point centered stencil, 3-point near the ends."""
    y = np.asarray(y, dtype=float)
    n = len(y)
    out = np.empty_like(y)
    dt2 = dt * dt
    if n < 3:
        out[:] = 0.0
        return out
    if n >= 5:
        out[2:-2] = (-y[:-4] + 16.0 * y[1:-3] - 30.0 * y[2:-2]
                     + 16.0 * y[3:-1] - y[4:]) / (12.0 * dt2)
    three = (y[:-2] - 2.0 * y[1:-1] + y[2:]) / dt2
    if n >= 5:
        out[1] = three[0]
        out[-2] = three[-1]
    else:
        out[1:-1] = three
    out[0] = three[0]
    out[-1] = three[-1]
    return out


def _detrended(y):
    """Remove the straight line through the endpoints (leaves d2/dt2 intact)."""
    n = len(y)
    ramp = np.linspace(0.0, 1.0, n)
    return y - (y[0] + (y[-1] - y[0]) * ramp)


def synthesize(geom: TrackDesignGeometry, scenario: Scenario) -> RideRecord:
    """Simulate one ride and return the record with ground truth attached.

    The absolute pose is composed per sample from the design geometry and the
    scenario laws; gyro signals come from the exact Euler-rate inverse applied
    to finite-differenced angle histories, and accelerometer signals from the
    second finite difference of the composed position plus gravity, rotated
    into the body frame. Noise is added last, from a seeded generator.
    """
    scenario.validate()
    n = int(round(scenario.duration / scenario.dt)) + 1
    t = np.arange(n) * scenario.dt

    if isinstance(scenario.speed, SampledLaw):
        V = np.asarray(scenario.speed(t), dtype=float)
        Vdot = _fd1(V, scenario.dt)
    else:
        V = np.full(n, float(scenario.speed))
        Vdot = np.zeros(n)
    if np.any(V < 0):
        raise ScenarioOutOfDomain("speed profile must stay non-negative")

    ds = 0.5 * (V[1:] + V[:-1]) * scenario.dt
    s_b = scenario.s0 + np.concatenate([[0.0], np.cumsum(ds)])
    lo, hi = geom.span
    if s_b[0] < lo or s_b[-1] > hi:
        raise TrackTooShort(
            f"ride spans [{s_b[0]:.3f}, {s_b[-1]:.3f}] m but the table covers [{lo}, {hi}]")

    r_y = np.asarray(scenario.ry(s_b), dtype=float)
    r_z = np.asarray(scenario.rz(s_b), dtype=float)
    phi_tb = np.asarray(scenario.roll(s_b), dtype=float)
    theta_tb = np.asarray(scenario.pitch(s_b), dtype=float)
    psi_tb = np.asarray(scenario.yaw(s_b), dtype=float)

    psi_t, theta_t, phi_t = geom.angles_at(s_b)
    phi_b = phi_t + phi_tb
    theta_b = theta_t + theta_tb
    psi_b = psi_t + psi_tb

    A_t = track_rotation(psi_t, theta_t, phi_t)
    R_t = geom.position_at(s_b)
    offset = np.stack([np.zeros(n), r_y, r_z], axis=-1)
    R_b = R_t + np.einsum("nij,nj->ni", A_t, offset)
    A_b = A_t @ relative_rotation(phi_tb, theta_tb, psi_tb)

    angles = AbsoluteAngles(phi_b=phi_b, theta_b=theta_b, psi_b=psi_b)
    rates = np.stack([_fd1(phi_b - phi_b.mean(), scenario.dt),
                      _fd1(theta_b - theta_b.mean(), scenario.dt),
                      _fd1(psi_b - psi_b.mean(), scenario.dt)], axis=-1)
    omega = gyro_from_euler_rates(angles, rates)

    # detrending keeps the cancellation error of the stencil well below 1e-9
    R_b_dd = np.stack([_fd2(_detrended(R_b[:, i]), scenario.dt) for i in range(3)], axis=-1)
    gravity = np.array([0.0, 0.0, scenario.g])
    accel = np.einsum("nji,nj->ni", A_b, R_b_dd + gravity)

    rng = np.random.default_rng(scenario.seed)
    if scenario.sigma_gyro > 0:
        omega = omega + rng.normal(0.0, scenario.sigma_gyro, (n, 3))
    if scenario.sigma_accel > 0:
        accel = accel + rng.normal(0.0, scenario.sigma_accel, (n, 3))

    truth = GroundTruth(r_y=r_y, r_z=r_z, phi_tb=phi_tb,
                        theta_tb=theta_tb, psi_tb=psi_tb)
    return RideRecord(t=t, s=s_b, V=V, Vdot=Vdot, omega=omega, accel=accel, truth=truth)


def residual_check(record: RideRecord, geom: TrackDesignGeometry, g: float = 9.81):
    """Evaluate the linearized accelerometer relation on the ground truth.

    Returns per-sample 3-vector residuals (left side minus right side of the
    track-relative acceleration equation). Small residuals confirm that the
    linearization holds for the scenario at hand.
    """
    if record.truth is None:
        raise MissingGroundTruth("residual check needs ground-truth body coordinates")
    tr = record.truth
    dt = record.dt
    ry, rz = tr.r_y, tr.r_z
    ry_d, rz_d = _fd1(ry, dt), _fd1(rz, dt)
    ry_dd, rz_dd = _fd2(ry, dt), _fd2(rz, dt)

    rho_h, rho_v, rho_tw, rho_hp = geom.curvature_values(record.s)
    psi_t, theta_t, phi_t = geom.angles_at(record.s)
    V, Vd = record.V, record.Vdot
    V2 = V * V
    ax, ay, az = record.accel[:, 0], record.accel[:, 1], record.accel[:, 2]

    lhs_x = (-2.0 * rho_h * V * ry_d + 2.0 * rho_v * V * rz_d
             + (V2 * (rho_tw * rho_v - rho_hp) - rho_h * Vd) * ry
             + (rho_v * Vd + rho_tw * rho_h * V2) * rz)
    lhs_y = (ry_dd - 2.0 * rho_tw * V * rz_d
             - V2 * (rho_tw ** 2 + rho_h ** 2) * ry
             + (rho_v * rho_h * V2 - rho_tw * Vd) * rz)
    lhs_z = (rz_dd + 2.0 * rho_tw * V * ry_d
             + (rho_tw * Vd + rho_v * rho_h * V2) * ry
             - V2 * (rho_tw ** 2 + rho_h ** 2) * rz)

    rhs_x = ax + az * tr.theta_tb - ay * tr.psi_tb + g * theta_t - Vd
    rhs_y = ay + ax * tr.psi_tb - az * tr.phi_tb - g * phi_t - rho_h * V2
    rhs_z = az - ax * tr.theta_tb + ay * tr.phi_tb - g + rho_v * V2

    return np.stack([lhs_x - rhs_x, lhs_y - rhs_y, lhs_z - rhs_z], axis=-1)


_RIDE_COLUMNS = ("t", "s", "V", "Vdot", "wx", "wy", "wz", "ax", "ay", "az")
_TRUTH_COLUMNS = ("ry_true", "rz_true", "phi_true", "theta_true", "psi_true")


def save_ride_csv(path, record: RideRecord, include_truth: bool = True) -> None:
    names = list(_RIDE_COLUMNS)
    cols = [record.t, record.s, record.V, record.Vdot,
            record.omega[:, 0], record.omega[:, 1], record.omega[:, 2],
            record.accel[:, 0], record.accel[:, 1], record.accel[:, 2]]
    if include_truth and record.truth is not None:
        names += list(_TRUTH_COLUMNS)
        tr = record.truth
        cols += [tr.r_y, tr.r_z, tr.phi_tb, tr.theta_tb, tr.psi_tb]
    write_table(path, names, cols)


def load_ride_csv(path) -> RideRecord:
    """Load a ride record; truth columns are optional."""
    _, names, cols = read_table(path)
    if names[: len(_RIDE_COLUMNS)] != list(_RIDE_COLUMNS):
        raise ValueError(f"{path}: expected header to start with {','.join(_RIDE_COLUMNS)}")
    extra = names[len(_RIDE_COLUMNS):]
    truth = None
    if extra:
        if extra != list(_TRUTH_COLUMNS):
            raise ValueError(f"{path}: truth block must be {','.join(_TRUTH_COLUMNS)}")
        truth = GroundTruth(cols["ry_true"], cols["rz_true"], cols["phi_true"],
                            cols["theta_true"], cols["psi_true"])
    omega = np.column_stack([cols["wx"], cols["wy"], cols["wz"]])
    accel = np.column_stack([cols["ax"], cols["ay"], cols["az"]])
    return RideRecord(cols["t"], cols["s"], cols["V"], cols["Vdot"], omega, accel, truth)
