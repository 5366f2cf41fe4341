"""Design geometry of the track centerline.

The centerline is tabulated against arc-length ``s``: global position
``(Rx, Ry, Rz)``, heading ``psi``, vertical slope ``theta`` and cant ``phi``.
Queries interpolate the table with a C1 piecewise-cubic Hermite scheme
(node slopes from centered differences) so that curvatures, which are
arc-length derivatives of the angles, stay continuous.

Sign conventions: ``rho_h = d psi/ds``, ``rho_v = d theta/ds``,
``rho_tw = d phi/ds`` and ``rho_h_prime = d^2 psi/ds^2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from ._io import read_table, write_table
from .errors import OutOfRange

_ANGLE_LIMIT = 0.2  # rad; small-angle domain for theta and phi
_CURVATURE_COLUMNS = ("rho_h", "rho_v", "rho_tw", "rho_h_prime")


class _Curve:
    """1-D interpolant that passes through its nodes exactly.

    Cubic Hermite (C1) with centered-difference node slopes for tables of at
    least 4 points; plain linear interpolation for shorter, degenerate
    tables. The slopes match the derivative columns computed on the table
    grid, so angle interpolants and curvature interpolants agree at nodes.
    """

    def __init__(self, s, y):
        self._s = np.asarray(s, dtype=float)
        self._y = np.asarray(y, dtype=float)
        if len(self._s) >= 4:
            self._spline = CubicHermiteSpline(
                self._s, self._y, _node_derivative(self._s, self._y))
        else:
            self._spline = None

    def __call__(self, x):
        if self._spline is not None:
            return self._spline(x)
        return np.interp(x, self._s, self._y)


def _node_derivative(s, y):
    if len(s) >= 3:
        return np.gradient(y, s, edge_order=2)
    return np.gradient(y, s)


@dataclass(frozen=True)
class TrackPose:
    """Pose of the track frame at one arc-length position."""

    R_t: np.ndarray
    A_t: np.ndarray
    psi_t: float
    theta_t: float
    phi_t: float
    rho_h: float
    rho_v: float
    rho_tw: float
    rho_h_prime: float


def track_rotation(psi, theta, phi):
    """Linearized track-to-global rotation matrix.

    Exact in the heading ``psi``; first order in the (small) vertical slope
    ``theta`` and cant ``phi``. Broadcasts: scalar inputs give ``(3, 3)``,
    arrays of shape ``(...,)`` give ``(..., 3, 3)``.
    """
    psi = np.asarray(psi, dtype=float)
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    cp, sp = np.cos(psi), np.sin(psi)
    A = np.empty(psi.shape + (3, 3))
    A[..., 0, 0] = cp
    A[..., 0, 1] = -sp
    A[..., 0, 2] = phi * sp + theta * cp
    A[..., 1, 0] = sp
    A[..., 1, 1] = cp
    A[..., 1, 2] = theta * sp - phi * cp
    A[..., 2, 0] = -theta
    A[..., 2, 1] = phi
    A[..., 2, 2] = 1.0
    return A


class TrackDesignGeometry:
    """Tabulated design geometry of the track centerline.

    Immutable after construction; all queries are read-only and safe for
    concurrent use. Curvature columns are derived from the angle columns by
    centered finite differences on the table grid when not supplied; supplied
    columns are validated against the derived values.
    """

    def __init__(self, s, position, psi, theta, phi,
                 rho_h=None, rho_v=None, rho_tw=None, rho_h_prime=None):
        s = np.asarray(s, dtype=float)
        position = np.asarray(position, dtype=float)
        psi = np.asarray(psi, dtype=float)
        theta = np.asarray(theta, dtype=float)
        phi = np.asarray(phi, dtype=float)
        if s.ndim != 1 or len(s) < 2:
            raise ValueError("need at least 2 arc-length samples")
        if np.any(np.diff(s) <= 0):
            raise ValueError("arc-length samples must be strictly increasing")
        if position.shape != (len(s), 3):
            raise ValueError("position must have shape (n, 3)")
        for name, col in (("psi", psi), ("theta", theta), ("phi", phi)):
            if col.shape != s.shape:
                raise ValueError(f"{name} must match the arc-length grid")
        if np.max(np.abs(theta)) >= _ANGLE_LIMIT or np.max(np.abs(phi)) >= _ANGLE_LIMIT:
            raise ValueError(
                f"theta/phi exceed the small-angle domain (|angle| < {_ANGLE_LIMIT} rad)")

        self.s = s
        self.position = position
        self.psi = psi
        self.theta = theta
        self.phi = phi

        derived = {
            "rho_h": _node_derivative(s, psi),
            "rho_v": _node_derivative(s, theta),
            "rho_tw": _node_derivative(s, phi),
        }
        if len(s) >= 4:
            derived["rho_h_prime"] = _node_derivative(s, derived["rho_h"])
        else:
            derived["rho_h_prime"] = np.zeros_like(s)

        supplied = {"rho_h": rho_h, "rho_v": rho_v, "rho_tw": rho_tw,
                    "rho_h_prime": rho_h_prime}
        for name in _CURVATURE_COLUMNS:
            col = supplied[name]
            if col is None:
                setattr(self, name, derived[name])
            else:
                col = np.asarray(col, dtype=float)
                if col.shape != s.shape:
                    raise ValueError(f"{name} must match the arc-length grid")
                tol = 1e-6 * (1.0 + np.abs(col))
                if np.any(np.abs(col - derived[name]) > tol):
                    raise ValueError(
                        f"supplied {name} disagrees with values derived from the angles")
                setattr(self, name, col)

        for arr in (self.s, self.position, self.psi, self.theta, self.phi,
                    self.rho_h, self.rho_v, self.rho_tw, self.rho_h_prime):
            arr.setflags(write=False)

        self._pos_curves = [_Curve(s, position[:, i]) for i in range(3)]
        self._psi = _Curve(s, self.psi)
        self._theta = _Curve(s, self.theta)
        self._phi = _Curve(s, self.phi)
        self._curv = {name: _Curve(s, getattr(self, name)) for name in _CURVATURE_COLUMNS}

    @property
    def span(self):
        return float(self.s[0]), float(self.s[-1])

    def _check_span(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < self.s[0]) or np.any(x > self.s[-1]):
            lo, hi = self.span
            raise OutOfRange(f"arc-length outside the tabulated span [{lo}, {hi}]")
        return x

    def position_at(self, s):
        """Interpolated centerline position, shape ``(..., 3)``."""
        s = self._check_span(s)
        return np.stack([c(s) for c in self._pos_curves], axis=-1)

    def angles_at(self, s):
        """Interpolated ``(psi, theta, phi)`` at arc-length ``s``."""
        s = self._check_span(s)
        return self._psi(s), self._theta(s), self._phi(s)

    def curvature_values(self, s):
        """Interpolated ``(rho_h, rho_v, rho_tw, rho_h_prime)`` at ``s``."""
        s = self._check_span(s)
        return tuple(self._curv[name](s) for name in _CURVATURE_COLUMNS)


def curvatures_at(geom: TrackDesignGeometry, s):
    """Horizontal, vertical and twist curvatures plus the horizontal
    curvature arc-length derivative at ``s`` (scalar or array)."""
    values = geom.curvature_values(s)
    if np.ndim(s) == 0:
        return tuple(float(v) for v in values)
    return values


def pose_at(geom: TrackDesignGeometry, s: float) -> TrackPose:
    """Full track-frame pose at one arc-length position."""
    s = float(s)
    psi, theta, phi = (float(a) for a in geom.angles_at(s))
    rho_h, rho_v, rho_tw, rho_hp = (float(v) for v in geom.curvature_values(s))
    return TrackPose(
        R_t=geom.position_at(s),
        A_t=track_rotation(psi, theta, phi),
        psi_t=psi, theta_t=theta, phi_t=phi,
        rho_h=rho_h, rho_v=rho_v, rho_tw=rho_tw, rho_h_prime=rho_hp,
    )


def save_track_csv(path, geom: TrackDesignGeometry, include_curvatures: bool = False) -> None:
    names = ["s", "Rx", "Ry", "Rz", "psi", "theta", "phi"]
    cols = [geom.s, geom.position[:, 0], geom.position[:, 1], geom.position[:, 2],
            geom.psi, geom.theta, geom.phi]
    if include_curvatures:
        names += list(_CURVATURE_COLUMNS)
        cols += [getattr(geom, name) for name in _CURVATURE_COLUMNS]
    write_table(path, names, cols)


def load_track_csv(path) -> TrackDesignGeometry:
    """Load a design-geometry table.

    Expected header: ``s,Rx,Ry,Rz,psi,theta,phi`` with an optional trailing
    ``rho_h,rho_v,rho_tw,rho_h_prime`` group. Units: meters and radians.
    """
    _, names, cols = read_table(path)
    required = ["s", "Rx", "Ry", "Rz", "psi", "theta", "phi"]
    if names[: len(required)] != required:
        raise ValueError(f"{path}: expected header to start with {','.join(required)}")
    extra = names[len(required):]
    if extra and extra != list(_CURVATURE_COLUMNS):
        raise ValueError(f"{path}: optional curvature block must be {','.join(_CURVATURE_COLUMNS)}")
    position = np.column_stack([cols["Rx"], cols["Ry"], cols["Rz"]])
    curv = {name: cols[name] for name in extra}
    return TrackDesignGeometry(cols["s"], position, cols["psi"], cols["theta"],
                               cols["phi"], **curv)
