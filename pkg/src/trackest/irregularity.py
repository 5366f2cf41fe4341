"""Arc-length-indexed track irregularity profiles.

Converts smoothed body states into the three kinematic irregularity channels
and applies the spatial wavelength band-pass used for reporting:

* alignment: lateral offset of the body from the design centerline;
* vertical_profile: vertical offset minus the rest height ``delta``;
* cross_level: nominal gauge times the roll angle relative to the track.

Gauge variation is not produced here; it is not observable from trajectory
and attitude alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import windows

from ._io import fmt, parse_comment_fields, read_table, write_table
from .errors import (
    GridMismatch,
    GridTooCoarse,
    NonMonotoneArcLength,
    TooShort,
)
from .kinematics import StateSeries
from .track_geometry import TrackDesignGeometry

CHANNELS = ("alignment", "vertical_profile", "cross_level")

DEFAULT_DS = 0.01          # m
DEFAULT_GAUGE = 0.1435     # m (1:10 of standard gauge)


@dataclass
class IrregularityProfile:
    """One irregularity channel on a uniform arc-length grid."""

    channel: str
    s0: float
    ds: float
    values: np.ndarray

    def __post_init__(self):
        if self.channel not in CHANNELS:
            raise ValueError(f"channel must be one of {CHANNELS}")
        if self.ds <= 0:
            raise ValueError("ds must be positive")
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("profile values must be finite")

    @property
    def s(self) -> np.ndarray:
        return self.s0 + self.ds * np.arange(len(self.values))


def resample_to_arclength(values, s_b, ds: float):
    """Linear resampling from the ride's time grid to a uniform arc grid.

    Grid points are integer multiples of ``ds`` inside the covered span, so
    profiles from different runs over the same stretch line up. Returns
    ``(s0, resampled_values)``.
    """
    s_b = np.asarray(s_b, dtype=float)
    values = np.asarray(values, dtype=float)
    if ds <= 0:
        raise ValueError("ds must be positive")
    if len(s_b) != len(values):
        raise ValueError("values and arc-length series must have equal length")
    if np.any(np.diff(s_b) <= 0):
        raise NonMonotoneArcLength("arc-length must be strictly increasing (V > 0)")
    k0 = int(np.ceil(s_b[0] / ds - 1e-9))
    k1 = int(np.floor(s_b[-1] / ds + 1e-9))
    if k1 < k0:
        raise NonMonotoneArcLength("resample span contains no grid point")
    grid = np.arange(k0, k1 + 1) * ds
    return float(k0 * ds), np.interp(grid, s_b, values)


def extract(states: StateSeries, geom: TrackDesignGeometry, delta: float,
            gauge_nominal: float = DEFAULT_GAUGE, ds: float = DEFAULT_DS):
    """Irregularity channels from body states, on a uniform arc grid."""
    phi_t = geom.angles_at(states.s)[2]
    phi_tb = states.phi_b - phi_t
    sources = {
        "alignment": states.ry,
        "vertical_profile": states.rz - delta,
        "cross_level": gauge_nominal * phi_tb,
    }
    out = {}
    for channel, series in sources.items():
        s0, values = resample_to_arclength(series, states.s, ds)
        out[channel] = IrregularityProfile(channel, s0, ds, values)
    return out


def bandpass(profile: IrregularityProfile, lambda_min: float,
             lambda_max: float) -> IrregularityProfile:
    """Zero-phase spatial band-pass keeping wavelengths in
    ``[lambda_min, lambda_max]``.

    The mean-removed profile is cosine-tapered (Tukey, 10%), transformed,
    weighted with raised-cosine transition bands of 10% relative width around
    both cutoff frequencies, and transformed back. Output length equals input
    length; the mean (DC) is removed.
    """
    if not 0 < lambda_min < lambda_max:
        raise ValueError("need 0 < lambda_min < lambda_max")
    ds = profile.ds
    n = len(profile.values)
    if ds > lambda_min / 10.0 + 1e-12:
        raise GridTooCoarse(f"grid {ds} m too coarse for {lambda_min} m wavelengths")
    if n < int(np.ceil(2.0 * lambda_max / ds)):
        raise TooShort(f"profile shorter than twice the longest wavelength {lambda_max} m")

    x = profile.values - np.mean(profile.values)
    x = x * windows.tukey(n, alpha=0.1, sym=True)
    X = np.fft.rfft(x)
    f = np.fft.rfftfreq(n, d=ds)

    f_lo = 1.0 / lambda_max
    f_hi = 1.0 / lambda_min
    W = _edge_weight(f, f_lo, rising=True) * _edge_weight(f, f_hi, rising=False)
    y = np.fft.irfft(X * W, n)
    return IrregularityProfile(profile.channel, profile.s0, ds, y)


def _edge_weight(f, f_edge, rising: bool):
    half = 0.05 * f_edge
    lo, hi = f_edge - half, f_edge + half
    w = np.clip((f - lo) / (hi - lo), 0.0, 1.0)
    w = 0.5 * (1.0 - np.cos(np.pi * w))
    return w if rising else 1.0 - w


def _require_same_grid(a: IrregularityProfile, b: IrregularityProfile):
    if a.channel != b.channel:
        raise GridMismatch(f"channel mismatch: {a.channel} vs {b.channel}")
    if abs(a.ds - b.ds) > 1e-12 or abs(a.s0 - b.s0) > 1e-9 or len(a.values) != len(b.values):
        raise GridMismatch("profiles are not on the same arc-length grid")


def compare(est: IrregularityProfile, ref: IrregularityProfile,
            edge_margin: float = 0.0):
    """RMS and max-abs of the pointwise difference.

    ``edge_margin`` meters are excluded at each end. Use twice the longest
    band-pass wavelength when comparing filtered profiles, so that taper and
    transition edge effects stay out of the metric.
    """
    _require_same_grid(est, ref)
    diff = est.values - ref.values
    skip = int(round(edge_margin / est.ds))
    if skip > 0:
        if 2 * skip >= len(diff):
            raise GridMismatch("edge margin leaves no samples to compare")
        diff = diff[skip:-skip]
    return {"rms": float(np.sqrt(np.mean(diff ** 2))),
            "max_abs": float(np.max(np.abs(diff)))}


def crop_to_overlap(a: IrregularityProfile, b: IrregularityProfile):
    """Crop two same-channel, same-ds profiles to their common span."""
    if a.channel != b.channel:
        raise GridMismatch(f"channel mismatch: {a.channel} vs {b.channel}")
    if abs(a.ds - b.ds) > 1e-12:
        raise GridMismatch("profiles have different grid spacing")
    ds = a.ds
    shift = (b.s0 - a.s0) / ds
    if abs(shift - round(shift)) > 1e-6:
        raise GridMismatch("profile grids are offset by a non-integer step")
    s_lo = max(a.s0, b.s0)
    s_hi = min(a.s0 + ds * (len(a.values) - 1), b.s0 + ds * (len(b.values) - 1))
    if s_hi <= s_lo:
        raise GridMismatch("profiles do not overlap")
    ia = int(round((s_lo - a.s0) / ds))
    ib = int(round((s_lo - b.s0) / ds))
    count = int(round((s_hi - s_lo) / ds)) + 1
    return (
        IrregularityProfile(a.channel, s_lo, ds, a.values[ia:ia + count]),
        IrregularityProfile(b.channel, s_lo, ds, b.values[ib:ib + count]),
    )


def save_profile_csv(path, profile: IrregularityProfile) -> None:
    comment = f"channel={profile.channel} ds={fmt(profile.ds)} s0={fmt(profile.s0)}"
    write_table(path, ["s", "value"], [profile.s, profile.values], comment=comment)


def load_profile_csv(path) -> IrregularityProfile:
    comment, names, cols = read_table(path)
    if names != ["s", "value"]:
        raise ValueError(f"{path}: expected header s,value")
    meta = parse_comment_fields(comment or "")
    if "channel" not in meta:
        raise ValueError(f"{path}: missing channel metadata comment")
    s = cols["s"]
    if len(s) < 2:
        raise ValueError(f"{path}: need at least two samples")
    ds = float(meta.get("ds", s[1] - s[0]))
    steps = np.diff(s)
    if np.max(np.abs(steps - ds)) > 1e-9:
        raise ValueError(f"{path}: arc-length grid is not uniform")
    return IrregularityProfile(meta["channel"], float(s[0]), ds, cols["value"])
