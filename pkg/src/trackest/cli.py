"""Batch command-line driver.

Subcommands: ``synth`` (simulate a ride), ``estimate`` (smooth a ride and
extract irregularities), ``tune`` (fit covariance parameters by CML or KOM)
and ``compare`` (metrics between profile files). Configuration comes from a
flat ``key = value`` text file; command-line flags override file values.
Exit codes: 0 success, 2 input/validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import covariance_estimation as cov
from . import imu_synthesis as synth
from . import irregularity as irr
from . import kalman
from .errors import SingularInnovation, TrackEstError
from .kinematics import StateSeries
from .track_geometry import load_track_csv

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3

_CHANNEL_FILES = {
    "alignment": "alignment",
    "vertical_profile": "vertical_profile",
    "cross_level": "cross_level",
}


@dataclass
class RunConfig:
    track: str | None = None
    ride: str | None = None
    out: str = "."
    variant: str = "coupled"
    method: str = "cml"
    budget: int = 400
    seed: int = 0
    delta: float = 0.0
    gauge: float = irr.DEFAULT_GAUGE
    g: float = 9.81
    cutoff_hz: float = 0.5
    ds: float = irr.DEFAULT_DS
    band_min: float = 0.3
    band_max: float = 7.0
    bounds_lo: float = cov.DEFAULT_LOWER
    bounds_hi: float = cov.DEFAULT_UPPER
    params_json: str | None = None
    params: dict = field(default_factory=dict)
    refs: dict = field(default_factory=dict)

    def validate(self):
        if not 0 < self.band_min < self.band_max:
            raise ValueError("band must satisfy 0 < band_min < band_max")


_FLOAT_KEYS = {"delta", "gauge", "g", "cutoff_hz", "ds", "band_min", "band_max",
               "bounds_lo", "bounds_hi"}
_INT_KEYS = {"budget", "seed"}
_STR_KEYS = {"track", "ride", "out", "variant", "method", "params_json"}


def parse_config(path) -> RunConfig:
    cfg = RunConfig()
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}: expected 'key = value', got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            _apply_key(cfg, key, value, path)
    return cfg


def _apply_key(cfg: RunConfig, key: str, value: str, origin: str):
    if key in _FLOAT_KEYS:
        setattr(cfg, key, float(value))
    elif key in _INT_KEYS:
        setattr(cfg, key, int(value))
    elif key in _STR_KEYS:
        setattr(cfg, key, value)
    elif key.startswith("param."):
        cfg.params[key.split(".", 1)[1]] = float(value)
    elif key.startswith("ref_"):
        cfg.refs[key[4:]] = value
    else:
        raise ValueError(f"{origin}: unknown configuration key {key!r}")


def _merge_flags(cfg: RunConfig, args) -> RunConfig:
    for key in ("track", "ride", "out", "variant", "method", "params_json"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    for key in ("budget", "seed"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    cfg.validate()
    return cfg


def _load_config(args) -> RunConfig:
    cfg = parse_config(args.config) if getattr(args, "config", None) else RunConfig()
    return _merge_flags(cfg, args)


def _require(cfg_value, what: str):
    if not cfg_value:
        raise ValueError(f"missing required input: {what}")
    if isinstance(cfg_value, str) and not os.path.exists(cfg_value):
        raise FileNotFoundError(f"{what} not found: {cfg_value}")
    return cfg_value


def _parse_law(entry) -> synth.HarmonicLaw:
    terms = tuple(tuple(float(x) for x in term) for term in entry.get("sinusoids", []))
    return synth.HarmonicLaw(terms=terms, offset=float(entry.get("offset", 0.0)))


def load_scenario_json(path) -> synth.Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    laws = doc.get("laws", {})
    noise = doc.get("noise", {})
    speed = doc.get("speed", 1.0)
    if isinstance(speed, dict):
        speed = synth.SampledLaw(grid=np.asarray(speed["t"], dtype=float),
                                 values=np.asarray(speed["V"], dtype=float))
    return synth.Scenario(
        duration=float(doc["duration"]),
        speed=speed,
        ry=_parse_law(laws.get("ry", {})),
        rz=_parse_law(laws.get("rz", {})),
        roll=_parse_law(laws.get("roll", {})),
        pitch=_parse_law(laws.get("pitch", {})),
        yaw=_parse_law(laws.get("yaw", {})),
        dt=float(doc.get("dt", 0.005)),
        s0=float(doc.get("s0", 0.0)),
        sigma_gyro=float(noise.get("gyro", 0.0)),
        sigma_accel=float(noise.get("accel", 0.0)),
        seed=int(doc.get("seed", 0)),
        g=float(doc.get("g", 9.81)),
    )


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    geom = load_track_csv(_require(cfg.track, "track CSV"))
    scenario = load_scenario_json(_require(args.scenario, "scenario JSON"))
    if args.seed is not None:
        scenario = dataclasses.replace(scenario, seed=args.seed)
    record = synth.synthesize(geom, scenario)
    os.makedirs(cfg.out, exist_ok=True)
    synth.save_ride_csv(os.path.join(cfg.out, "ride.csv"), record, include_truth=False)

    tr = record.truth
    psi_t, theta_t, phi_t = geom.angles_at(record.s)
    truth_states = StateSeries(t=record.t, s=record.s,
                               phi_b=phi_t + tr.phi_tb,
                               theta_b=theta_t + tr.theta_tb,
                               psi_b=psi_t + tr.psi_tb,
                               ry=tr.r_y, rz=tr.r_z)
    kalman.save_states_csv(os.path.join(cfg.out, "truth_states.csv"), truth_states)
    profiles = irr.extract(truth_states, geom, delta=scenario.rz.offset,
                           gauge_nominal=cfg.gauge, ds=cfg.ds)
    for channel, profile in profiles.items():
        irr.save_profile_csv(
            os.path.join(cfg.out, f"truth_{_CHANNEL_FILES[channel]}.csv"), profile)
    return EXIT_OK


def _resolve_params(cfg: RunConfig):
    if cfg.params_json:
        with open(_require(cfg.params_json, "parameter report JSON"),
                  "r", encoding="utf-8") as fh:
            report = cov.OptimizationReport.from_json(fh.read())
        return dict(report.best_params)
    if cfg.params:
        return dict(cfg.params)
    raise ValueError("no parameters: give param.* values or params_json")


def _states_for(cfg: RunConfig, ride, geom):
    values = _resolve_params(cfg)
    if cfg.variant == "coupled":
        params = kalman.CovarianceParams("coupled",
                                         {k: values[k] for k in kalman.COUPLED_PARAMS})
        model = kalman.build_coupled_model(ride, geom, params, cfg.delta, cfg.g)
        smooth = kalman.rts_smooth(model, kalman.kf_filter(model))
        return kalman.states_from_coupled(ride, smooth)
    if cfg.variant == "two_stage":
        p_o = kalman.CovarianceParams(
            "orientation", {k: values[k] for k in kalman.ORIENTATION_PARAMS})
        p_t = kalman.CovarianceParams(
            "trajectory", {k: values[k] for k in kalman.TRAJECTORY_PARAMS})
        orient, traj = kalman.run_two_stage(ride, geom, p_o, p_t, cfg.delta,
                                            cfg.cutoff_hz, cfg.g)
        return kalman.states_from_two_stage(ride, orient, traj)
    raise ValueError(f"unknown variant {cfg.variant!r}")


def cmd_estimate(args) -> int:
    cfg = _load_config(args)
    geom = load_track_csv(_require(cfg.track, "track CSV"))
    ride = synth.load_ride_csv(_require(cfg.ride, "ride CSV"))
    states = _states_for(cfg, ride, geom)
    os.makedirs(cfg.out, exist_ok=True)
    kalman.save_states_csv(os.path.join(cfg.out, "states.csv"), states)
    profiles = irr.extract(states, geom, cfg.delta, cfg.gauge, cfg.ds)
    for channel, profile in profiles.items():
        stem = _CHANNEL_FILES[channel]
        irr.save_profile_csv(os.path.join(cfg.out, f"{stem}.csv"), profile)
        banded = irr.bandpass(profile, cfg.band_min, cfg.band_max)
        irr.save_profile_csv(os.path.join(cfg.out, f"{stem}_bandpassed.csv"), banded)
    return EXIT_OK


def cmd_tune(args) -> int:
    cfg = _load_config(args)
    geom = load_track_csv(_require(cfg.track, "track CSV"))
    ride = synth.load_ride_csv(_require(cfg.ride, "ride CSV"))
    space = cov.SearchSpace.for_variant(cfg.variant, cfg.bounds_lo, cfg.bounds_hi)
    if cfg.method == "cml":
        report = cov.cml_estimate(cfg.variant, ride, geom, space, cfg.budget,
                                  cfg.seed, delta=cfg.delta,
                                  lowpass_cutoff_hz=cfg.cutoff_hz, g=cfg.g)
    elif cfg.method == "kom":
        refs = {}
        for channel in irr.CHANNELS:
            path = cfg.refs.get(channel)
            if not path:
                raise ValueError(f"KOM needs a reference profile for {channel} "
                                 f"(config key ref_{channel})")
            refs[channel] = irr.load_profile_csv(_require(path, f"reference {channel}"))
        report = cov.kom_estimate(cfg.variant, ride, geom, refs, space, cfg.budget,
                                  cfg.seed, delta=cfg.delta, gauge_nominal=cfg.gauge,
                                  lowpass_cutoff_hz=cfg.cutoff_hz, g=cfg.g)
    else:
        raise ValueError(f"unknown tuning method {cfg.method!r}")
    os.makedirs(cfg.out, exist_ok=True)
    with open(os.path.join(cfg.out, "report.json"), "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write(report.to_json() + "\n")
    return EXIT_OK


def cmd_compare(args) -> int:
    est_profiles = [irr.load_profile_csv(_require(p, "estimate profile")) for p in args.est]
    ref_profiles = [irr.load_profile_csv(_require(p, "reference profile")) for p in args.ref]
    refs_by_channel = {p.channel: p for p in ref_profiles}
    margin = 2.0 * args.band_max if args.band_max else 0.0
    metrics = {}
    for est in est_profiles:
        ref = refs_by_channel.get(est.channel)
        if ref is None:
            raise ValueError(f"no reference profile for channel {est.channel}")
        metrics[est.channel] = irr.compare(est, ref, edge_margin=margin)
    text = json.dumps(metrics, sort_keys=True, indent=2)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "metrics.json"), "w", encoding="utf-8",
                  newline="\n") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trackest",
        description="Track-relative trajectory/attitude estimation pipelines.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value configuration file")
        p.add_argument("--track", help="track design geometry CSV")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="random seed override")

    p_synth = sub.add_parser("synth", help="simulate a ride over a track")
    common(p_synth)
    p_synth.add_argument("--scenario", required=True, help="scenario JSON file")
    p_synth.set_defaults(func=cmd_synth)

    p_est = sub.add_parser("estimate", help="smooth a ride and extract irregularities")
    common(p_est)
    p_est.add_argument("--ride", help="ride CSV")
    p_est.add_argument("--variant", choices=("coupled", "two_stage"))
    p_est.add_argument("--params-json", dest="params_json",
                       help="tuning report JSON with best_params")
    p_est.set_defaults(func=cmd_estimate)

    p_tune = sub.add_parser("tune", help="fit covariance parameters")
    common(p_tune)
    p_tune.add_argument("--ride", help="ride CSV")
    p_tune.add_argument("--variant", choices=("coupled", "two_stage", "orientation"))
    p_tune.add_argument("--method", choices=("cml", "kom"))
    p_tune.add_argument("--budget", type=int)
    p_tune.set_defaults(func=cmd_tune)

    p_cmp = sub.add_parser("compare", help="metrics between profile CSVs")
    p_cmp.add_argument("--est", nargs="+", required=True)
    p_cmp.add_argument("--ref", nargs="+", required=True)
    p_cmp.add_argument("--out")
    p_cmp.add_argument("--band-max", dest="band_max", type=float, default=0.0,
                       help="exclude 2x this wavelength at each end")
    p_cmp.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SingularInnovation as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (TrackEstError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
