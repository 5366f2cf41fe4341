"""Covariance-parameter estimation.

Two objectives over the same bounded derivative-free global search:

* constrained maximum likelihood (CML): minimize the negative filter
  log-likelihood of the IMU data, subject to inequality constraints of the
  form ``a <= b/10`` between named parameters;
* known-output method (KOM): minimize the summed RMS mismatch between the
  extracted irregularities and externally supplied reference profiles.

The search runs in log10 coordinates: a Latin-hypercube sampling phase
(generated as a seeded stream of fixed-size blocks, so larger budgets extend
smaller ones) followed by Nelder-Mead restarts from the best three points.
Everything is deterministic given the seed.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.stats import qmc

from . import kalman
from .errors import InfeasibleSpace, TrackEstError
from .imu_synthesis import RideRecord
from .irregularity import (
    CHANNELS,
    DEFAULT_DS,
    DEFAULT_GAUGE,
    compare,
    crop_to_overlap,
    extract,
)
from .kalman import (
    CovarianceParams,
    ORIENTATION_PARAMS,
    TRAJECTORY_PARAMS,
    COUPLED_PARAMS,
    coupled_template,
    kf_filter,
    orientation_template,
    rts_smooth,
    run_two_stage,
    smoothed_orientation_angles,
    states_from_coupled,
    states_from_two_stage,
    trajectory_template,
)
from .track_geometry import TrackDesignGeometry

DEFAULT_LOWER = 1e-4
DEFAULT_UPPER = 1e4
_LHS_BLOCK = 16
_PENALTY = 1e12

TWO_STAGE_PARAMS = ORIENTATION_PARAMS + TRAJECTORY_PARAMS

_VARIANT_NAMES = {
    "orientation": ORIENTATION_PARAMS,
    "trajectory": TRAJECTORY_PARAMS,
    "coupled": COUPLED_PARAMS,
    "two_stage": TWO_STAGE_PARAMS,
}

_VARIANT_CONSTRAINTS = {
    "orientation": (("R_ay", "q_phi"),),
    "trajectory": (("R_y1", "R_y2"),),
    "coupled": (("R_y1", "R_y2"),),
    "two_stage": (("R_ay", "q_phi"), ("R_y1", "R_y2")),
}


@dataclass(frozen=True)
class SearchSpace:
    """Bounds and ``a <= b/10`` constraints over named positive parameters.

    The search itself works in log10 coordinates, where each constraint is
    the half-space ``log10(a) <= log10(b) - 1``.
    """

    names: tuple
    lower: tuple
    upper: tuple
    constraints: tuple = ()

    def __post_init__(self):
        if len(self.lower) != len(self.names) or len(self.upper) != len(self.names):
            raise ValueError("bounds must match the parameter names")
        for lo, hi in zip(self.lower, self.upper):
            if not (0 < lo < hi):
                raise ValueError("bounds must satisfy 0 < lower < upper")
        for a, b in self.constraints:
            if a not in self.names or b not in self.names:
                raise ValueError(f"constraint ({a}, {b}) names unknown parameters")
        for a, b in self.constraints:
            if self._index(a) == self._index(b):
                raise ValueError("constraint cannot relate a parameter to itself")
            if self.lower[self._index(a)] > self.upper[self._index(b)] / 10.0:
                raise InfeasibleSpace(f"constraint {a} <= {b}/10 contradicts the bounds")

    def _index(self, name: str) -> int:
        return self.names.index(name)

    @classmethod
    def for_variant(cls, variant: str, lower: float = DEFAULT_LOWER,
                    upper: float = DEFAULT_UPPER) -> "SearchSpace":
        names = _VARIANT_NAMES[variant]
        return cls(names=tuple(names), lower=(lower,) * len(names),
                   upper=(upper,) * len(names),
                   constraints=_VARIANT_CONSTRAINTS[variant])

    def subset(self, names) -> "SearchSpace":
        idx = [self._index(n) for n in names]
        keep = set(names)
        cons = tuple((a, b) for a, b in self.constraints if a in keep and b in keep)
        return SearchSpace(names=tuple(names),
                           lower=tuple(self.lower[i] for i in idx),
                           upper=tuple(self.upper[i] for i in idx),
                           constraints=cons)

    def feasible(self, values: np.ndarray) -> bool:
        """Exact (linear-space) bound and constraint check."""
        for v, lo, hi in zip(values, self.lower, self.upper):
            if not (lo <= v <= hi):
                return False
        for a, b in self.constraints:
            if values[self._index(a)] > values[self._index(b)] / 10.0:
                return False
        return True

    def repair(self, values: np.ndarray) -> np.ndarray:
        """Project onto the bounds, then move each constraint's left side
        down to the boundary ``b/10`` (raising ``b`` when the bound floor
        blocks the move). Exact in linear arithmetic."""
        v = np.clip(values, self.lower, self.upper)
        for a, b in self.constraints:
            ia, ib = self._index(a), self._index(b)
            if v[ia] > v[ib] / 10.0:
                v[ia] = max(v[ib] / 10.0, self.lower[ia])
                if v[ia] > v[ib] / 10.0:
                    v[ib] = min(10.0 * v[ia], self.upper[ib])
            if v[ia] > v[ib] / 10.0:
                v[ia] = v[ib] / 10.0
        return v


@dataclass
class OptimizationReport:
    """Outcome of one tuning run, serializable as JSON."""

    variant: str
    names: tuple
    lower: tuple
    upper: tuple
    constraints: tuple
    seed: int
    budget: int
    best_params: dict
    best_objective: float
    n_evals: int
    trace: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "variant": self.variant,
            "bounds": {n: [lo, hi] for n, lo, hi in
                       zip(self.names, self.lower, self.upper)},
            "constraints": [list(c) for c in self.constraints],
            "seed": self.seed,
            "budget": self.budget,
            "best_params": {n: self.best_params[n] for n in self.names},
            "best_objective": self.best_objective,
            "n_evals": self.n_evals,
        }
        if self.extras:
            payload["extras"] = self.extras
        return json.dumps(payload, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "OptimizationReport":
        d = json.loads(text)
        names = tuple(d["best_params"].keys())
        bounds = d.get("bounds", {})
        return cls(
            variant=d["variant"], names=names,
            lower=tuple(bounds.get(n, [DEFAULT_LOWER, DEFAULT_UPPER])[0] for n in names),
            upper=tuple(bounds.get(n, [DEFAULT_LOWER, DEFAULT_UPPER])[1] for n in names),
            constraints=tuple(tuple(c) for c in d.get("constraints", [])),
            seed=d["seed"], budget=d["budget"],
            best_params=dict(d["best_params"]),
            best_objective=d["best_objective"], n_evals=d["n_evals"],
            extras=d.get("extras", {}),
        )


# ---------------------------------------------------------------------------
# objectives
# ---------------------------------------------------------------------------

def _burn_count(dt: float, burn_in_s: float) -> int:
    return int(math.ceil(burn_in_s / dt)) if burn_in_s > 0 else 0


def negative_log_likelihood(variant: str, ride: RideRecord,
                            geom: TrackDesignGeometry, params: CovarianceParams,
                            *, delta: float = 0.0, lowpass_cutoff_hz: float = 0.5,
                            g: float = 9.81, burn_in_s: float = 0.5,
                            angles=None) -> float:
    """Negative filter log-likelihood (nats) of the ride under one model.

    The first ``ceil(burn_in_s/dt)`` innovation terms are excluded to dampen
    sensitivity to the initial state. A singular innovation covariance maps
    to ``+inf`` (rejected candidate), never NaN.
    """
    if variant == "orientation":
        tpl = orientation_template(ride, geom, lowpass_cutoff_hz, g)
    elif variant == "trajectory":
        if angles is None:
            raise ValueError("trajectory variant needs the smoothed angle series")
        tpl = trajectory_template(ride, geom, angles, delta, g)
    elif variant == "coupled":
        tpl = coupled_template(ride, geom, delta, g)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return _template_nll(tpl, params, burn_in_s)


def _template_nll(tpl, params: CovarianceParams, burn_in_s: float) -> float:
    try:
        filt = kf_filter(tpl.instantiate(params))
    except TrackEstError:
        return float("inf")
    skip = _burn_count(tpl.dt, burn_in_s)
    value = -float(np.sum(filt.loglik_terms[skip:]))
    return value if np.isfinite(value) or value == float("inf") else float("inf")


def kom_objective(est, ref) -> float:
    """Summed RMS mismatch over alignment, vertical profile and cross level.

    Both arguments map channel names to profiles; the pair for each channel
    must share the arc-length grid. Gauge is not part of the objective.
    """
    total = 0.0
    for channel in CHANNELS:
        if channel not in est or channel not in ref:
            raise ValueError(f"missing channel {channel}")
        total += compare(est[channel], ref[channel])["rms"]
    return total


# ---------------------------------------------------------------------------
# search engine
# ---------------------------------------------------------------------------

def _lhs_stream(d: int, count: int, seed: int) -> np.ndarray:
    """First ``count`` points of a seeded stream of Latin-hypercube blocks.

    Block boundaries are independent of ``count``, so a larger budget
    evaluates a superset of a smaller one (same seed).
    """
    blocks = []
    have = 0
    index = 0
    while have < count:
        sampler = qmc.LatinHypercube(d=d, seed=(seed * 1_000_003 + index) % (2 ** 32))
        blocks.append(sampler.random(_LHS_BLOCK))
        have += _LHS_BLOCK
        index += 1
    return np.concatenate(blocks, axis=0)[:count]


def _wide_simplex(x0, lo_log, hi_log, step: float = 1.0):
    """Initial simplex spanning one decade per coordinate (clipped to bounds).

    The default simplex of the local search is far too small for a space
    covering many decades; a wide one lets each restart escape its basin.
    """
    vertices = [x0]
    for i in range(len(x0)):
        v = x0.copy()
        v[i] = min(v[i] + step, hi_log[i])
        if v[i] == x0[i]:
            v[i] = max(x0[i] - step, lo_log[i])
        vertices.append(v)
    return np.array(vertices)


def _global_search(evaluate, space: SearchSpace, budget: int, seed: int,
                   workers: int = 1, initial=None):
    """Minimize ``evaluate(values)`` over the space; see the module docstring.

    Returns ``(best_values, best_objective, trace, n_evals)``. Every
    evaluated candidate is exactly feasible; infeasible points proposed by
    the local phase are penalized without being evaluated. ``initial`` warm
    starts (repaired onto the feasible set) are evaluated ahead of the
    sampling phase, so the reported best can never be worse than they are.
    """
    d = len(space.names)
    lo_log = np.log10(np.asarray(space.lower, dtype=float))
    hi_log = np.log10(np.asarray(space.upper, dtype=float))

    n_lhs = max(1, -(-budget // 2))
    unit = _lhs_stream(d, n_lhs, seed)
    candidates = [space.repair(np.asarray(p, dtype=float)) for p in (initial or [])]
    candidates += [space.repair(10.0 ** (lo_log + u * (hi_log - lo_log))) for u in unit]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(evaluate, candidates))
    else:
        values = [evaluate(c) for c in candidates]

    trace = list(enumerate(values))
    evaluated = list(zip(candidates, values))

    remaining = budget - n_lhs
    if remaining > 0:
        order = sorted(range(len(values)), key=lambda i: (values[i], i))
        starts = [candidates[i] for i in order[:3]]
        per_restart = max(1, remaining // max(1, len(starts)))

        def penalized(x_log):
            p = 10.0 ** np.asarray(x_log, dtype=float)
            if not space.feasible(p):
                worst = 0.0
                for a, b in space.constraints:
                    worst = max(worst, p[space._index(a)] - p[space._index(b)] / 10.0)
                return _PENALTY * (1.0 + worst)
            v = evaluate(p)
            trace.append((len(trace), v))
            evaluated.append((p, v))
            return v

        for start in starts:
            x0 = np.log10(start)
            optimize.minimize(
                penalized, x0, method="Nelder-Mead",
                bounds=list(zip(lo_log, hi_log)),
                options={"maxfev": per_restart, "xatol": 1e-4, "fatol": 1e-10,
                         "adaptive": True,
                         "initial_simplex": _wide_simplex(x0, lo_log, hi_log)},
            )

    best_idx = min(range(len(evaluated)),
                   key=lambda i: (evaluated[i][1], i))
    best_values, best_objective = evaluated[best_idx]
    return np.asarray(best_values, dtype=float), float(best_objective), trace, len(evaluated)


def _vector_to_params(variant: str, names, vector) -> CovarianceParams:
    return CovarianceParams(variant, dict(zip(names, (float(v) for v in vector))))


def _initial_vectors(initial_params, names):
    if initial_params is None:
        return None
    vectors = []
    for item in initial_params:
        values = item.values if isinstance(item, CovarianceParams) else dict(item)
        vectors.append(np.array([values[n] for n in names], dtype=float))
    return vectors


def _report(variant, space, seed, budget, names, best_vec, best_obj, trace, n_evals,
            extras=None):
    return OptimizationReport(
        variant=variant, names=tuple(names), lower=tuple(space.lower),
        upper=tuple(space.upper), constraints=tuple(space.constraints),
        seed=seed, budget=budget,
        best_params=dict(zip(names, (float(v) for v in best_vec))),
        best_objective=best_obj, n_evals=n_evals, trace=trace,
        extras=extras or {},
    )


# ---------------------------------------------------------------------------
# CML
# ---------------------------------------------------------------------------

def cml_estimate(variant: str, ride: RideRecord, geom: TrackDesignGeometry,
                 space: SearchSpace | None = None, budget: int = 400, seed: int = 0,
                 *, delta: float = 0.0, lowpass_cutoff_hz: float = 0.5,
                 g: float = 9.81, burn_in_s: float = 0.5, workers: int = 1,
                 initial_params=None) -> OptimizationReport:
    """Tune covariance parameters by maximizing the filter likelihood.

    ``variant`` is ``"coupled"``, ``"orientation"`` or ``"two_stage"``. The
    two-stage form tunes the orientation parameters first, freezes the
    smoothed angles, then tunes the trajectory parameters; the report merges
    both stages (objective = summed stage negative log-likelihoods).
    """
    if variant == "coupled":
        space = space or SearchSpace.for_variant("coupled")
        tpl = coupled_template(ride, geom, delta, g)
        evaluate = _pure(lambda vec: _template_nll(
            tpl, _vector_to_params("coupled", space.names, vec), burn_in_s))
        best_vec, best_obj, trace, n_evals = _global_search(
            evaluate, space, budget, seed, workers,
            initial=_initial_vectors(initial_params, space.names))
        return _report("coupled", space, seed, budget, space.names,
                       best_vec, best_obj, trace, n_evals)

    if variant == "orientation":
        space = space or SearchSpace.for_variant("orientation")
        tpl = orientation_template(ride, geom, lowpass_cutoff_hz, g)
        evaluate = _pure(lambda vec: _template_nll(
            tpl, _vector_to_params("orientation", space.names, vec), burn_in_s))
        best_vec, best_obj, trace, n_evals = _global_search(
            evaluate, space, budget, seed, workers,
            initial=_initial_vectors(initial_params, space.names))
        return _report("orientation", space, seed, budget, space.names,
                       best_vec, best_obj, trace, n_evals)

    if variant != "two_stage":
        raise ValueError(f"unknown variant {variant!r}")

    space = space or SearchSpace.for_variant("two_stage")
    space_o = space.subset(ORIENTATION_PARAMS)
    space_t = space.subset(TRAJECTORY_PARAMS)
    half = budget // 2

    rep_o = cml_estimate("orientation", ride, geom, space_o, half, seed,
                         delta=delta, lowpass_cutoff_hz=lowpass_cutoff_hz, g=g,
                         burn_in_s=burn_in_s, workers=workers)
    p_orient = CovarianceParams("orientation", rep_o.best_params)
    orient_model = kalman.build_orientation_model(ride, geom, p_orient,
                                                  lowpass_cutoff_hz, g)
    angles = smoothed_orientation_angles(rts_smooth(orient_model, kf_filter(orient_model)))

    tpl_t = trajectory_template(ride, geom, angles, delta, g)
    evaluate = _pure(lambda vec: _template_nll(
        tpl_t, _vector_to_params("trajectory", space_t.names, vec), burn_in_s))
    best_vec, best_obj, trace, n_evals = _global_search(
        evaluate, space_t, budget - half, seed + 1, workers)

    merged = dict(rep_o.best_params)
    merged.update(zip(space_t.names, (float(v) for v in best_vec)))
    report = _report("two_stage", space, seed, budget, space.names,
                     [merged[n] for n in space.names],
                     rep_o.best_objective + best_obj,
                     list(rep_o.trace) + trace,
                     rep_o.n_evals + n_evals,
                     extras={"stage_objectives": {
                         "orientation": rep_o.best_objective,
                         "trajectory": best_obj}})
    return report


def _pure(fn):
    """Wrap an objective so failures and NaNs become +inf."""
    def wrapped(vec):
        try:
            v = fn(vec)
        except TrackEstError:
            return float("inf")
        return float(v) if not math.isnan(v) else float("inf")
    return wrapped


# ---------------------------------------------------------------------------
# KOM
# ---------------------------------------------------------------------------

def _pipeline_irregularities(variant: str, ride, geom, params_vec, names,
                             delta, gauge_nominal, ds, lowpass_cutoff_hz, g):
    if variant == "coupled":
        params = _vector_to_params("coupled", names, params_vec)
        model = kalman.build_coupled_model(ride, geom, params, delta, g)
        states = states_from_coupled(ride, rts_smooth(model, kf_filter(model)))
    elif variant == "two_stage":
        values = dict(zip(names, (float(v) for v in params_vec)))
        p_o = CovarianceParams("orientation", {k: values[k] for k in ORIENTATION_PARAMS})
        p_t = CovarianceParams("trajectory", {k: values[k] for k in TRAJECTORY_PARAMS})
        orient, traj = run_two_stage(ride, geom, p_o, p_t, delta,
                                     lowpass_cutoff_hz, g)
        states = states_from_two_stage(ride, orient, traj)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return extract(states, geom, delta, gauge_nominal, ds)


def estimate_irregularities(variant: str, ride, geom, params: CovarianceParams | dict,
                            *, delta: float, gauge_nominal: float = DEFAULT_GAUGE,
                            ds: float = DEFAULT_DS, lowpass_cutoff_hz: float = 0.5,
                            g: float = 9.81):
    """Full pipeline: smooth the ride and extract the three channels."""
    if isinstance(params, CovarianceParams):
        values = params.values
        names = _VARIANT_NAMES[params.variant if variant != "two_stage" else "two_stage"]
    else:
        values = dict(params)
        names = _VARIANT_NAMES[variant]
    vec = [values[n] for n in names]
    return _pipeline_irregularities(variant, ride, geom, vec, names, delta,
                                    gauge_nominal, ds, lowpass_cutoff_hz, g)


def kom_estimate(variant: str, ride: RideRecord, geom: TrackDesignGeometry,
                 ref_irregularities, space: SearchSpace | None = None,
                 budget: int = 400, seed: int = 0, *, delta: float = 0.0,
                 gauge_nominal: float = DEFAULT_GAUGE, ds: float | None = None,
                 lowpass_cutoff_hz: float = 0.5, g: float = 9.81,
                 workers: int = 1, initial_params=None) -> OptimizationReport:
    """Tune covariance parameters against known reference irregularities.

    The objective runs the full estimate-and-extract pipeline per candidate,
    crops the result and the references to their common span, and sums the
    per-channel RMS differences. For the two-stage variant all 13 parameters
    are tuned jointly (the objective is end-to-end).
    """
    if variant not in ("coupled", "two_stage"):
        raise ValueError(f"unknown variant {variant!r}")
    for channel in CHANNELS:
        if channel not in ref_irregularities:
            raise ValueError(f"reference set is missing channel {channel}")
    space = space or SearchSpace.for_variant(variant)
    if ds is None:
        ds = float(ref_irregularities[CHANNELS[0]].ds)

    def raw(vec):
        est = _pipeline_irregularities(variant, ride, geom, vec, space.names,
                                       delta, gauge_nominal, ds,
                                       lowpass_cutoff_hz, g)
        aligned_est = {}
        aligned_ref = {}
        for channel in CHANNELS:
            e, r = crop_to_overlap(est[channel], ref_irregularities[channel])
            aligned_est[channel] = e
            aligned_ref[channel] = r
        return kom_objective(aligned_est, aligned_ref)

    evaluate = _pure(raw)
    best_vec, best_obj, trace, n_evals = _global_search(
        evaluate, space, budget, seed, workers,
        initial=_initial_vectors(initial_params, space.names))
    return _report(variant, space, seed, budget, space.names,
                   best_vec, best_obj, trace, n_evals)
