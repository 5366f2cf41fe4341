#!/usr/bin/env python3
"""Benchmark the filter/smoother kernels: numba path vs numpy fallback.

Builds a representative 12-state model from a synthetic ride and times both
implementations of the forward filter and the backward smoother. The numba
path is what ``TRACKEST_DISABLE_NUMBA`` unset gives you; the numpy rows show
what the fallback costs.

Usage: python benchmarks/bench_filter.py [--samples N] [--repeats K]
"""

import argparse
import time

import numpy as np

from trackest import _filter_kernels as kern
from trackest.imu_synthesis import HarmonicLaw, Scenario, synthesize
from trackest.kalman import CovarianceParams, build_coupled_model
from trackest.track_geometry import TrackDesignGeometry


def build_model(samples: int):
    duration = (samples - 1) * 0.005
    length = 2.0 * duration + 5.0
    s = np.arange(0.0, length + 0.25, 0.5)
    pos = np.column_stack([s, np.zeros_like(s), np.zeros_like(s)])
    zero = np.zeros_like(s)
    geom = TrackDesignGeometry(s, pos, zero, zero, zero)
    scenario = Scenario(
        duration=duration, speed=2.0, dt=0.005, s0=0.5, seed=1,
        sigma_gyro=2e-3, sigma_accel=2e-2,
        ry=HarmonicLaw(terms=((0.005, 3.1, 0.0), (0.003, 1.3, 0.7))),
        rz=HarmonicLaw(terms=((0.004, 2.3, 0.3),), offset=0.05),
        roll=HarmonicLaw(terms=((0.02, 3.7, 0.9),)),
    )
    ride = synthesize(geom, scenario)
    params = CovarianceParams.coupled(
        q_phi=0.5, q_theta=0.5, q_psi=0.1, q_y=100.0, q_z=100.0,
        R_omega=4e-6, R_x=4e-4, R_y1=4e-4, R_z1=4e-4, R_y2=4e-3, R_z2=4e-3)
    return build_coupled_model(ride, geom, params, delta=0.05)


def time_path(filter_fn, smoother_fn, model, repeats: int):
    args = (model.F, model.Q, model.H, model.z, model.r_diag, model.x0, model.P0)
    out = filter_fn(*args)  # warm-up (and JIT compile on the numba path)
    smoother_fn(model.F, *out[:4])
    t_filter = []
    t_smooth = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = filter_fn(*args)
        t_filter.append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        smoother_fn(model.F, *out[:4])
        t_smooth.append(time.perf_counter() - t0)
    return min(t_filter), min(t_smooth)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--samples", type=int, default=8000)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    model = build_model(args.samples)
    print(f"coupled model: T={model.T}, n={model.n}, m={model.m}")

    rows = [("numpy", kern.filter_forward_numpy, kern.rts_backward_numpy)]
    if kern.NUMBA_ENABLED:
        rows.insert(0, ("numba", kern.filter_forward_njit, kern.rts_backward_njit))
    else:
        print("numba path unavailable (disabled or not installed)")

    results = {}
    for name, ffn, sfn in rows:
        tf, ts = time_path(ffn, sfn, model, args.repeats)
        results[name] = (tf, ts)
        print(f"{name:>6}: filter {1e3 * tf:8.2f} ms   smoother {1e3 * ts:8.2f} ms")

    if "numba" in results and "numpy" in results:
        sf = results["numpy"][0] / results["numba"][0]
        ss = results["numpy"][1] / results["numba"][1]
        print(f"speedup: filter {sf:.1f}x, smoother {ss:.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
