import json

import numpy as np
import pytest

from trackest.covariance_estimation import (
    OptimizationReport,
    SearchSpace,
    cml_estimate,
    estimate_irregularities,
    kom_estimate,
    kom_objective,
    negative_log_likelihood,
)
from trackest.errors import InfeasibleSpace
from trackest.imu_synthesis import HarmonicLaw, Scenario, synthesize
from trackest.irregularity import IrregularityProfile, extract
from trackest.kalman import CovarianceParams
from trackest.kinematics import StateSeries

from conftest import (
    DELTA,
    SIGMA_ACCEL,
    SIGMA_GYRO,
    brute_force_loglik,
    mixed_irregularity_scenario,
    reference_coupled_params,
    reference_trajectory_params,
    straight_track,
    tuning_space,
)


@pytest.fixture(scope="module")
def tune_ride(long_straight_geom):
    scenario = mixed_irregularity_scenario(
        duration=10.0, sigma_gyro=SIGMA_GYRO, sigma_accel=SIGMA_ACCEL, seed=17)
    return synthesize(long_straight_geom, scenario)


@pytest.fixture(scope="module")
def truth_profiles(tune_ride, long_straight_geom):
    tr = tune_ride.truth
    states = StateSeries(t=tune_ride.t, s=tune_ride.s, phi_b=tr.phi_tb,
                         theta_b=tr.theta_tb, psi_b=tr.psi_tb, ry=tr.r_y, rz=tr.r_z)
    return extract(states, long_straight_geom, delta=DELTA)


class TestNegativeLogLikelihood:
    def test_matches_brute_force_on_short_ride(self, tune_ride, long_straight_geom):
        short = tune_ride.truncated(5)
        params = reference_coupled_params()
        nll = negative_log_likelihood("coupled", short, long_straight_geom, params,
                                      delta=DELTA, burn_in_s=0.0)
        from trackest.kalman import build_coupled_model

        model = build_coupled_model(short, long_straight_geom, params, delta=DELTA)
        assert nll == pytest.approx(-brute_force_loglik(model), rel=1e-6)

    def test_reference_params_beat_inflated_params(self, tune_ride, long_straight_geom):
        good = negative_log_likelihood("coupled", tune_ride, long_straight_geom,
                                       reference_coupled_params(), delta=DELTA)
        bad = negative_log_likelihood("coupled", tune_ride, long_straight_geom,
                                      reference_coupled_params().scaled(100.0),
                                      delta=DELTA)
        assert good < bad

    def test_extreme_params_never_nan(self, tune_ride, long_straight_geom):
        params = CovarianceParams.coupled(
            q_phi=1e4, q_theta=1e4, q_psi=1e4, q_y=1e4, q_z=1e4,
            R_omega=1e-4, R_x=1e-4, R_y1=1e-4, R_z1=1e-4, R_y2=1e-4, R_z2=1e-4)
        value = negative_log_likelihood("coupled", tune_ride, long_straight_geom,
                                        params, delta=DELTA)
        assert np.isfinite(value) or value == float("inf")
        assert not np.isnan(value)


class TestSearchSpace:
    def test_defaults_carry_inequality_constraints(self):
        assert SearchSpace.for_variant("coupled").constraints == (("R_y1", "R_y2"),)
        assert SearchSpace.for_variant("orientation").constraints == (("R_ay", "q_phi"),)
        two = SearchSpace.for_variant("two_stage")
        assert set(two.constraints) == {("R_ay", "q_phi"), ("R_y1", "R_y2")}

    def test_repair_is_exact(self):
        space = SearchSpace.for_variant("coupled")
        idx_a = space.names.index("R_y1")
        idx_b = space.names.index("R_y2")
        values = np.full(len(space.names), 1.0)
        values[idx_a] = 0.5
        values[idx_b] = 1.0
        repaired = space.repair(values)
        assert repaired[idx_a] <= repaired[idx_b] / 10.0
        assert space.feasible(repaired)

    def test_infeasible_space_rejected(self):
        with pytest.raises(InfeasibleSpace):
            SearchSpace(names=("a", "b"), lower=(1.0, 1e-4), upper=(1e4, 5.0),
                        constraints=(("a", "b"),))


class TestCml:
    def test_orientation_run_is_deterministic_and_feasible(self, tune_ride,
                                                           long_straight_geom):
        space = tuning_space("orientation")
        kw = dict(delta=DELTA, burn_in_s=0.5)
        rep1 = cml_estimate("orientation", tune_ride, long_straight_geom, space,
                            budget=60, seed=2, **kw)
        rep2 = cml_estimate("orientation", tune_ride, long_straight_geom, space,
                            budget=60, seed=2, **kw)
        assert rep1.to_json() == rep2.to_json()
        p = rep1.best_params
        assert p["R_ay"] <= p["q_phi"] / 10.0
        for name, lo, hi in zip(space.names, space.lower, space.upper):
            assert lo <= p[name] <= hi
        values = [v for _, v in rep1.trace]
        assert rep1.best_objective == min(values)

    def test_coupled_recovers_gyro_variance(self, tune_ride, long_straight_geom):
        space = tuning_space("coupled")
        report = cml_estimate("coupled", tune_ride, long_straight_geom, space,
                              budget=420, seed=5, delta=DELTA)
        truth = SIGMA_GYRO ** 2
        assert truth / 10.0 <= report.best_params["R_omega"] <= truth * 10.0
        nll_true = negative_log_likelihood("coupled", tune_ride, long_straight_geom,
                                           reference_coupled_params(), delta=DELTA)
        assert report.best_objective <= nll_true + 1e-3 * len(tune_ride.t)

    def test_reported_best_reproduces_bitwise(self, tune_ride, long_straight_geom):
        space = tuning_space("coupled")
        report = cml_estimate("coupled", tune_ride, long_straight_geom, space,
                              budget=40, seed=3, delta=DELTA)
        params = CovarianceParams("coupled", report.best_params)
        again = negative_log_likelihood("coupled", tune_ride, long_straight_geom,
                                        params, delta=DELTA)
        assert again == report.best_objective

    def test_json_round_trip(self, tune_ride, long_straight_geom):
        report = cml_estimate("coupled", tune_ride, long_straight_geom,
                              budget=12, seed=1, delta=DELTA)
        loaded = OptimizationReport.from_json(report.to_json())
        assert loaded.best_params == report.best_params
        assert loaded.best_objective == report.best_objective
        assert loaded.n_evals == report.n_evals


class TestKomObjective:
    def grid_profiles(self, diff_align=0.0, diff_vert=0.0, diff_cross=0.0):
        n = 1000
        base = {
            "alignment": np.sin(np.arange(n) * 0.01) * 1e-3,
            "vertical_profile": np.cos(np.arange(n) * 0.01) * 1e-3,
            "cross_level": np.sin(np.arange(n) * 0.02) * 1e-3,
        }
        ref = {ch: IrregularityProfile(ch, 0.0, 0.01, v) for ch, v in base.items()}
        est = {
            "alignment": IrregularityProfile("alignment", 0.0, 0.01,
                                             base["alignment"] + diff_align),
            "vertical_profile": IrregularityProfile("vertical_profile", 0.0, 0.01,
                                                    base["vertical_profile"] + diff_vert),
            "cross_level": IrregularityProfile("cross_level", 0.0, 0.01,
                                               base["cross_level"] + diff_cross),
        }
        return est, ref

    def test_identical_sets_score_zero(self):
        est, ref = self.grid_profiles()
        assert kom_objective(est, ref) == 0.0

    def test_constant_offset_single_channel(self):
        est, ref = self.grid_profiles(diff_align=0.001)
        assert kom_objective(est, ref) == pytest.approx(0.001, rel=1e-12)

    def test_offsets_on_all_channels_add(self):
        est, ref = self.grid_profiles(0.002, 0.002, 0.002)
        assert kom_objective(est, ref) == pytest.approx(0.006, rel=1e-12)


class TestKom:
    def test_zero_budget_returns_repaired_sample(self, tune_ride, long_straight_geom,
                                                 truth_profiles):
        report = kom_estimate("coupled", tune_ride, long_straight_geom,
                              truth_profiles, budget=0, seed=7, delta=DELTA)
        assert report.n_evals == 1
        space = SearchSpace.for_variant("coupled")
        assert space.feasible(np.array([report.best_params[n] for n in space.names]))

    def test_determinism(self, tune_ride, long_straight_geom, truth_profiles):
        a = kom_estimate("coupled", tune_ride, long_straight_geom, truth_profiles,
                         budget=24, seed=9, delta=DELTA)
        b = kom_estimate("coupled", tune_ride, long_straight_geom, truth_profiles,
                         budget=24, seed=9, delta=DELTA)
        assert a.to_json() == b.to_json()

    def test_optimum_not_worse_than_reference_params(self, tune_ride,
                                                     long_straight_geom,
                                                     truth_profiles):
        space = tuning_space("coupled")
        report = kom_estimate("coupled", tune_ride, long_straight_geom,
                              truth_profiles, space, budget=60, seed=3, delta=DELTA,
                              initial_params=[reference_coupled_params()])
        ref_est = estimate_irregularities("coupled", tune_ride, long_straight_geom,
                                          reference_coupled_params(), delta=DELTA)
        from trackest.irregularity import crop_to_overlap

        est_c, ref_c = {}, {}
        for ch in ref_est:
            est_c[ch], ref_c[ch] = crop_to_overlap(ref_est[ch], truth_profiles[ch])
        of_reference = kom_objective(est_c, ref_c)
        assert report.best_objective <= of_reference + 1e-12

    def test_monotone_budget(self, tune_ride, long_straight_geom, truth_profiles):
        small = kom_estimate("coupled", tune_ride, long_straight_geom,
                             truth_profiles, budget=24, seed=4, delta=DELTA)
        large = kom_estimate("coupled", tune_ride, long_straight_geom,
                             truth_profiles, budget=48, seed=4, delta=DELTA)
        assert large.best_objective <= small.best_objective


def test_symmetric_channels_relabel_invariance():
    geom = straight_track(length=60.0)
    law_a = HarmonicLaw(terms=((0.004, 2.9, 0.4),))
    law_b = HarmonicLaw(terms=((0.003, 1.7, 1.2),))

    def ride_with(ry, rz):
        return synthesize(geom, Scenario(duration=8.0, speed=2.0, dt=0.005, s0=0.5,
                                         ry=ry, rz=rz, g=0.0))

    def params(q_y, q_z, R_y1, R_z1, R_y2, R_z2):
        return CovarianceParams.coupled(
            q_phi=0.3, q_theta=0.2, q_psi=0.2, q_y=q_y, q_z=q_z,
            R_omega=1e-6, R_x=100.0, R_y1=R_y1, R_z1=R_z1, R_y2=R_y2, R_z2=R_z2)

    nll_a = negative_log_likelihood(
        "coupled", ride_with(law_a, law_b), geom,
        params(q_y=20.0, q_z=7.0, R_y1=3e-4, R_z1=5e-4, R_y2=3e-3, R_z2=5e-3),
        delta=0.0, g=0.0)
    nll_b = negative_log_likelihood(
        "coupled", ride_with(law_b, law_a), geom,
        params(q_y=7.0, q_z=20.0, R_y1=5e-4, R_z1=3e-4, R_y2=5e-3, R_z2=3e-3),
        delta=0.0, g=0.0)
    assert nll_b == pytest.approx(nll_a, rel=1e-6)


def test_two_stage_kom_tunes_all_parameters_jointly(tune_ride, long_straight_geom,
                                                    truth_profiles):
    report = kom_estimate("two_stage", tune_ride, long_straight_geom,
                          truth_profiles, budget=16, seed=11, delta=DELTA)
    assert len(report.best_params) == 13
    assert report.best_params["R_ay"] <= report.best_params["q_phi"] / 10.0
    assert report.best_params["R_y1"] <= report.best_params["R_y2"] / 10.0
    assert np.isfinite(report.best_objective)


def test_trajectory_angles_length_checked(tune_ride, long_straight_geom):
    from trackest.errors import LengthMismatch
    from trackest.kalman import build_trajectory_model
    from trackest.kinematics import AbsoluteAngles

    short = np.zeros(len(tune_ride.t) - 1)
    with pytest.raises(LengthMismatch):
        build_trajectory_model(tune_ride, long_straight_geom,
                               AbsoluteAngles(short, short, short),
                               reference_trajectory_params(), delta=DELTA)


def test_two_stage_cml_merges_stages(tune_ride, long_straight_geom):
    space = tuning_space("two_stage")
    report = cml_estimate("two_stage", tune_ride, long_straight_geom, space,
                          budget=80, seed=6, delta=DELTA)
    assert set(report.best_params) == set(space.names)
    assert report.best_params["R_ay"] <= report.best_params["q_phi"] / 10.0
    assert report.best_params["R_y1"] <= report.best_params["R_y2"] / 10.0
    stage = report.extras["stage_objectives"]
    assert report.best_objective == pytest.approx(
        stage["orientation"] + stage["trajectory"], rel=1e-12)


def test_parallel_evaluation_matches_serial(tune_ride, long_straight_geom,
                                            truth_profiles):
    serial = kom_estimate("coupled", tune_ride, long_straight_geom, truth_profiles,
                          budget=16, seed=21, delta=DELTA, workers=1)
    threaded = kom_estimate("coupled", tune_ride, long_straight_geom, truth_profiles,
                            budget=16, seed=21, delta=DELTA, workers=4)
    assert serial.to_json() == threaded.to_json()
