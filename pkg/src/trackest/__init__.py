"""Track-relative inertial estimation toolkit.

Reconstructs the trajectory and attitude of a body moving along a railway
track from gyroscope, accelerometer and odometry signals, tunes the filter
covariances by constrained maximum likelihood or against known reference
irregularities, and extracts track irregularity profiles. A forward IMU
simulator doubles as data generator and verification oracle.
"""

from . import errors
from ._filter_kernels import NUMBA_ENABLED
from .covariance_estimation import (
    OptimizationReport,
    SearchSpace,
    cml_estimate,
    estimate_irregularities,
    kom_estimate,
    kom_objective,
    negative_log_likelihood,
)
from .imu_synthesis import (
    GroundTruth,
    HarmonicLaw,
    RideRecord,
    SampledLaw,
    Scenario,
    load_ride_csv,
    residual_check,
    save_ride_csv,
    synthesize,
)
from .irregularity import (
    IrregularityProfile,
    bandpass,
    compare,
    extract,
    load_profile_csv,
    resample_to_arclength,
    save_profile_csv,
)
from .kalman import (
    CovarianceParams,
    FilterResult,
    LinearGaussianModel,
    SmootherResult,
    build_coupled_model,
    build_orientation_model,
    build_trajectory_model,
    cwna_block,
    cwpa_block,
    kf_filter,
    rts_smooth,
    run_two_stage,
    states_from_coupled,
    states_from_two_stage,
)
from .kinematics import (
    AbsoluteAngles,
    BodyCoordinates,
    ImuSample,
    StateSeries,
    absolute_pose,
    corrected_accel,
    derive_vdot,
    euler_rates_exact,
    euler_rates_linearized,
    gyro_from_euler_rates,
    lowpass,
    relative_rotation,
)
from .track_geometry import (
    TrackDesignGeometry,
    TrackPose,
    curvatures_at,
    load_track_csv,
    pose_at,
    save_track_csv,
    track_rotation,
)

__version__ = "0.1.0"
