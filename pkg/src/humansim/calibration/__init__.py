from .experiment import (
    REPORT_HEADER,
    ExperimentReport,
    Workspace,
    calibrate_trial,
    pose_error,
    ring_cameras,
    run_calibration_experiment,
    sample_prop_poses,
    simulate_calibration_observations,
)
from .extrinsics import (
    CalibrationResult,
    ExtrinsicCalibrator,
    FiducialObservation,
    average_transforms,
    consensus_average,
    consensus_modes,
    estimate_extrinsics,
    observe_fiducials,
    refine_global,
    robust_average,
)
from .pnp import PnpSolution, PnPSolver, reprojection_residuals, solve_pnp, solve_pnp_candidates

__all__ = [
    "REPORT_HEADER",
    "ExperimentReport",
    "Workspace",
    "calibrate_trial",
    "pose_error",
    "ring_cameras",
    "run_calibration_experiment",
    "sample_prop_poses",
    "simulate_calibration_observations",
    "CalibrationResult",
    "ExtrinsicCalibrator",
    "FiducialObservation",
    "average_transforms",
    "consensus_average",
    "consensus_modes",
    "estimate_extrinsics",
    "observe_fiducials",
    "refine_global",
    "robust_average",
    "PnpSolution",
    "PnPSolver",
    "reprojection_residuals",
    "solve_pnp",
    "solve_pnp_candidates",
]
