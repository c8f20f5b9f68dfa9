"""Power and bandwidth allocation for integrated sensing and communication base stations."""

from .channel import (Allocation, ArrayConfig, ChannelGains, DomainError, MotionInit, ObjectSpec, Role,
                      ScenarioConfig, beam_gain, channel_gains, comm_pathloss_db, radar_pathloss_var,
                      steering_vector, sum_rate)
from .detection import (DetectionSetup, allocate_power_comprehensive, allocate_power_fairness, fairness_stages,
                        prob_detection, simulate_detection, sweep_power)
from .estimation import (CrbModel, Criterion, SbpConfig, allocate_joint_localization, crb_angle, crb_range,
                         initial_bandwidth, localization_sweep, sbp_ratio)
from .harness import bundled_scenarios, load_scenario, run_experiment, save_scenario
from .optim import ConvexProblem, NonMonotoneError, Status, alternating_optimize, solve, solve_batch
from .tracking import (FisherState, MotionState, StateModel, TrackingConfig, allocate_tracking, ekf_epoch,
                       fim_recursion, measure, measurement_jacobian, pcrb_trace, run_tracking, scalarize_pcrb)

__version__ = "0.1.0"

__all__ = [
    "Allocation", "ArrayConfig", "ChannelGains", "ConvexProblem", "CrbModel", "Criterion", "DetectionSetup",
    "DomainError", "FisherState", "MotionInit", "MotionState", "NonMonotoneError", "ObjectSpec", "Role",
    "SbpConfig", "ScenarioConfig", "StateModel", "Status", "TrackingConfig", "allocate_joint_localization",
    "allocate_power_comprehensive", "allocate_power_fairness", "allocate_tracking", "alternating_optimize",
    "beam_gain", "bundled_scenarios", "channel_gains", "comm_pathloss_db", "crb_angle", "crb_range",
    "ekf_epoch", "fairness_stages", "fim_recursion", "initial_bandwidth", "load_scenario", "localization_sweep",
    "measure", "measurement_jacobian", "pcrb_trace", "prob_detection", "radar_pathloss_var", "run_experiment",
    "run_tracking", "save_scenario", "sbp_ratio", "scalarize_pcrb", "simulate_detection", "solve",
    "solve_batch", "steering_vector", "sum_rate", "sweep_power",
]
