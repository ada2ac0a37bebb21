"""Traffic-signal control test bed.

A microscopic road-network simulator, fixed-time/actuated/learned signal
controllers, independent per-intersection tabular Q-learning, and a
calibrated camera-detection noise model for robustness studies.
"""

from .agents import (AgentParams, QTable, TableSet, act_deployment,
                     encode_state, epsilon_schedule, greedy_action,
                     load_tables, q_update, save_tables, select_action)
from .harness import ExperimentSpec, cmd_calibrate, cmd_compare, cmd_evaluate, \
    cmd_train, cmd_validate
from .metrics import (LOS_LETTERS, LOS_THRESHOLDS, MetricsReport,
                      compare_reports, compute_report, v_over_c)
from .microsim import SimState, TripRecord
from .network import (DemandFlow, Intersection, Lane, Phase, RoadNetwork,
                      ScenarioConfig, grid_generator, load_scenario,
                      network_hash, save_scenario, scenario_hash,
                      shortest_time_route, validate_scenario)
from .perception import (GROUND_TRUTH, CalibrationError, CalibrationResult,
                         CaptureSession, NetworkErrorStats, NoiseProfile,
                         SensorReading, calibrate_profile, error_stats,
                         load_profile, save_profile, synthetic_replay_stats)
from .rewards import REWARDS, RewardContext, build_context, get_reward
from .runner import (EpisodeResult, RunOptions, TrainResult, run_actuated,
                     run_agents, run_static, train)
from .scenarios import BUILTIN_SCENARIOS, builtin_scenario
from .signal_control import (ActuatedController, FixedTimeController,
                             FixedTimePlan, make_controller_state,
                             min_green_flag, request_phase, watchdog_tick)

__version__ = "0.1.0"
