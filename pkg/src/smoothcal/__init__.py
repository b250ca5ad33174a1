"""Deterministic smooth/weak calibration toolkit: online ridge
regression variants, calibration scores and kernels, a leak-proof
weakly calibrated forecaster, and calibrated learning dynamics on
games."""

__version__ = "0.1.0"

from .geometry import (BASIS_SIZE_CAP, BasisFamily, BasisTooLarge,
                       ConvexDomain, CoverageError, ForecastGrid, Net,
                       PartitionOfUnity, SmoothBestReply, desk_basis,
                       lipschitz_basis, maximal_net, nu_constant,
                       partition_of_unity, smooth_best_reply, unit_box)
from .regression import (Observation, PathResult, Regressor, RegretReport,
                         TunedParameters, block_expand,
                         default_theta_grid, generate_sequence,
                         regret_constant_D1, regret_constant_D2,
                         regret_report, sensitivity_bound, solve_path,
                         tune_parameters, windowed_regret_rhs)
from .scores import (ConversionResult, SmoothingKernel, Transcript,
                     WeightFunction, averaging_bound, calibration_score,
                     conversion_constants, gamma_operational,
                     indicator_sup_bound, smoothed_score, weak_score)
from .forecaster import (ForecasterConfig, ParameterSchedule, SolverAbort,
                         WeakCalibratedForecaster, desk_config, eval_H,
                         next_forecast, observe, solve_fixed_point,
                         theory_schedule, window_design)
from .game import (Adversary, AlternatingForecaster, ConstantForecaster,
                   counter_uniform, fixed_point_fraction, play,
                   weak_calibrated_forecaster)
from .dynamics import (ContinuousGame, DynamicConfig, DynamicRunResult,
                       FiniteGame, MixedProfile, PRESET_GAMES,
                       TunedDynamicConstants, desk_continuous_config,
                       desk_dynamic_config, eps_nash_check, expected_payoff,
                       payoff_vector, preset_continuous, preset_game,
                       profile_grid, proof_chain_report,
                       run_continuous_dynamic, run_exhaustive_search,
                       run_smooth_calibrated_learning,
                       tune_dynamic_parameters)
from .selftest import SelfTestResult, run_selftest
