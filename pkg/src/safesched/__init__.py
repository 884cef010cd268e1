"""Safe schedulers for stochastic hard/soft-deadline request systems."""
from ._accel import backend
from .build import ExplicitMdp, StateExplosion, build, classify_state, macro_successors
from .core import (IDLE, TERMINAL, Mode, ModelError, ProbVec, RewardParams, RouteClass,
                   RouteSpec, SemanticsError, SystemState, TransitionModel, condition_nonevent,
                   enabled_actions, initial_state, shift_decrement, successors)
from .harness import (ConfigError, ExperimentConfig, UnschedulableError, bench_scalability, emit,
                      load_config, load_suite, prepare, run_trials)
from .learn import (EmpiricalDist, LearningFidelityWarning, Plant, SafetyViolation,
                    SamplingConfig, estimate_system, required_samples, sample_route)
from .safety import PrunedMdp, UnsafeStateError, prune, safe_actions
from .solve import (MctsConfig, MctsPlanner, NotSchedulableError, edf_action, mcts_action,
                    value_iteration)

__version__ = "0.1.0"

__all__ = [
    "IDLE", "TERMINAL", "ConfigError", "EmpiricalDist", "ExperimentConfig", "ExplicitMdp",
    "LearningFidelityWarning", "MctsConfig", "MctsPlanner", "Mode", "ModelError",
    "NotSchedulableError", "Plant", "ProbVec", "PrunedMdp", "RewardParams", "RouteClass",
    "RouteSpec", "SafetyViolation", "SamplingConfig", "SemanticsError", "StateExplosion",
    "SystemState", "TransitionModel", "UnsafeStateError", "UnschedulableError", "backend",
    "bench_scalability", "build", "classify_state", "condition_nonevent", "edf_action", "emit",
    "enabled_actions", "estimate_system", "initial_state", "load_config", "load_suite",
    "macro_successors", "mcts_action", "prepare", "prune", "required_samples", "run_trials",
    "safe_actions", "sample_route", "shift_decrement", "successors", "value_iteration",
]
