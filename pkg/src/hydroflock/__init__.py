"""Decentralized reservoir-network control.

A numpy library implementing a stochastic flow-network simulator with
dual-layer uncertainty, flocking-style coordination losses with analytic
gradients, coordination-penalized proximal policy optimization on a minimal
autodiff tape, and template-driven guidance that reshapes rewards and
coordination weights from scripted context events.
"""

__version__ = "0.1.0"

from .coordination import (
    CoordinationParams,
    CoordinationWeights,
    adaptive_radius,
    alignment_loss,
    cohesion_loss,
    coordination_weights,
    separation_loss,
    total_coordination_loss,
)
from .guidance import (
    ContextEvent,
    GuidanceDirective,
    GuidanceEngine,
    RewardConfig,
    compute_reward,
    parse_directive,
    select_mode,
    translate_context,
    update_efficiency_estimate,
)
from .metrics import coordination_quality, learning_curve_cv, safety_rate, scaling_benchmark
from .network import (
    Channel,
    NetworkTopology,
    ReservoirNode,
    ReservoirState,
    ViolationReport,
    WeatherVector,
    build_topology,
    check_constraints,
    grid_topology,
    step_dynamics,
)
from .ppo import compute_gae, ppo_update
from .scenario import Scenario, load_scenario, load_timeseries, preprocess, schedule_events
from .simulate import Simulator
from .training import AgentPool, RunSettings, desk_settings, rollout_episode, run_training
from .uncertainty import (
    UncertaintyParams,
    channel_efficiency,
    compound_efficiency,
    env_loss,
    human_loss,
    monte_carlo_cascade_variance,
    predicted_cascade_variance,
    sample_transfer,
)
