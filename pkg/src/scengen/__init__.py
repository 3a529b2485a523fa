"""Adversarial traffic scenario generation for AV safety testing.

Train background-vehicle policies that provoke rare failures of a
driving model, using a hybrid of recorded track data and simulation
rollouts, then evaluate matchups and report risk metrics.
"""

from .env import (
    EnvConfig,
    EVENT_AV_COLLISION,
    EVENT_BV_COLLISION,
    EVENT_HORIZON,
    EVENT_NONE,
    EVENT_ROAD_DEPARTURE,
    NddInitPool,
    RoadConfig,
    SyntheticInit,
    VehicleDims,
    advance_scene,
    env_reset,
    env_step,
)
from .errors import (
    ConfigError,
    ParseError,
    ScengenError,
    SchemaError,
    StructuralError,
    TrainingError,
)
from .geometry import OrientedRect, rect_min_distance, rect_overlap
from .metrics import (
    MetricsReport,
    collision_distance_distribution,
    compute_metrics,
    gap_distributions,
    pca_project,
    run_episode,
    run_evaluation,
)
from .ndd import FilterSpec, GenConfig, ingest, parse_tracks, synth_ndd
from .policies import (
    DrBvPolicy,
    FvdmPolicy,
    KraussPolicy,
    LearnedAvPolicy,
    LearnedBvPolicy,
    RearSensitiveFvdmPolicy,
    RuleBvPolicy,
    UniformPolicy,
)
from .replay import Batch, ReplayBuffer, mixed_batch
from .scenario import (
    Scenario,
    Scene,
    Transition,
    VehicleAction,
    VehicleState,
    flatten_scene,
    read_scenario_log,
    unflatten_scene,
    validate_scenario,
    write_scenario_log,
)
from .trainer import (
    SacAgent,
    TrainConfig,
    actor_loss,
    bellman_targets,
    critic_loss_regularized,
    critic_loss_sac,
    d_star,
    finetune_alternate,
    train_av_sac,
    train_bv,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
