from .catalog import (
    DEFAULT_BOWL,
    DEFAULT_ENVIRONMENTS,
    EnvironmentParams,
    ScenarioConfig,
    TaskKind,
    load_environment_registry,
    load_object_catalog,
    make_config,
    pose_bucket,
    save_environment_registry,
    save_object_catalog,
)
from .geometry import ObjectSpec
from .planar import (
    EnvState,
    StepResult,
    action_dim,
    obs_dim,
    obs_normalizer,
    observation,
    reset,
    step,
)
from .predicates import success, timeout
from .rewards import reward

__all__ = [
    "DEFAULT_BOWL",
    "DEFAULT_ENVIRONMENTS",
    "EnvState",
    "EnvironmentParams",
    "ObjectSpec",
    "ScenarioConfig",
    "StepResult",
    "TaskKind",
    "action_dim",
    "load_environment_registry",
    "load_object_catalog",
    "make_config",
    "obs_dim",
    "obs_normalizer",
    "observation",
    "pose_bucket",
    "reset",
    "reward",
    "save_environment_registry",
    "save_object_catalog",
    "step",
    "success",
    "timeout",
]
