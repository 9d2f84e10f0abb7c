from citysplat.pipeline.config import ConfigError, RunConfig, load_config
from citysplat.pipeline.manifest import Manifest, OutputLocked, StageDependencyError
from citysplat.pipeline.stages import (
    run_all,
    run_stage,
    stage_citymodel,
    stage_eval,
    stage_fuse,
    stage_query,
    stage_raycast,
    stage_train,
)

__all__ = [
    "ConfigError", "RunConfig", "load_config", "Manifest", "OutputLocked", "StageDependencyError",
    "run_all", "run_stage", "stage_citymodel", "stage_eval", "stage_fuse", "stage_query",
    "stage_raycast", "stage_train",
]
