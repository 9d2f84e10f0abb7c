from citysplat.masks.association import (
    AssociationState,
    Projection,
    associate,
    associate_view,
    candidate_set,
    geometric_overlap,
    group_id_map,
    project_gaussians,
    prune_groups,
)
from citysplat.masks.filtering import (
    building_overlap,
    clean_masks,
    disambiguate,
    filter_quality,
    prompt_scores,
)
from citysplat.masks.fusion import DEFAULT_OFFSET, ConfigError, aggregate_features, decode_label, fuse
from citysplat.masks.types import InstanceGroup, PromptBank, RawMask

__all__ = [
    "AssociationState", "Projection", "associate", "associate_view", "candidate_set",
    "geometric_overlap", "group_id_map", "project_gaussians", "prune_groups", "building_overlap",
    "clean_masks", "disambiguate", "filter_quality", "prompt_scores", "DEFAULT_OFFSET",
    "ConfigError", "aggregate_features", "decode_label", "fuse", "InstanceGroup", "PromptBank",
    "RawMask",
]
