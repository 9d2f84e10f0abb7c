from citysplat.query.metrics import BinaryScores, FineReport, eval_binary, eval_fine
from citysplat.query.render import (
    UnknownInstanceError,
    building_mask,
    class_masks,
    expand_instances,
    render_query_mask,
)
from citysplat.query.resolve import (
    SYNONYMS,
    TAU_QUERY,
    InstanceRegistry,
    Query,
    class_for_prompt,
    match_classes,
    resolve_query,
)

__all__ = [
    "BinaryScores", "FineReport", "eval_binary", "eval_fine",
    "UnknownInstanceError", "building_mask", "class_masks", "expand_instances", "render_query_mask",
    "SYNONYMS", "TAU_QUERY", "InstanceRegistry", "Query", "class_for_prompt", "match_classes",
    "resolve_query",
]
