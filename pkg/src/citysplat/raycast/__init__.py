from citysplat.raycast.bvh import MeshBVH, intersect_pairs
from citysplat.raycast.camera import CameraView, read_cameras, write_cameras
from citysplat.raycast.twopass import (
    DEFAULT_TAU,
    HierarchicalIdMap,
    PartPassMap,
    Raycaster,
    TwoPassResult,
    compose_city_map,
    recover_parts,
)

__all__ = [
    "MeshBVH", "intersect_pairs", "CameraView", "read_cameras", "write_cameras", "DEFAULT_TAU",
    "HierarchicalIdMap", "PartPassMap", "Raycaster", "TwoPassResult", "compose_city_map",
    "recover_parts",
]
