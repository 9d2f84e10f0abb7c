"""Two-pass raycasting of a labeled mesh into hierarchical id maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from citysplat.citymodel.entities import BACKGROUND, MISSING
from citysplat.citymodel.mesh import LabeledMesh
from citysplat.raycast.bvh import MeshBVH
from citysplat.raycast.camera import CameraView

DEFAULT_TAU = 0.5


@dataclass
class HierarchicalIdMap:
    feat: np.ndarray
    surf: np.ndarray
    part: np.ndarray
    depth: np.ndarray  # +inf where no face was hit

    @property
    def shape(self) -> tuple[int, int]:
        return self.feat.shape

    @property
    def building_support(self) -> np.ndarray:
        return self.feat != MISSING


@dataclass
class PartPassMap:
    depth: np.ndarray
    part: np.ndarray
    surf: np.ndarray


@dataclass
class TwoPassResult:
    view_id: int
    global_map: HierarchicalIdMap
    part_pass: PartPassMap
    recovered: np.ndarray
    city: np.ndarray


class Raycaster:
    """Holds the global and part-only acceleration structures for one mesh.

    Both structures are immutable after construction, so one instance can
    serve many views concurrently.
    """

    def __init__(self, mesh: LabeledMesh):
        if mesh.n_faces == 0:
            raise ValueError("cannot raycast an empty mesh")
        self.mesh = mesh
        self.global_bvh = MeshBVH.from_mesh(mesh)
        self.part_bvh = MeshBVH.from_mesh(mesh, mesh.part_faces())

    def _cast(self, bvh: MeshBVH, view: CameraView, exhaustive: bool):
        o, d = view.pixel_rays()
        fn = bvh.intersect_exhaustive if exhaustive else bvh.intersect
        t, f = fn(o, d)
        return t.reshape(view.shape), f.reshape(view.shape)

    def raycast_global(self, view: CameraView, exhaustive: bool = False) -> HierarchicalIdMap:
        t, f = self._cast(self.global_bvh, view, exhaustive)
        labels = np.where((f >= 0)[..., None], self.mesh.face_labels[np.maximum(f, 0)], MISSING)
        return HierarchicalIdMap(labels[..., 0], labels[..., 1], labels[..., 2], t)

    def raycast_parts(self, view: CameraView, exhaustive: bool = False) -> PartPassMap:
        t, f = self._cast(self.part_bvh, view, exhaustive)
        labels = np.where((f >= 0)[..., None], self.mesh.face_labels[np.maximum(f, 0)], MISSING)
        return PartPassMap(t, labels[..., 2], labels[..., 1])

    def run(self, view: CameraView, tau: float = DEFAULT_TAU, exhaustive: bool = False) -> TwoPassResult:
        g = self.raycast_global(view, exhaustive)
        p = self.raycast_parts(view, exhaustive)
        rec = recover_parts(g, p, tau)
        return TwoPassResult(view.view_id, g, p, rec, compose_city_map(g, rec))


def recover_parts(global_map: HierarchicalIdMap, parts: PartPassMap, tau: float = DEFAULT_TAU) -> np.ndarray:
    """Accept a part-pass hit where it shares the visible surface and lies within ``tau`` behind it."""
    if global_map.shape != parts.part.shape:
        raise ValueError("global and part maps differ in resolution")
    with np.errstate(invalid="ignore"):
        close = (parts.depth - global_map.depth) <= tau
    accept = (parts.part != MISSING) & (parts.surf == global_map.surf) & close
    return np.where(accept, parts.part, MISSING)


def compose_city_map(global_map: HierarchicalIdMap, recovered: np.ndarray) -> np.ndarray:
    """Finest valid level per pixel: part, then surface, then feature, else background."""
    out = np.full(global_map.shape, BACKGROUND, dtype=np.int64)
    out = np.where(global_map.feat != MISSING, global_map.feat, out)
    out = np.where(global_map.surf != MISSING, global_map.surf, out)
    return np.where(recovered != MISSING, recovered, out)
