"""Cross-view association of cleaned masks through projected Gaussian centers."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from citysplat.masks.types import InstanceGroup, RawMask
from citysplat.raycast.camera import CameraView

log = logging.getLogger(__name__)


@dataclass
class Projection:
    uv: np.ndarray  # (N, 2) continuous pixel coordinates, nan when invisible
    depth: np.ndarray  # (N,) camera-frame z
    visible: np.ndarray  # (N,) in front of the camera and inside the image

    def pixels(self) -> np.ndarray:
        """Integer (row, col) of each visible center; -1 elsewhere."""
        rc = np.full((len(self.depth), 2), -1, dtype=np.int64)
        vis = self.visible
        rc[vis, 0] = np.floor(self.uv[vis, 1]).astype(np.int64)
        rc[vis, 1] = np.floor(self.uv[vis, 0]).astype(np.int64)
        return rc


def project_gaussians(view: CameraView, centers: np.ndarray) -> Projection:
    uv, depth = view.project(centers)
    with np.errstate(invalid="ignore"):
        visible = (depth > 0) & (uv[:, 0] >= 0) & (uv[:, 0] < view.width) \
            & (uv[:, 1] >= 0) & (uv[:, 1] < view.height)
    return Projection(uv, depth, visible)


def candidate_set(mask: RawMask, proj: Projection, city_depth: Optional[np.ndarray],
                  eps_depth: float = 1.0) -> np.ndarray:
    """Gaussians whose center lands in the mask and is not behind the reference surface.

    The reference depth is the city-model depth at that pixel where it is
    finite, else the 10th percentile of in-mask Gaussian depths.
    """
    rc = proj.pixels()
    idx = np.flatnonzero(proj.visible)
    if idx.size == 0:
        return idx
    inside = mask.bitmap[rc[idx, 0], rc[idx, 1]]
    idx = idx[inside]
    if idx.size == 0:
        return idx
    depths = proj.depth[idx]
    ref = np.full(idx.size, np.inf)
    if city_depth is not None:
        ref = city_depth[rc[idx, 0], rc[idx, 1]].astype(np.float64)
    missing = ~np.isfinite(ref)
    if missing.any():
        ref[missing] = np.percentile(depths, 10)
    return idx[depths <= ref + eps_depth]


def geometric_overlap(candidates: np.ndarray, members: set[int]) -> float:
    if candidates.size == 0:
        return 0.0
    return sum(1 for c in candidates.tolist() if c in members) / candidates.size


@dataclass
class AssociationState:
    groups: dict[int, InstanceGroup] = field(default_factory=dict)
    # view_id -> list of (mask, group_id) in paint order
    assignments: dict[int, list[tuple[RawMask, int]]] = field(default_factory=dict)
    discarded: list[tuple[int, int]] = field(default_factory=list)

    def next_id(self) -> int:
        return max(self.groups, default=0) + 1


def associate_view(state: AssociationState, view: CameraView, masks: list[RawMask],
                   proj: Projection, city_depth: Optional[np.ndarray], *,
                   tau_geo: float, tau_sim: float, eps_depth: float) -> AssociationState:
    """Merge one view's cleaned masks into the global groups (largest masks first)."""
    ordered = sorted(masks, key=lambda m: (-m.area, m.mask_id))
    out = state.assignments.setdefault(view.view_id, [])
    for m in ordered:
        if m.embedding is None:
            raise ValueError(f"mask {m.view_id}/{m.mask_id} has no embedding")
        cand = candidate_set(m, proj, city_depth, eps_depth)
        if cand.size == 0:
            log.warning("mask %d/%d has no 3D candidates; discarded", m.view_id, m.mask_id)
            state.discarded.append((m.view_id, m.mask_id))
            continue
        best_k, best_r = None, -1.0
        for k in sorted(state.groups):
            r = geometric_overlap(cand, state.groups[k].members)
            if r > best_r:
                best_k, best_r = k, r
        g = state.groups.get(best_k) if best_k is not None else None
        if g is not None and best_r > tau_geo and float(m.embedding @ g.embedding) > tau_sim:
            g.members.update(cand.tolist())
            g.n_masks += 1
            mean = g.embedding + (m.embedding - g.embedding) / g.n_masks
            g.embedding = mean / np.linalg.norm(mean)
            g.views.add(view.view_id)
            g.contributions.append((m.view_id, m.mask_id))
            gid = g.group_id
        else:
            gid = state.next_id()
            state.groups[gid] = InstanceGroup(
                gid, set(cand.tolist()), m.embedding.copy(), {view.view_id}, 1, [(m.view_id, m.mask_id)]
            )
        out.append((m, gid))
    return state


def associate(views: list[CameraView], masks_by_view: dict[int, list[RawMask]], centers: np.ndarray,
              city_depths: dict[int, np.ndarray], *, tau_geo: float, tau_sim: float,
              eps_depth: float) -> AssociationState:
    state = AssociationState()
    for view in sorted(views, key=lambda v: v.view_id):
        masks = masks_by_view.get(view.view_id, [])
        if not masks:
            continue
        proj = project_gaussians(view, centers)
        associate_view(state, view, masks, proj, city_depths.get(view.view_id),
                       tau_geo=tau_geo, tau_sim=tau_sim, eps_depth=eps_depth)
    return state


def prune_groups(groups: dict[int, InstanceGroup], m_view: int, camera_centers: np.ndarray,
                 centers: np.ndarray, d_far: float) -> dict[int, InstanceGroup]:
    """Drop groups seen in fewer than ``m_view`` views or far from every camera."""
    cams = np.asarray(camera_centers, dtype=np.float64).reshape(-1, 3)
    kept = {}
    for gid, g in groups.items():
        if g.view_support < m_view:
            continue
        centroid = centers[g.member_array()].mean(axis=0)
        if np.linalg.norm(cams - centroid, axis=1).min() > d_far:
            continue
        kept[gid] = g
    return kept


def group_id_map(assignments: list[tuple[RawMask, int]], shape: tuple[int, int],
                 surviving: set[int] | dict) -> np.ndarray:
    """Paint surviving group ids in processing order, so smaller masks land on top."""
    out = np.zeros(shape, dtype=np.int64)
    for m, gid in assignments:
        if gid in surviving:
            out[m.bitmap] = gid
    return out
