"""Triangulated, aligned mesh carrying a hierarchical label tuple per face.

Binary layout (little-endian)::

    magic      8 bytes  b"CSMESH\\0\\0"
    version    uint32
    n_vertices uint64
    n_faces    uint64
    vertices   float64[n_vertices, 3]
    triangles  int32[n_faces, 3]
    labels     int32[n_faces, 3]      (feature, surface, part; -1 = missing)
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from citysplat.binio import pack_header, unpack_header
from citysplat.citymodel.entities import MISSING, AlignmentTransform, LabeledPolygon, SemanticTable
from citysplat.citymodel.triangulate import EPS_PLANE, triangle_areas, triangulate_polygon

MESH_MAGIC = b"CSMESH\0\0"


@dataclass
class LabeledMesh:
    vertices: np.ndarray  # (V, 3) float64
    triangles: np.ndarray  # (F, 3) int64
    face_labels: np.ndarray  # (F, 3) int64: feat, surf, part

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        self.face_labels = np.ascontiguousarray(self.face_labels, dtype=np.int64).reshape(-1, 3)
        if len(self.face_labels) != len(self.triangles):
            raise ValueError("one label tuple per triangle required")
        if len(self.triangles) and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise ValueError("triangle index out of range")

    @property
    def n_faces(self) -> int:
        return len(self.triangles)

    def corners(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(self.vertices[self.triangles[:, k]] for k in range(3))

    def areas(self) -> np.ndarray:
        return triangle_areas(self.vertices, self.triangles)

    def part_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_labels[:, 2] != MISSING)

    def save(self, path: str | Path) -> None:
        with open(path, "wb") as f:
            f.write(pack_header(MESH_MAGIC, len(self.vertices), len(self.triangles)))
            f.write(self.vertices.astype("<f8").tobytes())
            f.write(self.triangles.astype("<i4").tobytes())
            f.write(self.face_labels.astype("<i4").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "LabeledMesh":
        buf = Path(path).read_bytes()
        (nv, nf), off = unpack_header(buf, MESH_MAGIC, 2)
        verts = np.frombuffer(buf, "<f8", nv * 3, off).reshape(nv, 3)
        off += nv * 24
        tris = np.frombuffer(buf, "<i4", nf * 3, off).reshape(nf, 3)
        off += nf * 12
        labels = np.frombuffer(buf, "<i4", nf * 3, off).reshape(nf, 3)
        return cls(verts.copy(), tris.astype(np.int64), labels.astype(np.int64))


def build_labeled_mesh(table: SemanticTable, polygons: list[LabeledPolygon],
                       transform: AlignmentTransform | None = None,
                       eps_plane: float = EPS_PLANE, min_area: float = 1e-12) -> LabeledMesh:
    """Triangulate every polygon, move it into the reconstruction frame, and attach labels.

    Raises ``ValueError`` when a polygon's label references an instance the
    table does not know or disagrees with the table's parent chain.
    """
    transform = transform or AlignmentTransform()
    verts: list[np.ndarray] = []
    tris: list[np.ndarray] = []
    labels: list[np.ndarray] = []
    offset = 0
    for poly in polygons:
        lab = poly.label
        finest = lab.finest
        if finest not in table:
            raise ValueError(f"polygon of {poly.object_id!r} references unknown instance {finest}")
        if table.label_for(finest) != lab:
            raise ValueError(f"polygon of {poly.object_id!r} label {lab.as_tuple()} contradicts the table")
        pts, t = triangulate_polygon(poly.exterior, poly.interiors, eps_plane, poly.object_id)
        pts = transform.apply(pts)
        area = triangle_areas(pts, t)
        t = t[area > min_area * max(transform.scale, 1.0) ** 2]
        verts.append(pts)
        tris.append(t + offset)
        labels.append(np.tile(np.array(lab.as_tuple(), dtype=np.int64), (len(t), 1)))
        offset += len(pts)
    if not verts:
        return LabeledMesh(np.zeros((0, 3)), np.zeros((0, 3), np.int64), np.zeros((0, 3), np.int64))
    return LabeledMesh(np.concatenate(verts), np.concatenate(tris), np.concatenate(labels))
