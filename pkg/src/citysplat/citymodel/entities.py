"""Semantic table records and the per-face hierarchical label tuple."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

MISSING = -1
BACKGROUND = 0


class Level(str, Enum):
    FEATURE = "Feature"
    SURFACE = "Surface"
    PART = "Part"


# Supported CityGML classes and the hierarchy tier each one lives at.
CLASS_LEVELS: dict[str, Level] = {
    "Building": Level.FEATURE,
    "WallSurface": Level.SURFACE,
    "RoofSurface": Level.SURFACE,
    "GroundSurface": Level.SURFACE,
    "BuildingInstallation": Level.SURFACE,
    "Window": Level.PART,
    "Door": Level.PART,
}

_PARENT_LEVEL = {Level.FEATURE: None, Level.SURFACE: Level.FEATURE, Level.PART: Level.SURFACE}


@dataclass(frozen=True)
class SemanticEntity:
    instance_id: int
    object_id: str
    level: Level
    semantic_class: str
    parent_instance_id: Optional[int] = None
    attributes: dict[str, str] = field(default_factory=dict)

    def to_record(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "object_id": self.object_id,
            "level": self.level.value,
            "class": self.semantic_class,
            "parent_instance_id": self.parent_instance_id,
            "attributes": dict(sorted(self.attributes.items())),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "SemanticEntity":
        return cls(
            instance_id=int(rec["instance_id"]),
            object_id=rec["object_id"],
            level=Level(rec["level"]),
            semantic_class=rec["class"],
            parent_instance_id=rec.get("parent_instance_id"),
            attributes={str(k): str(v) for k, v in rec.get("attributes", {}).items()},
        )


class SemanticTable:
    """Flattened CityGML hierarchy keyed by integer instance id.

    Ids are positive; 0 is background and -1 marks a missing level.
    """

    def __init__(self, entities: list[SemanticEntity]):
        self._by_id: dict[int, SemanticEntity] = {}
        for ent in entities:
            if ent.instance_id < 1:
                raise ValueError(f"instance id must be >= 1, got {ent.instance_id}")
            if ent.instance_id in self._by_id:
                raise ValueError(f"duplicate instance id {ent.instance_id}")
            self._by_id[ent.instance_id] = ent
        for ent in entities:
            expected = _PARENT_LEVEL[ent.level]
            if expected is None:
                if ent.parent_instance_id is not None:
                    raise ValueError(f"feature {ent.object_id} must not have a parent")
                continue
            parent = self._by_id.get(ent.parent_instance_id) if ent.parent_instance_id else None
            if parent is None or parent.level is not expected:
                raise ValueError(
                    f"{ent.level.value} {ent.object_id} needs a {expected.value} parent"
                )
        self._children: dict[int, list[int]] = {i: [] for i in self._by_id}
        for ent in entities:
            if ent.parent_instance_id is not None:
                self._children[ent.parent_instance_id].append(ent.instance_id)

    def __len__(self) -> int:
        return len(self._by_id)

    def __iter__(self) -> Iterator[SemanticEntity]:
        return iter(sorted(self._by_id.values(), key=lambda e: e.instance_id))

    def __contains__(self, instance_id: int) -> bool:
        return instance_id in self._by_id

    def __getitem__(self, instance_id: int) -> SemanticEntity:
        return self._by_id[instance_id]

    def __eq__(self, other: object) -> bool:
        return isinstance(other, SemanticTable) and list(self) == list(other)

    @property
    def max_id(self) -> int:
        return max(self._by_id, default=0)

    def ids_at(self, level: Level) -> list[int]:
        return [e.instance_id for e in self if e.level is level]

    def parent(self, instance_id: int) -> Optional[int]:
        return self._by_id[instance_id].parent_instance_id

    def children(self, instance_id: int) -> list[int]:
        return list(self._children[instance_id])

    def descendants(self, instance_id: int) -> list[int]:
        out, stack = [], list(self._children[instance_id])
        while stack:
            i = stack.pop()
            out.append(i)
            stack.extend(self._children[i])
        return sorted(out)

    def label_for(self, instance_id: int) -> "FaceLabel":
        """Walk parent links up to the feature and return the full label tuple."""
        chain = {Level.FEATURE: MISSING, Level.SURFACE: MISSING, Level.PART: MISSING}
        cur: Optional[int] = instance_id
        while cur is not None:
            ent = self._by_id[cur]
            chain[ent.level] = ent.instance_id
            cur = ent.parent_instance_id
        return FaceLabel(chain[Level.FEATURE], chain[Level.SURFACE], chain[Level.PART])

    def parent_lookup(self) -> np.ndarray:
        """Dense array mapping instance id to its parent id (-1 when none)."""
        lut = np.full(self.max_id + 1, MISSING, dtype=np.int64)
        for ent in self:
            if ent.parent_instance_id is not None:
                lut[ent.instance_id] = ent.parent_instance_id
        return lut

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for ent in self:
                f.write(json.dumps(ent.to_record(), sort_keys=True) + "\n")

    @classmethod
    def read_jsonl(cls, path: str | Path) -> "SemanticTable":
        with open(path, encoding="utf-8") as f:
            return cls([SemanticEntity.from_record(json.loads(line)) for line in f if line.strip()])


@dataclass(frozen=True)
class FaceLabel:
    id_feat: int = MISSING
    id_surf: int = MISSING
    id_part: int = MISSING

    def __post_init__(self):
        for v in (self.id_feat, self.id_surf, self.id_part):
            if v != MISSING and v < 1:
                raise ValueError(f"label ids must be >= 1 or -1, got {v}")
        if self.id_part != MISSING and self.id_surf == MISSING:
            raise ValueError("a part label requires a surface label")

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.id_feat, self.id_surf, self.id_part)

    @property
    def finest(self) -> int:
        for v in (self.id_part, self.id_surf, self.id_feat):
            if v != MISSING:
                return v
        return BACKGROUND


@dataclass
class LabeledPolygon:
    """A planar polygon (exterior + interior rings) owned by one entity."""

    exterior: np.ndarray
    interiors: list[np.ndarray]
    label: FaceLabel
    object_id: str = ""


class AlignmentTransform:
    """Similarity transform from the georeferenced frame into the reconstruction frame."""

    def __init__(self, matrix=None, tol: float = 1e-6):
        m = np.eye(4) if matrix is None else np.asarray(matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError("alignment must be a 4x4 matrix")
        if not np.allclose(m[3], [0, 0, 0, 1], atol=tol):
            raise ValueError("alignment last row must be (0, 0, 0, 1)")
        a = m[:3, :3]
        scale = np.cbrt(np.linalg.det(a))
        if scale <= 0:
            raise ValueError("alignment must preserve orientation with positive scale")
        r = a / scale
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6 * max(1.0, tol / 1e-6)):
            raise ValueError("alignment 3x3 block is not a scaled rotation")
        self.matrix = m
        self.scale = float(scale)

    @classmethod
    def from_parts(cls, rotation=None, translation=(0.0, 0.0, 0.0), scale: float = 1.0):
        m = np.eye(4)
        m[:3, :3] = scale * (np.eye(3) if rotation is None else np.asarray(rotation, float))
        m[:3, 3] = translation
        return cls(m)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.matrix[:3, :3].T + self.matrix[:3, 3]
