"""Prompt resolution: exact semantic class first, embedding similarity as fallback."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from citysplat.citymodel.entities import Level, SemanticTable

TAU_QUERY = 0.22

# Editable prompt -> CityGML class table for the exact-match stage.
SYNONYMS: dict[str, str] = {
    "building": "Building",
    "house": "Building",
    "wall": "WallSurface",
    "facade": "WallSurface",
    "façade": "WallSurface",
    "roof": "RoofSurface",
    "ground": "GroundSurface",
    "window": "Window",
    "door": "Door",
    "installation": "BuildingInstallation",
    "balcony": "BuildingInstallation",
}


@dataclass
class Query:
    prompt: str
    embedding: Optional[np.ndarray] = None
    level: str = "Any"  # Feature | Surface | Part | Any


@dataclass
class InstanceRegistry:
    """Every queryable label in the fused id space with its feature vector.

    City instances keep their table id; image groups live at ``offset + group_id``.
    """

    offset: int
    embeddings: dict[int, np.ndarray] = field(default_factory=dict)
    group_classes: dict[int, str] = field(default_factory=dict)  # label -> best foreground prompt

    def group_labels(self) -> list[int]:
        return sorted(set(k for k in self.embeddings if k > self.offset) | set(self.group_classes))

    @classmethod
    def from_records(cls, offset: int, city_features: dict[int, np.ndarray], groups: list[dict]):
        """Build from aggregated city features and group-registry records."""
        reg = cls(offset)
        for iid, vec in city_features.items():
            reg.embeddings[int(iid)] = np.asarray(vec, dtype=np.float64)
        for rec in groups:
            label = int(rec["label"])
            reg.embeddings[label] = np.asarray(rec["vector"], dtype=np.float64)
            if rec.get("class"):
                reg.group_classes[label] = rec["class"]
        return reg


def _normalise(prompt: str) -> str:
    p = prompt.strip().lower()
    if p not in SYNONYMS and p.endswith("s") and p[:-1] in SYNONYMS:
        p = p[:-1]
    return p


def class_for_prompt(prompt: str) -> Optional[str]:
    p = _normalise(prompt)
    if p in SYNONYMS:
        return SYNONYMS[p]
    return None


def match_classes(prompt: str, table: SemanticTable, level: str = "Any") -> list[int]:
    """Stage one: case-insensitive class-name (or synonym) match at the requested level."""
    p = _normalise(prompt)
    wanted = {SYNONYMS[p]} if p in SYNONYMS else set()
    out = []
    for ent in table:
        if level != "Any" and ent.level is not Level(level):
            continue
        if ent.semantic_class in wanted or ent.semantic_class.lower() == p:
            out.append(ent.instance_id)
    return out


def resolve_query(query: Query, table: SemanticTable, registry: InstanceRegistry,
                  tau_query: float = TAU_QUERY) -> list[int]:
    """Instance labels answering ``query``; an empty list is a valid answer."""
    ids = match_classes(query.prompt, table, query.level)
    if ids:
        return ids
    if query.embedding is None or not registry.embeddings:
        return []
    q = np.asarray(query.embedding, dtype=np.float64)
    q = q / np.linalg.norm(q)
    hits = []
    for label in sorted(registry.embeddings):
        if label <= registry.offset and query.level != "Any" and (
            label not in table or table[label].level is not Level(query.level)
        ):
            continue
        if float(registry.embeddings[label] @ q) > tau_query:
            hits.append(label)
    return hits
