from __future__ import annotations

import numpy as np

from citysplat.citymodel.entities import SemanticTable
from citysplat.query.resolve import InstanceRegistry


class UnknownInstanceError(KeyError):
    pass


def expand_instances(ids, table: SemanticTable, registry: InstanceRegistry) -> set[int]:
    """Close an instance set under the parent chain (a building selects its walls and windows)."""
    known_groups = set(registry.group_labels())
    out: set[int] = set()
    for i in ids:
        i = int(i)
        if i > registry.offset:
            if i not in known_groups:
                raise UnknownInstanceError(f"unknown image group label {i}")
            out.add(i)
        elif i in table:
            out.add(i)
            out.update(table.descendants(i))
        else:
            raise UnknownInstanceError(f"unknown city instance id {i}")
    return out


def render_query_mask(ids, label_map: np.ndarray, table: SemanticTable,
                      registry: InstanceRegistry) -> np.ndarray:
    """Binary mask of pixels whose predicted label lies in the expanded instance set.

    ``label_map`` is the per-pixel argmax label already decoded through the
    training vocabulary (see ``identity.predict_pixels``).
    """
    sel = expand_instances(ids, table, registry)
    if not sel:
        return np.zeros(label_map.shape, dtype=bool)
    return np.isin(label_map, np.fromiter(sel, dtype=np.int64))


def class_masks(label_map: np.ndarray, table: SemanticTable, registry: InstanceRegistry,
                classes: list[str]) -> dict[str, np.ndarray]:
    """Per-class masks: city instances by semantic class, image groups by their foreground prompt."""
    out = {}
    for cls in classes:
        ids = [e.instance_id for e in table if e.semantic_class == cls]
        ids += [lab for lab, c in registry.group_classes.items() if c == cls]
        out[cls] = np.isin(label_map, np.asarray(ids, dtype=np.int64))
    return out


def building_mask(label_map: np.ndarray, registry: InstanceRegistry) -> np.ndarray:
    """Coarse Building/Non-Building split: every city-instance label is building."""
    lab = np.asarray(label_map)
    return (lab > 0) & (lab <= registry.offset)
