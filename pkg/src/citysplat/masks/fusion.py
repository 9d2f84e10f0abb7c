from __future__ import annotations

import numpy as np

DEFAULT_OFFSET = 100_000


class ConfigError(ValueError):
    pass


def fuse(img_map: np.ndarray, city_map: np.ndarray, offset: int = DEFAULT_OFFSET,
         max_city_id: int | None = None) -> np.ndarray:
    """Image-priority fusion: ``img + offset`` where an image group exists, else the city id."""
    if img_map.shape != city_map.shape:
        raise ValueError("image and city maps differ in resolution")
    top = int(city_map.max(initial=0)) if max_city_id is None else max_city_id
    if offset <= top:
        raise ConfigError(f"id offset {offset} must exceed the largest city id {top}")
    img = np.asarray(img_map, dtype=np.int64)
    city = np.asarray(city_map, dtype=np.int64)
    return np.where(img > 0, img + offset, np.where(city > 0, city, 0))


def decode_label(label: int, offset: int = DEFAULT_OFFSET) -> tuple[str, int]:
    """Split a fused label into ``("city"|"group"|"background", id)``."""
    if label <= 0:
        return ("background", 0)
    if label > offset:
        return ("group", label - offset)
    return ("city", label)


def aggregate_features(embeddings) -> np.ndarray:
    """Normalized mean of per-view unit embeddings for one instance."""
    arr = np.asarray(embeddings, dtype=np.float64)
    if arr.ndim != 2 or len(arr) == 0:
        raise ValueError("need at least one embedding")
    mean = arr.mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm < 1e-12:
        raise ValueError("embeddings cancel out; instance has no usable feature")
    return mean / norm
