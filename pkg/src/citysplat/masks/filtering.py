"""Quality, building-overlap and prompt-margin filtering of raw masks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from citysplat.masks.types import PromptBank, RawMask


def filter_quality(masks: list[RawMask], tau_q: float, tau_a: float) -> list[RawMask]:
    if tau_q < 0 or tau_a < 0:
        raise ValueError("quality thresholds must be non-negative")
    return [m for m in masks if m.quality >= tau_q and m.area >= tau_a]


def building_overlap(mask: RawMask, building_support: np.ndarray) -> float:
    """Fraction of the mask's pixels that fall on raycast building pixels."""
    if mask.bitmap.shape != building_support.shape:
        raise ValueError("mask and id map differ in resolution")
    area = mask.area
    if area == 0:
        raise ValueError(f"mask {mask.view_id}/{mask.mask_id} is empty")
    return float(np.count_nonzero(mask.bitmap & building_support)) / area


def prompt_scores(embedding: np.ndarray, bank: PromptBank) -> tuple[float, float]:
    """Return ``(S_city, S_fore)``: best cosine against each prompt set."""
    return float(np.max(bank.city_matrix() @ embedding)), float(np.max(bank.fore_matrix() @ embedding))


def disambiguate(mask: RawMask, bank: PromptBank, margin: float) -> bool:
    """Keep a building-overlapping mask only if it reads clearly as foreground."""
    if mask.embedding is None:
        raise ValueError(f"mask {mask.view_id}/{mask.mask_id} has no embedding")
    s_city, s_fore = prompt_scores(mask.embedding, bank)
    return s_fore > s_city + margin


@dataclass(frozen=True)
class FilterRecord:
    view_id: int
    mask_id: int
    stage: str  # "quality", "overlap", "margin", "kept"
    overlap: float
    s_city: float
    s_fore: float


def clean_masks(masks: list[RawMask], building_support: np.ndarray, bank: PromptBank, *,
                tau_q: float, tau_a: float, tau_ov: float, margin: float):
    """Run the full filter for one view; returns ``(kept, records)``.

    Low-overlap masks pass as non-building candidates without the margin
    test. The records allow the decision for every input mask to be replayed.
    """
    qc = filter_quality(masks, tau_q, tau_a)
    qc_ids = {id(m) for m in qc}
    kept, records = [], []
    for m in masks:
        if id(m) not in qc_ids:
            records.append(FilterRecord(m.view_id, m.mask_id, "quality", np.nan, np.nan, np.nan))
            continue
        r_ov = building_overlap(m, building_support)
        if r_ov < tau_ov:
            kept.append(m)
            records.append(FilterRecord(m.view_id, m.mask_id, "kept", r_ov, np.nan, np.nan))
            continue
        if m.embedding is None:
            raise ValueError(f"mask {m.view_id}/{m.mask_id} has no embedding")
        s_city, s_fore = prompt_scores(m.embedding, bank)
        if s_fore > s_city + margin:
            kept.append(m)
            records.append(FilterRecord(m.view_id, m.mask_id, "kept", r_ov, s_city, s_fore))
        else:
            records.append(FilterRecord(m.view_id, m.mask_id, "margin", r_ov, s_city, s_fore))
    return kept, records
