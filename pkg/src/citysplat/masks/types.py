from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

UNIT_TOL = 1e-4


def check_unit(vec: np.ndarray, what: str) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64).ravel()
    norm = float(np.linalg.norm(vec))
    if abs(norm - 1.0) > UNIT_TOL:
        raise ValueError(f"{what}: embedding norm {norm:.6f} is not 1")
    return vec


@dataclass
class RawMask:
    """One externally produced instance mask for a single view."""

    view_id: int
    mask_id: int
    bitmap: np.ndarray
    quality: float
    embedding: Optional[np.ndarray] = None

    def __post_init__(self):
        self.bitmap = np.asarray(self.bitmap, dtype=bool)
        if self.embedding is not None:
            self.embedding = check_unit(self.embedding, f"mask {self.view_id}/{self.mask_id}")

    @property
    def area(self) -> int:
        return int(self.bitmap.sum())


@dataclass
class PromptBank:
    city: list[tuple[str, np.ndarray]]
    fore: list[tuple[str, np.ndarray]]

    def __post_init__(self):
        if not self.city or not self.fore:
            raise ValueError("prompt bank needs both building and foreground prompts")
        self.city = [(p, check_unit(e, f"prompt {p!r}")) for p, e in self.city]
        self.fore = [(p, check_unit(e, f"prompt {p!r}")) for p, e in self.fore]

    def city_matrix(self) -> np.ndarray:
        return np.stack([e for _, e in self.city])

    def fore_matrix(self) -> np.ndarray:
        return np.stack([e for _, e in self.fore])

    def embedding_for(self, prompt: str) -> Optional[np.ndarray]:
        key = prompt.strip().lower()
        for p, e in self.city + self.fore:
            if p.strip().lower() == key:
                return e
        return None

    def best_foreground(self, vec: np.ndarray) -> str:
        sims = self.fore_matrix() @ vec
        return self.fore[int(np.argmax(sims))][0]


@dataclass
class InstanceGroup:
    group_id: int
    members: set[int]
    embedding: np.ndarray
    views: set[int] = field(default_factory=set)
    n_masks: int = 1
    contributions: list[tuple[int, int]] = field(default_factory=list)

    @property
    def view_support(self) -> int:
        return len(self.views)

    def member_array(self) -> np.ndarray:
        return np.fromiter(sorted(self.members), dtype=np.int64, count=len(self.members))
