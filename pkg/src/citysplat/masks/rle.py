"""Run-length encoding for binary masks.

Text form: first line ``height width``, second line the run lengths of a
row-major scan, starting with a (possibly empty) run of zeros.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


def encode(mask: np.ndarray) -> list[int]:
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return []
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return runs


def decode(runs: list[int], shape: tuple[int, int]) -> np.ndarray:
    total = int(np.prod(shape))
    if sum(runs) != total:
        raise ValueError(f"run lengths sum to {sum(runs)}, expected {total}")
    values = np.arange(len(runs)) % 2 == 1
    return np.repeat(values, runs).reshape(shape)


def write_rle(path: str | Path, mask: np.ndarray) -> None:
    h, w = mask.shape
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(f"{h} {w}\n{' '.join(map(str, encode(mask)))}\n", encoding="utf-8")


def read_rle(path: str | Path) -> np.ndarray:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    h, w = (int(x) for x in lines[0].split())
    runs = [int(x) for x in lines[1].split()] if len(lines) > 1 else []
    return decode(runs, (h, w))
