"""File formats at the mask-ingest boundary.

Mask manifest (JSON lines, paths relative to the manifest's directory)::

    {"view_id": 3, "mask_id": 0, "quality": 0.93, "area": 812,
     "rle": "view_0003/mask_0000.rle", "embedding": "emb/v3_m0.f32", "dim": 512}

Embedding files hold raw little-endian float32 values; ``dim`` defaults to 512.

Prompt bank (YAML)::

    city: [{prompt: building, embedding: emb/building.f32}, ...]
    fore: [{prompt: car, embedding: emb/car.f32}, ...]

City-instance crop features (JSON lines)::

    {"instance_id": 4, "view_id": 3, "embedding": "emb/city_4_3.f32"}

Group registry (JSON lines, written by the fuse stage)::

    {"group_id": 2, "label": 100002, "view_support": 5, "members": 37,
     "n_masks": 6, "class": "car", "embedding": "groups/group_0002.f32"}
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import yaml

from citysplat.masks.rle import read_rle
from citysplat.masks.types import InstanceGroup, PromptBank, RawMask

DEFAULT_DIM = 512


def read_embedding(path: str | Path, dim: int | None = None) -> np.ndarray:
    vec = np.fromfile(path, dtype="<f4").astype(np.float64)
    if dim is not None and vec.size != dim:
        raise ValueError(f"{path}: expected {dim} floats, found {vec.size}")
    return vec


def write_embedding(path: str | Path, vec: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    np.asarray(vec, dtype="<f4").tofile(path)


def read_mask_manifest(path: str | Path) -> dict[int, list[RawMask]]:
    path = Path(path)
    root = path.parent
    out: dict[int, list[RawMask]] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            bitmap = read_rle(root / rec["rle"])
            emb = None
            if rec.get("embedding"):
                emb = read_embedding(root / rec["embedding"], rec.get("dim", DEFAULT_DIM))
            m = RawMask(int(rec["view_id"]), int(rec["mask_id"]), bitmap, float(rec["quality"]), emb)
            if "area" in rec and int(rec["area"]) != m.area:
                raise ValueError(f"{path}:{lineno}: area {rec['area']} != mask popcount {m.area}")
            out.setdefault(m.view_id, []).append(m)
    return out


def read_prompt_bank(path: str | Path) -> PromptBank:
    path = Path(path)
    doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    dim = doc.get("dim")

    def load(items):
        return [(it["prompt"], read_embedding(path.parent / it["embedding"], dim)) for it in items or []]

    return PromptBank(load(doc.get("city")), load(doc.get("fore")))


def read_city_features(path: str | Path, dim: int | None = None) -> dict[int, list[np.ndarray]]:
    path = Path(path)
    out: dict[int, list[np.ndarray]] = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                rec = json.loads(line)
                out.setdefault(int(rec["instance_id"]), []).append(
                    read_embedding(path.parent / rec["embedding"], dim))
    return out


def write_group_registry(directory: str | Path, groups: dict[int, InstanceGroup], offset: int,
                         bank: PromptBank | None = None) -> Path:
    directory = Path(directory)
    (directory / "groups").mkdir(parents=True, exist_ok=True)
    reg = directory / "groups.jsonl"
    with open(reg, "w", encoding="utf-8") as f:
        for gid in sorted(groups):
            g = groups[gid]
            emb_rel = f"groups/group_{gid:04d}.f32"
            mem_rel = f"groups/group_{gid:04d}.members.i32"
            write_embedding(directory / emb_rel, g.embedding)
            g.member_array().astype("<i4").tofile(directory / mem_rel)
            rec = {
                "group_id": gid,
                "label": offset + gid,
                "view_support": g.view_support,
                "members": len(g.members),
                "n_masks": g.n_masks,
                "embedding": emb_rel,
                "member_file": mem_rel,
                "class": bank.best_foreground(g.embedding) if bank else None,
            }
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    return reg


def read_group_registry(path: str | Path) -> list[dict]:
    path = Path(path)
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                rec = json.loads(line)
                rec["vector"] = read_embedding(path.parent / rec["embedding"])
                out.append(rec)
    return out
