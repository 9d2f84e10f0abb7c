"""Stage bookkeeping: content hashes of every artifact and the upstream checks.

``manifest.json`` in the output directory maps each completed stage to the
hashes of the files it consumed and produced. A stage may start only when
every upstream stage is recorded and its outputs still hash to the recorded
values; otherwise it names the stage that has to be rerun.
"""

from __future__ import annotations

import json
from contextlib import contextmanager
from pathlib import Path

from filelock import FileLock, Timeout

from citysplat import ARTIFACT_VERSION
from citysplat.binio import sha256_file

STAGES = ("citymodel", "raycast", "fuse", "train", "query", "eval")
UPSTREAM = {
    "citymodel": (),
    "raycast": ("citymodel",),
    "fuse": ("raycast",),
    "train": ("fuse",),
    "query": ("train",),
    "eval": ("train",),
}


class StageDependencyError(RuntimeError):
    def __init__(self, stage: str, upstream: str, reason: str):
        super().__init__(f"cannot run stage_{stage}: {reason}; rerun stage_{upstream}")
        self.stage = stage
        self.upstream = upstream


class OutputLocked(RuntimeError):
    pass


class Manifest:
    def __init__(self, out_dir: str | Path):
        self.root = Path(out_dir)
        self.path = self.root / "manifest.json"
        self.data = {"version": ARTIFACT_VERSION, "stages": {}}
        if self.path.exists():
            data = json.loads(self.path.read_text(encoding="utf-8"))
            if data.get("version") != ARTIFACT_VERSION:
                # Outputs from another artifact version are never reused.
                data = {"version": ARTIFACT_VERSION, "stages": {}}
            self.data = data

    @property
    def stages(self) -> dict:
        return self.data["stages"]

    def rel(self, p: Path) -> str:
        p = Path(p).resolve()
        try:
            return p.relative_to(self.root.resolve()).as_posix()
        except ValueError:
            return str(p)

    def hashes(self, paths) -> dict[str, str]:
        return {self.rel(p): sha256_file(p) for p in sorted(set(map(Path, paths)))}

    def outputs_of(self, stage: str) -> list[Path]:
        return [self.root / k for k in sorted(self.stages[stage]["outputs"])]

    def check_upstream(self, stage: str) -> None:
        for up in UPSTREAM[stage]:
            rec = self.stages.get(up)
            if rec is None:
                raise StageDependencyError(stage, up, f"stage_{up} has not completed")
            for rel, digest in rec["outputs"].items():
                p = self.root / rel
                if not p.exists():
                    raise StageDependencyError(stage, up, f"artifact {rel} is missing")
                if sha256_file(p) != digest:
                    raise StageDependencyError(stage, up, f"artifact {rel} changed since it was written")
            for key, digest in rec["inputs"].items():
                p = Path(key) if Path(key).is_absolute() else self.root / key
                if not p.exists() or sha256_file(p) != digest:
                    raise StageDependencyError(stage, up, f"input {key} changed since stage_{up} ran")

    def record(self, stage: str, inputs, outputs, params: dict) -> None:
        old = self.stages.get(stage)
        new = {
            "inputs": self.hashes(inputs),
            "outputs": self.hashes(outputs),
            "params": params,
        }
        self.stages[stage] = new
        if old is None or old["outputs"] != new["outputs"]:
            # Downstream records describe outputs built from something else now.
            for later in STAGES:
                if stage in _closure(later):
                    self.stages.pop(later, None)
        self.save()

    def save(self) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self.data, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        tmp.replace(self.path)


def _closure(stage: str) -> set[str]:
    out: set[str] = set()
    todo = list(UPSTREAM[stage])
    while todo:
        s = todo.pop()
        if s not in out:
            out.add(s)
            todo.extend(UPSTREAM[s])
    return out


@contextmanager
def output_lock(out_dir: str | Path):
    """Single writer per output directory; a second concurrent run fails fast."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(root / ".lock"), timeout=0)
    try:
        lock.acquire()
    except Timeout as e:
        raise OutputLocked(f"{root} is locked by another run") from e
    try:
        yield
    finally:
        lock.release()
