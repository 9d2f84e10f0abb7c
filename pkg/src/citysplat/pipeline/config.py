"""Run configuration: one YAML file plus dotted ``key=value`` overrides.

Every threshold used anywhere in the package has a field here with its
default, so a config file only needs the input paths.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from citysplat.citymodel.entities import AlignmentTransform
from citysplat.citymodel.triangulate import EPS_PLANE
from citysplat.identity.train import TrainConfig
from citysplat.masks.fusion import DEFAULT_OFFSET
from citysplat.query.resolve import TAU_QUERY
from citysplat.raycast.twopass import DEFAULT_TAU


class ConfigError(ValueError):
    pass


@dataclass
class InputPaths:
    citygml: Optional[str] = None
    cameras: Optional[str] = None
    gaussians: Optional[str] = None
    masks: Optional[str] = None
    prompts: Optional[str] = None
    city_features: Optional[str] = None
    ground_truth: Optional[str] = None


@dataclass
class CityModelConfig:
    lod: int = 3
    eps_plane: float = EPS_PLANE
    # 4x4 row-major similarity transform, identity when omitted
    alignment: Optional[list] = None


@dataclass
class RaycastConfig:
    tau: float = DEFAULT_TAU


@dataclass
class MaskConfig:
    tau_q: float = 0.88
    tau_a: int = 400
    tau_ov: float = 0.5
    margin: float = 0.02
    tau_geo: float = 0.5
    tau_sim: float = 0.75
    eps_depth: float = 1.0
    d_far: float = 300.0
    offset: int = DEFAULT_OFFSET
    m_view: int = 3


@dataclass
class QueryConfig:
    tau_query: float = TAU_QUERY
    prompts: list = field(default_factory=list)
    views: list = field(default_factory=list)  # empty: the eval views


@dataclass
class EvalConfig:
    views: list = field(default_factory=list)
    prompts: list = field(default_factory=list)
    coarse_prompt: str = "building"


@dataclass
class RunConfig:
    inputs: InputPaths = field(default_factory=InputPaths)
    citymodel: CityModelConfig = field(default_factory=CityModelConfig)
    raycast: RaycastConfig = field(default_factory=RaycastConfig)
    masks: MaskConfig = field(default_factory=MaskConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    query: QueryConfig = field(default_factory=QueryConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    out: str = "out"
    seed: int = 0
    base_dir: str = "."

    def path(self, name: str) -> Path:
        """Absolute path of input ``name``; raises if it is unset or missing."""
        rel = getattr(self.inputs, name)
        if not rel:
            raise ConfigError(f"inputs.{name} is not set")
        p = Path(self.base_dir, rel)
        if not p.exists():
            raise ConfigError(f"inputs.{name}: {p} does not exist")
        return p

    @property
    def out_dir(self) -> Path:
        return Path(self.base_dir, self.out)

    def alignment(self) -> Optional[AlignmentTransform]:
        if self.citymodel.alignment is None:
            return None
        try:
            return AlignmentTransform(self.citymodel.alignment)
        except ValueError as e:
            raise ConfigError(f"citymodel.alignment: {e}") from e

    def thresholds(self) -> dict[str, Any]:
        """Every effective numeric parameter, for logging and the manifest."""
        d = as_dict(self)
        d.pop("inputs")
        d.pop("base_dir")
        d.pop("out")
        return d


def as_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


_RANGES = {
    ("raycast", "tau"): (0.0, None, False),
    ("masks", "tau_q"): (0.0, 1.0, True),
    ("masks", "tau_a"): (0, None, True),
    ("masks", "tau_ov"): (0.0, 1.0, True),
    ("masks", "margin"): (0.0, None, True),
    ("masks", "tau_geo"): (0.0, 1.0, True),
    ("masks", "tau_sim"): (-1.0, 1.0, True),
    ("masks", "eps_depth"): (0.0, None, True),
    ("masks", "d_far"): (0.0, None, False),
    ("masks", "offset"): (1, None, True),
    ("masks", "m_view"): (1, None, True),
    ("query", "tau_query"): (-1.0, 1.0, True),
    ("citymodel", "eps_plane"): (0.0, None, False),
}


def validate(cfg: RunConfig) -> RunConfig:
    for (sec, key), (lo, hi, closed) in _RANGES.items():
        val = getattr(getattr(cfg, sec), key)
        ok = (val >= lo if closed else val > lo) and (hi is None or val <= hi)
        if not ok:
            raise ConfigError(f"{sec}.{key}={val} outside documented range")
    for key in ("offset", "m_view", "tau_a"):
        if int(getattr(cfg.masks, key)) != getattr(cfg.masks, key):
            raise ConfigError(f"masks.{key} must be an integer")
    cfg.alignment()
    return cfg


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, val in data.items():
        if key not in fields:
            raise ConfigError(f"unknown config key {where + key!r}")
        sub = fields[key].default_factory if fields[key].default_factory is not dataclasses.MISSING else None
        if sub is not None and dataclasses.is_dataclass(sub):
            kwargs[key] = _build(sub, val or {}, f"{where}{key}.")
        else:
            kwargs[key] = val
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where or 'config'}: {e}") from e


def apply_override(data: dict, item: str) -> None:
    """Set ``a.b.c=value`` in a nested mapping; the value is parsed as YAML."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key=value")
    key, raw = item.split("=", 1)
    parts = key.strip().split(".")
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r} descends into a scalar")
    node[parts[-1]] = yaml.safe_load(raw)


def load_config(path: str | Path | None = None, overrides=(), out: str | None = None,
                seed: int | None = None) -> RunConfig:
    data: dict = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        base = path.parent.resolve()
    for item in overrides:
        apply_override(data, item)
    if out is not None:
        data["out"] = str(Path(out).resolve())
    if seed is not None:
        data["seed"] = int(seed)
    data.setdefault("base_dir", str(base))
    return validate(_build(RunConfig, data, ""))
