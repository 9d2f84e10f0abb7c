"""Flatten a CityGML building hierarchy into a semantic table plus labeled polygons."""

from __future__ import annotations

import logging
import xml.etree.ElementTree as ET
from pathlib import Path
from typing import Optional

import numpy as np

from citysplat.citymodel.entities import (
    CLASS_LEVELS,
    FaceLabel,
    LabeledPolygon,
    Level,
    SemanticEntity,
    SemanticTable,
)
from citysplat.citymodel.triangulate import EPS_PLANE, GeometryError, triangulate_polygon

log = logging.getLogger(__name__)

GML_NS = ("http://www.opengis.net/gml", "http://www.opengis.net/gml/3.2")
GEN_LOCAL_ATTRS = {
    "stringAttribute", "intAttribute", "doubleAttribute", "dateAttribute",
    "uriAttribute", "measureAttribute",
}
POLYGON_TAGS = {"Polygon", "Triangle", "PolygonPatch"}
# Feature-like elements that are containers rather than city objects.
CONTAINER_TAGS = {"CityModel"}

_PARENT_LEVEL = {Level.SURFACE: Level.FEATURE, Level.PART: Level.SURFACE}


class CityGMLParseError(ValueError):
    """Document-level failure: malformed XML, empty input, or no buildings."""


def _split(tag: str) -> tuple[str, str]:
    if tag.startswith("{"):
        ns, local = tag[1:].split("}", 1)
        return ns, local
    return "", tag


def _is_gml(ns: str) -> bool:
    return ns in GML_NS


def _is_feature_tag(ns: str, local: str) -> bool:
    # CityGML object classes are UpperCamelCase; properties are lowerCamelCase.
    return bool(local) and local[0].isupper() and not _is_gml(ns) and "xAL" not in ns


def _coords(ring: ET.Element) -> np.ndarray:
    vals: list[float] = []
    dim = 3
    for el in ring.iter():
        ns, local = _split(el.tag)
        if local == "posList":
            dim = int(el.get("srsDimension", el.get("dimension", "3")))
            vals.extend(float(x) for x in (el.text or "").split())
        elif local == "pos":
            vals.extend(float(x) for x in (el.text or "").split())
        elif local == "coordinates":
            for tup in (el.text or "").split():
                vals.extend(float(x) for x in tup.split(","))
    arr = np.asarray(vals, dtype=np.float64)
    if dim != 3 or arr.size % 3:
        raise GeometryError(f"ring coordinates are not 3D (dimension {dim}, {arr.size} values)")
    return arr.reshape(-1, 3)


def _polygon_rings(poly: ET.Element) -> tuple[np.ndarray, list[np.ndarray]]:
    exterior: Optional[np.ndarray] = None
    interiors: list[np.ndarray] = []
    for child in poly:
        _, local = _split(child.tag)
        if local in ("exterior", "outerBoundaryIs"):
            exterior = _coords(child)
        elif local in ("interior", "innerBoundaryIs"):
            interiors.append(_coords(child))
    if exterior is None:
        raise GeometryError("polygon without exterior ring")
    return exterior, interiors


def _attributes(elem: ET.Element) -> dict[str, str]:
    attrs: dict[str, str] = {}
    for child in elem:
        ns, local = _split(child.tag)
        if local in GEN_LOCAL_ATTRS and child.get("name") is not None:
            value = next((c.text for c in child if _split(c.tag)[1] == "value"), None)
            if value is not None:
                attrs[child.get("name")] = value.strip()
        elif len(child) == 0 and child.text and child.text.strip():
            attrs[local] = child.text.strip()
    return attrs


class _Walker:
    def __init__(self, lod: int, eps_plane: float):
        self.lod_prefix = f"lod{lod}"
        self.eps_plane = eps_plane
        self.entities: list[SemanticEntity] = []
        self.polygons: list[LabeledPolygon] = []
        self.warnings: list[str] = []
        self._by_id: dict[int, SemanticEntity] = {}

    def warn(self, msg: str) -> None:
        self.warnings.append(msg)
        log.warning(msg)

    def walk(self, elem: ET.Element, owner: Optional[SemanticEntity]) -> None:
        for child in elem:
            ns, local = _split(child.tag)
            if _is_feature_tag(ns, local) and local not in CONTAINER_TAGS:
                if local in CLASS_LEVELS:
                    self._entity(child, local, owner)
                else:
                    oid = child.get(f"{{{GML_NS[0]}}}id") or child.get(f"{{{GML_NS[1]}}}id") or "?"
                    self.warn(f"unsupported class {local} ({oid}) skipped")
                continue
            self.walk(child, owner)

    def _entity(self, elem: ET.Element, cls: str, owner: Optional[SemanticEntity]) -> None:
        level = CLASS_LEVELS[cls]
        oid = elem.get(f"{{{GML_NS[0]}}}id") or elem.get(f"{{{GML_NS[1]}}}id")
        expected = _PARENT_LEVEL.get(level)
        if (expected is None and owner is not None) or (
            expected is not None and (owner is None or owner.level is not expected)
        ):
            where = owner.semantic_class if owner else "top level"
            self.warn(f"{cls} {oid or '?'} under {where} breaks the hierarchy; skipped")
            return
        iid = len(self.entities) + 1
        ent = SemanticEntity(
            instance_id=iid,
            object_id=oid or f"{cls}_{iid}",
            level=level,
            semantic_class=cls,
            parent_instance_id=owner.instance_id if owner else None,
            attributes=_attributes(elem),
        )
        self.entities.append(ent)
        self._by_id[iid] = ent
        self._geometry(elem, ent)
        self.walk(elem, ent)

    def _geometry(self, elem: ET.Element, ent: SemanticEntity) -> None:
        chain = {Level.FEATURE: -1, Level.SURFACE: -1, Level.PART: -1}
        cur: Optional[SemanticEntity] = ent
        while cur is not None:
            chain[cur.level] = cur.instance_id
            cur = self._by_id.get(cur.parent_instance_id) if cur.parent_instance_id else None
        label = FaceLabel(chain[Level.FEATURE], chain[Level.SURFACE], chain[Level.PART])

        polys: list[LabeledPolygon] = []
        try:
            for prop in elem:
                ns, local = _split(prop.tag)
                if not local.startswith(self.lod_prefix):
                    continue
                for poly in self._own_polygons(prop):
                    ext, ints = _polygon_rings(poly)
                    triangulate_polygon(ext, ints, self.eps_plane, ent.object_id)
                    polys.append(LabeledPolygon(ext, ints, label, ent.object_id))
        except (GeometryError, ValueError) as exc:
            self.warn(f"{ent.semantic_class} {ent.object_id}: geometry skipped ({exc})")
            return
        self.polygons.extend(polys)

    def _own_polygons(self, elem: ET.Element):
        for child in elem:
            ns, local = _split(child.tag)
            if _is_feature_tag(ns, local):
                continue
            if local in POLYGON_TAGS and _is_gml(ns):
                yield child
            else:
                yield from self._own_polygons(child)


def parse_citygml(document: str | bytes, lod: int = 3, eps_plane: float = EPS_PLANE,
                  warnings: Optional[list[str]] = None):
    """Parse CityGML text into ``(SemanticTable, list[LabeledPolygon])``.

    Instance ids are assigned in document order starting at 1. Entities with
    invalid geometry keep their table entry but contribute no polygons.
    Per-entity problems are logged and appended to ``warnings`` if given.
    """
    text = document.decode("utf-8") if isinstance(document, bytes) else document
    if not text or not text.strip():
        raise CityGMLParseError("empty document")
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        line, col = exc.position
        lines = text.splitlines()
        context = lines[line - 1].strip() if 0 < line <= len(lines) else ""
        raise CityGMLParseError(f"malformed XML at line {line}, column {col}: {context!r}") from exc

    walker = _Walker(lod, eps_plane)
    ns, local = _split(root.tag)
    if local in CLASS_LEVELS:
        walker._entity(root, local, None)
    else:
        walker.walk(root, None)
    if not any(e.level is Level.FEATURE for e in walker.entities):
        raise CityGMLParseError("no buildings found")
    if warnings is not None:
        warnings.extend(walker.warnings)
    return SemanticTable(walker.entities), walker.polygons


def parse_citygml_file(path: str | Path, **kwargs):
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"CityGML file not found: {p}")
    return parse_citygml(p.read_bytes(), **kwargs)
