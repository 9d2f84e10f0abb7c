from citysplat.citymodel.entities import (
    BACKGROUND,
    CLASS_LEVELS,
    MISSING,
    AlignmentTransform,
    FaceLabel,
    LabeledPolygon,
    Level,
    SemanticEntity,
    SemanticTable,
)
from citysplat.citymodel.mesh import LabeledMesh, build_labeled_mesh
from citysplat.citymodel.parser import CityGMLParseError, parse_citygml, parse_citygml_file
from citysplat.citymodel.triangulate import GeometryError, polygon_area, triangle_areas, triangulate_polygon

__all__ = [
    "BACKGROUND", "CLASS_LEVELS", "MISSING", "AlignmentTransform", "FaceLabel",
    "LabeledPolygon", "Level", "SemanticEntity", "SemanticTable", "LabeledMesh",
    "build_labeled_mesh", "CityGMLParseError", "parse_citygml", "parse_citygml_file",
    "GeometryError", "polygon_area", "triangle_areas", "triangulate_polygon",
]
