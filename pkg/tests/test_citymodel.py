import numpy as np
import pytest
from hypothesis import given, strategies as st

from citysplat.citymodel import (
    AlignmentTransform,
    FaceLabel,
    GeometryError,
    Level,
    SemanticEntity,
    SemanticTable,
    build_labeled_mesh,
    parse_citygml,
    polygon_area,
    triangle_areas,
    triangulate_polygon,
)
from citysplat.citymodel.mesh import LabeledMesh
from citysplat.citymodel.parser import CityGMLParseError
from citysplat.synthetic import (
    NS_HEADER,
    Opening,
    Surface,
    citygml_document,
    demo_building,
    minimal_building_citygml,
    rect,
)


def _square(x0, z0, s):
    return rect((x0, 0, z0), (s, 0, 0), (0, 0, s))


# --------------------------------------------------------------------------- triangulation

def test_triangle_is_itself():
    tri = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float)
    pts, tris = triangulate_polygon(tri)
    assert tris.shape == (1, 3)
    assert triangle_areas(pts, tris).sum() == pytest.approx(0.5)


def test_unit_square_two_triangles():
    pts, tris = triangulate_polygon(rect((0, 0, 0), (1, 0, 0), (0, 1, 0)))
    assert len(tris) == 2
    assert triangle_areas(pts, tris).sum() == pytest.approx(1.0, rel=1e-12)


def test_square_with_hole_eight_triangles():
    outer = _square(0, 0, 4)
    hole = _square(1, 1, 1)
    pts, tris = triangulate_polygon(outer, [hole])
    assert len(tris) == 8
    assert triangle_areas(pts, tris).sum() == pytest.approx(16.0 - 1.0, rel=1e-12)


def test_two_holes_triangle_count():
    pts, tris = triangulate_polygon(_square(0, 0, 4), [_square(0.5, 0.5, 1), _square(2.5, 2.5, 1)])
    assert len(tris) == 4 + 2 * 2 * 2 + 2  # v + 2h - 2 with v = 12, h = 2
    assert triangle_areas(pts, tris).sum() == pytest.approx(14.0, rel=1e-12)


def test_non_planar_rejected_with_name():
    ring = np.array([[0, 0, 0], [4, 0, 0], [4, 4, 0.5], [0, 4, 0]], float)
    with pytest.raises(GeometryError, match="wall-x"):
        triangulate_polygon(ring, name="wall-x")


def test_degenerate_ring_rejected():
    with pytest.raises(GeometryError):
        triangulate_polygon(np.array([[0, 0, 0], [1, 0, 0], [1, 0, 0]], float))


def test_self_intersecting_ring_rejected():
    bowtie = np.array([[0, 0, 0], [2, 2, 0], [2, 0, 0], [0, 2, 0]], float)
    with pytest.raises(GeometryError):
        triangulate_polygon(bowtie)


@given(
    w=st.floats(1.0, 50.0), h=st.floats(1.0, 50.0),
    hx=st.floats(0.1, 0.45), hz=st.floats(0.1, 0.45),
    yaw=st.floats(0.0, 2 * np.pi),
)
def test_area_conservation_with_hole(w, h, hx, hz, yaw):
    # Rotated vertical wall with one rectangular hole
    u = np.array([np.cos(yaw), np.sin(yaw), 0.0])
    outer = rect((3, -2, 1), w * u, (0, 0, h))
    hole = rect(np.array([3, -2, 1]) + hx * w * u + np.array([0, 0, hz * h]), 0.3 * w * u, (0, 0, 0.3 * h))
    pts, tris = triangulate_polygon(outer, [hole])
    expect = w * h - 0.09 * w * h
    assert triangle_areas(pts, tris).sum() == pytest.approx(expect, rel=1e-6)
    assert polygon_area(outer, [hole]) == pytest.approx(expect, rel=1e-9)


@given(n=st.integers(3, 24), r=st.floats(0.5, 20.0), seed=st.integers(0, 10_000))
def test_star_polygon_area(n, r, seed):
    # Star-shaped (possibly concave) polygons: fan area from the center is exact
    rng = np.random.default_rng(seed)
    ang = np.sort(rng.uniform(0, 2 * np.pi, n))
    ang = ang[np.concatenate([[True], np.diff(ang) > 1e-3])]
    if len(ang) < 3 or np.max(np.diff(np.concatenate([ang, [ang[0] + 2 * np.pi]]))) >= np.pi:
        return
    rad = r * rng.uniform(0.3, 1.0, len(ang))
    ring = np.stack([rad * np.cos(ang), rad * np.sin(ang), np.zeros(len(ang))], axis=1)
    nxt = np.roll(ring, -1, axis=0)
    fan = 0.5 * np.abs(ring[:, 0] * nxt[:, 1] - nxt[:, 0] * ring[:, 1]).sum()
    pts, tris = triangulate_polygon(ring)
    assert len(tris) == len(ring) - 2
    assert triangle_areas(pts, tris).sum() == pytest.approx(fan, rel=1e-6)


# --------------------------------------------------------------------------- parser

def test_minimal_fixture_table():
    table, polys = parse_citygml(minimal_building_citygml())
    assert len(table) == 4
    by_obj = {e.object_id: e for e in table}
    assert [by_obj[k].instance_id for k in ("bldg-1", "wall-1", "window-1", "wall-2")] == [1, 2, 3, 4]
    assert by_obj["window-1"].parent_instance_id == by_obj["wall-1"].instance_id
    assert by_obj["wall-1"].parent_instance_id == by_obj["bldg-1"].instance_id
    assert by_obj["bldg-1"].parent_instance_id is None
    assert by_obj["bldg-1"].attributes["height"] == "12.5"
    assert by_obj["window-1"].level is Level.PART


def test_no_buildings_error():
    with pytest.raises(CityGMLParseError, match="no buildings found"):
        parse_citygml(NS_HEADER + "</core:CityModel>\n")


def test_empty_document_error():
    with pytest.raises(CityGMLParseError):
        parse_citygml("   ")


def test_malformed_xml_reports_line():
    doc = minimal_building_citygml().replace("</bldg:Building>", "</bldg:Buildin>")
    with pytest.raises(CityGMLParseError, match="line"):
        parse_citygml(doc)


def test_bad_geometry_skipped_with_warning():
    bent = np.array([[0, 0, 0], [4, 0, 0], [4, 0.5, 4], [0, 0, 4]], float)
    doc = citygml_document([("b", {}, [
        Surface("good", "WallSurface", [_square(0, 0, 3)], []),
        Surface("bent", "WallSurface", [bent], []),
    ])])
    warnings = []
    table, polys = parse_citygml(doc, warnings=warnings)
    assert any("bent" in w for w in warnings)
    assert {p.object_id for p in polys} == {"good"}
    assert len(table) == 3


def test_unsupported_class_skipped():
    doc = minimal_building_citygml().replace("bldg:WallSurface gml:id=\"wall-2\"", "bldg:OuterCeilingSurface gml:id=\"wall-2\"")
    # close tag of the renamed surface
    idx = doc.rfind("</bldg:WallSurface>")
    doc = doc[:idx] + "</bldg:OuterCeilingSurface>" + doc[idx + len("</bldg:WallSurface>"):]
    warnings = []
    table, _ = parse_citygml(doc, warnings=warnings)
    assert len(table) == 3
    assert any("OuterCeilingSurface" in w for w in warnings)


def test_parse_is_deterministic():
    doc, _, _ = demo_building()
    t1, p1 = parse_citygml(doc)
    t2, p2 = parse_citygml(doc)
    assert t1 == t2
    m1, m2 = build_labeled_mesh(t1, p1), build_labeled_mesh(t2, p2)
    assert np.array_equal(m1.vertices, m2.vertices)
    assert np.array_equal(m1.face_labels, m2.face_labels)


def test_id_partition_and_chain_closure():
    doc, _, _ = demo_building()
    table, polys = parse_citygml(doc)
    sets = [set(table.ids_at(lv)) for lv in Level]
    assert not (sets[0] & sets[1]) and not (sets[1] & sets[2]) and not (sets[0] & sets[2])
    mesh = build_labeled_mesh(table, polys)
    for feat, surf, part in mesh.face_labels.tolist():
        if part != -1:
            assert table.parent(part) == surf
        if surf != -1:
            assert table.parent(surf) == feat
        assert feat != -1


# --------------------------------------------------------------------------- table / mesh

def test_table_jsonl_roundtrip(tmp_path):
    table, _ = parse_citygml(minimal_building_citygml())
    table.write_jsonl(tmp_path / "t.jsonl")
    assert SemanticTable.read_jsonl(tmp_path / "t.jsonl") == table


def test_table_rejects_bad_parent():
    with pytest.raises(ValueError):
        SemanticTable([
            SemanticEntity(1, "b", Level.FEATURE, "Building", None),
            SemanticEntity(2, "w", Level.PART, "Window", 1),
        ])


def test_face_label_requires_surface_for_part():
    with pytest.raises(ValueError):
        FaceLabel(1, -1, 3)


def test_mesh_window_chain_and_roundtrip(tmp_path):
    table, polys = parse_citygml(minimal_building_citygml())
    mesh = build_labeled_mesh(table, polys)
    win = mesh.face_labels[mesh.face_labels[:, 2] != -1]
    assert len(win) > 0
    assert (win == [1, 2, 3]).all()
    mesh.save(tmp_path / "m.bin")
    back = LabeledMesh.load(tmp_path / "m.bin")
    assert np.array_equal(back.vertices, mesh.vertices)
    assert np.array_equal(back.triangles, mesh.triangles)
    assert np.array_equal(back.face_labels, mesh.face_labels)


def test_identity_and_translation_transform():
    table, polys = parse_citygml(minimal_building_citygml())
    base = build_labeled_mesh(table, polys)
    same = build_labeled_mesh(table, polys, AlignmentTransform())
    assert np.array_equal(base.vertices, same.vertices)
    moved = build_labeled_mesh(table, polys, AlignmentTransform.from_parts(translation=(10, 0, 0)))
    assert np.array_equal(moved.vertices[:, 0], base.vertices[:, 0] + 10)
    assert np.array_equal(moved.vertices[:, 1:], base.vertices[:, 1:])


def test_unknown_label_rejected():
    table, polys = parse_citygml(minimal_building_citygml())
    bad = polys[0].__class__(polys[0].exterior, polys[0].interiors, FaceLabel(1, 2, 99), "ghost")
    with pytest.raises(ValueError):
        build_labeled_mesh(table, polys + [bad])


def test_alignment_rejects_shear():
    m = np.eye(4)
    m[0, 1] = 0.5
    with pytest.raises(ValueError):
        AlignmentTransform(m)
