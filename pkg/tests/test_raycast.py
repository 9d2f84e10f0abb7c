import numpy as np
import pytest
from hypothesis import given, strategies as st

from citysplat.citymodel.mesh import LabeledMesh
from citysplat.raycast import (
    CameraView,
    HierarchicalIdMap,
    MeshBVH,
    PartPassMap,
    Raycaster,
    compose_city_map,
    read_cameras,
    recover_parts,
    write_cameras,
)
from citysplat.raycast.idmap_io import read_grids, write_grids

from scenes import fixture_meshes, frontal_view, soup_mesh, wcw_mesh


def _quad_mesh(quads, labels):
    verts, tris, labs = [], [], []
    for k, (q, lab) in enumerate(zip(quads, labels)):
        verts.append(np.asarray(q, float))
        tris += [[4 * k, 4 * k + 1, 4 * k + 2], [4 * k, 4 * k + 2, 4 * k + 3]]
        labs += [lab, lab]
    return LabeledMesh(np.concatenate(verts), np.array(tris), np.array(labs))


def _wall(y, x0=-5, x1=5, z0=-5, z1=5):
    return [[x0, y, z0], [x1, y, z0], [x1, y, z1], [x0, y, z1]]


# --------------------------------------------------------------------------- primitive + BVH

def test_single_triangle_hit_depth():
    v0, v1, v2 = np.array([[0.0, 5, 0]]), np.array([[2.0, 5, 0]]), np.array([[0.0, 5, 2]])
    bvh = MeshBVH(v0, v1, v2, np.array([0]))
    centroid = (v0 + v1 + v2) / 3
    o = np.array([[centroid[0, 0], 0.0, centroid[0, 2]]])
    t, f = bvh.intersect(o, np.array([[0.0, 1.0, 0.0]]))
    assert f[0] == 0
    assert t[0] == pytest.approx(5.0, abs=1e-12)


def test_miss_reports_no_hit():
    bvh = MeshBVH.from_mesh(_quad_mesh([_wall(5)], [[1, -1, -1]]))
    t, f = bvh.intersect(np.zeros((1, 3)), np.array([[0.0, -1.0, 0.0]]))
    assert f[0] == -1 and np.isinf(t[0])


def test_bvh_matches_exhaustive_random(rng):
    mesh = soup_mesh(500, seed=3)
    bvh = MeshBVH.from_mesh(mesh)
    o = rng.uniform(-8, 8, (4096, 3))
    d = rng.normal(size=(4096, 3))
    t1, f1 = bvh.intersect(o, d)
    t2, f2 = bvh.intersect_exhaustive(o, d)
    assert np.array_equal(f1, f2)
    assert np.array_equal(t1, t2)
    assert (f1 >= 0).sum() > 500


def test_equal_depth_tie_goes_to_lowest_face():
    q = _wall(5)
    mesh = _quad_mesh([q, q], [[1, 2, -1], [1, 3, -1]])
    view = frontal_view(8, 8, 8.0, (0, 0, 0))
    g = Raycaster(mesh).raycast_global(view)
    assert (g.surf == 2).all()


# --------------------------------------------------------------------------- global / part passes

def test_front_wall_wins():
    mesh = _quad_mesh([_wall(9), _wall(5)], [[1, 2, -1], [1, 3, -1]])
    g = Raycaster(mesh).raycast_global(frontal_view(16, 16, 10.0, (0, 0, 0)))
    assert (g.surf == 3).all()
    assert np.allclose(g.depth, 5.0)


def test_uncovered_pixel_is_missing():
    mesh = _quad_mesh([_wall(5, 0, 5, 0, 5)], [[1, 2, -1]])
    g = Raycaster(mesh).raycast_global(frontal_view(16, 16, 10.0, (0, 0, 0)))
    miss = g.feat == -1
    assert miss.any()
    assert (g.surf[miss] == -1).all() and (g.part[miss] == -1).all() and np.isinf(g.depth[miss]).all()
    assert np.isfinite(g.depth[~miss]).all()


def test_part_pass_empty_without_parts():
    mesh = _quad_mesh([_wall(5)], [[1, 2, -1]])
    p = Raycaster(mesh).raycast_parts(frontal_view(8, 8, 8.0, (0, 0, 0)))
    assert (p.part == -1).all()


def test_part_pass_sees_window_behind_wall():
    view = frontal_view(64, 64, 150.0, (5, -9.7, 3), cx=32, cy=32)
    rc = Raycaster(wcw_mesh())
    g = rc.raycast_global(view)
    p = rc.raycast_parts(view)
    assert (g.part == -1).all()
    assert (p.part == 3).sum() == 900
    assert ((p.part == 3) <= (p.surf == 2)).all()


def test_stacked_windows_nearest():
    mesh = _quad_mesh([_wall(12), _wall(8)], [[1, 2, 5], [1, 2, 6]])
    p = Raycaster(mesh).raycast_parts(frontal_view(8, 8, 16.0, (0, 0, 0)))
    assert (p.part == 6).all()
    assert np.allclose(p.depth, 8.0)


# --------------------------------------------------------------------------- recovery and composition

def _maps(feat, surf, part, depth, pdepth, ppart, psurf):
    a = lambda x: np.atleast_2d(np.asarray(x))
    return (HierarchicalIdMap(a(feat), a(surf), a(part), a(depth).astype(float)),
            PartPassMap(a(pdepth).astype(float), a(ppart), a(psurf)))


def test_recover_accept_and_reject():
    g, p = _maps([1, 1, 1], [2, 2, 2], [-1, -1, -1], [10.0, 10.0, 10.0],
                 [10.3, 10.8, 10.3], [7, 7, 8], [2, 2, 4])
    assert recover_parts(g, p, 0.5).tolist() == [[7, -1, -1]]


def test_compose_finest_level():
    g = HierarchicalIdMap(np.array([[2, 2, -1]]), np.array([[5, 5, -1]]), np.array([[-1, -1, -1]]),
                          np.array([[1.0, 1.0, np.inf]]))
    rec = np.array([[9, -1, -1]])
    assert compose_city_map(g, rec).tolist() == [[9, 5, 0]]


_ids = st.integers(-1, 4)


@given(st.lists(st.tuples(_ids, _ids, st.floats(0, 20), st.floats(0, 20), st.floats(0, 3), st.floats(0, 3)),
                min_size=1, max_size=40))
def test_recovery_monotone_and_sound(rows):
    gs, ps, d, pd, t1, t2 = (np.array(c) for c in zip(*rows))
    g = HierarchicalIdMap(np.where(gs >= 0, 1, -1)[None], gs[None], np.full((1, len(rows)), -1), d[None])
    ppart = np.where(ps >= 0, 10 + ps, -1)
    p = PartPassMap(pd[None], ppart[None], ps[None])
    lo, hi = sorted([float(t1[0]), float(t2[0])])
    r_lo, r_hi = recover_parts(g, p, lo), recover_parts(g, p, hi)
    assert ((r_lo != -1) <= (r_hi != -1)).all()
    ok = r_hi != -1
    assert (p.surf[ok] == g.surf[ok]).all()


# --------------------------------------------------------------------------- oracle and occlusion fixtures

def test_two_pass_matches_exhaustive_on_fixtures():
    for name, mesh, views in fixture_meshes():
        rc = Raycaster(mesh)
        for v in views[:1]:
            a, b = rc.run(v), rc.run(v, exhaustive=True)
            assert np.array_equal(a.city, b.city), name
            assert np.array_equal(a.global_map.depth, b.global_map.depth), name
            assert np.array_equal(a.part_pass.part, b.part_pass.part), name


def test_wall_covers_window_oblique_recovery():
    # Analytic projected area of the window rectangle from the homography of its plane
    view = CameraView.look_at(1, (3.0, -14.0, 4.0), (5.0, 0.3, 3.0), 256, 256, focal=400.0)
    corners = np.array([[4, 0.3, 2], [6, 0.3, 2], [6, 0.3, 4], [4, 0.3, 4]], float)
    uv, _ = view.project(corners)
    x, y = uv[:, 0], uv[:, 1]
    area = 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
    r = Raycaster(wcw_mesh()).run(view, tau=0.5)
    assert (r.global_map.part != -1).sum() == 0
    assert abs((r.recovered == 3).sum() - area) / area < 0.02
    assert (Raycaster(wcw_mesh()).run(view, tau=0.2).recovered != -1).sum() == 0


# --------------------------------------------------------------------------- camera + files

def test_projection_pinhole_example():
    view = CameraView(1, [[100, 0, 50], [0, 100, 50], [0, 0, 1]], np.hstack([np.eye(3), np.zeros((3, 1))]), 100, 100)
    uv, z = view.project(np.array([[1.0, 0, 5], [0, 0, 5], [0, 0, -1]]))
    assert np.allclose(uv[0], [70, 50]) and np.allclose(uv[1], [50, 50])
    assert z[1] == 5 and np.isnan(uv[2]).all()


def test_camera_validation():
    with pytest.raises(ValueError):
        CameraView(1, [[100, 0, 50], [3, 100, 50], [0, 0, 1]], np.hstack([np.eye(3), np.zeros((3, 1))]), 10, 10)
    with pytest.raises(ValueError):
        CameraView(1, np.eye(3), np.hstack([-np.eye(3), np.zeros((3, 1))]), 10, 10)


def test_pixel_ray_parameter_is_depth():
    view = CameraView.look_at(1, (1, -7, 2), (0, 0, 0), 20, 10, focal=15.0)
    o, d = view.pixel_rays()
    pts = o + 3.0 * d
    _, z = view.project(pts)
    assert np.allclose(z, 3.0)


def test_camera_file_roundtrip(tmp_path):
    views = [CameraView.look_at(i, (i, -10, 2), (0, 0, 0), 32, 24, focal=30.0) for i in (1, 2)]
    write_cameras(tmp_path / "cams.txt", views)
    back = read_cameras(tmp_path / "cams.txt")
    assert [v.view_id for v in back] == [1, 2]
    for a, b in zip(views, back):
        assert np.array_equal(a.K, b.K) and np.array_equal(a.E, b.E) and a.shape == b.shape


def test_grid_files_roundtrip(tmp_path):
    rc = Raycaster(wcw_mesh())
    r = rc.run(frontal_view(32, 32, 60.0, (5, -9.7, 3)))
    write_grids(tmp_path / "v", 7, {"city": r.city, "depth": r.global_map.depth})
    vid, grids = read_grids(tmp_path / "v")
    assert vid == 7
    assert np.array_equal(grids["city"], r.city)
    assert np.array_equal(grids["depth"], r.global_map.depth.astype(np.float32))
