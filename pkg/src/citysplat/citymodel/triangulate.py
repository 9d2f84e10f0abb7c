"""Ear-clipping triangulation of planar 3D polygons with holes.

Each polygon is projected onto its best-fit plane, holes are spliced into the
exterior ring through bridge edges, and the resulting simple ring is clipped
ear by ear. A ring set with ``v`` vertices in total and ``h`` holes always
yields ``v + 2h - 2`` triangles.
"""

from __future__ import annotations

import numpy as np

EPS_PLANE = 1e-3


class GeometryError(ValueError):
    """Raised for rings that cannot be triangulated (non-planar, degenerate, self-intersecting)."""


def clean_ring(ring, name: str = "") -> np.ndarray:
    """Drop the closing vertex and consecutive duplicates; require 3 distinct points."""
    pts = np.asarray(ring, dtype=np.float64).reshape(-1, 3)
    keep = [0] + [i for i in range(1, len(pts)) if not np.array_equal(pts[i], pts[i - 1])]
    pts = pts[keep]
    while len(pts) > 1 and np.array_equal(pts[0], pts[-1]):
        pts = pts[:-1]
    if len(np.unique(pts, axis=0)) < 3:
        raise GeometryError(f"{name or 'ring'}: fewer than 3 distinct vertices")
    return pts


def newell_normal(ring: np.ndarray) -> np.ndarray:
    nxt = np.roll(ring, -1, axis=0)
    return np.array([
        np.sum((ring[:, 1] - nxt[:, 1]) * (ring[:, 2] + nxt[:, 2])),
        np.sum((ring[:, 2] - nxt[:, 2]) * (ring[:, 0] + nxt[:, 0])),
        np.sum((ring[:, 0] - nxt[:, 0]) * (ring[:, 1] + nxt[:, 1])),
    ])


def polygon_area(exterior, interiors=()) -> float:
    """Planar area of the exterior minus its holes (Newell's formula)."""
    ext = clean_ring(exterior)
    area = 0.5 * np.linalg.norm(newell_normal(ext))
    for hole in interiors:
        area -= 0.5 * np.linalg.norm(newell_normal(clean_ring(hole)))
    return float(area)


def plane_frame(points: np.ndarray, exterior: np.ndarray, eps_plane: float, name: str):
    """Return (origin, u, v) spanning the best-fit plane, oriented by the exterior winding."""
    origin = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - origin)
    normal = vt[2]
    newell = newell_normal(exterior)
    if np.linalg.norm(newell) == 0:
        raise GeometryError(f"{name or 'polygon'}: zero-area exterior ring")
    if normal @ newell < 0:
        normal = -normal
    dev = np.abs((points - origin) @ normal).max()
    if dev > eps_plane:
        raise GeometryError(f"{name or 'polygon'}: non-planar by {dev:.4g} m (> {eps_plane:g})")
    u = vt[0]
    v = np.cross(normal, u)
    return origin, u, v


def _signed_area(p: np.ndarray) -> float:
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _segments_cross(p1, p2, p3, p4, tol) -> bool:
    d1, d2 = _orient(p3, p4, p1), _orient(p3, p4, p2)
    d3, d4 = _orient(p1, p2, p3), _orient(p1, p2, p4)
    if ((d1 > tol and d2 < -tol) or (d1 < -tol and d2 > tol)) and (
        (d3 > tol and d4 < -tol) or (d3 < -tol and d4 > tol)
    ):
        return True
    return False


def _check_simple(ring2d: np.ndarray, tol: float, name: str) -> None:
    n = len(ring2d)
    for i in range(n):
        a, b = ring2d[i], ring2d[(i + 1) % n]
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_cross(a, b, ring2d[j], ring2d[(j + 1) % n], tol):
                raise GeometryError(f"{name or 'polygon'}: self-intersecting ring")


def _point_in_ring(pt, ring2d: np.ndarray) -> bool:
    inside = False
    n = len(ring2d)
    for i in range(n):
        a, b = ring2d[i], ring2d[(i + 1) % n]
        if (a[1] > pt[1]) != (b[1] > pt[1]):
            x = a[0] + (pt[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
            if x > pt[0]:
                inside = not inside
    return inside


def _bridge(outer: list[int], hole: list[int], xy: np.ndarray, tol: float) -> list[int]:
    """Splice ``hole`` into ``outer`` through a mutually visible vertex pair."""
    mi = max(range(len(hole)), key=lambda i: (xy[hole[i], 0], -xy[hole[i], 1]))
    m = xy[hole[mi]]
    best_x, best_edge = np.inf, None
    n = len(outer)
    for i in range(n):
        a, b = xy[outer[i]], xy[outer[(i + 1) % n]]
        if (a[1] - m[1]) * (b[1] - m[1]) > 0 or a[1] == b[1]:
            continue
        x = a[0] + (m[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
        if x >= m[0] - tol and x < best_x:
            best_x, best_edge = x, i
    if best_edge is None:
        raise GeometryError("hole is not inside the exterior ring")
    i0, i1 = best_edge, (best_edge + 1) % n
    hit = np.array([best_x, m[1]])
    if np.allclose(xy[outer[i0]], hit, atol=tol):
        p = i0
    elif np.allclose(xy[outer[i1]], hit, atol=tol):
        p = i1
    else:
        p = i0 if xy[outer[i0], 0] > xy[outer[i1], 0] else i1
        tri = (m, hit, xy[outer[p]])
        best = None
        for k in range(n):
            if k == p:
                continue
            q = xy[outer[k]]
            prev, nxt = xy[outer[k - 1]], xy[outer[(k + 1) % n]]
            if _orient(prev, q, nxt) > tol:
                continue  # convex vertices cannot block the bridge
            if _in_triangle(q, *tri, tol):
                ang = abs(np.arctan2(q[1] - m[1], q[0] - m[0]))
                key = (ang, np.hypot(*(q - m)))
                if best is None or key < best[0]:
                    best = (key, k)
        if best is not None:
            p = best[1]
    return outer[: p + 1] + hole[mi:] + hole[: mi + 1] + outer[p:]


def _in_triangle(p, a, b, c, tol) -> bool:
    d1, d2, d3 = _orient(a, b, p), _orient(b, c, p), _orient(c, a, p)
    has_neg = d1 < -tol or d2 < -tol or d3 < -tol
    has_pos = d1 > tol or d2 > tol or d3 > tol
    return not (has_neg and has_pos)


def _ear_clip(ring: list[int], xy: np.ndarray, tol: float) -> list[tuple[int, int, int]]:
    idx = list(ring)
    tris: list[tuple[int, int, int]] = []
    while len(idx) > 3:
        n = len(idx)
        chosen = None
        fallback = None
        for i in range(n):
            ia, ib, ic = idx[i - 1], idx[i], idx[(i + 1) % n]
            a, b, c = xy[ia], xy[ib], xy[ic]
            cross = _orient(a, b, c)
            if cross <= tol:
                if fallback is None and abs(cross) <= tol:
                    fallback = i
                continue
            blocked = False
            for j in idx:
                q = xy[j]
                if (q == a).all() or (q == b).all() or (q == c).all():
                    continue
                if _in_triangle(q, a, b, c, tol):
                    blocked = True
                    break
            if not blocked:
                chosen = i
                break
        if chosen is None:
            # Numerically stuck: drop a flat vertex first, otherwise the most convex one.
            if fallback is None:
                fallback = max(range(n), key=lambda i: _orient(xy[idx[i - 1]], xy[idx[i]], xy[idx[(i + 1) % n]]))
            chosen = fallback
        tris.append((idx[chosen - 1], idx[chosen], idx[(chosen + 1) % n]))
        del idx[chosen]
    tris.append((idx[0], idx[1], idx[2]))
    return tris


def triangulate_polygon(exterior, interiors=(), eps_plane: float = EPS_PLANE, name: str = ""):
    """Triangulate one planar polygon with holes.

    Parameters
    ----------
    exterior : (n, 3) array-like
        Outer ring, closed or open.
    interiors : sequence of (m, 3) array-like
        Hole rings strictly inside the exterior.
    eps_plane : float
        Maximum vertex distance from the best-fit plane, in meters.
    name : str
        Entity identifier used in error messages.

    Returns
    -------
    points : (v, 3) ndarray
        Exterior vertices followed by each hole's vertices.
    triangles : (v + 2h - 2, 3) ndarray of int
        Vertex index triples, wound like the exterior ring.
    """
    ext = clean_ring(exterior, name)
    holes = [clean_ring(h, name) for h in interiors]
    points = np.concatenate([ext] + holes, axis=0)
    origin, u, v = plane_frame(points, ext, eps_plane, name)
    xy = np.stack([(points - origin) @ u, (points - origin) @ v], axis=1)
    extent = float(np.ptp(xy, axis=0).max())
    tol = 1e-12 * max(extent, 1.0) ** 2

    rings, start = [], 0
    for r in [ext] + holes:
        rings.append(list(range(start, start + len(r))))
        start += len(r)
    for k, r in enumerate(rings):
        _check_simple(xy[r], tol, name)
        area = _signed_area(xy[r])
        if (k == 0 and area < 0) or (k > 0 and area > 0):
            rings[k] = r[::-1]
    for r in rings[1:]:
        if not all(_point_in_ring(xy[i], xy[rings[0]]) for i in r):
            raise GeometryError(f"{name or 'polygon'}: interior ring outside exterior")

    outer = rings[0]
    for hole in sorted(rings[1:], key=lambda r: -xy[r, 0].max()):
        outer = _bridge(outer, hole, xy, tol)
    tris = np.asarray(_ear_clip(outer, xy, tol), dtype=np.int64)
    return points, tris


def triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    a, b, c = (vertices[triangles[:, k]] for k in range(3))
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
