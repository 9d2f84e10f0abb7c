"""Nearest-hit ray queries against a triangle mesh.

Both the BVH and the exhaustive path evaluate the same watertight
ray/triangle test on the same operands, so they agree bit for bit. Ties at
exactly equal depth go to the lowest face index.
"""

from __future__ import annotations

import numpy as np

T_MIN = 1e-9
LEAF_SIZE = 4


def intersect_pairs(o, d, v0, v1, v2, t_min: float = T_MIN) -> np.ndarray:
    """Watertight ray/triangle intersection for row-aligned pairs.

    Follows the shear-and-scale formulation of Woop, Benthin and Wald (2013):
    the edge functions are evaluated in a ray-aligned frame, so a ray through
    a shared edge hits at least one of the two neighbouring triangles.
    Triangles are two-sided. Returns the ray parameter, ``inf`` on a miss.
    """
    n = len(o)
    rows = np.arange(n)
    kz = np.abs(d).argmax(axis=1)
    kx = (kz + 1) % 3
    ky = (kx + 1) % 3
    flip = d[rows, kz] < 0
    kx, ky = np.where(flip, ky, kx), np.where(flip, kx, ky)

    dz = d[rows, kz]
    sx = d[rows, kx] / dz
    sy = d[rows, ky] / dz
    sz = 1.0 / dz

    a, b, c = v0 - o, v1 - o, v2 - o
    az, bz, cz = a[rows, kz], b[rows, kz], c[rows, kz]
    ax = a[rows, kx] - sx * az
    ay = a[rows, ky] - sy * az
    bx = b[rows, kx] - sx * bz
    by = b[rows, ky] - sy * bz
    cx = c[rows, kx] - sx * cz
    cy = c[rows, ky] - sy * cz

    u = cx * by - cy * bx
    v = ax * cy - ay * cx
    w = bx * ay - by * ax
    miss = ((u < 0) | (v < 0) | (w < 0)) & ((u > 0) | (v > 0) | (w > 0))
    det = u + v + w
    miss |= det == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (u * (sz * az) + v * (sz * bz) + w * (sz * cz)) / det
    miss |= ~(t > t_min)
    return np.where(miss, np.inf, t)


class MeshBVH:
    """Binary median-split bounding volume hierarchy over a subset of faces."""

    def __init__(self, v0: np.ndarray, v1: np.ndarray, v2: np.ndarray, face_ids=None,
                 leaf_size: int = LEAF_SIZE):
        self.v0, self.v1, self.v2 = (np.ascontiguousarray(v, dtype=np.float64) for v in (v0, v1, v2))
        self.face_ids = np.arange(len(v0)) if face_ids is None else np.asarray(face_ids, dtype=np.int64)
        n = len(self.face_ids)
        lo = np.minimum(np.minimum(self.v0, self.v1), self.v2)
        hi = np.maximum(np.maximum(self.v0, self.v1), self.v2)
        cent = (lo + hi) / 2.0

        bmin, bmax, left, right, start, count = [], [], [], [], [], []
        order = np.arange(n)

        def build(s: int, e: int) -> int:
            idx = order[s:e]
            node = len(bmin)
            bmin.append(lo[idx].min(axis=0) if e > s else np.zeros(3))
            bmax.append(hi[idx].max(axis=0) if e > s else np.zeros(3))
            left.append(-1)
            right.append(-1)
            start.append(s)
            count.append(e - s)
            if e - s <= leaf_size:
                return node
            c = cent[idx]
            axis = int(np.ptp(c, axis=0).argmax())
            # stable ordering keeps the build deterministic for equal centroids
            order[s:e] = idx[np.lexsort((idx, c[:, axis]))]
            mid = (s + e) // 2
            left[node] = build(s, mid)
            right[node] = build(mid, e)
            count[node] = 0
            return node

        if n:
            build(0, n)
        self.order = order
        pad_abs = 1e-9 * max(1.0, float(np.abs(np.concatenate([lo, hi])).max()) if n else 1.0)
        self.bmin = np.asarray(bmin, dtype=np.float64).reshape(-1, 3) - pad_abs
        self.bmax = np.asarray(bmax, dtype=np.float64).reshape(-1, 3) + pad_abs
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.start = np.asarray(start, dtype=np.int64)
        self.count = np.asarray(count, dtype=np.int64)

    @classmethod
    def from_mesh(cls, mesh, faces=None) -> "MeshBVH":
        faces = np.arange(mesh.n_faces) if faces is None else np.asarray(faces, dtype=np.int64)
        tri = mesh.triangles[faces]
        v = mesh.vertices
        return cls(v[tri[:, 0]], v[tri[:, 1]], v[tri[:, 2]], faces)

    @property
    def n_faces(self) -> int:
        return len(self.face_ids)

    def _slab(self, o, inv, nodes):
        t1 = (self.bmin[nodes] - o) * inv
        t2 = (self.bmax[nodes] - o) * inv
        tlo = np.fmin(t1, t2)
        thi = np.fmax(t1, t2)
        return np.fmax.reduce(tlo, axis=1), np.fmin.reduce(thi, axis=1)

    def intersect(self, origins: np.ndarray, dirs: np.ndarray):
        """Nearest hit per ray: ``(depth, face_id)`` with ``(inf, -1)`` on a miss."""
        origins = np.asarray(origins, dtype=np.float64)
        dirs = np.asarray(dirs, dtype=np.float64)
        nr = len(origins)
        best_t = np.full(nr, np.inf)
        best_f = np.full(nr, -1, dtype=np.int64)
        if self.n_faces == 0 or nr == 0:
            return best_t, best_f
        with np.errstate(divide="ignore"):
            inv = 1.0 / dirs

        pr = np.arange(nr)
        pn = np.zeros(nr, dtype=np.int64)
        while pr.size:
            with np.errstate(invalid="ignore"):
                tn, tf = self._slab(origins[pr], inv[pr], pn)
            keep = (tn <= tf) & (tf >= T_MIN) & (tn <= best_t[pr])
            pr, pn = pr[keep], pn[keep]
            leaf = self.left[pn] < 0
            lr, ln = pr[leaf], pn[leaf]
            if lr.size:
                cnt = self.count[ln]
                rr = np.repeat(lr, cnt)
                base = np.repeat(np.cumsum(cnt) - cnt, cnt)
                slot = np.repeat(self.start[ln], cnt) + (np.arange(rr.size) - base)
                local = self.order[slot]
                t = intersect_pairs(origins[rr], dirs[rr], self.v0[local], self.v1[local], self.v2[local])
                hit = np.isfinite(t)
                self._merge(best_t, best_f, rr[hit], t[hit], self.face_ids[local[hit]])
            ir, inn = pr[~leaf], pn[~leaf]
            pr = np.concatenate([ir, ir])
            pn = np.concatenate([self.left[inn], self.right[inn]])
        return best_t, best_f

    @staticmethod
    def _merge(best_t, best_f, rays, t, faces) -> None:
        if rays.size == 0:
            return
        o = np.lexsort((faces, t, rays))
        rays, t, faces = rays[o], t[o], faces[o]
        first = np.ones(rays.size, dtype=bool)
        first[1:] = rays[1:] != rays[:-1]
        rays, t, faces = rays[first], t[first], faces[first]
        better = (t < best_t[rays]) | ((t == best_t[rays]) & (faces < best_f[rays]))
        best_t[rays[better]] = t[better]
        best_f[rays[better]] = faces[better]

    def intersect_exhaustive(self, origins: np.ndarray, dirs: np.ndarray, chunk: int = 1 << 17):
        """Same contract as :meth:`intersect`, testing every face against every ray."""
        origins = np.asarray(origins, dtype=np.float64)
        dirs = np.asarray(dirs, dtype=np.float64)
        nr, nf = len(origins), self.n_faces
        best_t = np.full(nr, np.inf)
        best_f = np.full(nr, -1, dtype=np.int64)
        if nf == 0 or nr == 0:
            return best_t, best_f
        # face_ids ascend in the original index, so argmin's first-min rule is the tie rule
        by_id = np.argsort(self.face_ids, kind="stable")
        v0, v1, v2, ids = self.v0[by_id], self.v1[by_id], self.v2[by_id], self.face_ids[by_id]
        step = max(1, chunk // nf)
        for s in range(0, nr, step):
            e = min(nr, s + step)
            k = e - s
            o = np.repeat(origins[s:e], nf, axis=0)
            d = np.repeat(dirs[s:e], nf, axis=0)
            t = intersect_pairs(o, d, np.tile(v0, (k, 1)), np.tile(v1, (k, 1)), np.tile(v2, (k, 1)))
            t = t.reshape(k, nf)
            j = t.argmin(axis=1)
            tj = t[np.arange(k), j]
            hit = np.isfinite(tj)
            best_t[s:e] = tj
            best_f[s:e] = np.where(hit, ids[j], -1)
        return best_t, best_f
