"""Per-view alpha-compositing weights for frozen Gaussians.

With geometry and opacity fixed, rendering an identity code image is a
sparse linear map ``E = W @ codes`` where row ``u`` of ``W`` holds
``alpha_j(u) * prod_{k before j} (1 - alpha_k(u))`` over Gaussians sorted
front to back. ``W`` is computed once per view and cached.

Cache layout (little-endian)::

    magic "CSWGHT\\0\\0", version uint32, height, width, n_gaussians (uint64 each)
    then for every pixel in row-major order:
        count uint32, followed by count x (index int32, weight float32)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from citysplat.binio import pack_header, unpack_header
from citysplat.identity.scene import GaussianScene
from citysplat.raycast.camera import CameraView

log = logging.getLogger(__name__)

ALPHA_MIN = 1.0 / 255.0
LOWPASS = 0.3
NEAR = 0.01
WEIGHT_MAGIC = b"CSWGHT\0\0"


@dataclass
class CompositeWeights:
    shape: tuple[int, int]
    matrix: sp.csr_matrix  # (H*W, N); columns within a row are in depth order

    @property
    def n_pixels(self) -> int:
        return self.shape[0] * self.shape[1]

    def mass(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    def valid(self, w_min: float) -> np.ndarray:
        return self.mass() > w_min

    def pixel(self, row: int, col: int) -> list[tuple[int, float]]:
        p = row * self.shape[1] + col
        s, e = self.matrix.indptr[p], self.matrix.indptr[p + 1]
        return list(zip(self.matrix.indices[s:e].tolist(), self.matrix.data[s:e].tolist()))

    def render(self, codes: np.ndarray) -> np.ndarray:
        """``E(u) = sum_j w_j(u) e_j``, shaped ``(H, W, D)``; zero where nothing contributes."""
        return (self.matrix @ codes).reshape(*self.shape, -1)

    def save(self, path: str | Path) -> None:
        m = self.matrix
        counts = np.diff(m.indptr)
        words = np.empty(self.n_pixels + 2 * m.nnz, dtype="<u4")
        starts = np.arange(self.n_pixels) + 2 * m.indptr[:-1]
        words[starts] = counts
        pair_base = np.repeat(starts + 1, counts) + 2 * (np.arange(m.nnz) - np.repeat(m.indptr[:-1], counts))
        words[pair_base] = m.indices.astype("<i4").view("<u4")
        words[pair_base + 1] = m.data.astype("<f4").view("<u4")
        with open(path, "wb") as f:
            f.write(pack_header(WEIGHT_MAGIC, self.shape[0], self.shape[1], m.shape[1]))
            f.write(words.tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "CompositeWeights":
        buf = Path(path).read_bytes()
        (h, w, n), off = unpack_header(buf, WEIGHT_MAGIC, 3)
        words = np.frombuffer(buf, dtype="<u4", offset=off)
        counts = np.empty(h * w, dtype=np.int64)
        pos = 0
        # counts are interleaved with payload, so walk pixel by pixel
        for p in range(h * w):
            c = int(words[pos])
            counts[p] = c
            pos += 1 + 2 * c
        indptr = np.concatenate([[0], np.cumsum(counts)])
        starts = np.arange(h * w) + 2 * indptr[:-1]
        pair_base = np.repeat(starts + 1, counts) + 2 * (np.arange(indptr[-1]) - np.repeat(indptr[:-1], counts))
        idx = words[pair_base].view("<i4").astype(np.int32)
        data = words[pair_base + 1].view("<f4").astype(np.float64)
        return cls((h, w), sp.csr_matrix((data, idx, indptr), shape=(h * w, n)))


def project_covariances(view: CameraView, scene: GaussianScene, lowpass: float = LOWPASS):
    """Image-plane mean, 2D covariance and depth of every Gaussian (first-order perspective)."""
    cam = scene.centers @ view.R.T + view.t
    x, y, z = cam.T
    K = view.K
    fx, fy, s = K[0, 0], K[1, 1], K[0, 1]
    zsafe = np.where(np.abs(z) > 1e-12, z, 1e-12)
    J = np.zeros((len(z), 2, 3))
    J[:, 0, 0] = fx / zsafe
    J[:, 0, 1] = s / zsafe
    J[:, 0, 2] = -(fx * x + s * y) / zsafe**2
    J[:, 1, 1] = fy / zsafe
    J[:, 1, 2] = -fy * y / zsafe**2
    cov_cam = view.R @ scene.covariances() @ view.R.T
    cov2d = J @ cov_cam @ J.transpose(0, 2, 1) + lowpass * np.eye(2)
    proj = cam @ K.T
    mean2d = proj[:, :2] / zsafe[:, None]
    return mean2d, cov2d, z


def precompute_weights(view: CameraView, scene: GaussianScene, alpha_min: float = ALPHA_MIN,
                       lowpass: float = LOWPASS, near: float = NEAR) -> CompositeWeights:
    """Front-to-back compositing weights of every Gaussian at every pixel center."""
    h, w = view.shape
    mean2d, cov2d, depth = project_covariances(view, scene, lowpass)
    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] * cov2d[:, 1, 0]

    pix, gid, alpha = [], [], []
    for j in np.flatnonzero(depth > near):
        if not np.isfinite(det[j]) or det[j] <= 0:
            log.warning("Gaussian %d has a singular projected covariance in view %d; skipped", j, view.view_id)
            continue
        a, b, c = cov2d[j, 0, 0], cov2d[j, 0, 1], cov2d[j, 1, 1]
        lam = 0.5 * (a + c) + np.sqrt(max(0.25 * (a - c) ** 2 + b * b, 0.0))
        r = 3.0 * np.sqrt(lam)
        mu = mean2d[j]
        c0, c1 = int(np.floor(mu[0] - r - 0.5)), int(np.ceil(mu[0] + r - 0.5))
        r0, r1 = int(np.floor(mu[1] - r - 0.5)), int(np.ceil(mu[1] + r - 0.5))
        c0, r0 = max(c0, 0), max(r0, 0)
        c1, r1 = min(c1, w - 1), min(r1, h - 1)
        if c0 > c1 or r0 > r1:
            continue
        vv, uu = np.mgrid[r0 : r1 + 1, c0 : c1 + 1]
        du = uu.ravel() + 0.5 - mu[0]
        dv = vv.ravel() + 0.5 - mu[1]
        maha = (c * du * du - 2 * b * du * dv + a * dv * dv) / det[j]
        al = scene.opacities[j] * np.exp(-0.5 * maha)
        keep = (maha <= 9.0) & (al >= alpha_min)
        if keep.any():
            pix.append((vv.ravel() * w + uu.ravel())[keep])
            gid.append(np.full(int(keep.sum()), j))
            alpha.append(np.minimum(al[keep], 1.0))

    n = len(scene)
    if not pix:
        return CompositeWeights((h, w), sp.csr_matrix((h * w, n)))
    pix = np.concatenate(pix)
    gid = np.concatenate(gid)
    alpha = np.concatenate(alpha)
    order = np.lexsort((gid, depth[gid], pix))
    pix, gid, alpha = pix[order], gid[order], alpha[order]

    first = np.ones(pix.size, dtype=bool)
    first[1:] = pix[1:] != pix[:-1]
    group_start = np.maximum.accumulate(np.where(first, np.arange(pix.size), 0))
    rank = np.arange(pix.size) - group_start

    weights = np.empty_like(alpha)
    trans = np.ones(h * w)
    by_rank = np.argsort(rank, kind="stable")
    bounds = np.searchsorted(rank[by_rank], np.arange(rank.max() + 2))
    for r in range(rank.max() + 1):
        sel = by_rank[bounds[r] : bounds[r + 1]]
        p = pix[sel]
        weights[sel] = alpha[sel] * trans[p]
        trans[p] *= 1.0 - alpha[sel]

    indptr = np.concatenate([[0], np.cumsum(np.bincount(pix, minlength=h * w))])
    mat = sp.csr_matrix((weights, gid.astype(np.int32), indptr), shape=(h * w, n))
    return CompositeWeights((h, w), mat)
