"""Pinhole camera views and the plain-text camera file.

Camera file: one view per non-comment line, whitespace separated::

    view_id  K(9 floats, row-major)  E(12 floats, row-major [R|t])  width  height

``E`` maps world points to camera coordinates; the camera looks down +z with
+x right and +y down in the image.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class CameraView:
    view_id: int
    K: np.ndarray  # (3, 3)
    E: np.ndarray  # (3, 4) world -> camera
    width: int
    height: int

    def __post_init__(self):
        K = np.asarray(self.K, dtype=np.float64).reshape(3, 3)
        E = np.asarray(self.E, dtype=np.float64)
        E = E[:3].reshape(3, 4)
        if abs(K[1, 0]) + abs(K[2, 0]) + abs(K[2, 1]) > 0 or K[0, 0] <= 0 or K[1, 1] <= 0:
            raise ValueError(f"view {self.view_id}: K must be upper-triangular with positive focals")
        R = E[:, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6) or np.linalg.det(R) < 0:
            raise ValueError(f"view {self.view_id}: extrinsic rotation is not proper orthonormal")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"view {self.view_id}: image size must be positive")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "E", E)

    @property
    def R(self) -> np.ndarray:
        return self.E[:, :3]

    @property
    def t(self) -> np.ndarray:
        return self.E[:, 3]

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @classmethod
    def look_at(cls, view_id: int, eye, target, width: int, height: int, focal: float,
                up=(0.0, 0.0, 1.0)) -> "CameraView":
        eye, target, up = (np.asarray(v, dtype=np.float64) for v in (eye, target, up))
        z = target - eye
        z /= np.linalg.norm(z)
        x = np.cross(z, up)
        if np.linalg.norm(x) < 1e-9:
            x = np.cross(z, [0.0, 1.0, 0.0])
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        R = np.stack([x, y, z])
        K = np.array([[focal, 0, width / 2.0], [0, focal, height / 2.0], [0, 0, 1.0]])
        return cls(view_id, K, np.hstack([R, (-R @ eye)[:, None]]), width, height)

    def pixel_rays(self) -> tuple[np.ndarray, np.ndarray]:
        """One ray per pixel center, row-major.

        Directions are scaled so their camera-frame z component is 1, which
        makes the ray parameter equal to camera depth.
        """
        v, u = np.mgrid[0 : self.height, 0 : self.width]
        pix = np.stack([u.ravel() + 0.5, v.ravel() + 0.5, np.ones(u.size)], axis=1)
        d_cam = pix @ np.linalg.inv(self.K).T
        d_cam /= d_cam[:, 2:3]
        dirs = d_cam @ self.R
        origins = np.broadcast_to(self.center, dirs.shape).copy()
        return origins, dirs

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Project world points to pixel coordinates; returns ``(uv, depth)``.

        Points at or behind the camera plane get ``uv = nan``.
        """
        cam = np.asarray(points, dtype=np.float64) @ self.R.T + self.t
        depth = cam[:, 2]
        uv = np.full((len(cam), 2), np.nan)
        ok = depth > 0
        proj = cam[ok] @ self.K.T
        uv[ok] = proj[:, :2] / proj[:, 2:3]
        return uv, depth

    def to_line(self) -> str:
        vals = [str(self.view_id)] + [repr(float(x)) for x in self.K.ravel()]
        vals += [repr(float(x)) for x in self.E.ravel()] + [str(self.width), str(self.height)]
        return " ".join(vals)


def read_cameras(path: str | Path) -> list[CameraView]:
    views = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if len(tok) != 24:
            raise ValueError(f"{path}:{lineno}: expected 24 fields, got {len(tok)}")
        views.append(CameraView(
            int(tok[0]),
            np.array(tok[1:10], dtype=np.float64).reshape(3, 3),
            np.array(tok[10:22], dtype=np.float64).reshape(3, 4),
            int(tok[22]),
            int(tok[23]),
        ))
    ids = [v.view_id for v in views]
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate view ids")
    return sorted(views, key=lambda v: v.view_id)


def write_cameras(path: str | Path, views: list[CameraView]) -> None:
    lines = ["# view_id K[9] E[12] width height"] + [v.to_line() for v in views]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
