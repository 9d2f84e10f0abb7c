"""Frozen Gaussian primitives and their binary PLY point file.

Properties are read by name: ``x y z``, ``scale_0..2``, ``rot_0..3`` (w, x,
y, z) and ``opacity``; anything else (colour coefficients, normals) is
ignored. Files written here carry ``comment activated`` and store positive
scales and opacities in (0, 1]. Files without that comment follow the usual
3DGS training convention (log scales, logit opacities) and are activated on
load.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from citysplat.binio import pack_header, unpack_header

_PLY_TYPES = {
    "float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
    "uchar": "u1", "uint8": "u1", "char": "i1", "int8": "i1", "short": "<i2", "ushort": "<u2",
    "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4",
}
FIELDS = ["x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3", "opacity"]
CODES_MAGIC = b"CSCODES\0"
HEAD_MAGIC = b"CSHEAD\0\0"


@dataclass
class GaussianScene:
    centers: np.ndarray  # (N, 3)
    scales: np.ndarray  # (N, 3), positive
    rotations: np.ndarray  # (N, 4) unit quaternions (w, x, y, z)
    opacities: np.ndarray  # (N,), in (0, 1]

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64).reshape(-1, 3)
        n = len(self.centers)
        self.scales = np.asarray(self.scales, dtype=np.float64).reshape(n, 3)
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(n, 4)
        self.opacities = np.asarray(self.opacities, dtype=np.float64).reshape(n)
        if (self.scales <= 0).any():
            raise ValueError("Gaussian scales must be positive")
        if not np.allclose(np.linalg.norm(self.rotations, axis=1), 1.0, atol=1e-4):
            raise ValueError("Gaussian rotations must be unit quaternions")
        if ((self.opacities <= 0) | (self.opacities > 1)).any():
            raise ValueError("Gaussian opacities must lie in (0, 1]")

    def __len__(self) -> int:
        return len(self.centers)

    def rotation_matrices(self) -> np.ndarray:
        w, x, y, z = self.rotations.T
        return np.stack([
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ], axis=1)

    def covariances(self) -> np.ndarray:
        m = self.rotation_matrices() * self.scales[:, None, :]
        return m @ m.transpose(0, 2, 1)

    def save_ply(self, path: str | Path) -> None:
        n = len(self)
        header = ["ply", "format binary_little_endian 1.0", "comment activated", f"element vertex {n}"]
        header += [f"property float {f}" for f in FIELDS] + ["end_header"]
        data = np.concatenate(
            [self.centers, self.scales, self.rotations, self.opacities[:, None]], axis=1
        ).astype("<f4")
        with open(path, "wb") as f:
            f.write(("\n".join(header) + "\n").encode("ascii"))
            f.write(data.tobytes())

    @classmethod
    def load_ply(cls, path: str | Path) -> "GaussianScene":
        buf = Path(path).read_bytes()
        end = buf.find(b"end_header")
        if not buf.startswith(b"ply") or end < 0:
            raise ValueError(f"{path}: not a PLY file")
        body = buf.index(b"\n", end) + 1
        lines = buf[:body].decode("ascii").splitlines()
        if "format binary_little_endian 1.0" not in lines:
            raise ValueError(f"{path}: only binary little-endian PLY is supported")
        activated = "comment activated" in lines
        n, props, in_vertex = 0, [], False
        for ln in lines:
            tok = ln.split()
            if tok[:1] == ["element"]:
                in_vertex = tok[1] == "vertex"
                if in_vertex:
                    n = int(tok[2])
            elif tok[:1] == ["property"] and in_vertex:
                props.append((tok[2], _PLY_TYPES[tok[1]]))
        arr = np.frombuffer(buf, dtype=np.dtype(props), count=n, offset=body)
        missing = [f for f in FIELDS if f not in arr.dtype.names]
        if missing:
            raise ValueError(f"{path}: missing properties {missing}")
        col = lambda names: np.stack([arr[f].astype(np.float64) for f in names], axis=1)
        centers = col(FIELDS[:3])
        scales = col(FIELDS[3:6])
        rots = col(FIELDS[6:10])
        opac = arr["opacity"].astype(np.float64)
        if not activated:
            scales = np.exp(scales)
            opac = 1.0 / (1.0 + np.exp(-opac))
        rots /= np.linalg.norm(rots, axis=1, keepdims=True)
        return cls(centers, scales, rots, np.clip(opac, 1e-6, 1.0))


def save_identity(codes_path: str | Path, head_path: str | Path, codes: np.ndarray,
                  weight: np.ndarray, bias: np.ndarray, vocab: np.ndarray) -> None:
    """Codes sidecar (N x D float32) and classifier head (K x D weights, K bias, K vocab ids)."""
    with open(codes_path, "wb") as f:
        f.write(pack_header(CODES_MAGIC, *codes.shape))
        f.write(np.asarray(codes, dtype="<f4").tobytes())
    with open(head_path, "wb") as f:
        f.write(pack_header(HEAD_MAGIC, *weight.shape))
        f.write(np.asarray(weight, dtype="<f4").tobytes())
        f.write(np.asarray(bias, dtype="<f4").tobytes())
        f.write(np.asarray(vocab, dtype="<i8").tobytes())


def load_identity(codes_path: str | Path, head_path: str | Path):
    buf = Path(codes_path).read_bytes()
    (n, d), off = unpack_header(buf, CODES_MAGIC, 2)
    codes = np.frombuffer(buf, "<f4", n * d, off).reshape(n, d).astype(np.float64)
    buf = Path(head_path).read_bytes()
    (k, d2), off = unpack_header(buf, HEAD_MAGIC, 2)
    weight = np.frombuffer(buf, "<f4", k * d2, off).reshape(k, d2).astype(np.float64)
    off += k * d2 * 4
    bias = np.frombuffer(buf, "<f4", k, off).astype(np.float64)
    off += k * 4
    vocab = np.frombuffer(buf, "<i8", k, off).astype(np.int64)
    return codes, weight, bias, vocab
