"""Point-cloud geometry primitives.

A PointCloud is positions plus unit normals for one tablet instance. All
operations here are pure functions given an explicit rng, which is what
makes the shuffle-truncate downsampling scheme reproducible: one uniform
shuffle at the input, prefix truncation everywhere below it.
"""

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .meshio import Mesh, face_areas, face_normals

MAGIC = b"PPC1"
CHANNELS = 6


@dataclass
class PointCloud:
    positions: np.ndarray  # (N, 3) float64
    normals: np.ndarray    # (N, 3) float64, unit rows

    @property
    def size(self) -> int:
        return len(self.positions)

    def validate(self):
        if self.positions.shape != self.normals.shape or self.positions.ndim != 2:
            raise DataError("positions and normals must both be (N, 3)")
        if self.positions.shape[1] != 3:
            raise DataError("positions must have three columns")
        if self.size == 0:
            raise DataError("empty point cloud")
        norms = np.linalg.norm(self.normals, axis=1)
        if np.abs(norms - 1.0).max() > 1e-4:
            raise DataError("normals are not unit length")

    def copy(self) -> "PointCloud":
        return PointCloud(self.positions.copy(), self.normals.copy())


def sample_surface(mesh: Mesh, n: int, rng: np.random.Generator) -> PointCloud:
    """Draw n points area-uniformly over the mesh surface.

    Each triangle is chosen with probability proportional to its area and
    the point placed by uniform barycentric sampling. Point normals are
    the face normal of the source triangle.
    """
    if n < 1:
        raise DataError("need n >= 1 sample points")
    mesh.validate()
    areas = face_areas(mesh)
    total = areas.sum()
    if total <= 0.0:
        raise DataError("mesh has zero total surface area")
    cum = np.cumsum(areas)
    tri = np.searchsorted(cum, rng.random(n) * total, side="right")
    tri = np.minimum(tri, len(areas) - 1)

    v = mesh.vertices
    a = v[mesh.faces[tri, 0]]
    b = v[mesh.faces[tri, 1]]
    c = v[mesh.faces[tri, 2]]
    u = rng.random((n, 1))
    w = rng.random((n, 1))
    flip = (u + w) > 1.0
    u = np.where(flip, 1.0 - u, u)
    w = np.where(flip, 1.0 - w, w)
    positions = a + u * (b - a) + w * (c - a)
    normals = face_normals(mesh)[tri]
    return PointCloud(positions, normals)


def normalize(pc: PointCloud, rescale: bool = True) -> PointCloud:
    """Center at the centroid; optionally scale to unit max radius.

    Scaling discards absolute size, which may itself be informative, so it
    can be switched off. Normals are untouched.
    """
    pc.validate()
    centered = pc.positions - pc.positions.mean(axis=0)
    if rescale:
        radius = np.linalg.norm(centered, axis=1).max()
        if radius > 0.0:
            centered = centered / radius
    return PointCloud(centered, pc.normals.copy())


def jitter(pc: PointCloud, fraction: float, rng: np.random.Generator) -> PointCloud:
    """Add per-point, per-channel Gaussian noise to positions.

    The noise standard deviation for a channel is fraction times that
    channel's variance over the cloud. Normals are untouched.
    """
    if fraction < 0:
        raise DataError("jitter fraction must be >= 0")
    if fraction == 0.0:
        return pc.copy()
    sigma = fraction * pc.positions.var(axis=0)
    noise = rng.standard_normal(pc.positions.shape) * sigma
    return PointCloud(pc.positions + noise, pc.normals.copy())


def rotate_x_180(pc: PointCloud) -> PointCloud:
    """Rotate 180 degrees about the x-axis: (x, y, z) -> (x, -y, -z).

    Implemented as sign flips so applying it twice is bit-exact identity.
    """
    flip = np.array([1.0, -1.0, -1.0])
    return PointCloud(pc.positions * flip, pc.normals * flip)


def shuffle_truncate(pc: PointCloud, rng: np.random.Generator, m: int | None = None) -> PointCloud:
    """Uniformly permute the rows, optionally keeping only the first m.

    Any prefix of the shuffled order is a uniform random subset, which is
    the downsampling rule the pyramid relies on. Positions and normals are
    permuted together.
    """
    n = pc.size
    order = rng.permutation(n)
    if m is not None:
        if m < 1 or m > n:
            raise DataError(f"cannot truncate {n} points to {m}")
        order = order[:m]
    return PointCloud(pc.positions[order], pc.normals[order])


def save_cloud(pc: PointCloud, path, provenance: dict | None = None):
    """Write the flat binary format: magic, u32 N, u32 channels, then
    N x 6 little-endian float32 rows (x, y, z, nx, ny, nz). Provenance
    goes in a JSON sidecar next to the file."""
    path = Path(path)
    rows = np.hstack([pc.positions, pc.normals]).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", pc.size, CHANNELS))
        fh.write(rows.tobytes())
    if provenance is not None:
        sidecar = path.with_suffix(path.suffix + ".json")
        sidecar.write_text(json.dumps(provenance, indent=2, sort_keys=True) + "\n")


def load_cloud(path) -> tuple[PointCloud, dict | None]:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise DataError(f"not a point-cloud file: {path}")
        n, channels = struct.unpack("<II", fh.read(8))
        if channels != CHANNELS:
            raise DataError(f"expected {CHANNELS} channels, found {channels}: {path}")
        raw = fh.read(n * channels * 4)
    if len(raw) != n * channels * 4:
        raise DataError(f"truncated point-cloud file: {path}")
    rows = np.frombuffer(raw, dtype="<f4").reshape(n, channels).astype(np.float64)
    sidecar = path.with_suffix(path.suffix + ".json")
    provenance = json.loads(sidecar.read_text()) if sidecar.exists() else None
    return PointCloud(rows[:, :3].copy(), rows[:, 3:].copy()), provenance
