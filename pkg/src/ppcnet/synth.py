"""Synthetic desk-scale tablet generator.

The real scan corpus cannot ship with the toolkit, so these procedural
stand-ins exercise every pipeline stage: rounded-box bodies with one
flatter face, wedge-shaped dents whose density and placement encode the
class, and an optional circular stamp relief. The knobs are tuned so a
small network can separate the classes while a constant classifier
cannot; they are not claims about real tablets.
"""

from dataclasses import dataclass

import numpy as np

from .datasets import Instance, TaskDataset
from .errors import DataError
from .meshio import Mesh
from .pointcloud import PointCloud

# per-class wedge style for the 4-class period-like task: (count, radius,
# depth); spread far enough apart that the surface roughness scale separates
# the classes even at desk-scale point counts
PERIOD_STYLES = (
    (12, 0.22, 0.018),
    (45, 0.13, 0.028),
    (110, 0.085, 0.038),
    (240, 0.055, 0.050),
)
SYNTH_TASKS = ("period", "seal", "left_sign", "front")


@dataclass
class TabletShape:
    half_x: float = 1.0
    half_y: float = 0.65
    half_z: float = 0.18
    roundness: float = 5.0     # superellipsoid exponent; higher = boxier
    front_flatten: float = 0.7  # scales down the front dome (z > 0)
    back_bulge: float = 0.45    # scales up the back dome (z < 0)
    grid: int = 20              # tessellation per cube face


def _superellipsoid_grid(shape: TabletShape):
    """Vertices and faces of a rounded box: six tessellated cube faces
    projected onto the superellipsoid |x/a|^p + |y/b|^p + |z/c|^p = 1."""
    g = shape.grid
    lin = np.linspace(-1.0, 1.0, g + 1)
    s, t = np.meshgrid(lin, lin, indexing="ij")
    s = s.ravel()
    t = t.ravel()
    ones = np.ones_like(s)
    faces_uv = [
        np.stack([ones, s, t], axis=1), np.stack([-ones, s, t], axis=1),
        np.stack([s, ones, t], axis=1), np.stack([s, -ones, t], axis=1),
        np.stack([s, t, ones], axis=1), np.stack([s, t, -ones], axis=1),
    ]
    verts = []
    tris = []
    offset = 0
    for u in faces_uv:
        p = shape.roundness
        radius = (np.abs(u[:, 0]) ** p + np.abs(u[:, 1]) ** p + np.abs(u[:, 2]) ** p) ** (-1.0 / p)
        v = u * radius[:, None] * np.array([shape.half_x, shape.half_y, shape.half_z])
        verts.append(v)
        idx = np.arange((g + 1) * (g + 1)).reshape(g + 1, g + 1) + offset
        a = idx[:-1, :-1].ravel()
        b = idx[1:, :-1].ravel()
        c = idx[1:, 1:].ravel()
        d = idx[:-1, 1:].ravel()
        tris.append(np.stack([a, b, c], axis=1))
        tris.append(np.stack([a, c, d], axis=1))
        offset += (g + 1) * (g + 1)
    vertices = np.concatenate(verts)
    faces = np.concatenate(tris)
    # orient all triangles outward (the body is star-shaped around the origin)
    va, vb, vc = vertices[faces[:, 0]], vertices[faces[:, 1]], vertices[faces[:, 2]]
    outward = np.einsum("ij,ij->i", np.cross(vb - va, vc - va), (va + vb + vc) / 3.0)
    swap = outward < 0
    faces[swap, 1], faces[swap, 2] = faces[swap, 2].copy(), faces[swap, 1].copy()
    return vertices, faces


def _apply_face_curvature(vertices, shape: TabletShape):
    """Flatten the front dome, deepen the back one; the asymmetry is what
    makes the orientation task learnable from geometry alone."""
    x, y, z = vertices[:, 0], vertices[:, 1], vertices[:, 2]
    dome = np.clip(1.0 - (x / shape.half_x) ** 2, 0.0, None) * \
        np.clip(1.0 - (y / shape.half_y) ** 2, 0.0, None)
    factor = np.where(z > 0, 1.0 - shape.front_flatten * dome, 1.0 + shape.back_bulge * dome)
    out = vertices.copy()
    out[:, 2] = z * factor
    return out


def _apply_wedges(vertices, centers, axes, radii, depths):
    """Gaussian dents: each wedge displaces nearby vertices inward along
    its axis. Negative depth makes a relief instead."""
    out = vertices.copy()
    for c, n, r, d in zip(centers, axes, radii, depths):
        dsq = ((out - c) ** 2).sum(axis=1)
        out -= (d * np.exp(-dsq / (2.0 * r * r)))[:, None] * n
    return out


def _face_wedges(rng, shape, count, radius, depth, side):
    """Wedge parameters on one face: 'front', 'back', or 'left'."""
    centers = np.zeros((count, 3))
    axes = np.zeros((count, 3))
    if side in ("front", "back"):
        centers[:, 0] = rng.uniform(-0.8 * shape.half_x, 0.8 * shape.half_x, count)
        centers[:, 1] = rng.uniform(-0.8 * shape.half_y, 0.8 * shape.half_y, count)
        sign = 1.0 if side == "front" else -1.0
        centers[:, 2] = sign * shape.half_z
        axes[:, 2] = sign
    else:
        centers[:, 0] = -shape.half_x
        centers[:, 1] = rng.uniform(-0.7 * shape.half_y, 0.7 * shape.half_y, count)
        centers[:, 2] = rng.uniform(-0.6 * shape.half_z, 0.6 * shape.half_z, count)
        axes[:, 0] = -1.0
    radii = np.full(count, radius)
    depths = np.full(count, depth)
    return centers, axes, radii, depths


def _seal_stamp(shape):
    """Circular relief on the front lower-right: a raised rim of bumps
    plus a center boss (negative depths displace outward)."""
    center = np.array([0.45 * shape.half_x, -0.35 * shape.half_y, shape.half_z])
    angles = np.linspace(0.0, 2.0 * np.pi, 9)[:-1]
    ring = center + 0.16 * np.stack([np.cos(angles), np.sin(angles), np.zeros(8)], axis=1)
    centers = np.vstack([ring, center[None, :]])
    axes = np.tile(np.array([0.0, 0.0, 1.0]), (9, 1))
    radii = np.full(9, 0.06)
    depths = np.full(9, -0.035)
    return centers, axes, radii, depths


def tablet_mesh(rng: np.random.Generator, name: str,
                wedge_count: int = 60, wedge_radius: float = 0.1,
                wedge_depth: float = 0.025, back_wedges: bool = True,
                seal: bool = False, left_wedges: int = 0,
                shape: TabletShape | None = None) -> Mesh:
    """One synthetic tablet. Proportions vary a little per instance so no
    two tablets are congruent."""
    if shape is None:
        shape = TabletShape(
            half_x=1.0 * rng.uniform(0.9, 1.1),
            half_y=0.65 * rng.uniform(0.9, 1.1),
            half_z=0.18 * rng.uniform(0.9, 1.1),
        )
    vertices, faces = _superellipsoid_grid(shape)
    vertices = _apply_face_curvature(vertices, shape)

    groups = [_face_wedges(rng, shape, wedge_count, wedge_radius, wedge_depth, "front")]
    if back_wedges:
        groups.append(_face_wedges(rng, shape, wedge_count, wedge_radius, wedge_depth, "back"))
    if left_wedges:
        groups.append(_face_wedges(rng, shape, left_wedges, 0.05, 0.03, "left"))
    if seal:
        groups.append(_seal_stamp(shape))
    centers = np.concatenate([g[0] for g in groups])
    axes = np.concatenate([g[1] for g in groups])
    radii = np.concatenate([g[2] for g in groups])
    depths = np.concatenate([g[3] for g in groups])
    vertices = _apply_wedges(vertices, centers, axes, radii, depths)
    return Mesh(vertices=vertices, faces=faces.astype(np.int32), name=name)


def _task_mesh(task: str, label: int, rng, name: str) -> Mesh:
    if task == "period":
        count, radius, depth = PERIOD_STYLES[label]
        return tablet_mesh(rng, name, wedge_count=count, wedge_radius=radius,
                           wedge_depth=depth)
    if task == "seal":
        return tablet_mesh(rng, name, seal=bool(label))
    if task == "left_sign":
        return tablet_mesh(rng, name, left_wedges=25 if label else 0)
    # front: the class signal is the face asymmetry; the builder adds the
    # rotated sibling, so every tablet is generated the same way
    return tablet_mesh(rng, name)


def synth_generate(task: str, n_per_class: int, rng: np.random.Generator,
                   n_points: int = 2048, seed: int = 0) -> TaskDataset:
    """Procedural dataset for one task, balanced per class, with a seeded
    90/10 split (tablet-level for the front task)."""
    if task not in SYNTH_TASKS:
        raise DataError(f"unknown synthetic task {task!r}; choose from {SYNTH_TASKS}")
    if n_per_class < 1:
        raise DataError("need n_per_class >= 1")

    if task == "front":
        meshes = [_task_mesh(task, 1, rng, f"synth-front-{i:04d}") for i in range(n_per_class)]
        order = rng.permutation(n_per_class)
        n_test = max(1, int(round(0.1 * n_per_class))) if n_per_class > 1 else 0
        test_set = set(order[:n_test].tolist())
        instances = []
        train_idx, test_idx = [], []
        for i, mesh in enumerate(meshes):
            pos = len(instances)
            instances.append(Instance(mesh.name, 1, mesh, flip=False))
            instances.append(Instance(mesh.name, 0, mesh, flip=True))
            (test_idx if i in test_set else train_idx).extend([pos, pos + 1])
        return TaskDataset(task="synth-front", instances=instances, num_classes=2,
                           train_indices=np.array(train_idx), test_indices=np.array(test_idx),
                           n_points=n_points, sample_seed=seed)

    num_classes = 4 if task == "period" else 2
    instances = []
    for label in range(num_classes):
        for i in range(n_per_class):
            name = f"synth-{task}-{label}-{i:04d}"
            instances.append(Instance(name, label, _task_mesh(task, label, rng, name)))
    # hold out ~10% per class so the test set stays class-balanced
    train_idx, test_idx = [], []
    for label in range(num_classes):
        members = [i for i, inst in enumerate(instances) if inst.label == label]
        order = rng.permutation(len(members))
        n_test = max(1, int(round(0.1 * len(members)))) if len(members) > 1 else 0
        chosen = set(order[:n_test].tolist())
        for j, i in enumerate(members):
            (test_idx if j in chosen else train_idx).append(i)
    return TaskDataset(task=f"synth-{task}", instances=instances, num_classes=num_classes,
                       train_indices=np.array(train_idx), test_indices=np.array(test_idx),
                       n_points=n_points, sample_seed=seed)


def face_height_spread(pc: PointCloud) -> tuple[float, float]:
    """Flatness statistic: variance of z over the central patch of the
    front (z > 0) and back (z < 0) faces. A correctly oriented tablet has
    the smaller spread in front."""
    p = pc.positions
    central = (np.abs(p[:, 0]) < 0.5 * np.abs(p[:, 0]).max()) & \
        (np.abs(p[:, 1]) < 0.5 * np.abs(p[:, 1]).max())
    front = p[central & (p[:, 2] > 0), 2]
    back = p[central & (p[:, 2] < 0), 2]
    if len(front) < 2 or len(back) < 2:
        raise DataError("too few points for a flatness statistic")
    return float(front.var()), float(back.var())
