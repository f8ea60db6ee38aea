"""Shared test helpers: finite-difference gradients and tiny fixtures."""

import numpy as np
import pytest

from ppcnet.meshio import Mesh
from ppcnet.pointcloud import PointCloud


def finite_difference(fn, arrays, h=1e-5):
    """Central-difference gradient of fn() with respect to each array.

    fn takes no arguments and reads the arrays' current contents; they are
    perturbed in place one coordinate at a time.
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn()
            flat[i] = orig - h
            fm = fn()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def rel_error(a, b) -> float:
    """Norm-relative gradient discrepancy. When both sides are numerically
    zero (e.g. a bias under batch statistics, which absorb constant
    shifts) the comparison is absolute instead."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    diff = float(np.linalg.norm(a - b))
    if denom < 1e-6:
        return diff
    return diff / denom


def unit_rows(rng, n):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def random_cloud(rng, n) -> PointCloud:
    return PointCloud(rng.standard_normal((n, 3)), unit_rows(rng, n))


@pytest.fixture
def square_mesh():
    """Unit square split into two equal-area triangles."""
    vertices = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0],
                         [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]])
    faces = np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int32)
    return Mesh(vertices=vertices, faces=faces, name="square")


@pytest.fixture
def cube_mesh():
    """Axis-aligned unit cube, two triangles per face."""
    corners = np.array([[x, y, z] for x in (0.0, 1.0) for y in (0.0, 1.0) for z in (0.0, 1.0)])
    quads = [
        (0, 1, 3, 2), (4, 6, 7, 5),  # x = 0, x = 1
        (0, 4, 5, 1), (2, 3, 7, 6),  # y = 0, y = 1
        (0, 2, 6, 4), (1, 5, 7, 3),  # z = 0, z = 1
    ]
    faces = []
    for a, b, c, d in quads:
        faces.append((a, b, c))
        faces.append((a, c, d))
    return Mesh(vertices=corners, faces=np.array(faces, dtype=np.int32), name="cube")
