"""Triangle-mesh ingestion: ASCII/binary PLY and OBJ.

Meshes are cleaned on load: degenerate (zero-area) faces are dropped and
polygon faces are fan-triangulated. Only geometry is read; color and
texture data are ignored.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, MeshFormatError

# PLY property type -> struct format char and byte size
_PLY_TYPES = {
    "char": ("b", 1), "int8": ("b", 1),
    "uchar": ("B", 1), "uint8": ("B", 1),
    "short": ("h", 2), "int16": ("h", 2),
    "ushort": ("H", 2), "uint16": ("H", 2),
    "int": ("i", 4), "int32": ("i", 4),
    "uint": ("I", 4), "uint32": ("I", 4),
    "float": ("f", 4), "float32": ("f", 4),
    "double": ("d", 8), "float64": ("d", 8),
}


@dataclass
class Mesh:
    """Triangle mesh in model units.

    vertices: (V, 3) float64, faces: (T, 3) int32 vertex indices.
    """

    vertices: np.ndarray
    faces: np.ndarray
    name: str = ""

    def validate(self):
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise DataError("vertices must be a (V, 3) array")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise DataError("faces must be a (T, 3) array")
        if len(self.faces) == 0:
            raise DataError("mesh has no faces")
        if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
            raise DataError("face index out of range")


def face_areas(mesh: Mesh) -> np.ndarray:
    """Area of each triangle."""
    v = mesh.vertices
    a, b, c = v[mesh.faces[:, 0]], v[mesh.faces[:, 1]], v[mesh.faces[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def face_normals(mesh: Mesh) -> np.ndarray:
    """Unit normal of each triangle, oriented by face winding."""
    v = mesh.vertices
    a, b, c = v[mesh.faces[:, 0]], v[mesh.faces[:, 1]], v[mesh.faces[:, 2]]
    n = np.cross(b - a, c - a)
    norms = np.linalg.norm(n, axis=1, keepdims=True)
    return n / np.maximum(norms, 1e-300)


def drop_degenerate_faces(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Remove zero-area faces. Threshold scales with the mesh extent."""
    if len(faces) == 0:
        return faces
    a = vertices[faces[:, 0]]
    b = vertices[faces[:, 1]]
    c = vertices[faces[:, 2]]
    areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    extent = float(vertices.max(initial=0.0) - vertices.min(initial=0.0)) or 1.0
    return faces[areas > 1e-12 * extent * extent]


def load_mesh(path) -> Mesh:
    """Read a PLY or OBJ triangle mesh, cleaned of degenerate faces.

    Raises DataError if the file is unreadable or empty after cleanup,
    MeshFormatError for unsupported or corrupted formats.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    suffix = path.suffix.lower()
    if suffix == ".ply":
        vertices, faces = _read_ply(path)
    elif suffix == ".obj":
        vertices, faces = _read_obj(path)
    else:
        raise MeshFormatError(f"unsupported format: {path.name}")

    vertices = np.ascontiguousarray(vertices, dtype=np.float64)
    faces = np.ascontiguousarray(faces, dtype=np.int32)
    if len(faces) and (faces.min() < 0 or faces.max() >= len(vertices)):
        raise MeshFormatError(f"face index out of range in {path.name}")
    faces = drop_degenerate_faces(vertices, faces)
    if len(faces) == 0:
        raise DataError(f"empty mesh after cleanup: {path.name}")
    mesh = Mesh(vertices=vertices, faces=faces, name=path.stem)
    mesh.validate()
    return mesh


def _triangulate(polygons) -> np.ndarray:
    tris = []
    for poly in polygons:
        for i in range(1, len(poly) - 1):
            tris.append((poly[0], poly[i], poly[i + 1]))
    return np.array(tris, dtype=np.int64).reshape(-1, 3)


def _read_ply(path: Path):
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"ply":
            raise MeshFormatError(f"unsupported format: {path.name} (bad magic)")
        fmt = None
        elements = []  # (name, count, [(prop_name, type, list_count_type|None)])
        while True:
            line = fh.readline()
            if not line:
                raise MeshFormatError(f"unsupported format: {path.name} (truncated header)")
            tokens = line.decode("ascii", "replace").split()
            if not tokens or tokens[0] == "comment":
                continue
            if tokens[0] == "format":
                fmt = tokens[1]
            elif tokens[0] == "element":
                elements.append((tokens[1], int(tokens[2]), []))
            elif tokens[0] == "property":
                if not elements:
                    raise MeshFormatError(f"unsupported format: {path.name} (property before element)")
                if tokens[1] == "list":
                    elements[-1][2].append((tokens[4], tokens[3], tokens[2]))
                else:
                    elements[-1][2].append((tokens[2], tokens[1], None))
            elif tokens[0] == "end_header":
                break
            else:
                raise MeshFormatError(f"unsupported format: {path.name} (header line {tokens[0]!r})")
        if fmt not in ("ascii", "binary_little_endian", "binary_big_endian"):
            raise MeshFormatError(f"unsupported format: {path.name} (format {fmt!r})")
        if fmt == "ascii":
            return _read_ply_body_ascii(fh, elements, path)
        endian = "<" if fmt == "binary_little_endian" else ">"
        return _read_ply_body_binary(fh, elements, endian, path)


def _read_ply_body_ascii(fh, elements, path):
    vertices, polys = None, None
    text = fh.read().decode("ascii", "replace").split("\n")
    rows = [ln.split() for ln in text if ln.strip()]
    pos = 0
    for name, count, props in elements:
        if pos + count > len(rows):
            raise MeshFormatError(f"unsupported format: {path.name} (truncated body)")
        chunk = rows[pos:pos + count]
        pos += count
        if name == "vertex":
            cols = {p[0]: i for i, p in enumerate(props)}
            try:
                idx = [cols["x"], cols["y"], cols["z"]]
                vertices = np.array([[float(r[j]) for j in idx] for r in chunk])
            except (KeyError, ValueError, IndexError):
                raise MeshFormatError(f"unsupported format: {path.name} (vertex data)")
        elif name == "face":
            try:
                polys = [[int(t) for t in r[1:1 + int(r[0])]] for r in chunk]
            except (ValueError, IndexError):
                raise MeshFormatError(f"unsupported format: {path.name} (face data)")
    return _finish_ply(vertices, polys, path)


def _read_ply_body_binary(fh, elements, endian, path):
    vertices, polys = None, None
    for name, count, props in elements:
        if name == "vertex" and all(p[2] is None for p in props):
            fmt = endian + "".join(_ply_char(p[1], path) for p in props)
            size = struct.calcsize(fmt)
            raw = fh.read(size * count)
            if len(raw) != size * count:
                raise MeshFormatError(f"unsupported format: {path.name} (truncated body)")
            rows = list(struct.iter_unpack(fmt, raw))
            cols = {p[0]: i for i, p in enumerate(props)}
            try:
                idx = [cols["x"], cols["y"], cols["z"]]
            except KeyError:
                raise MeshFormatError(f"unsupported format: {path.name} (vertex data)")
            vertices = np.array(rows, dtype=np.float64)[:, idx]
        else:
            # element with a list property (faces) or unknown scalars: walk row by row
            rows = []
            for _ in range(count):
                row = []
                for pname, ptype, list_count_type in props:
                    if list_count_type is None:
                        ch, sz = _PLY_TYPES.get(ptype, (None, None))
                        if ch is None:
                            raise MeshFormatError(f"unsupported format: {path.name} (type {ptype!r})")
                        row.append(struct.unpack(endian + ch, _must_read(fh, sz, path))[0])
                    else:
                        cch, csz = _PLY_TYPES.get(list_count_type, (None, None))
                        ich, isz = _PLY_TYPES.get(ptype, (None, None))
                        if cch is None or ich is None:
                            raise MeshFormatError(f"unsupported format: {path.name} (list types)")
                        n = struct.unpack(endian + cch, _must_read(fh, csz, path))[0]
                        row.append(list(struct.unpack(endian + ich * n, _must_read(fh, isz * n, path))))
                rows.append(row)
            if name == "face":
                list_col = next((i for i, p in enumerate(props) if p[2] is not None), None)
                if list_col is None:
                    raise MeshFormatError(f"unsupported format: {path.name} (face data)")
                polys = [r[list_col] for r in rows]
    return _finish_ply(vertices, polys, path)


def _ply_char(ptype, path):
    ch = _PLY_TYPES.get(ptype, (None, None))[0]
    if ch is None:
        raise MeshFormatError(f"unsupported format: {path.name} (type {ptype!r})")
    return ch


def _must_read(fh, n, path):
    raw = fh.read(n)
    if len(raw) != n:
        raise MeshFormatError(f"unsupported format: {path.name} (truncated body)")
    return raw


def _finish_ply(vertices, polys, path):
    if vertices is None or polys is None:
        raise MeshFormatError(f"unsupported format: {path.name} (missing vertex or face element)")
    return vertices, _triangulate(polys)


def _read_obj(path: Path):
    vertices = []
    polys = []
    try:
        text = path.read_text(errors="replace")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}")
    for line in text.splitlines():
        tokens = line.split()
        if not tokens:
            continue
        if tokens[0] == "v":
            if len(tokens) < 4:
                raise MeshFormatError(f"unsupported format: {path.name} (vertex line)")
            try:
                vertices.append([float(t) for t in tokens[1:4]])
            except ValueError:
                raise MeshFormatError(f"unsupported format: {path.name} (vertex line)")
        elif tokens[0] == "f":
            poly = []
            for tok in tokens[1:]:
                ref = tok.split("/")[0]
                try:
                    i = int(ref)
                except ValueError:
                    raise MeshFormatError(f"unsupported format: {path.name} (face line)")
                # OBJ indices are 1-based; negative counts from the end
                poly.append(i - 1 if i > 0 else len(vertices) + i)
            if len(poly) < 3:
                raise MeshFormatError(f"unsupported format: {path.name} (face line)")
            polys.append(poly)
    if not vertices or not polys:
        raise MeshFormatError(f"unsupported format: {path.name} (no geometry)")
    return np.array(vertices, dtype=np.float64), _triangulate(polys)


def save_obj(mesh: Mesh, path):
    """Write a mesh as OBJ (used by the synthetic-data generator)."""
    path = Path(path)
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")
