"""Triangle meshes: container, OBJ I/O, primitive generators."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidMeshError


@dataclass
class Mesh:
    vertices: np.ndarray   # (V, 3) float64
    faces: np.ndarray      # (F, 3) int64

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_faces(self):
        return self.faces.shape[0]

    def is_empty(self):
        return self.n_faces == 0

    def triangle_corners(self):
        """(F, 3) corner arrays a, b, c."""
        v, f = self.vertices, self.faces
        return v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]

    def areas(self):
        a, b, c = self.triangle_corners()
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def is_watertight(mesh: Mesh) -> bool:
    """Every undirected edge must be shared by exactly two faces."""
    if mesh.is_empty():
        return False
    f = mesh.faces
    edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return bool(np.all(counts == 2))


def write_obj(path, mesh: Mesh):
    """Wavefront OBJ, triangles only."""
    with open(path, "w") as f:
        for v in mesh.vertices:
            f.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for face in mesh.faces:
            f.write(f"f {face[0] + 1} {face[1] + 1} {face[2] + 1}\n")


def read_obj(path) -> Mesh:
    """Parse a triangles-only OBJ; polygons with more than 3 corners are rejected."""
    verts, faces = [], []
    with open(path) as f:
        for line in f:
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                ids = [int(p.split("/")[0]) for p in parts[1:]]
                if len(ids) != 3:
                    raise InvalidMeshError(
                        f"{path}: only triangle faces supported, got {len(ids)} corners")
                faces.append([i - 1 for i in ids])
    if not verts or not faces:
        raise InvalidMeshError(f"{path}: no triangles found")
    return Mesh(np.array(verts), np.array(faces))


def make_box_mesh(center=(0.0, 0.0, 0.0), size=0.5) -> Mesh:
    """Axis-aligned cube of the given edge length, 12 triangles, watertight."""
    c = np.asarray(center, dtype=np.float64)
    h = size / 2.0
    corners = np.array([[sx, sy, sz] for sx in (-h, h) for sy in (-h, h) for sz in (-h, h)])
    verts = corners + c
    # faces oriented outward; corner index bit order (x, y, z)
    quads = [
        (0, 1, 3, 2),  # -x
        (4, 6, 7, 5),  # +x
        (0, 4, 5, 1),  # -y
        (2, 3, 7, 6),  # +y
        (0, 2, 6, 4),  # -z
        (1, 5, 7, 3),  # +z
    ]
    faces = []
    for a, b, cc, d in quads:
        faces.append([a, b, cc])
        faces.append([a, cc, d])
    return Mesh(verts, np.array(faces))


def make_icosphere(radius=0.25, center=(0.0, 0.0, 0.0), subdivisions=2) -> Mesh:
    """Subdivided icosahedron projected onto the sphere; watertight."""
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    for _ in range(subdivisions):
        cache = {}
        verts = list(verts)

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = (np.asarray(verts[i]) + np.asarray(verts[j])) / 2.0
                m /= np.linalg.norm(m)
                cache[key] = len(verts)
                verts.append(m)
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        verts = np.array(verts)
        faces = np.array(new_faces, dtype=np.int64)
    return Mesh(verts * radius + np.asarray(center, dtype=np.float64), faces)
