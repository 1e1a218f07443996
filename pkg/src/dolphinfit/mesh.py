"""Triangle-mesh helpers: OBJ I/O, topology checks, primitives, normals."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import autodiff as ad


class MeshError(ValueError):
    pass


def read_obj(path) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Read vertices, triangle faces and per-vertex UVs from a Wavefront file.

    Texture indices in ``f v/vt`` records must match the vertex index (one UV
    per vertex); polygons with more than three corners are fan-triangulated.
    """
    verts, uvs, faces = [], [], []
    face_uv_pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            try:
                if tag == "v":
                    verts.append([float(x) for x in parts[1:4]])
                elif tag == "vt":
                    uvs.append([float(x) for x in parts[1:3]])
                elif tag == "f":
                    idx, tidx = [], []
                    for corner in parts[1:]:
                        fields = corner.split("/")
                        idx.append(int(fields[0]) - 1)
                        tidx.append(int(fields[1]) - 1 if len(fields) > 1 and fields[1] else None)
                    if len(idx) < 3:
                        raise MeshError(f"{path}:{lineno}: face with fewer than 3 vertices")
                    for i in range(1, len(idx) - 1):
                        faces.append([idx[0], idx[i], idx[i + 1]])
                    face_uv_pairs.extend(zip(idx, tidx))
            except (ValueError, IndexError) as exc:
                if isinstance(exc, MeshError):
                    raise
                raise MeshError(f"{path}:{lineno}: malformed {tag!r} record") from exc
    if not verts or not faces:
        raise MeshError(f"{path}: no vertices or faces")
    v = np.asarray(verts, dtype=np.float64)
    f = np.asarray(faces, dtype=np.int64)
    if f.min() < 0 or f.max() >= len(v):
        raise MeshError(f"{path}: face index out of range")
    uv = None
    if uvs:
        uv_arr = np.asarray(uvs, dtype=np.float64)
        uv = np.full((len(v), 2), np.nan)
        for vi, ti in face_uv_pairs:
            if ti is None:
                continue
            if ti < 0 or ti >= len(uv_arr):
                raise MeshError(f"{path}: texture index out of range")
            if not np.isnan(uv[vi, 0]) and not np.allclose(uv[vi], uv_arr[ti]):
                raise MeshError(f"{path}: vertex {vi + 1} has more than one UV")
            uv[vi] = uv_arr[ti]
        if np.isnan(uv).any():
            raise MeshError(f"{path}: vertices without UV coordinates")
    return v, f, uv


def write_obj(path, vertices: np.ndarray, faces: np.ndarray, uv: np.ndarray | None = None) -> None:
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in vertices]
    if uv is not None:
        lines += [f"vt {a:.9g} {b:.9g}" for a, b in uv]
        lines += [f"f {a + 1}/{a + 1} {b + 1}/{b + 1} {c + 1}/{c + 1}" for a, b, c in faces]
    else:
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in faces]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def check_closed(faces: np.ndarray, n_vertices: int | None = None) -> None:
    """Raise MeshError unless every edge is shared by exactly two faces with
    opposite orientation (closed, manifold, consistently oriented)."""
    faces = np.asarray(faces)
    if n_vertices is not None and (faces.min() < 0 or faces.max() >= n_vertices):
        raise MeshError("face index out of range")
    directed = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    und = np.sort(directed, axis=1)
    _, counts = np.unique(und, axis=0, return_counts=True)
    if (counts == 1).any():
        raise MeshError("mesh not closed")
    if (counts > 2).any():
        raise MeshError("non-manifold mesh")
    _, dcounts = np.unique(directed, axis=0, return_counts=True)
    if (dcounts > 1).any():
        raise MeshError("mesh not consistently oriented")


def signed_volume(vertices: np.ndarray, faces: np.ndarray) -> float:
    a, b, c = (vertices[faces[:, i]] for i in range(3))
    return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


def unit_cube() -> tuple[np.ndarray, np.ndarray]:
    v = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=np.float64)
    # vertex index = 4x + 2y + z; outward-facing quads split into triangles
    quads = [
        (0, 1, 3, 2),  # x = 0
        (4, 6, 7, 5),  # x = 1
        (0, 4, 5, 1),  # y = 0
        (2, 3, 7, 6),  # y = 1
        (0, 2, 6, 4),  # z = 0
        (1, 5, 7, 3),  # z = 1
    ]
    f = []
    for a, b, c, d in quads:
        f += [(a, b, c), (a, c, d)]
    return v, np.asarray(f, dtype=np.int64)


def icosphere(subdivisions: int = 0, radius: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    t = (1.0 + 5**0.5) / 2.0
    v = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    f = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(p, dtype=np.float64) / np.linalg.norm(p) for p in v]
    faces = f
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return np.asarray(verts) * radius, np.asarray(faces, dtype=np.int64)


def uv_sphere(n_lat: int, n_lon: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit sphere with poles on the z axis; vertex 0 is the +z pole and
    vertex 1 the -z pole. Faces are outward oriented."""
    verts = [(0.0, 0.0, 1.0), (0.0, 0.0, -1.0)]
    for i in range(1, n_lat):
        th = np.pi * i / n_lat
        for j in range(n_lon):
            ph = 2 * np.pi * j / n_lon
            verts.append((np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)))

    def ring(i, j):
        return 2 + (i - 1) * n_lon + (j % n_lon)

    faces = []
    for j in range(n_lon):
        faces.append((0, ring(1, j), ring(1, j + 1)))
        faces.append((1, ring(n_lat - 1, j + 1), ring(n_lat - 1, j)))
    for i in range(1, n_lat - 1):
        for j in range(n_lon):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            faces += [(a, c, d), (a, d, b)]
    return np.asarray(verts, dtype=np.float64), np.asarray(faces, dtype=np.int64)


def vertex_normals(vertices, faces: np.ndarray) -> ad.Var:
    """Area-weighted unit vertex normals, differentiable w.r.t. vertices."""
    n = ad.value_of(vertices).shape[0]
    a = ad.take(vertices, faces[:, 0])
    b = ad.take(vertices, faces[:, 1])
    c = ad.take(vertices, faces[:, 2])
    fn = ad.cross(b - a, c - a)
    vn = ad.segment_sum(ad.concatenate([fn, fn, fn]), faces.T.ravel(), n)
    return ad.normalize(vn)


def vertex_normals_np(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    a, b, c = (vertices[faces[:, i]] for i in range(3))
    fn = np.cross(b - a, c - a)
    vn = np.zeros_like(vertices)
    for i in range(3):
        np.add.at(vn, faces[:, i], fn)
    return vn / (np.linalg.norm(vn, axis=1, keepdims=True) + 1e-12)
