"""Procedural template assets.

The reference dolphin is a lofted body of revolution with elliptical
sections plus four closed fin solids (two pectorals, dorsal, fluke) whose
roots are slightly embedded in the body. It ships as ``assets/dolphin.obj``
and ``assets/dolphin_rig.json``; :func:`write_reference_assets` regenerates
them.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator

from .body import TemplateModel, build_template, load_template
from .mesh import signed_volume, uv_sphere, write_obj

# (arc position from rostrum tip, half-width, half-height) in template units
_PROFILE = np.array(
    [
        [0.00, 0.000, 0.000],
        [0.02, 0.027, 0.025],
        [0.06, 0.044, 0.040],
        [0.10, 0.088, 0.081],
        [0.16, 0.163, 0.156],
        [0.24, 0.219, 0.225],
        [0.35, 0.250, 0.256],
        [0.50, 0.225, 0.244],
        [0.63, 0.156, 0.188],
        [0.76, 0.081, 0.125],
        [0.88, 0.044, 0.075],
        [0.96, 0.025, 0.037],
        [1.00, 0.000, 0.000],
    ]
)

# body parts as arc-position intervals
_BODY_PARTS = [
    ("torso_front", 0.20, 0.45),
    ("head", 0.08, 0.20),
    ("rostrum", 0.00, 0.08),
    ("torso_rear", 0.45, 0.68),
    ("peduncle", 0.68, 1.01),
]


def _loft(n_rings: int, n_seg: int, z_front: float, z_back: float):
    s = 0.5 - 0.5 * np.cos(np.linspace(0.0, np.pi, n_rings + 2))[1:-1]
    half_w = PchipInterpolator(_PROFILE[:, 0], _PROFILE[:, 1])(s)
    half_h = PchipInterpolator(_PROFILE[:, 0], _PROFILE[:, 2])(s)
    z = z_front + (z_back - z_front) * s
    phi = 2 * np.pi * np.arange(n_seg) / n_seg
    verts = [(0.0, 0.0, z_front), (0.0, 0.0, z_back)]
    for i in range(n_rings):
        for p in phi:
            verts.append((half_w[i] * np.sin(p), half_h[i] * np.cos(p), z[i]))
    verts = np.asarray(verts)

    def ring(i, j):
        return 2 + i * n_seg + (j % n_seg)

    faces = []
    for j in range(n_seg):
        faces.append((0, ring(0, j + 1), ring(0, j)))
        faces.append((1, ring(n_rings - 1, j), ring(n_rings - 1, j + 1)))
    for i in range(n_rings - 1):
        for j in range(n_seg):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            faces += [(a, b, d), (a, d, c)]
    faces = np.asarray(faces, dtype=np.int64)
    if signed_volume(verts, faces) < 0:
        faces = faces[:, ::-1].copy()
    ring_s = np.concatenate([[0.0, 1.0], np.repeat(s, n_seg)])
    return verts, faces, ring_s, half_w, half_h, z, s


def _fin(center, semi, sweep: float, n_lat: int, n_lon: int):
    """Closed ellipsoidal fin: sphere scaled by ``semi`` then rotated about y
    by ``sweep`` radians. Vertex 1 stays the -z pole."""
    v, f = uv_sphere(n_lat, n_lon)
    v = v * np.asarray(semi)
    c, s = np.cos(sweep), np.sin(sweep)
    rot = np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
    return v @ rot.T + np.asarray(center), f


def reference_dolphin(n_rings: int = 36, n_seg: int = 16, fin_lat: int = 6, fin_lon: int = 10):
    """Vertices, faces, UVs and rig dict of the 9-part reference dolphin."""
    z_front, z_back = 1.30, -1.15
    bv, bf, ring_s, half_w, half_h, zr, s = _loft(n_rings, n_seg, z_front, z_back)

    def profile_at(t):
        return (
            float(np.interp(t, s, half_w)),
            float(np.interp(t, s, half_h)),
            z_front + (z_back - z_front) * t,
        )

    names = ["torso_front", "head", "rostrum", "torso_rear", "peduncle", "fluke", "pectoral_l", "pectoral_r", "dorsal"]
    jidx = {n: i for i, n in enumerate(names)}
    body_part = np.zeros(len(bv), dtype=np.int64)
    for name, lo, hi in _BODY_PARTS:
        body_part[(ring_s >= lo) & (ring_s < hi)] = jidx[name]

    pieces = [(bv, bf)]
    parts = [body_part]
    # pectorals: low on the flanks, swept back
    hw, hh, zp = profile_at(0.27)
    for side, name in ((1.0, "pectoral_l"), (-1.0, "pectoral_r")):
        semi = (0.035, 0.012, 0.15)
        v, f = _fin((side * (hw + 0.06), -0.45 * hh, zp - 0.08), semi, -side * 1.05, fin_lat, fin_lon)
        pieces.append((v, f))
        parts.append(np.full(len(v), jidx[name]))
    hw, hh, zd = profile_at(0.50)
    v, f = _fin((0.0, 0.0, zd), (0.012, 0.05, 0.11), 0.0, fin_lat, fin_lon)
    # tilt the dorsal fin so it leans back from the dorsal ridge
    v = v @ np.array([[1, 0, 0], [0, np.cos(0.9), -np.sin(0.9)], [0, np.sin(0.9), np.cos(0.9)]]).T
    v = v + np.array([0.0, hh + 0.035, 0.0])
    pieces.append((v, f))
    parts.append(np.full(len(v), jidx["dorsal"]))
    # fluke: flat, wide, -z pole is the notch landmark
    v, f = uv_sphere(fin_lat, 2 * fin_lon)
    v = v * np.array([0.30, 0.018, 0.11])
    v[:, 2] += z_back - 0.06
    pieces.append((v, f))
    parts.append(np.full(len(v), jidx["fluke"]))

    verts, faces, offset = [], [], 0
    for v, f in pieces:
        verts.append(v)
        faces.append(f + offset)
        offset += len(v)
    verts = np.concatenate(verts)
    faces = np.concatenate(faces)
    part = np.concatenate(parts)
    fluke_start = offset - len(pieces[-1][0])
    notch = fluke_start + 1

    parent = {"torso_front": None, "head": "torso_front", "rostrum": "head", "torso_rear": "torso_front",
              "peduncle": "torso_rear", "fluke": "peduncle", "pectoral_l": "torso_front",
              "pectoral_r": "torso_front", "dorsal": "torso_rear"}
    group = {n: n for n in names}
    group["pectoral_l"] = group["pectoral_r"] = "pectorals"
    group_names = ["torso_front", "head", "rostrum", "torso_rear", "peduncle", "fluke", "pectorals", "dorsal"]

    # interface rings: body joints sit between the last ring of the parent
    # and the first ring of the child; fins attach at their nearest body ring
    body_rings = np.arange(n_rings)
    ring_part = np.array([body_part[2 + i * n_seg] for i in body_rings])

    def ring_ids(i):
        return list(range(2 + i * n_seg, 2 + (i + 1) * n_seg))

    rings = {}
    for i in range(n_rings - 1):
        a, b = ring_part[i], ring_part[i + 1]
        if a != b:
            child = names[b] if parent[names[b]] == names[a] else names[a]
            rings[child] = ring_ids(i) + ring_ids(i + 1)
    for name in ("pectoral_l", "pectoral_r", "dorsal", "fluke"):
        fin_ids = np.flatnonzero(part == jidx[name])
        body_ids = np.flatnonzero(part < 5)
        d = np.linalg.norm(verts[fin_ids][:, None, :] - verts[body_ids][None, :, :], axis=2)
        # the 4 closest on each side, plus any exact ties so mirror-image
        # candidates enter together and sagittal joints stay on x = 0
        df, db = d.min(axis=1), d.min(axis=0)
        root_fin = fin_ids[df <= np.sort(df)[3] + 1e-12]
        root_body = body_ids[db <= np.sort(db)[3] + 1e-12]
        rings[name] = [int(x) for x in np.concatenate([root_fin, root_body])]

    # skin weights: one-hot, blended over the rings adjacent to body joints
    weights = [[[names[p], 1.0]] for p in part]
    for i in range(n_rings - 1):
        a, b = ring_part[i], ring_part[i + 1]
        if a != b:
            for vi in ring_ids(i):
                weights[vi] = [[names[a], 0.65], [names[b], 0.35]]
            for vi in ring_ids(i + 1):
                weights[vi] = [[names[b], 0.65], [names[a], 0.35]]

    # UVs: u along the body axis, v from dorsal (0) to ventral (1)
    zmin, zmax = verts[:, 2].min(), verts[:, 2].max()
    u = (zmax - verts[:, 2]) / (zmax - zmin)
    radial = verts[:, :2]
    rn = np.linalg.norm(radial, axis=1)
    cosang = np.where(rn > 1e-12, radial[:, 1] / np.maximum(rn, 1e-12), 1.0)
    v_coord = 0.5 * (1.0 - cosang)
    uv = np.clip(np.stack([u, v_coord], axis=1), 0.0, 1.0)

    joints = []
    for n in names:
        entry = {"name": n, "parent": parent[n], "group": group[n], "position": [0.0, 0.0, 0.0]}
        if n == "pectoral_r":
            entry["mirror"] = True
        if n in rings:
            entry["ring"] = rings[n]
        joints.append(entry)
    rig = {
        "joints": joints,
        "groups": [{"name": g} for g in group_names],
        "part_of_vertex": [int(p) for p in part],
        "skin_weights": weights,
        "landmarks": {"rostrum_tip": 0, "fluke_notch": int(notch)},
    }
    # centre the root part at the origin
    root_centroid = verts[part == 0].mean(axis=0)
    verts = verts - root_centroid
    return verts, faces, uv, rig


def toy_template(n_rings: int = 11, n_seg: int = 10, length: float = 2.6) -> TemplateModel:
    """Two-part capsule (front root group, rear child group) for tests."""
    s = 0.5 - 0.5 * np.cos(np.linspace(0.0, np.pi, n_rings + 2))[1:-1]
    z_front, z_back = length / 2, -length / 2
    radius = 0.25 * np.sin(np.pi * s) ** 0.7
    phi = 2 * np.pi * np.arange(n_seg) / n_seg
    verts = [(0.0, 0.0, z_front), (0.0, 0.0, z_back)]
    for i in range(n_rings):
        for p in phi:
            verts.append((radius[i] * 1.2 * np.sin(p), radius[i] * np.cos(p), z_front + (z_back - z_front) * s[i]))
    verts = np.asarray(verts)

    def ring(i, j):
        return 2 + i * n_seg + (j % n_seg)

    faces = []
    for j in range(n_seg):
        faces.append((0, ring(0, j + 1), ring(0, j)))
        faces.append((1, ring(n_rings - 1, j), ring(n_rings - 1, j + 1)))
    for i in range(n_rings - 1):
        for j in range(n_seg):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            faces += [(a, b, d), (a, d, c)]
    faces = np.asarray(faces, dtype=np.int64)
    if signed_volume(verts, faces) < 0:
        faces = faces[:, ::-1].copy()
    ring_s = np.concatenate([[0.0, 1.0], np.repeat(s, n_seg)])
    split = n_rings // 2
    part = (ring_s >= s[split]).astype(np.int64)
    verts = verts - verts[part == 0].mean(axis=0)
    ring_ids = list(range(2 + (split - 1) * n_seg, 2 + (split + 1) * n_seg))
    weights = [[["front", 1.0]] if p == 0 else [["rear", 1.0]] for p in part]
    rig = {
        "joints": [
            {"name": "front", "parent": None, "group": "front", "position": [0, 0, 0]},
            {"name": "rear", "parent": "front", "group": "rear", "position": [0, 0, 0], "ring": ring_ids},
        ],
        "groups": [{"name": "front"}, {"name": "rear"}],
        "part_of_vertex": [int(p) for p in part],
        "skin_weights": weights,
        "landmarks": {"rostrum_tip": 0, "fluke_notch": 1},
    }
    zmax, zmin = verts[:, 2].max(), verts[:, 2].min()
    uv = np.stack([(zmax - verts[:, 2]) / (zmax - zmin), 0.5 - 0.5 * np.tanh(verts[:, 1] * 8)], axis=1)
    return build_template(verts, faces, uv, rig, target_length=length)


def write_reference_assets(directory) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    verts, faces, uv, rig = reference_dolphin()
    mesh_path, rig_path = directory / "dolphin.obj", directory / "dolphin_rig.json"
    write_obj(mesh_path, verts, faces, uv)
    rig_path.write_text(json.dumps(rig), encoding="utf-8")
    return mesh_path, rig_path


def asset_paths() -> tuple[Path, Path]:
    base = resources.files("dolphinfit") / "assets"
    return Path(str(base / "dolphin.obj")), Path(str(base / "dolphin_rig.json"))


_DEFAULT: TemplateModel | None = None


def default_template() -> TemplateModel:
    """The shipped reference dolphin, loaded once and cached."""
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = load_template(*asset_paths())
    return _DEFAULT
