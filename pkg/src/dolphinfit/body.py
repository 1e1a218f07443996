"""Articulated, part-scaled dolphin body model.

Vertices are partitioned into parts, one per joint of the kinematic tree.
Joints are grouped; a group shares one shape row and one rotation, with
paired (mirror) joints receiving the sagittally mirrored rotation. Each
shape row is ``(uniform, x, y, z)``: the part is scaled about its rest
centroid by ``1 + uniform + axis`` along each axis.

Model space: forward is +z, up is +y, the sagittal plane is x = 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .mesh import MeshError, check_closed, read_obj

REST_LENGTH = 2.6
MIRROR = np.array([1.0, -1.0, -1.0])


@dataclass(frozen=True)
class KinematicTree:
    """Joints in topological order (every parent precedes its children).

    ``group_of_joint`` is 0-based here; group 0 holds the root joint.
    """

    names: tuple[str, ...]
    parent: np.ndarray  # (N,), -1 for the root
    joint_rest_pos: np.ndarray  # (N, 3)
    group_of_joint: np.ndarray  # (N,)
    mirrored: np.ndarray  # (N,) bool
    group_names: tuple[str, ...]

    @property
    def n_joints(self) -> int:
        return len(self.names)

    @property
    def n_groups(self) -> int:
        return len(self.group_names)

    def group_parent(self) -> np.ndarray:
        """Parent group of each group (-1 for the root group)."""
        out = np.full(self.n_groups, -1)
        for j in range(self.n_joints):
            g, p = self.group_of_joint[j], self.parent[j]
            if p >= 0 and out[g] == -1 and self.group_of_joint[p] != g:
                out[g] = self.group_of_joint[p]
        return out


@dataclass(frozen=True)
class TemplateModel:
    vertices: np.ndarray  # (n, 3) rest vertices, m
    faces: np.ndarray  # (F, 3)
    uv: np.ndarray  # (n, 2)
    tree: KinematicTree
    part_of_vertex: np.ndarray  # (n,) joint index
    skin_weights: np.ndarray  # (n, N)
    landmarks: tuple[int, int]  # rostrum tip, fluke notch
    part_centroids: np.ndarray  # (N, 3)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_groups(self) -> int:
        return self.tree.n_groups

    @property
    def group_of_vertex(self) -> np.ndarray:
        return self.tree.group_of_joint[self.part_of_vertex]

    @property
    def shape_basis(self) -> np.ndarray:
        """Per-vertex (3, 4) deformation matrix: uniform column then x, y, z."""
        d = self.vertices - self.part_centroids[self.part_of_vertex]
        basis = np.zeros((self.n_vertices, 3, 4))
        basis[:, :, 0] = d
        basis[:, 0, 1] = d[:, 0]
        basis[:, 1, 2] = d[:, 1]
        basis[:, 2, 3] = d[:, 2]
        return basis

    def rest_length(self) -> float:
        return rest_length(self.vertices, self.landmarks)


def _validate_template(vertices, faces, part_of_vertex, weights, tree, landmarks) -> None:
    check_closed(faces, len(vertices))
    n = len(vertices)
    if part_of_vertex.shape != (n,) or part_of_vertex.min() < 0 or part_of_vertex.max() >= tree.n_joints:
        raise MeshError("part_of_vertex must assign every vertex to one joint part")
    if weights.shape != (n, tree.n_joints) or (weights < 0).any():
        raise MeshError("skin weights must be nonnegative with one column per joint")
    if not np.allclose(weights.sum(axis=1), 1.0, atol=1e-6):
        raise MeshError("skin weight rows do not sum to 1")
    for lm in landmarks:
        if not 0 <= lm < n:
            raise MeshError("landmark vertex undefined")
    roots = np.flatnonzero(tree.parent < 0)
    if len(roots) != 1 or roots[0] != 0:
        raise MeshError("kinematic tree must have a single root listed first")
    if (tree.parent[1:] >= np.arange(1, tree.n_joints)).any():
        raise MeshError("joints must be listed parents-first")
    if tree.group_of_joint[0] != 0:
        raise MeshError("group 1 must contain the root joint")


def parse_rig(rig: dict, n_vertices: int) -> tuple[KinematicTree, np.ndarray, np.ndarray, tuple[int, int], dict]:
    try:
        joints = rig["joints"]
        group_names = tuple(g["name"] for g in rig["groups"])
        names = tuple(j["name"] for j in joints)
        index = {nm: i for i, nm in enumerate(names)}
        gindex = {nm: i for i, nm in enumerate(group_names)}
        parent = np.array([-1 if j["parent"] is None else index[j["parent"]] for j in joints])
        pos = np.array([j["position"] for j in joints], dtype=np.float64)
        group = np.array([gindex[j["group"]] for j in joints])
        mirrored = np.array([bool(j.get("mirror", False)) for j in joints])
        rings = {index[j["name"]]: np.asarray(j["ring"], dtype=np.int64) for j in joints if j.get("ring")}
        part = np.asarray(rig["part_of_vertex"], dtype=np.int64)
        weights = np.zeros((n_vertices, len(joints)))
        for vi, row in enumerate(rig["skin_weights"]):
            for jname, w in row:
                weights[vi, index[jname] if isinstance(jname, str) else int(jname)] = float(w)
        landmarks = (int(rig["landmarks"]["rostrum_tip"]), int(rig["landmarks"]["fluke_notch"]))
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise MeshError(f"malformed rig: {exc}") from exc
    if len(rig["skin_weights"]) != n_vertices:
        raise MeshError("skin weights must list every vertex")
    sums = weights.sum(axis=1, keepdims=True)
    if (sums <= 0).any():
        raise MeshError("weight rows not normalizable")
    weights = weights / sums
    tree = KinematicTree(names, parent, pos, group, mirrored, group_names)
    return tree, part, weights, landmarks, rings


def build_template(vertices, faces, uv, rig: dict, target_length: float = REST_LENGTH) -> TemplateModel:
    """Assemble a TemplateModel from arrays and a rig dict, rescaled so the
    rostrum-to-notch extent along the forward axis is ``target_length``."""
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    tree, part, weights, landmarks, rings = parse_rig(rig, len(vertices))
    _validate_template(vertices, faces, part, weights, tree, landmarks)
    extent = rest_length(vertices, landmarks)
    if not extent > 0:
        raise MeshError("rostrum tip must lie ahead of the fluke notch along +z")
    scale = target_length / extent
    vertices = vertices * scale
    joints = tree.joint_rest_pos * scale
    for j, ring in rings.items():
        joints[j] = vertices[ring].mean(axis=0)
    centroids = np.stack([vertices[part == j].mean(axis=0) for j in range(tree.n_joints)])
    joints[0] = centroids[0]
    tree = KinematicTree(tree.names, tree.parent, joints, tree.group_of_joint, tree.mirrored, tree.group_names)
    if uv is None:
        uv = np.zeros((len(vertices), 2))
    return TemplateModel(vertices, faces, np.asarray(uv, dtype=np.float64), tree, part, weights, landmarks, centroids)


def load_template(mesh_source, rig_source) -> TemplateModel:
    """Load a Wavefront mesh plus JSON rig sidecar."""
    vertices, faces, uv = read_obj(mesh_source)
    try:
        rig = json.loads(Path(rig_source).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MeshError(f"malformed rig file: {exc}") from exc
    if uv is None:
        raise MeshError("template mesh has no UV coordinates")
    return build_template(vertices, faces, uv, rig)


def rest_length(vertices, landmarks: tuple[int, int]) -> float:
    """Rostrum-tip to fluke-notch distance along the forward axis."""
    v = ad.value_of(vertices)
    tip, notch = landmarks
    n = len(v)
    if not (0 <= tip < n and 0 <= notch < n):
        raise MeshError("landmark vertex undefined")
    return float(v[tip, 2] - v[notch, 2])


def _check_beta(template: TemplateModel, beta) -> None:
    shape = ad.value_of(beta).shape
    if shape != (template.n_groups, 4):
        raise ValueError(f"beta must have shape ({template.n_groups}, 4), got {shape}")
    if not np.isfinite(ad.value_of(beta)).all():
        raise ValueError("beta must be finite")


def part_scales(template: TemplateModel, beta) -> ad.Var:
    """(N, 3) per-joint-part axis scale offsets ``uniform + axis``."""
    b = ad.take(beta, template.tree.group_of_joint)
    return b[:, 0:1] + b[:, 1:4]


def deform_shape(template: TemplateModel, beta) -> ad.Var:
    """Template vertices plus the per-part shape displacement ``B_i beta_i``."""
    _check_beta(template, beta)
    d = template.vertices - template.part_centroids[template.part_of_vertex]
    s = ad.take(part_scales(template, beta), template.part_of_vertex)
    return template.vertices + d * s


def reconnect_parts(template: TemplateModel, beta, shaped) -> tuple[ad.Var, ad.Var]:
    """Translate every non-root part so it re-attaches to its parent.

    Each part moves affinely under its shape row, so a joint's location as
    seen from the parent part and from the child part generally differ; the
    child (and with it the whole subtree) is shifted to close that gap.
    Returns the connected vertices and the updated joint positions.
    """
    tree = template.tree
    s = part_scales(template, beta)
    c = template.part_centroids
    J = tree.joint_rest_pos
    zero = ad.const(np.zeros(3))
    trans = [zero] * tree.n_joints
    joints = [None] * tree.n_joints
    joints[0] = J[0] + (J[0] - c[0]) * s[0]
    for k in range(1, tree.n_joints):
        p = tree.parent[k]
        on_parent = J[k] + (J[k] - c[p]) * s[p]
        on_child = J[k] + (J[k] - c[k]) * s[k]
        trans[k] = trans[p] + on_parent - on_child
        joints[k] = on_parent + trans[p]
    T = ad.stack(trans)
    connected = shaped + ad.take(T, template.part_of_vertex)
    return connected, ad.stack(joints)


def shaped_mesh(template: TemplateModel, beta) -> tuple[ad.Var, ad.Var]:
    """deform_shape followed by reconnect_parts."""
    return reconnect_parts(template, beta, deform_shape(template, beta))


def _skew(w) -> ad.Var:
    """(..., 3) -> (..., 3, 3) cross-product matrices."""
    x, y, z = w[..., 0], w[..., 1], w[..., 2]
    zero = ad.const(np.zeros(ad.value_of(w).shape[:-1]))
    rows = [
        ad.stack([zero, -z, y], axis=-1),
        ad.stack([z, zero, -x], axis=-1),
        ad.stack([-y, x, zero], axis=-1),
    ]
    return ad.stack(rows, axis=-2)


def rodrigues(axis_angle) -> ad.Var:
    """Rotation matrices from Rodrigues vectors of shape (..., 3).

    Below an angle of 1e-6 the Taylor expansion of the coefficients is used
    so values and derivatives stay finite at zero.
    """
    w = axis_angle if isinstance(axis_angle, ad.Var) else ad.const(axis_angle)
    th2 = ad.vsum(w * w, axis=-1)
    small = th2.value < 1e-12
    th2_safe = ad.where(small, 1.0, th2)
    th = ad.sqrt(th2_safe)
    a = ad.where(small, 1.0 - th2 / 6.0, ad.sin(th) / th)
    b = ad.where(small, 0.5 - th2 / 24.0, (1.0 - ad.cos(th)) / th2_safe)
    K = _skew(w)
    K2 = K @ K
    eye = np.eye(3)
    return eye + K * ad.reshape(a, a.shape + (1, 1)) + K2 * ad.reshape(b, b.shape + (1, 1))


def rodrigues_np(axis_angle) -> np.ndarray:
    return rodrigues(np.asarray(axis_angle, dtype=np.float64)).value


def joint_rotations(template: TemplateModel, theta_t) -> ad.Var:
    """(N, 3, 3) local joint rotations for one frame; the root's is identity
    because group 0 carries the global orientation."""
    tree = template.tree
    w = ad.take(theta_t, tree.group_of_joint)
    sign = np.where(tree.mirrored[:, None], MIRROR, 1.0)
    sign[0] = 0.0
    return rodrigues(w * sign)


def pose_mesh(template: TemplateModel, connected, joints, theta_t, P_t) -> ad.Var:
    """Linear blend skinning for one frame, then global rotation about the
    root joint and translation by ``P_t``."""
    tree = template.tree
    R = joint_rotations(template, theta_t)
    Rw = [None] * tree.n_joints
    tw = [None] * tree.n_joints
    Rw[0] = ad.const(np.eye(3))
    tw[0] = ad.const(np.zeros(3))
    for k in range(1, tree.n_joints):
        p = tree.parent[k]
        Jk = ad.reshape(joints[k], (3, 1))
        Rk = R[k]
        Rw[k] = Rw[p] @ Rk
        tw[k] = ad.reshape(Rw[p] @ (Jk - Rk @ Jk), (3,)) + tw[p]
    # blended as offsets from the identity (weight rows sum to 1) so a zero
    # pose returns the input bit for bit
    W = template.skin_weights
    eye = np.eye(3)
    Mv = ad.reshape(W @ ad.reshape(ad.stack(Rw) - eye, (tree.n_joints, 9)), (-1, 3, 3))
    tv = W @ ad.stack(tw)
    v = connected + ad.vsum(Mv * ad.reshape(connected, (-1, 1, 3)), axis=2) + tv
    Rg = rodrigues(theta_t[0])
    return v + (v - joints[0]) @ (Rg - eye).T + P_t


def posed_vertices(template: TemplateModel, beta, theta, P) -> list[ad.Var]:
    """Posed meshes for every frame of a (T, M, 3) / (T, 3) trajectory."""
    connected, joints = shaped_mesh(template, beta)
    T = ad.value_of(theta).shape[0]
    return [pose_mesh(template, connected, joints, theta[t], P[t]) for t in range(T)]


def forward_vector(theta_root) -> ad.Var:
    """Model forward axis (+z) rotated by the global orientation."""
    return rodrigues(theta_root)[..., :, 2]
