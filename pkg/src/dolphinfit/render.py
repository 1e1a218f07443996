"""Metric nadir camera, soft rasterization, shading and the water filter.

World frame: +y is up, the water surface is the plane y = 0 and the drone
camera hangs at (0, h, 0) looking straight down. Image columns follow +x and
image rows follow +z. Screen distances used by the soft silhouette are in
normalized units of ``2 / W`` per pixel, so the box length does not depend
on the raster size.

Buffers are sparse: only pixels touched by the mesh are stored, which keeps
a 720x480 raster cheap when the animal covers a few hundred pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .mesh import vertex_normals


@dataclass(frozen=True)
class Camera:
    altitude: float  # m
    sensor_width: float  # mm
    focal_length: float  # mm
    resolution: tuple[int, int]  # (H, W) px

    @property
    def fov(self) -> float:
        return 2.0 * np.arctan(self.sensor_width / (2.0 * self.focal_length))

    @property
    def focal_px(self) -> float:
        return (self.resolution[1] / 2.0) / np.tan(self.fov / 2.0)

    @property
    def principal_point(self) -> tuple[float, float]:
        return self.resolution[1] / 2.0, self.resolution[0] / 2.0

    @property
    def position(self) -> np.ndarray:
        return np.array([0.0, self.altitude, 0.0])

    def with_resolution(self, resolution: tuple[int, int]) -> "Camera":
        return Camera(self.altitude, self.sensor_width, self.focal_length, tuple(resolution))


def camera_from_drone(sensor_width: float, focal_length: float, altitude: float, resolution=(720, 480)) -> Camera:
    if not (sensor_width > 0 and focal_length > 0 and altitude > 0):
        raise ValueError("sensor width, focal length and altitude must be positive")
    h, w = (int(r) for r in resolution)
    if h <= 0 or w <= 0:
        raise ValueError("resolution must be positive")
    return Camera(float(altitude), float(sensor_width), float(focal_length), (h, w))


def project(camera: Camera, vertices) -> tuple[ad.Var, ad.Var]:
    """Pixel coordinates (n, 2) as (column, row) and camera depth (n,)."""
    v = vertices if isinstance(vertices, ad.Var) else ad.const(vertices)
    depth = camera.altitude - v[:, 1]
    if (depth.value <= 0).any():
        raise ValueError("vertex at or above camera height")
    cx, cy = camera.principal_point
    f = camera.focal_px
    u = cx + f * v[:, 0] / depth
    r = cy + f * v[:, 2] / depth
    return ad.stack([u, r], axis=1), depth


def pixel_span(camera: Camera, width_m: float) -> float:
    """Pinhole-predicted pixel extent of a width at the water surface."""
    return width_m * camera.resolution[1] / (2.0 * camera.altitude * np.tan(camera.fov / 2.0))


# ---------------------------------------------------------------- rasterization


@dataclass
class RenderBuffers:
    resolution: tuple[int, int]
    pix: np.ndarray  # (P,) flat index of covered pixels
    face: np.ndarray  # (P,) nearest face per covered pixel
    bary: ad.Var | None  # (P, 3)
    depth: ad.Var | None  # (P,) world height of the surface point, m
    soft_pix: np.ndarray  # (S,) flat index of pixels with soft coverage
    soft: ad.Var | None  # (S,)
    color: ad.Var | None = None  # (P, 3)
    filtered: ad.Var | None = None  # (P, 3)

    def _dense(self, idx, values, fill, channels=None) -> np.ndarray:
        h, w = self.resolution
        shape = (h * w,) if channels is None else (h * w, channels)
        out = np.full(shape, fill, dtype=np.float64 if not isinstance(fill, (int, np.integer)) else np.int64)
        if len(idx):
            out[idx] = values
        return out.reshape((h, w) if channels is None else (h, w, channels))

    @property
    def face_id(self) -> np.ndarray:
        """Per-pixel face index, -1 where nothing is covered."""
        return self._dense(self.pix, self.face, -1)

    @property
    def hard_mask(self) -> np.ndarray:
        return self._dense(self.pix, 1.0, 0.0)

    @property
    def soft_mask(self) -> np.ndarray:
        return self._dense(self.soft_pix, ad.value_of(self.soft) if self.soft is not None else 0.0, 0.0)

    @property
    def depth_image(self) -> np.ndarray:
        return self._dense(self.pix, ad.value_of(self.depth) if self.depth is not None else 0.0, 0.0)

    def image(self, background: np.ndarray | None = None, filtered: bool = True) -> np.ndarray:
        """Dense RGB image; uncovered pixels come from ``background``."""
        h, w = self.resolution
        out = np.zeros((h * w, 3)) if background is None else np.array(background, dtype=np.float64).reshape(h * w, 3)
        src = self.filtered if filtered else self.color
        if src is not None and len(self.pix):
            out[self.pix] = ad.value_of(src)
        return out.reshape(h, w, 3)


def _face_pixel_pairs(lo: np.ndarray, hi: np.ndarray, resolution) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """All (face, row, col) with pixel centers inside per-face boxes in pixel units."""
    h, w = resolution
    i0 = np.clip(np.ceil(lo[:, 0] - 0.5), 0, w).astype(np.int64)
    i1 = np.clip(np.floor(hi[:, 0] - 0.5), -1, w - 1).astype(np.int64)
    j0 = np.clip(np.ceil(lo[:, 1] - 0.5), 0, h).astype(np.int64)
    j1 = np.clip(np.floor(hi[:, 1] - 0.5), -1, h - 1).astype(np.int64)
    nw = np.maximum(i1 - i0 + 1, 0)
    nh = np.maximum(j1 - j0 + 1, 0)
    counts = nw * nh
    total = int(counts.sum())
    if total == 0:
        e = np.zeros(0, dtype=np.int64)
        return e, e, e
    face = np.repeat(np.arange(len(counts)), counts)
    start = np.repeat(np.cumsum(counts) - counts, counts)
    off = np.arange(total) - start
    width = nw[face]
    col = i0[face] + off % width
    row = j0[face] + off // width
    return face, row, col


def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def _point_triangle_dist2(p, a, b, c):
    """Squared distance from points to triangles (numpy), 0 inside; also
    returns the inside flag and the index of the closest edge."""
    px, py = p[:, 0], p[:, 1]
    ax, ay, bx, by, cx, cy = a[:, 0], a[:, 1], b[:, 0], b[:, 1], c[:, 0], c[:, 1]
    area = _edge(ax, ay, bx, by, cx, cy)
    s = np.sign(area)
    inside = (area != 0) & (_edge(bx, by, cx, cy, px, py) * s >= 0) & (_edge(cx, cy, ax, ay, px, py) * s >= 0)
    inside &= _edge(ax, ay, bx, by, px, py) * s >= 0
    d = np.empty((3, len(p)))
    for e, (x0, y0, x1, y1) in enumerate(((ax, ay, bx, by), (bx, by, cx, cy), (cx, cy, ax, ay))):
        ex, ey = x1 - x0, y1 - y0
        qx, qy = px - x0, py - y0
        l2 = ex * ex + ey * ey
        t = np.clip((qx * ex + qy * ey) / np.where(l2 > 0, l2, 1.0), 0.0, 1.0)
        rx, ry = qx - t * ex, qy - t * ey
        d[e] = rx * rx + ry * ry
    edge = d.argmin(axis=0)
    d2 = np.where(inside, 0.0, np.take_along_axis(d, edge[None], axis=0)[0])
    return d2, inside, edge


def rasterize_soft(
    camera: Camera,
    vertices,
    faces: np.ndarray,
    inv_sigma: float = 1e5,
    box_length: float = 0.01,
    k: int = 40,
) -> RenderBuffers:
    """Hard z-buffered coverage plus the soft silhouette.

    Soft coverage of a pixel is ``1 - prod(1 - exp(-d^2 * inv_sigma))`` over
    at most ``k`` nearest faces whose closest-edge distance ``d`` (0 inside)
    is within ``box_length``.
    """
    if inv_sigma <= 0 or k < 1:
        raise ValueError("inv_sigma must be positive and k >= 1")
    h, w = camera.resolution
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    empty = np.zeros(0, dtype=np.int64)
    if len(faces) == 0:
        return RenderBuffers((h, w), empty, empty, None, None, empty, None)
    verts = vertices if isinstance(vertices, ad.Var) else ad.const(vertices)
    uv, zc = project(camera, verts)
    uvv, zcv = uv.value, zc.value
    scale = 2.0 / w  # pixel -> normalized screen units
    fu = uvv[faces]  # (F, 3, 2)
    pad = box_length / scale
    lo = fu.min(axis=1) - pad
    hi = fu.max(axis=1) + pad
    face, row, col = _face_pixel_pairs(lo, hi, (h, w))
    if len(face) == 0:
        return RenderBuffers((h, w), empty, empty, None, None, empty, None)
    p = np.stack([col + 0.5, row + 0.5], axis=1)
    a, b, c = fu[face, 0], fu[face, 1], fu[face, 2]
    d2_px, inside, edge = _point_triangle_dist2(p, a, b, c)
    d2 = d2_px * scale * scale
    pix = row * w + col

    # hard coverage: nearest face by perspective-correct depth
    hard = np.flatnonzero(inside)
    if len(hard):
        ah, bh, ch = a[hard], b[hard], c[hard]
        area = _edge(ah[:, 0], ah[:, 1], bh[:, 0], bh[:, 1], ch[:, 0], ch[:, 1])
        ph = p[hard]
        l0 = _edge(bh[:, 0], bh[:, 1], ch[:, 0], ch[:, 1], ph[:, 0], ph[:, 1]) / area
        l1 = _edge(ch[:, 0], ch[:, 1], ah[:, 0], ah[:, 1], ph[:, 0], ph[:, 1]) / area
        l2 = 1.0 - l0 - l1
        fz = zcv[faces[face[hard]]]
        inv_z = l0 / fz[:, 0] + l1 / fz[:, 1] + l2 / fz[:, 2]
        order = np.lexsort((-inv_z, pix[hard]))
        hp = pix[hard][order]
        first = np.ones(len(hp), dtype=bool)
        first[1:] = hp[1:] != hp[:-1]
        chosen = hard[order[first]]
    else:
        chosen = empty
    hard_pix = pix[chosen]
    hard_face = face[chosen]

    # differentiable screen-space barycentrics of the visible faces
    if len(chosen):
        fv = faces[hard_face]
        pa, pb, pc = ad.take(uv, fv[:, 0]), ad.take(uv, fv[:, 1]), ad.take(uv, fv[:, 2])
        pp = p[chosen]

        def edge_fn(q0, q1, x):
            return (q1[:, 0] - q0[:, 0]) * (x[:, 1] - q0[:, 1]) - (q1[:, 1] - q0[:, 1]) * (x[:, 0] - q0[:, 0])

        area = edge_fn(pa, pb, pc)
        bary = ad.stack([edge_fn(pb, pc, pp) / area, edge_fn(pc, pa, pp) / area, edge_fn(pa, pb, pp) / area], axis=1)
        heights = ad.stack([ad.take(verts[:, 1], fv[:, i]) for i in range(3)], axis=1)
        depth = ad.vsum(bary * heights, axis=1)
    else:
        bary = depth = None

    # soft silhouette over the k nearest faces within the box
    near = np.flatnonzero(d2 <= box_length * box_length)
    # by pixel, then by distance; d2 <= box^2 so the fraction stays below 1
    order = np.argsort(pix[near] + d2[near] * (0.5 / (box_length * box_length)), kind="stable")
    near = near[order]
    sp = pix[near]
    starts = np.ones(len(sp), dtype=bool)
    starts[1:] = sp[1:] != sp[:-1]
    seg = np.cumsum(starts) - 1
    rank = np.arange(len(sp)) - np.flatnonzero(starts)[seg]
    keep = rank < k
    near, seg = near[keep], seg[keep]
    soft_pix = sp[starts]
    outside = ~inside[near]
    expo = ad.const(np.zeros(len(near)))
    if outside.any():
        sel = near[outside]
        fv = faces[face[sel]]
        e = edge[sel]
        i0 = fv[np.arange(len(sel)), e]
        i1 = fv[np.arange(len(sel)), (e + 1) % 3]
        dist2 = ad.point_segment_dist2(uv, i0, i1, p[sel]) * (scale * scale * inv_sigma)
        slot = np.flatnonzero(outside)
        expo = ad.segment_sum(dist2, slot, len(near))
    soft = ad.soft_union(expo, seg, len(soft_pix))
    return RenderBuffers((h, w), hard_pix, hard_face, bary, depth, soft_pix, soft)


# ---------------------------------------------------------------- appearance


def fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    theta = np.pi * (1 + 5**0.5) * i
    return np.stack([np.cos(theta) * np.sin(phi), np.cos(phi), np.sin(theta) * np.sin(phi)], axis=1)


def default_lighting(n_lobes: int = 9) -> dict[str, np.ndarray]:
    return {
        "sg_amplitude": np.full(n_lobes, 1.0 / n_lobes),
        "sg_axis": fibonacci_sphere(n_lobes),
        "sg_sharpness": np.ones(n_lobes),
    }


def sg_radiance(normals, amplitude, axis, sharpness) -> ad.Var:
    """Sum of spherical-Gaussian lobes evaluated at unit normals (P, 3)."""
    mu = ad.normalize(axis if isinstance(axis, ad.Var) else ad.const(axis))
    cosang = normals @ ad.transpose(mu)  # (P, K)
    lobes = ad.exp((cosang - 1.0) * ad.reshape(sharpness, (1, -1)))
    return ad.vsum(lobes * ad.reshape(amplitude, (1, -1)), axis=1)


def shade(buffers: RenderBuffers, faces: np.ndarray, vertices, uv: np.ndarray, appearance: dict) -> ad.Var | None:
    """Grayscale albedo times spherical-Gaussian radiance, clamped to [0, 1],
    broadcast to RGB for every covered pixel."""
    if not len(buffers.pix):
        return None
    fv = faces[buffers.face]
    normals = vertex_normals(vertices, faces)
    bary = buffers.bary
    n = sum(ad.take(normals, fv[:, i]) * bary[:, i : i + 1] for i in range(3))
    n = ad.normalize(n)
    uvs = uv[fv]  # (P, 3, 2)
    tu = ad.vsum(bary * uvs[:, :, 0], axis=1)
    tv = ad.vsum(bary * uvs[:, :, 1], axis=1)
    albedo = ad.bilinear_sample(appearance["albedo"], tu, tv)
    light = sg_radiance(n, appearance["sg_amplitude"], appearance["sg_axis"], appearance["sg_sharpness"])
    gray = ad.clip(albedo * light, 0.0, 1.0)
    color = ad.reshape(gray, (-1, 1)) * np.ones((1, 3))
    buffers.color = color
    return color


def apply_water_filter(color, depth, f_water) -> ad.Var:
    """Channelwise ``C * exp(min(d, 0) * F)``; points above the surface pass."""
    d = ad.minimum(depth if isinstance(depth, ad.Var) else ad.const(depth), 0.0)
    return color * ad.exp(ad.reshape(d, (-1, 1)) * ad.reshape(f_water, (1, 3)))


def render_frame(camera: Camera, vertices, faces, uv, appearance: dict, inv_sigma=1e5, box_length=0.01, k=40) -> RenderBuffers:
    buffers = rasterize_soft(camera, vertices, faces, inv_sigma, box_length, k)
    color = shade(buffers, faces, vertices, uv, appearance)
    if color is not None:
        buffers.filtered = apply_water_filter(color, buffers.depth, appearance["F_water"])
    return buffers


# ---------------------------------------------------------------- initialization


class EmptyMaskError(ValueError):
    pass


def mask_centroid(mask: np.ndarray) -> tuple[float, float]:
    rows, cols = np.nonzero(np.asarray(mask) > 0.5)
    if len(rows) == 0:
        raise EmptyMaskError("empty mask")
    return float(cols.mean() + 0.5), float(rows.mean() + 0.5)


def backproject(camera: Camera, u: float, v: float, height: float = 0.0) -> np.ndarray:
    """World point at ``height`` seen at pixel coordinates (u, v)."""
    cx, cy = camera.principal_point
    s = (camera.altitude - height) / camera.focal_px
    return np.array([(u - cx) * s, height, (v - cy) * s])


def init_position_from_mask(mask: np.ndarray, camera: Camera) -> np.ndarray:
    """Back-project the mask centroid onto the water plane."""
    u, v = mask_centroid(mask)
    return backproject(camera, u, v, 0.0)


def interpolate_missing(positions: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Linearly fill rows of ``positions`` where ``valid`` is False."""
    positions = np.array(positions, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if not valid.any():
        raise EmptyMaskError("all masks are empty")
    t = np.arange(len(positions))
    for c in range(positions.shape[1]):
        positions[~valid, c] = np.interp(t[~valid], t[valid], positions[valid, c])
    return positions
