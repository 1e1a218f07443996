"""Sequence ingestion, the reconstruction loop and result export.

Input layout of a sequence directory::

    frames/000000.png ...   RGB frames
    masks/000000.png ...    binary masks, same names and resolution
    altitude.csv            frame_index, altitude (m)
    camera.json             sensor_width (mm), focal_length (mm), frame_rate (Hz)

Scene parameters travel as a JSON file (``params.json`` for estimates,
``groundtruth.json`` for synthetic scenes) with the albedo texture stored
next to it as ``<stem>.albedo.npy``.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from PIL import Image
from scipy import ndimage

from . import autodiff as ad
from .body import TemplateModel, pose_mesh, rest_length, rodrigues_np, shaped_mesh
from .config import RunConfig
from .losses import (
    TERMS,
    drift_offsets,
    loss_direction,
    loss_pose,
    loss_rgb,
    loss_scale,
    loss_scale_axes,
    loss_scale_smooth,
    loss_smooth_temporal,
    sparse_mask_iou,
    total_loss,
)
from .mesh import check_closed, write_obj
from .morpho import body_condition_index, body_density, mesh_volume, predicted_mass, report_row, write_report
from .optim import AdamState, adam_step
from .render import Camera, EmptyMaskError, backproject, camera_from_drone, default_lighting, rasterize_soft, render_frame

PARAM_KEYS = ("theta", "beta", "P", "albedo", "F_water", "sg_amplitude", "sg_axis", "sg_sharpness")
APPEARANCE_KEYS = ("albedo", "F_water", "sg_amplitude", "sg_axis", "sg_sharpness")


class SequenceError(ValueError):
    pass


# ---------------------------------------------------------------- observations


@dataclass
class Observations:
    frames: np.ndarray  # (T, H, W, 3) uint8
    masks: np.ndarray  # (T, H, W) bool
    altitudes: np.ndarray  # (T,) m
    sensor_width: float
    focal_length: float
    frame_rate: float
    names: list[str] = field(default_factory=list)

    @property
    def T(self) -> int:
        return len(self.altitudes)

    @property
    def resolution(self) -> tuple[int, int]:
        return tuple(self.frames.shape[1:3])

    def rgb(self, t: int) -> np.ndarray:
        return self.frames[t].astype(np.float64) / 255.0

    def camera(self, t: int, resolution=None) -> Camera:
        return camera_from_drone(self.sensor_width, self.focal_length, self.altitudes[t], resolution or self.resolution)

    def resized(self, resolution) -> "Observations":
        """Frames and masks resampled to ``resolution`` (H, W)."""
        h, w = resolution
        if (h, w) == self.resolution:
            return self
        frames = np.stack([np.asarray(Image.fromarray(f).resize((w, h), Image.BILINEAR)) for f in self.frames])
        masks = np.stack([
            np.asarray(Image.fromarray(m.astype(np.float32)).resize((w, h), Image.BILINEAR)) >= 0.5 for m in self.masks
        ])
        return Observations(frames, masks, self.altitudes, self.sensor_width, self.focal_length, self.frame_rate, self.names)


def _read_png(path: Path, mode: str) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert(mode))
    except (OSError, ValueError) as exc:
        raise SequenceError(f"unreadable image {path}: {exc}") from exc


def load_sequence(directory) -> Observations:
    directory = Path(directory)
    frame_dir, mask_dir = directory / "frames", directory / "masks"
    if not frame_dir.is_dir():
        raise SequenceError(f"{directory}: missing frames/ directory")
    if not mask_dir.is_dir():
        raise SequenceError(f"{directory}: missing masks/ directory")
    frame_names = sorted(p.name for p in frame_dir.glob("*.png"))
    mask_names = sorted(p.name for p in mask_dir.glob("*.png"))
    if not frame_names:
        raise SequenceError(f"{directory}: no frames")
    for name in frame_names:
        if name not in mask_names:
            raise SequenceError(f"missing mask for frame {name}")
    if len(mask_names) != len(frame_names):
        extra = sorted(set(mask_names) - set(frame_names))
        raise SequenceError(f"frame/mask count mismatch: {len(frame_names)} frames, {len(mask_names)} masks ({extra[0]} has no frame)")

    cam_path = directory / "camera.json"
    try:
        cam = json.loads(cam_path.read_text(encoding="utf-8"))
        sensor_width, focal_length, frame_rate = (float(cam[k]) for k in ("sensor_width", "focal_length", "frame_rate"))
    except FileNotFoundError as exc:
        raise SequenceError(f"{directory}: missing camera.json") from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise SequenceError(f"{cam_path}: needs numeric sensor_width, focal_length, frame_rate ({exc})") from exc

    alt: dict[int, float] = {}
    try:
        with open(directory / "altitude.csv", newline="", encoding="utf-8") as fh:
            for row in csv.reader(fh):
                if len(row) < 2:
                    continue
                try:
                    alt[int(row[0])] = float(row[1])
                except ValueError:
                    continue  # header
    except FileNotFoundError as exc:
        raise SequenceError(f"{directory}: missing altitude.csv") from exc

    frames, masks, altitudes = [], [], []
    for t, name in enumerate(frame_names):
        idx = int(Path(name).stem) if Path(name).stem.isdigit() else t
        if idx not in alt:
            raise SequenceError(f"missing altitude row for frame {name}")
        if not alt[idx] > 0:
            raise SequenceError(f"altitude for frame {name} must be positive")
        f = _read_png(frame_dir / name, "RGB")
        m = _read_png(mask_dir / name, "L")
        if f.shape[:2] != m.shape:
            raise SequenceError(f"frame {name}: mask resolution {m.shape} differs from frame {f.shape[:2]}")
        if frames and f.shape != frames[0].shape:
            raise SequenceError(f"frame {name}: resolution differs from the first frame")
        frames.append(f)
        masks.append(m.astype(np.float64) / 255.0 >= 0.5)
        altitudes.append(alt[idx])
    return Observations(np.stack(frames), np.stack(masks), np.asarray(altitudes), sensor_width, focal_length, frame_rate, frame_names)


# ---------------------------------------------------------------- parameter files


@dataclass
class SceneRecord:
    """Scene parameters plus what is needed to re-render them."""

    params: dict[str, np.ndarray]  # P is the rendered (drift-adjusted) position
    altitudes: np.ndarray
    sensor_width: float
    focal_length: float
    frame_rate: float
    resolution: tuple[int, int]
    extra: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return len(self.altitudes)

    def camera(self, t: int, resolution=None) -> Camera:
        return camera_from_drone(self.sensor_width, self.focal_length, self.altitudes[t], resolution or self.resolution)


def save_record(path, record: SceneRecord) -> None:
    path = Path(path)
    albedo_name = f"{path.stem}.albedo.npy"
    np.save(path.parent / albedo_name, np.asarray(record.params["albedo"], dtype=np.float64))
    data = {k: np.asarray(record.params[k], dtype=np.float64).tolist() for k in PARAM_KEYS if k != "albedo"}
    data.update(
        albedo_file=albedo_name,
        altitudes=np.asarray(record.altitudes, dtype=np.float64).tolist(),
        sensor_width=float(record.sensor_width),
        focal_length=float(record.focal_length),
        frame_rate=float(record.frame_rate),
        resolution=[int(r) for r in record.resolution],
        extra=record.extra,
    )
    path.write_text(json.dumps(data, indent=1) + "\n", encoding="utf-8")


def load_record(path) -> SceneRecord:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
        params = {k: np.asarray(data[k], dtype=np.float64) for k in PARAM_KEYS if k != "albedo"}
        params["albedo"] = np.load(path.parent / data["albedo_file"])
        return SceneRecord(
            params, np.asarray(data["altitudes"], dtype=np.float64), float(data["sensor_width"]),
            float(data["focal_length"]), float(data["frame_rate"]), tuple(data["resolution"]), data.get("extra", {}),
        )
    except (OSError, KeyError, ValueError, TypeError) as exc:
        raise SequenceError(f"{path}: not a valid parameter file ({exc})") from exc


def record_meshes(record: SceneRecord, template: TemplateModel) -> list[np.ndarray]:
    p = record.params
    connected, joints = shaped_mesh(template, p["beta"])
    return [pose_mesh(template, connected, joints, ad.const(p["theta"][t]), p["P"][t]).value for t in range(record.T)]


def render_record(record: SceneRecord, template: TemplateModel, t: int, resolution=None, background=None,
                  inv_sigma: float = 1e5, box_length: float = 0.01, k: int = 40):
    """Render frame ``t`` of a record; returns the render buffers and the RGB image."""
    p = record.params
    connected, joints = shaped_mesh(template, p["beta"])
    verts = pose_mesh(template, connected, joints, ad.const(p["theta"][t]), p["P"][t])
    appearance = {k: p[k] for k in APPEARANCE_KEYS}
    buf = render_frame(record.camera(t, resolution), verts, template.faces, template.uv, appearance, inv_sigma, box_length, k)
    return buf, buf.image(background)


def to_png(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


# ---------------------------------------------------------------- initialization


def _largest_component(mask: np.ndarray) -> np.ndarray:
    """Keep the largest 8-connected blob; isolated noise pixels would bias moments."""
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    if n <= 1:
        return mask
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    return labels == np.argmax(sizes)


def _principal_axis(mask: np.ndarray):
    rows, cols = np.nonzero(_largest_component(mask))
    pts = np.stack([cols + 0.5, rows + 0.5], axis=1)
    c = pts.mean(axis=0)
    d = pts - c
    w, vec = np.linalg.eigh(d.T @ d / len(d))
    axis = vec[:, 1]
    s = d @ axis
    return c, axis, float(np.mean(s**3))


_TOP_VIEW: dict[int, tuple[np.ndarray, float]] = {}


def _template_top_view(template: TemplateModel) -> tuple[np.ndarray, float]:
    """Silhouette centroid offset (x, z) from the root joint and the sign of
    the silhouette skew along forward, from a dense nadir render."""
    key = id(template)
    if key not in _TOP_VIEW:
        cam = camera_from_drone(17.27, 12.29, 6.0, (600, 600))
        buf = rasterize_soft(cam, template.vertices, template.faces)
        mask = buf.hard_mask > 0.5
        c, _, _ = _principal_axis(mask)
        X = backproject(cam, c[0], c[1], 0.0)
        rows, cols = np.nonzero(mask)
        s = rows + 0.5 - c[1]  # image rows follow +z, the forward axis
        _TOP_VIEW[key] = (np.array([X[0], X[2]]), float(np.sign(np.mean(s**3)) or 1.0))
    return _TOP_VIEW[key]


def initialize(obs: Observations, template: TemplateModel, config: RunConfig) -> tuple[dict[str, np.ndarray], np.ndarray, bool]:
    """Initial parameters, the per-frame valid (non-empty mask) flags, and
    whether the direction term stays enabled.

    Position comes from back-projecting mask centroids to the water plane;
    the heading from the mask's principal axis, signed by centroid motion
    when the animal moves across the image and by silhouette skew otherwise.
    """
    T = obs.T
    valid = obs.masks.reshape(T, -1).any(axis=1)
    if not valid.any():
        raise EmptyMaskError("all masks are empty")
    offset, tmpl_skew = _template_top_view(template)
    centers = np.zeros((T, 2))
    axes = np.zeros((T, 2))
    skews = np.zeros(T)
    world = np.zeros((T, 3))
    for t in np.flatnonzero(valid):
        c, a, s = _principal_axis(obs.masks[t])
        centers[t], axes[t], skews[t] = c, a, s
        world[t] = backproject(obs.camera(t), c[0], c[1], 0.0)
    vt = np.flatnonzero(valid)
    tt = np.arange(T)
    for arr in (centers, axes, world):
        for j in range(arr.shape[1]):
            arr[:, j] = np.interp(tt, vt, arr[vt, j])
    # chain axis signs for continuity, then pick the global sign
    for t in range(1, T):
        if axes[t] @ axes[t - 1] < 0:
            axes[t] = -axes[t]
            skews[t] = -skews[t]
    displacement = np.linalg.norm(centers[vt] - centers[vt[0]], axis=1).max()
    use_dir = bool(displacement >= config.dir_disable_px)
    if use_dir and T > 1:
        vel = np.gradient(world[:, [0, 2]], axis=0)
        vote = float(np.sum(axes * vel))
    else:
        vote = float(np.sum(np.sign(skews[valid]))) * tmpl_skew
    if vote < 0:
        axes = -axes
    heading = np.arctan2(axes[:, 0], axes[:, 1])
    heading = np.unwrap(heading)

    M = template.n_groups
    theta = np.zeros((T, M, 3))
    theta[:, 0, 1] = heading
    P = np.zeros((T, 3))
    for t in range(T):
        R = rodrigues_np(theta[t, 0])
        o = R @ np.array([offset[0], 0.0, offset[1]])
        P[t] = [world[t, 0] - o[0], 0.0, world[t, 2] - o[2]]
    light = default_lighting(config.sg_lobes)
    params = {
        "theta": theta,
        "beta": np.zeros((M, 4)),
        "P": P,
        "albedo": np.full(config.albedo_resolution, 0.5),
        "F_water": np.full(3, 0.5),
        **light,
    }
    return params, valid, use_dir


def _clamps() -> dict[str, Callable[[np.ndarray], np.ndarray]]:
    def unit_rows(x):
        n = np.linalg.norm(x, axis=1, keepdims=True)
        return np.where(n > 0, x / np.where(n > 0, n, 1.0), x)

    return {
        "albedo": lambda x: np.clip(x, 0.0, 1.0),
        "F_water": lambda x: np.clip(x, 0.0, 1.0),
        "sg_amplitude": lambda x: np.maximum(x, 0.0),
        "sg_sharpness": lambda x: np.maximum(x, 1e-3),
        "sg_axis": unit_rows,
    }


# ---------------------------------------------------------------- per-frame pass


def frame_pass(template, camera, rgb_u8, mask, connected, joints, theta_t, P_t, appearance, cfg: RunConfig):
    """Data terms of one frame and their gradients.

    Returns (rgb, mask_iou, grads) where ``grads`` holds the gradient of
    ``lambda_rgb * rgb + lambda_mask * mask_iou`` w.r.t. the connected rest
    vertices, joints, this frame's theta and P, and the appearance.
    """
    with ad.Tape() as tape:
        conn = tape.leaf(connected)
        jts = tape.leaf(joints)
        th = tape.leaf(theta_t)
        pos = tape.leaf(P_t)
        app = {k: tape.leaf(appearance[k]) for k in APPEARANCE_KEYS}
        verts = pose_mesh(template, conn, jts, th, pos)
        buf = render_frame(camera, verts, template.faces, template.uv, app, cfg.inv_sigma, cfg.box_length, cfg.k)
        if buf.filtered is not None:
            observed = rgb_u8.reshape(-1, 3)[buf.pix].astype(np.float64) / 255.0
            rgb = loss_rgb(buf.filtered, observed, np.ones(len(buf.pix)))
        else:
            rgb = ad.const(0.0)
        iou = sparse_mask_iou(buf.soft, buf.soft_pix, mask)
        out = rgb * cfg.lambda_rgb + iou * cfg.lambda_mask
        if not isinstance(out, ad.Var) or out.tape is None:
            zero = {"connected": np.zeros_like(connected), "joints": np.zeros_like(joints), "theta": np.zeros_like(theta_t),
                    "P": np.zeros_like(P_t)}
            zero.update({k: np.zeros_like(appearance[k]) for k in APPEARANCE_KEYS})
            return float(rgb.value), float(iou.value), zero
        g = ad.backward(tape, out)
    grads = {"connected": g[conn], "joints": g[jts], "theta": g[th], "P": g[pos]}
    grads.update({k: g[app[k]] for k in APPEARANCE_KEYS})
    return float(rgb.value), float(iou.value), grads


_WORKER: dict = {}


def _worker_init(template, obs, cfg):
    _WORKER.update(template=template, obs=obs, cfg=cfg)


def _worker_frame(args):
    t, connected, joints, theta_t, P_t, appearance = args
    w = _WORKER
    cam = w["obs"].camera(t)
    return frame_pass(w["template"], cam, w["obs"].frames[t], w["obs"].masks[t], connected, joints, theta_t, P_t, appearance, w["cfg"])


# ---------------------------------------------------------------- optimization


@dataclass
class ReconstructionResult:
    params: dict[str, np.ndarray]  # optimized parameters; P without drift
    drift: np.ndarray  # (T,) height offsets applied when rendering
    meshes: list[np.ndarray]  # posed vertices per frame
    loss_log: list[dict]
    volume: float
    body_length: float
    bci: float
    density: float
    mass: float
    observations: Observations
    config: RunConfig
    template: TemplateModel

    @property
    def effective_P(self) -> np.ndarray:
        P = self.params["P"].copy()
        P[:, 1] += self.drift
        return P

    def record(self) -> SceneRecord:
        params = dict(self.params)
        params["P"] = self.effective_P
        obs = self.observations
        return SceneRecord(params, obs.altitudes, obs.sensor_width, obs.focal_length, obs.frame_rate, obs.resolution,
                           {"volume": self.volume, "body_length": self.body_length})


def _drift(theta: np.ndarray, cfg: RunConfig, frame_rate: float) -> np.ndarray:
    return drift_offsets(theta[:, 0], frame_rate, cfg.v_surf, cfg.v_dive, cfg.drift_level)


class Objective:
    """Total loss of a parameter set over a sequence and its gradient.

    Per-frame data terms are evaluated one frame at a time (optionally in
    worker processes) and reduced in frame order; sequence terms and the
    chain back to the shape parameters run on a single tape.
    """

    def __init__(self, obs: Observations, template: TemplateModel, config: RunConfig, weights, valid: np.ndarray,
                 pool: ProcessPoolExecutor | None = None):
        self.obs, self.template, self.cfg, self.weights = obs, template, config, weights
        self.valid = np.asarray(valid, dtype=bool)
        self.pool = pool
        self.group_parent = template.tree.group_parent()
        self.cameras = [obs.camera(t) for t in range(obs.T)]

    def __call__(self, params: dict[str, np.ndarray], drift: np.ndarray, frames=None) -> tuple[dict, dict[str, np.ndarray]]:
        """Loss row and gradients; ``drift`` holds the per-frame height offsets.

        ``frames`` restricts the data terms to a subset of frames (all valid
        frames by default); the sequence terms always cover the whole clip.
        """
        T = self.obs.T
        if frames is None:
            frames = np.flatnonzero(self.valid)
        else:
            frames = [t for t in np.atleast_1d(frames) if self.valid[t]]
        cfg, template = self.cfg, self.template
        with ad.Tape() as tape:
            leaves = {k: tape.leaf(params[k], k) for k in PARAM_KEYS}
            connected, joints = shaped_mesh(template, leaves["beta"])
            appearance = {k: params[k] for k in APPEARANCE_KEYS}
            shift = np.stack([np.zeros(T), drift, np.zeros(T)], axis=1)
            P_eff = params["P"] + shift
            jobs = [(t, connected.value, joints.value, params["theta"][t], P_eff[t], appearance) for t in frames]
            if self.pool is not None:
                results = list(self.pool.map(_worker_frame, jobs))
            else:
                results = [
                    frame_pass(template, self.cameras[t], self.obs.frames[t], self.obs.masks[t], c, j, th, p, a, cfg)
                    for (t, c, j, th, p, a) in jobs
                ]
            g_conn = sum((r[2]["connected"] for r in results), np.zeros_like(connected.value))
            g_joints = sum((r[2]["joints"] for r in results), np.zeros_like(joints.value))
            theta = leaves["theta"]
            Pv = leaves["P"] + shift
            terms = {
                "rgb": ad.const(float(sum(r[0] for r in results))),
                "mask": ad.const(float(sum(r[1] for r in results))),
                "pose": loss_pose(theta),
                "scale": loss_scale(leaves["beta"]),
                "scale_axes": loss_scale_axes(leaves["beta"]),
                "scale_smooth": loss_scale_smooth(leaves["beta"], self.group_parent),
                "smooth_pos": loss_smooth_temporal(Pv),
                "smooth_rot": loss_smooth_temporal(theta[:, 0, :]),
                "smooth_pose": loss_smooth_temporal(theta[:, 1:, :]),
                "dir": loss_direction(theta[:, 0, :], Pv),
            }
            total, row = total_loss(terms, self.weights)
            # the frame gradients w.r.t. the rest mesh enter as a linear surrogate
            surrogate = ad.vsum(connected * g_conn) + ad.vsum(joints * g_joints)
            g = ad.backward(tape, total + surrogate)
        grads = {k: g[leaves[k]].copy() for k in PARAM_KEYS}
        for (t, *_), r in zip(jobs, results):
            grads["theta"][t] += r[2]["theta"]
            grads["P"][t] += r[2]["P"]
            for k in APPEARANCE_KEYS:
                grads[k] += r[2][k]
        if not cfg.optimize_height:
            # height is unobservable from a nadir view; it follows the drift rule only
            grads["P"][:, 1] = 0.0
        for k, gk in grads.items():
            if not np.isfinite(gk).all():
                raise FloatingPointError(f"non-finite gradient for {k}")
        entry = {k: row.get(k, 0.0) for k in TERMS}
        entry.update({f"w_{k}": row.get(f"w_{k}", 0.0) for k in TERMS})
        entry["total"] = row["total"]
        return entry, grads


def _accumulate(entry: dict | None, row: dict) -> dict:
    """Epoch row in frame mode: data terms summed over the per-frame steps,
    sequence terms as of the last step."""
    if entry is None:
        return dict(row)
    out = dict(row)
    for k in ("rgb", "mask", "w_rgb", "w_mask"):
        out[k] = entry[k] + row[k]
    out["total"] = sum(out[f"w_{k}"] for k in TERMS)
    return out


def run_reconstruction(
    obs: Observations,
    template: TemplateModel,
    config: RunConfig,
    init: dict[str, np.ndarray] | None = None,
    workers: int = 1,
    progress: Callable[[int, dict], None] | None = None,
) -> ReconstructionResult:
    """Fit body shape, pose trajectory and appearance to a sequence.

    ``init`` replaces the mask-based initialization (e.g. to start from a
    known scene). ``workers > 1`` evaluates frames in worker processes; the
    reduction is in frame order either way.
    """
    cfg = config
    resolution = cfg.opt_resolution or cfg.render_resolution
    opt_obs = obs.resized(resolution)
    params, valid, use_dir = initialize(opt_obs, template, cfg)
    if init is not None:
        params = {k: np.array(init[k], dtype=np.float64) for k in PARAM_KEYS}
    weights = cfg.weights if use_dir else replace(cfg.weights, dir=0.0)
    state = AdamState(lr=cfg.learning_rates)
    clamps = _clamps()
    log: list[dict] = []
    pool = ProcessPoolExecutor(workers, initializer=_worker_init, initargs=(template, opt_obs, cfg)) if workers > 1 else None
    objective = Objective(opt_obs, template, cfg, weights, valid, pool)
    try:
        for epoch in range(cfg.epochs):
            drift = _drift(params["theta"], cfg, obs.frame_rate)
            try:
                if cfg.epoch_mode == "sequence":
                    entry, grads = objective(params, drift)
                    params = adam_step(params, grads, state, clamps)
                else:
                    entry = None
                    for t in np.flatnonzero(valid):
                        row, grads = objective(params, drift, frames=[t])
                        params = adam_step(params, grads, state, clamps)
                        entry = _accumulate(entry, row)
            except FloatingPointError as exc:
                raise FloatingPointError(f"epoch {epoch}: {exc}") from exc
            log.append({"epoch": epoch, **entry})
            if progress is not None:
                progress(epoch, log[-1])
    finally:
        if pool is not None:
            pool.shutdown()
    return _finish(obs, template, cfg, params, log)


def _finish(obs, template, cfg, params, log) -> ReconstructionResult:
    drift = _drift(params["theta"], cfg, obs.frame_rate)
    connected, joints = shaped_mesh(template, params["beta"])
    P = params["P"].copy()
    P[:, 1] += drift
    meshes = [pose_mesh(template, connected, joints, ad.const(params["theta"][t]), P[t]).value for t in range(obs.T)]
    volume = mesh_volume(connected.value, template.faces)
    bl = rest_length(connected.value, template.landmarks)
    return ReconstructionResult(
        params=params, drift=drift, meshes=meshes, loss_log=log, volume=volume, body_length=bl,
        bci=body_condition_index(volume, bl), density=body_density(volume, bl), mass=predicted_mass(volume, bl),
        observations=obs, config=cfg, template=template,
    )


LOSS_COLUMNS = ["epoch", *TERMS, *(f"w_{k}" for k in TERMS), "total"]


def write_losses(path, log: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=LOSS_COLUMNS)
        w.writeheader()
        for row in log:
            w.writerow({k: (row[k] if k == "epoch" else repr(float(row[k]))) for k in LOSS_COLUMNS})


def export(result: ReconstructionResult, out_dir, subject_id: str | None = None) -> Path:
    """Write meshes/, previews/, params.json, losses.csv, report.csv and config.json."""
    out = Path(out_dir)
    (out / "meshes").mkdir(parents=True, exist_ok=True)
    (out / "previews").mkdir(parents=True, exist_ok=True)
    template = result.template
    record = result.record()
    for t, verts in enumerate(result.meshes):
        check_closed(template.faces, len(verts))
        write_obj(out / "meshes" / f"{t:06d}.obj", verts, template.faces, template.uv)
        _, image = render_record(record, template, t, None, None, result.config.inv_sigma, result.config.box_length, result.config.k)
        Image.fromarray(to_png(image)).save(out / "previews" / f"{t:06d}.png")
    save_record(out / "params.json", record)
    write_losses(out / "losses.csv", result.loss_log)
    row = report_row(subject_id or out.name, result.body_length, volume_3d=result.volume)
    write_report(out / "report.csv", [row])
    result.config.save(out / "config.json")
    return out


def cpu_count() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


__all__ = [
    "Observations", "SequenceError", "SceneRecord", "ReconstructionResult", "load_sequence", "save_record",
    "load_record", "record_meshes", "render_record", "initialize", "frame_pass", "run_reconstruction", "export",
    "write_losses", "LOSS_COLUMNS",
]
