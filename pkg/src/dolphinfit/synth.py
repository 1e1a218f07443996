"""Synthetic drone sequences with known parameters, and recovery metrics.

A scene is rendered with the same forward model the optimizer inverts. The
observed mask is the soft silhouette thresholded at 0.5; optional noise
flips mask pixels and adds Gaussian noise to the image.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from PIL import Image

from .body import TemplateModel, rest_length, rodrigues_np, shaped_mesh
from .mesh import signed_volume
from .pipeline import SceneRecord, render_record, save_record, to_png
from .render import default_lighting

PATTERNS = ("constant", "stripes", "spots")


class SpecError(ValueError):
    pass


@dataclass
class SceneSpec:
    T: int = 50
    frame_rate: float = 50.0
    altitude: float | list[float] = 18.0
    resolution: tuple[int, int] = (720, 480)  # (H, W)
    sensor_width: float = 17.27
    focal_length: float = 12.29
    # shape: explicit (M, 4) rows, or None for the template shape
    beta: list | None = None
    # trajectory, used unless theta / P are given explicitly
    start: tuple[float, float] = (-0.6, 0.0)  # (x, z) of the root at frame 0, m
    depth: float = -0.25  # root height, m
    heading: float = 1.2  # rad about +y; 0 swims along +z
    heading_rate: float = 0.0  # rad/s
    speed: float = 1.5  # m/s
    fluke_amplitude: float = 0.25  # rad, pitch of the tail groups
    fluke_frequency: float = 1.2  # Hz
    fluke_groups: tuple[str, ...] = ("peduncle", "fluke")
    theta: list | None = None  # (T, M, 3)
    P: list | None = None  # (T, 3)
    # appearance
    albedo_pattern: str = "stripes"
    albedo_resolution: tuple[int, int] = (512, 512)
    F_water: tuple[float, float, float] = (0.6, 0.3, 0.2)
    sg_lobes: int = 9
    background: tuple[float, float, float] = (0.05, 0.25, 0.3)
    # noise
    mask_flip: float = 0.0
    image_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if int(self.T) != self.T or self.T < 1:
            raise SpecError("T must be an integer >= 1")
        alt = np.asarray(self.altitude, dtype=np.float64)
        if alt.ndim == 0:
            alt = np.full(self.T, float(alt))
        if alt.shape != (self.T,) or not (alt > 0).all():
            raise SpecError("altitude must be positive, one value or T values")
        if not 0.0 <= self.mask_flip <= 1.0 or not 0.0 <= self.image_sigma <= 1.0:
            raise SpecError("noise rates must lie in [0, 1]")
        if self.albedo_pattern not in PATTERNS:
            raise SpecError(f"albedo pattern must be one of {', '.join(PATTERNS)}")
        if not self.frame_rate > 0:
            raise SpecError("frame_rate must be positive")
        if any(not 0.0 <= f <= 1.0 for f in self.F_water):
            raise SpecError("F_water must lie in [0, 1]")
        self.resolution = tuple(int(r) for r in self.resolution)
        self.albedo_resolution = tuple(int(r) for r in self.albedo_resolution)

    @property
    def altitudes(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.altitude, dtype=np.float64), (self.T,)).copy()

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}

    @classmethod
    def from_dict(cls, data: dict) -> "SceneSpec":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise SpecError(f"unknown scene spec key(s): {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "SceneSpec":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SpecError(f"{path}: {exc}") from exc
        return cls.from_dict(data)


# ---------------------------------------------------------------- ground truth


def albedo_texture(pattern: str, resolution=(512, 512), seed: int = 0) -> np.ndarray:
    """Procedural grayscale texture in [0, 1]; rows follow v, columns u."""
    h, w = resolution
    v, u = np.meshgrid((np.arange(h) + 0.5) / h, (np.arange(w) + 0.5) / w, indexing="ij")
    base = 0.35 + 0.35 * v  # darker back, lighter belly
    if pattern == "constant":
        return np.full((h, w), 0.55)
    if pattern == "stripes":
        return np.clip(base + 0.2 * np.sin(2 * np.pi * 7 * u), 0.0, 1.0)
    if pattern == "spots":
        rng = np.random.default_rng(seed)
        out = base.copy()
        for cu, cv, r in zip(rng.uniform(0, 1, 40), rng.uniform(0, 1, 40), rng.uniform(0.02, 0.06, 40)):
            out += 0.3 * np.exp(-((u - cu) ** 2 + (v - cv) ** 2) / (2 * r * r))
        return np.clip(out, 0.0, 1.0)
    raise SpecError(f"unknown albedo pattern {pattern!r}")


def random_beta(template: TemplateModel, rng: np.random.Generator, max_scale: float = 0.2) -> np.ndarray:
    """Uniform part scaling drawn in [-max_scale, max_scale] per group."""
    beta = np.zeros((template.n_groups, 4))
    beta[:, 0] = rng.uniform(-max_scale, max_scale, template.n_groups)
    return beta


def trajectory(spec: SceneSpec, template: TemplateModel) -> tuple[np.ndarray, np.ndarray]:
    """(theta, P) from the spec: straight or turning swim with a pitching tail."""
    T, M = spec.T, template.n_groups
    t = np.arange(T) / spec.frame_rate
    if spec.theta is not None:
        theta = np.asarray(spec.theta, dtype=np.float64)
        if theta.shape != (T, M, 3):
            raise SpecError(f"theta must have shape ({T}, {M}, 3)")
    else:
        theta = np.zeros((T, M, 3))
        theta[:, 0, 1] = spec.heading + spec.heading_rate * t
        names = list(template.tree.group_names)
        for i, g in enumerate(spec.fluke_groups):
            if g in names:
                theta[:, names.index(g), 0] = spec.fluke_amplitude * np.sin(2 * np.pi * spec.fluke_frequency * t - i * np.pi / 4)
    if spec.P is not None:
        P = np.asarray(spec.P, dtype=np.float64)
        if P.shape != (T, 3):
            raise SpecError(f"P must have shape ({T}, 3)")
    else:
        heading = theta[:, 0, 1]
        step = spec.speed / spec.frame_rate
        dx = np.concatenate([[0.0], np.cumsum(np.sin(heading[:-1]) * step)])
        dz = np.concatenate([[0.0], np.cumsum(np.cos(heading[:-1]) * step)])
        P = np.stack([spec.start[0] + dx, np.full(T, spec.depth), spec.start[1] + dz], axis=1)
    return theta, P


def ground_truth(spec: SceneSpec, template: TemplateModel) -> SceneRecord:
    theta, P = trajectory(spec, template)
    beta = np.zeros((template.n_groups, 4)) if spec.beta is None else np.asarray(spec.beta, dtype=np.float64)
    if beta.shape != (template.n_groups, 4):
        raise SpecError(f"beta must have shape ({template.n_groups}, 4)")
    params = {
        "theta": theta, "beta": beta, "P": P,
        "albedo": albedo_texture(spec.albedo_pattern, spec.albedo_resolution, spec.seed),
        "F_water": np.asarray(spec.F_water, dtype=np.float64),
        **default_lighting(spec.sg_lobes),
    }
    connected, _ = shaped_mesh(template, beta)
    extra = {
        "volume": abs(signed_volume(connected.value, template.faces)),
        "body_length": rest_length(connected.value, template.landmarks),
    }
    return SceneRecord(params, spec.altitudes, spec.sensor_width, spec.focal_length, spec.frame_rate, spec.resolution, extra)


def render_observation(record: SceneRecord, template: TemplateModel, t: int, background) -> tuple[np.ndarray, np.ndarray]:
    """Clean frame (float RGB) and observed mask (soft silhouette >= 0.5)."""
    h, w = record.resolution
    bg = np.broadcast_to(np.asarray(background, dtype=np.float64), (h, w, 3))
    buf, image = render_record(record, template, t, None, bg)
    return image, buf.soft_mask >= 0.5


def generate_scene(spec: SceneSpec, template: TemplateModel, out_dir) -> SceneRecord:
    """Write frames/, masks/, altitude.csv, camera.json, groundtruth.json and
    spec.json under ``out_dir``; returns the ground-truth record."""
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    record = ground_truth(spec, template)
    rng = np.random.default_rng(spec.seed)
    for t in range(spec.T):
        image, mask = render_observation(record, template, t, spec.background)
        if spec.image_sigma > 0:
            image = np.clip(image + rng.normal(0.0, spec.image_sigma, image.shape), 0.0, 1.0)
        if spec.mask_flip > 0:
            mask = mask ^ (rng.random(mask.shape) < spec.mask_flip)
        Image.fromarray(to_png(image)).save(out / "frames" / f"{t:06d}.png")
        Image.fromarray(mask.astype(np.uint8) * 255).save(out / "masks" / f"{t:06d}.png")
    with open(out / "altitude.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["frame_index", "altitude"])
        for t, a in enumerate(record.altitudes):
            w.writerow([t, repr(float(a))])
    camera = {"sensor_width": spec.sensor_width, "focal_length": spec.focal_length, "frame_rate": spec.frame_rate}
    (out / "camera.json").write_text(json.dumps(camera, indent=2) + "\n", encoding="utf-8")
    (out / "spec.json").write_text(json.dumps(spec.to_dict(), indent=2) + "\n", encoding="utf-8")
    save_record(out / "groundtruth.json", record)
    return record


# ---------------------------------------------------------------- recovery metrics


def _hard_masks(record: SceneRecord, template: TemplateModel, resolution) -> list[np.ndarray]:
    return [render_record(record, template, t, resolution)[0].hard_mask > 0.5 for t in range(record.T)]


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.logical_or(a, b).sum()
    return 1.0 if union == 0 else float(np.logical_and(a, b).sum() / union)


def geodesic_angle(Ra: np.ndarray, Rb: np.ndarray) -> np.ndarray:
    """Rotation angle of ``Ra^T Rb`` for stacks of rotation matrices."""
    c = (np.trace(np.swapaxes(Ra, -1, -2) @ Rb, axis1=-2, axis2=-1) - 1.0) / 2.0
    return np.arccos(np.clip(c, -1.0, 1.0))


@dataclass
class RecoveryReport:
    volume_gt: float
    volume_est: float
    volume_rel_error: float
    mean_iou: float
    trajectory_rmse: float
    orientation_error: float  # mean geodesic angle of the global orientation, rad
    per_frame_iou: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def compare_recovery(gt: SceneRecord, est: SceneRecord, template: TemplateModel) -> RecoveryReport:
    if gt.T != est.T:
        raise ValueError(f"frame count mismatch: {gt.T} vs {est.T}")
    for k in ("theta", "beta", "P"):
        if gt.params[k].shape != est.params[k].shape:
            raise ValueError(f"{k} dimension mismatch: {gt.params[k].shape} vs {est.params[k].shape}")
    v_gt = abs(signed_volume(shaped_mesh(template, gt.params["beta"])[0].value, template.faces))
    v_est = abs(signed_volume(shaped_mesh(template, est.params["beta"])[0].value, template.faces))
    ious = [mask_iou(a, b) for a, b in zip(_hard_masks(gt, template, gt.resolution), _hard_masks(est, template, gt.resolution))]
    d = est.params["P"] - gt.params["P"]
    rmse = float(np.sqrt(np.mean(np.sum(d * d, axis=1))))
    ang = geodesic_angle(rodrigues_np(gt.params["theta"][:, 0]), rodrigues_np(est.params["theta"][:, 0]))
    return RecoveryReport(
        volume_gt=v_gt, volume_est=v_est, volume_rel_error=abs(v_est - v_gt) / v_gt, mean_iou=float(np.mean(ious)),
        trajectory_rmse=rmse, orientation_error=float(np.mean(ang)), per_frame_iou=ious,
    )


__all__ = [
    "SceneSpec", "SpecError", "PATTERNS", "albedo_texture", "random_beta", "trajectory", "ground_truth",
    "render_observation", "generate_scene", "mask_iou", "geodesic_angle", "RecoveryReport", "compare_recovery"
]
