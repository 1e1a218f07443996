"""Run configuration: every optimization hyperparameter, JSON round-trippable."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .losses import LossWeights


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # rendering
    inv_sigma: float = 100000.0
    box_length: float = 0.01
    k: int = 40
    sensor_width: float = 17.27  # mm
    focal_length: float = 12.29  # mm
    render_resolution: tuple[int, int] = (720, 480)  # (H, W)
    albedo_resolution: tuple[int, int] = (512, 512)
    # loss weights
    lambda_rgb: float = 1.0
    lambda_mask: float = 1.0
    lambda_pose: float = 2.0
    lambda_scale: float = 0.001
    lambda_scale_axes: float = 0.1
    lambda_scale_smooth: float = 5.0
    lambda_smooth_pos: float = 500.0
    lambda_smooth_rot: float = 500.0
    lambda_smooth_pose: float = 500.0
    lambda_dir: float = 0.1
    # optimization
    epochs: int = 100
    lr_theta: float = 0.01
    lr_beta_P: float = 0.01
    lr_albedo_water: float = 0.001
    lr_sg: float = 0.01
    # other
    v_surf: float = 6.6  # m/s
    v_dive: float = 2.2  # m/s
    frame_rate: float = 50.0
    seed: int = 0
    dir_disable_px: float = 2.0
    drift_level: float = 1e-3
    optimize_height: bool = False
    printed_integrand: bool = False
    opt_resolution: tuple[int, int] | None = None
    sg_lobes: int = 9
    # "sequence": one Adam step per epoch on the whole clip;
    # "frame": one step per frame, each with that frame's data terms
    epoch_mode: str = "sequence"

    def __post_init__(self):
        for name in ("render_resolution", "albedo_resolution", "opt_resolution"):
            val = getattr(self, name)
            if val is not None:
                if len(val) != 2 or any(int(x) != x or x <= 0 for x in val):
                    raise ConfigError(f"{name} must be two positive integers")
                object.__setattr__(self, name, tuple(int(x) for x in val))
        positive = ("inv_sigma", "box_length", "sensor_width", "focal_length", "frame_rate")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        nonneg = [f.name for f in fields(self) if f.name.startswith(("lambda_", "lr_"))]
        nonneg += ["v_surf", "v_dive", "dir_disable_px", "drift_level"]
        for name in nonneg:
            if not getattr(self, name) >= 0:
                raise ConfigError(f"{name} must be nonnegative")
        for name in ("k", "epochs", "sg_lobes", "seed"):
            val = getattr(self, name)
            if isinstance(val, bool) or int(val) != val:
                raise ConfigError(f"{name} must be an integer")
        if self.epoch_mode not in ("sequence", "frame"):
            raise ConfigError("epoch_mode must be 'sequence' or 'frame'")
        if self.k < 1 or self.sg_lobes < 1 or self.epochs < 0:
            raise ConfigError("k and sg_lobes must be >= 1, epochs >= 0")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(
            rgb=self.lambda_rgb, mask=self.lambda_mask, pose=self.lambda_pose, scale=self.lambda_scale,
            scale_axes=self.lambda_scale_axes, scale_smooth=self.lambda_scale_smooth,
            smooth_pos=self.lambda_smooth_pos, smooth_rot=self.lambda_smooth_rot,
            smooth_pose=self.lambda_smooth_pose, dir=self.lambda_dir,
        )

    @property
    def learning_rates(self) -> dict[str, float]:
        return {
            "theta": self.lr_theta, "beta": self.lr_beta_P, "P": self.lr_beta_P,
            "albedo": self.lr_albedo_water, "F_water": self.lr_albedo_water,
            "sg_amplitude": self.lr_sg, "sg_axis": self.lr_sg, "sg_sharpness": self.lr_sg,
        }

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(data)
